#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kinctx/common.hpp"
#include "kinctx/entity_linker.hpp"
#include "kinctx/knowledge_store.hpp"

namespace kinctx {

enum class TaskKind { classification, multiple_choice, extractive };

TaskKind parse_task_kind(std::string_view name);
std::string_view task_kind_name(TaskKind kind);

/// Bijection between class ids and label words, in a fixed candidate order.
class Verbalizer {
 public:
  Verbalizer() = default;
  /// Throws on a repeated class id or label word.
  explicit Verbalizer(std::vector<std::pair<std::string, std::string>> class_to_word);

  const std::string& word(std::string_view class_id) const;
  const std::string& class_of(std::string_view word) const;
  bool has_class(std::string_view class_id) const;
  std::vector<std::string> words() const;
  std::vector<std::string> classes() const;
  std::size_t size() const { return pairs_.size(); }

 private:
  std::vector<std::pair<std::string, std::string>> pairs_;
};

/// Field-per-line prompt format. `input_format` holds `{text}`, `{text_pair}`,
/// `{question}`, `{context}` and `{choices}` placeholders; a demonstration
/// renders as input + field separator + answer prefix + " " + answer, the
/// target stops after the answer prefix.
struct TaskTemplate {
  std::string task_id;
  TaskKind kind = TaskKind::classification;
  std::string preamble;
  std::string input_format;
  std::string answer_prefix;
  std::string field_separator = "\n";
  std::string example_separator = "\n\n";
  std::vector<std::pair<std::string, std::string>> label_words;
  std::string metric = "accuracy";
  std::string positive_label;

  Verbalizer verbalizer() const { return Verbalizer(label_words); }
};

/// Templates keyed by task id.
class TemplateTable {
 public:
  /// The shipped table (same content as data/templates.json).
  static const TemplateTable& builtin();
  static TemplateTable parse(std::string_view json_text);
  static TemplateTable load_file(const std::filesystem::path& path);

  const TaskTemplate& get(std::string_view task_id) const;
  bool contains(std::string_view task_id) const;
  std::vector<std::string> task_ids() const;

 private:
  std::map<std::string, TaskTemplate, std::less<>> templates_;
};

/// The shipped template JSON text.
std::string_view builtin_templates_json();

/// "(A) x (B) y ..." for multiple-choice slots.
std::string format_choices(std::span<const std::string> choices);

/// The input part of one example (everything before the answer line).
std::string render_input(const LinkedExample& ex, const TaskTemplate& tmpl);

/// One demonstration with its answer. An empty label renders a bare answer
/// prefix. Classification labels go through the verbalizer.
std::string render_demo(const LinkedExample& demo, const TaskTemplate& tmpl,
                        const Verbalizer* verbalizer);

/// Preamble, demonstrations and the target stub joined by the example
/// separator. Throws when a demonstration has no label or a label outside
/// the verbalizer.
std::string render_prompt(std::span<const LinkedExample> demos, const LinkedExample& target,
                          const TaskTemplate& tmpl, const Verbalizer* verbalizer);

/// Reads the answer back out of a rendered demonstration.
std::optional<std::string> parse_answer(std::string_view rendered_demo, const TaskTemplate& tmpl);

/// Cuts tokens from the end of the last field first, then earlier fields,
/// until at most `max_tokens` remain. Label and choices are kept; mentions
/// beyond the cut are dropped.
LinkedExample truncate(const LinkedExample& ex, std::size_t max_tokens);

enum class Destruction {
  origin,
  shuffle_entity,
  shuffle_non_entity,
  shuffle_label,
  remove_entity,
  remove_label,
  no_demonstration,
};

Destruction parse_destruction(std::string_view name);
std::string_view destruction_name(Destruction setting);
std::span<const Destruction> all_destructions();

struct DestructionAudit {
  std::size_t entity_tokens = 0;
  std::size_t replaced_non_entity_tokens = 0;
  /// Entity tokens for which no non-entity word was left to replace.
  std::size_t shortfall = 0;
};

/// Applies one perturbation to the demonstrations. `label_space` lists class
/// ids (empty for QA, where a demo's own choices are used). Shuffle Entity
/// draws replacements uniformly from all KB aliases; Shuffle Non-Entity draws
/// from `vocab`.
std::vector<LinkedExample> destruct(std::span<const LinkedExample> demos, Destruction setting,
                                    const KnowledgeBase& kb,
                                    std::span<const std::string> label_space,
                                    std::span<const std::string> vocab, Rng& rng,
                                    DestructionAudit* audit = nullptr);

/// Scoring candidates for a target: label words, the example's choices, or
/// for extractive QA the linked surfaces in the context plus context spans of
/// up to `span_ngram` tokens, de-duplicated in order of appearance.
std::vector<std::string> candidates_for(const LinkedExample& target, const TaskTemplate& tmpl,
                                        std::size_t span_ngram = 0);

}  // namespace kinctx
