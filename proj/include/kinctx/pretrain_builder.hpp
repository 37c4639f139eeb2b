#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kinctx/common.hpp"
#include "kinctx/entity_linker.hpp"
#include "kinctx/knowledge_store.hpp"

namespace kinctx {

enum class PretrainTask { mep, edg, kqa };

std::string_view task_name(PretrainTask task);
PretrainTask parse_pretrain_task(std::string_view name);

/// Token sequence with a parallel 0/1 loss mask. Every masked position has a
/// gold target token.
struct PretrainExample {
  std::vector<std::string> tokens;
  std::vector<std::uint8_t> mask;
  PretrainTask task = PretrainTask::mep;
  std::map<std::size_t, std::string> targets;

  std::size_t size() const { return tokens.size(); }
  std::size_t target_count() const;
};

struct PretrainInstance {
  PretrainTask task = PretrainTask::mep;
  std::vector<PretrainExample> examples;
  std::size_t total_tokens = 0;
};

struct MepOptions {
  double special_probability = 0.5;
  std::string special_token = "_";
};

struct MepStats {
  std::size_t special_entities = 0;
  std::size_t random_entities = 0;
};

/// Masked entity prediction. Each mention is corrupted as a unit: all of its
/// tokens become `special_token`, or all become uniform draws from `vocab`.
/// Returns nullopt when the document has no mentions.
std::optional<PretrainExample> build_mep(const LinkedExample& doc,
                                         std::span<const std::string> vocab, Rng& rng,
                                         const MepOptions& options = {},
                                         MepStats* stats = nullptr);

/// Entity description generation: "Entities: a, b Text: <doc>" with the loss
/// on the document suffix. Surfaces follow first-mention order.
std::optional<PretrainExample> build_edg(const LinkedExample& doc);

/// Question templates for knowledge QA, keyed by relation id. Templates use
/// `{relation}` and `{head}` placeholders.
class KqaTemplates {
 public:
  static constexpr std::string_view kDefault = "What is the {relation} of {head}?";

  void set(std::string relation_id, std::string question_template);
  std::string question(const KnowledgeBase& kb, RelationIdx relation,
                       std::string_view head_surface) const;

 private:
  std::unordered_map<std::string, std::string> by_relation_;
};

/// Knowledge question answering over a uniformly chosen in-document triple:
/// "Question: <question> Answer: <tail>" with the loss on the tail tokens.
std::optional<PretrainExample> build_kqa(const LinkedExample& doc, const KnowledgeBase& kb,
                                         Rng& rng, const KqaTemplates& templates = {});

struct PackResult {
  std::vector<PretrainInstance> instances;
  std::size_t dropped = 0;
};

/// Groups examples by task, shuffles each group, and packs greedily so no
/// instance exceeds `max_len` tokens. Longer examples are dropped and counted.
PackResult pack_instances(std::vector<PretrainExample> examples, std::size_t max_len, Rng& rng);

/// Interleaves packed instances of all tasks uniformly at random.
void mix_instances(std::vector<PretrainInstance>& instances, Rng& rng);

/// Mean over examples of the per-example mean negative log-likelihood at
/// masked positions. `token_logprobs` covers the instance's concatenated
/// tokens; NaN marks a missing value and is only allowed where mask is 0.
double masked_loss(const PretrainInstance& instance, std::span<const double> token_logprobs);

struct CorpusOptions {
  bool mep = true;
  bool edg = true;
  bool kqa = true;
  std::uint64_t seed = 0;
  MepOptions mep_options;
};

/// Builds examples for every document; document d draws from its own stream
/// derive_seed(seed, d). Output order is document order, then MEP, EDG, KQA.
std::vector<PretrainExample> build_corpus_serial(std::span<const LinkedExample> docs,
                                                 const KnowledgeBase& kb,
                                                 std::span<const std::string> vocab,
                                                 const CorpusOptions& options,
                                                 const KqaTemplates& templates = {});
/// OpenMP form of build_corpus_serial with identical output.
std::vector<PretrainExample> build_corpus(std::span<const LinkedExample> docs,
                                          const KnowledgeBase& kb,
                                          std::span<const std::string> vocab,
                                          const CorpusOptions& options,
                                          const KqaTemplates& templates = {});

}  // namespace kinctx
