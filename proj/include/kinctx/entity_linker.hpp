#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "kinctx/knowledge_store.hpp"
#include "kinctx/text.hpp"

namespace kinctx {

struct Mention {
  Span span;
  std::string surface;
  EntityIdx entity = 0;
  /// The surface names more than one entity; `entity` is the smallest id.
  bool ambiguous = false;
  friend bool operator==(const Mention&, const Mention&) = default;
};

struct TextField {
  std::string name;
  std::string text;
  std::vector<Mention> mentions;
};

/// A task example with its resolved entity set. `entities` is the union of
/// mention entities, or a pre-linked list when the input carried no text
/// mentions.
struct LinkedExample {
  std::string id;
  std::vector<TextField> fields;
  std::vector<std::string> choices;
  std::optional<std::string> label;
  EntitySet entities;

  const TextField* field(std::string_view name) const;
  TextField* field(std::string_view name);
  std::size_t mention_count() const;
};

/// Sets `entities` to the union of all mention entities.
void recompute_entities(LinkedExample& ex);

/// Case-insensitive alias dictionary with boundary-aligned prefix sets, for
/// greedy longest-match scans.
class LinkerIndex {
 public:
  LinkerIndex() = default;

  static LinkerIndex build(const KnowledgeBase& kb);
  /// Direct construction from (alias, entity) pairs.
  static LinkerIndex from_aliases(std::span<const std::pair<std::string, EntityIdx>> aliases);

  /// Greedy left-to-right, longest-match, non-overlapping mentions whose
  /// ends fall on token boundaries. Sorted by start.
  std::vector<Mention> link(std::string_view text) const;

  std::size_t alias_count() const { return aliases_.size(); }
  std::size_t approx_memory_bytes() const;

 private:
  struct Entry {
    EntityIdx entity = 0;
    bool ambiguous = false;
  };
  void add(const std::string& folded, EntityIdx entity);

  std::unordered_map<std::string, Entry> aliases_;
  std::unordered_set<std::string> prefixes_;
};

/// Links every field of the example in place and recomputes `entities`.
void link_example(LinkedExample& ex, const LinkerIndex& index);

/// Reference loop over examples.
void link_all_serial(std::span<LinkedExample> examples, const LinkerIndex& index);
/// OpenMP loop over examples; identical output to the serial form.
void link_all(std::span<LinkedExample> examples, const LinkerIndex& index);

}  // namespace kinctx
