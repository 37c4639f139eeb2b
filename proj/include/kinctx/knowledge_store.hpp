#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kinctx {

/// Dense entity handle. Entities are numbered in lexicographic order of
/// their string ids, so index order and id order agree.
using EntityIdx = std::uint32_t;
using RelationIdx = std::uint32_t;

/// Sorted, duplicate-free list of entity handles.
using EntitySet = std::vector<EntityIdx>;

EntitySet make_entity_set(std::vector<EntityIdx> ids);

struct Triple {
  EntityIdx head = 0;
  RelationIdx relation = 0;
  EntityIdx tail = 0;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct KbCounts {
  std::size_t entities = 0;
  std::size_t aliases = 0;
  std::size_t relations = 0;
  std::size_t triples = 0;
};

/// Entities, aliases, relations and triples. Immutable after load; safe to
/// share across threads for reads.
class KnowledgeBase {
 public:
  KnowledgeBase() = default;

  /// Parses the tab-separated aliases and triples formats. `*_name` only
  /// labels error messages. Throws ParseError on a malformed line and on a
  /// triple that references an unknown entity.
  static KnowledgeBase load(std::istream& aliases, std::istream& triples,
                            std::string_view aliases_name = "aliases",
                            std::string_view triples_name = "triples");
  static KnowledgeBase load_files(const std::filesystem::path& aliases,
                                  const std::filesystem::path& triples);

  /// Optional `relation_id<TAB>label` lines naming relations for question
  /// templates. Unknown relation ids are ignored.
  void load_relation_labels(std::istream& in, std::string_view name = "relations");

  /// Writes both files back in canonical order (entities and triples sorted).
  void save(std::ostream& aliases, std::ostream& triples) const;

  KbCounts counts() const;
  std::size_t entity_count() const { return entity_ids_.size(); }
  std::size_t relation_count() const { return relation_ids_.size(); }

  std::optional<EntityIdx> find_entity(std::string_view id) const;
  std::optional<RelationIdx> find_relation(std::string_view id) const;
  const std::string& entity_id(EntityIdx e) const { return entity_ids_[e]; }
  const std::string& relation_id(RelationIdx r) const { return relation_ids_[r]; }

  /// Human-readable relation name: the loaded label, else the id with
  /// underscores turned into spaces.
  std::string relation_surface(RelationIdx r) const;

  std::span<const std::string> aliases_of(EntityIdx e) const;
  const std::string& primary_surface(EntityIdx e) const { return aliases_of(e).front(); }
  std::size_t alias_count() const { return alias_strings_.size(); }
  /// The i-th stored alias across all entities, in entity order.
  const std::string& alias_at(std::size_t i) const { return alias_strings_[i]; }
  EntityIdx alias_owner(std::size_t i) const { return alias_owner_[i]; }

  /// Case-insensitive alias lookup; entities sorted ascending.
  std::span<const EntityIdx> lookup_alias(std::string_view alias) const;

  /// All triples in (head, relation, tail) order.
  std::span<const Triple> triples() const { return triples_; }
  /// Triples with the given head, in (relation, tail) order.
  std::span<const Triple> triples_from(EntityIdx head) const;

  std::size_t approx_memory_bytes() const;

  friend bool operator==(const KnowledgeBase& a, const KnowledgeBase& b);

 private:
  std::vector<std::string> entity_ids_;
  std::unordered_map<std::string, EntityIdx> entity_lookup_;
  // Aliases flattened in entity order: entity e owns
  // alias_strings_[alias_offsets_[e] .. alias_offsets_[e+1]).
  std::vector<std::string> alias_strings_;
  std::vector<EntityIdx> alias_owner_;
  std::vector<std::size_t> alias_offsets_;
  std::unordered_map<std::string, std::vector<EntityIdx>> folded_aliases_;

  std::vector<std::string> relation_ids_;
  std::unordered_map<std::string, RelationIdx> relation_lookup_;
  std::vector<std::string> relation_labels_;

  std::vector<Triple> triples_;
  std::vector<std::size_t> head_offsets_;
};

/// Pre-trained entity vectors, one row per covered entity.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(const KnowledgeBase& kb, std::size_t dim);

  /// Header `count dim`, then `entity_id v1 ... v_dim` rows. Throws
  /// ParseError with the row number on a dimension mismatch, an unknown or
  /// repeated entity, or a row count different from the header.
  static EmbeddingTable load(std::istream& in, const KnowledgeBase& kb,
                             std::string_view name = "embeddings");
  static EmbeddingTable load_file(const std::filesystem::path& path, const KnowledgeBase& kb);

  void set(EntityIdx e, std::span<const double> values);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return rows_; }
  bool contains(EntityIdx e) const { return e < row_of_.size() && row_of_[e] >= 0; }
  std::span<const double> vector(EntityIdx e) const;

 private:
  std::size_t dim_ = 0;
  std::size_t rows_ = 0;
  std::vector<std::int64_t> row_of_;
  std::vector<double> data_;
};

struct AverageEmbedding {
  std::vector<double> mean;
  /// Set when no member of the set had a vector; `mean` is then all zeros.
  bool empty = false;
};

/// Element-wise mean of the member vectors; members without a vector are
/// skipped.
AverageEmbedding average_embedding(std::span<const EntityIdx> entities,
                                   const EmbeddingTable& table);

/// Allocation-free form used by the retrieval kernels. Returns the empty flag.
bool average_embedding_into(std::span<const EntityIdx> entities, const EmbeddingTable& table,
                            std::span<double> out);

/// Triples whose head and tail both belong to `entities` (a sorted set),
/// in (head, relation, tail) order.
std::vector<Triple> one_hop_triples(std::span<const EntityIdx> entities, const KnowledgeBase& kb);

}  // namespace kinctx
