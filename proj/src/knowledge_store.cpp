#include "kinctx/knowledge_store.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

#include "kinctx/common.hpp"
#include "kinctx/text.hpp"

namespace kinctx {

namespace {

bool next_line(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return in;
}

}  // namespace

EntitySet make_entity_set(std::vector<EntityIdx> ids) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

KnowledgeBase KnowledgeBase::load(std::istream& aliases, std::istream& triples,
                                  std::string_view aliases_name, std::string_view triples_name) {
  const std::string an(aliases_name), tn(triples_name);
  KnowledgeBase kb;

  // Entities first, so handles follow id order.
  std::vector<std::pair<std::string, std::vector<std::string>>> rows;
  std::unordered_map<std::string, std::size_t> row_of;
  std::string line;
  std::size_t lineno = 0;
  while (next_line(aliases, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = split(line, '\t');
    if (fields[0].empty()) throw ParseError(an, lineno, "empty entity id");
    std::vector<std::string> names;
    for (std::size_t i = 1; i < fields.size(); ++i) {
      if (!fields[i].empty()) names.push_back(std::move(fields[i]));
    }
    if (names.empty()) throw ParseError(an, lineno, "entity " + fields[0] + " has no alias");
    auto [it, fresh] = row_of.try_emplace(fields[0], rows.size());
    if (fresh) {
      rows.emplace_back(std::move(fields[0]), std::move(names));
    } else {
      auto& dst = rows[it->second].second;
      for (auto& n : names) {
        if (std::find(dst.begin(), dst.end(), n) == dst.end()) dst.push_back(std::move(n));
      }
    }
  }
  row_of.clear();
  std::sort(rows.begin(), rows.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  kb.entity_ids_.reserve(rows.size());
  kb.alias_offsets_.reserve(rows.size() + 1);
  kb.entity_lookup_.reserve(rows.size());
  kb.alias_offsets_.push_back(0);
  for (auto& [id, names] : rows) {
    const auto e = static_cast<EntityIdx>(kb.entity_ids_.size());
    kb.entity_lookup_.emplace(id, e);
    kb.entity_ids_.push_back(std::move(id));
    for (auto& n : names) {
      auto& owners = kb.folded_aliases_[fold_case(n)];
      if (owners.empty() || owners.back() != e) owners.push_back(e);
      kb.alias_strings_.push_back(std::move(n));
      kb.alias_owner_.push_back(e);
    }
    kb.alias_offsets_.push_back(kb.alias_strings_.size());
  }
  rows.clear();

  // Relations are numbered in id order after all triples are read.
  std::unordered_map<std::string, RelationIdx> provisional;
  std::vector<std::string> provisional_names;
  lineno = 0;
  while (next_line(triples, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = split(line, '\t');
    if (fields.size() != 3) {
      throw ParseError(tn, lineno, "expected 3 tab-separated fields, got " +
                                       std::to_string(fields.size()));
    }
    for (const auto& f : fields) {
      if (f.empty()) throw ParseError(tn, lineno, "empty field");
    }
    auto head = kb.find_entity(fields[0]);
    if (!head) throw ParseError(tn, lineno, "unknown head entity " + fields[0]);
    auto tail = kb.find_entity(fields[2]);
    if (!tail) throw ParseError(tn, lineno, "unknown tail entity " + fields[2]);
    auto [it, fresh] =
        provisional.try_emplace(fields[1], static_cast<RelationIdx>(provisional_names.size()));
    if (fresh) provisional_names.push_back(fields[1]);
    kb.triples_.push_back({*head, it->second, *tail});
  }

  std::vector<RelationIdx> order(provisional_names.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](RelationIdx a, RelationIdx b) {
    return provisional_names[a] < provisional_names[b];
  });
  std::vector<RelationIdx> remap(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    remap[order[i]] = static_cast<RelationIdx>(i);
    kb.relation_lookup_.emplace(provisional_names[order[i]], static_cast<RelationIdx>(i));
    kb.relation_ids_.push_back(provisional_names[order[i]]);
  }
  kb.relation_labels_.assign(kb.relation_ids_.size(), std::string());
  for (auto& t : kb.triples_) t.relation = remap[t.relation];
  std::sort(kb.triples_.begin(), kb.triples_.end());
  kb.triples_.erase(std::unique(kb.triples_.begin(), kb.triples_.end()), kb.triples_.end());

  kb.head_offsets_.assign(kb.entity_ids_.size() + 1, 0);
  for (const auto& t : kb.triples_) ++kb.head_offsets_[t.head + 1];
  std::partial_sum(kb.head_offsets_.begin(), kb.head_offsets_.end(), kb.head_offsets_.begin());
  return kb;
}

KnowledgeBase KnowledgeBase::load_files(const std::filesystem::path& aliases,
                                        const std::filesystem::path& triples) {
  auto a = open_or_throw(aliases);
  auto t = open_or_throw(triples);
  return load(a, t, aliases.string(), triples.string());
}

void KnowledgeBase::load_relation_labels(std::istream& in, std::string_view name) {
  std::string line;
  std::size_t lineno = 0;
  while (next_line(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = split(line, '\t');
    if (fields.size() < 2 || fields[0].empty() || fields[1].empty()) {
      throw ParseError(std::string(name), lineno, "expected relation_id<TAB>label");
    }
    if (auto r = find_relation(fields[0])) relation_labels_[*r] = fields[1];
  }
}

void KnowledgeBase::save(std::ostream& aliases, std::ostream& triples) const {
  for (EntityIdx e = 0; e < entity_ids_.size(); ++e) {
    aliases << entity_ids_[e];
    for (const auto& a : aliases_of(e)) aliases << '\t' << a;
    aliases << '\n';
  }
  for (const auto& t : triples_) {
    triples << entity_ids_[t.head] << '\t' << relation_ids_[t.relation] << '\t'
            << entity_ids_[t.tail] << '\n';
  }
}

KbCounts KnowledgeBase::counts() const {
  return {entity_ids_.size(), alias_strings_.size(), relation_ids_.size(), triples_.size()};
}

std::optional<EntityIdx> KnowledgeBase::find_entity(std::string_view id) const {
  auto it = entity_lookup_.find(std::string(id));
  if (it == entity_lookup_.end()) return std::nullopt;
  return it->second;
}

std::optional<RelationIdx> KnowledgeBase::find_relation(std::string_view id) const {
  auto it = relation_lookup_.find(std::string(id));
  if (it == relation_lookup_.end()) return std::nullopt;
  return it->second;
}

std::string KnowledgeBase::relation_surface(RelationIdx r) const {
  if (!relation_labels_[r].empty()) return relation_labels_[r];
  std::string s = relation_ids_[r];
  std::replace(s.begin(), s.end(), '_', ' ');
  return s;
}

std::span<const std::string> KnowledgeBase::aliases_of(EntityIdx e) const {
  return std::span<const std::string>(alias_strings_)
      .subspan(alias_offsets_[e], alias_offsets_[e + 1] - alias_offsets_[e]);
}

std::span<const EntityIdx> KnowledgeBase::lookup_alias(std::string_view alias) const {
  auto it = folded_aliases_.find(fold_case(alias));
  if (it == folded_aliases_.end()) return {};
  return it->second;
}

std::span<const Triple> KnowledgeBase::triples_from(EntityIdx head) const {
  if (head >= entity_ids_.size()) return {};
  return std::span<const Triple>(triples_).subspan(head_offsets_[head],
                                                   head_offsets_[head + 1] - head_offsets_[head]);
}

std::size_t KnowledgeBase::approx_memory_bytes() const {
  std::size_t bytes = 0;
  auto str = [](const std::string& s) { return sizeof(std::string) + s.capacity(); };
  for (const auto& s : entity_ids_) bytes += 2 * str(s) + sizeof(EntityIdx);
  for (const auto& s : alias_strings_) bytes += 2 * str(s) + sizeof(EntityIdx) * 2;
  bytes += alias_offsets_.size() * sizeof(std::size_t);
  bytes += triples_.size() * sizeof(Triple) + head_offsets_.size() * sizeof(std::size_t);
  return bytes;
}

bool operator==(const KnowledgeBase& a, const KnowledgeBase& b) {
  return a.entity_ids_ == b.entity_ids_ && a.alias_strings_ == b.alias_strings_ &&
         a.alias_offsets_ == b.alias_offsets_ && a.relation_ids_ == b.relation_ids_ &&
         a.triples_ == b.triples_;
}

// ---------------------------------------------------------------------------

EmbeddingTable::EmbeddingTable(const KnowledgeBase& kb, std::size_t dim)
    : dim_(dim), row_of_(kb.entity_count(), -1) {
  if (dim == 0) throw Error("embedding dimension must be positive");
}

void EmbeddingTable::set(EntityIdx e, std::span<const double> values) {
  if (values.size() != dim_) throw Error("embedding length does not match dim");
  if (e >= row_of_.size()) throw Error("embedding for unknown entity");
  if (row_of_[e] < 0) {
    row_of_[e] = static_cast<std::int64_t>(rows_++);
    data_.insert(data_.end(), values.begin(), values.end());
  } else {
    std::copy(values.begin(), values.end(), data_.begin() + row_of_[e] * dim_);
  }
}

std::span<const double> EmbeddingTable::vector(EntityIdx e) const {
  if (!contains(e)) return {};
  return std::span<const double>(data_).subspan(static_cast<std::size_t>(row_of_[e]) * dim_, dim_);
}

EmbeddingTable EmbeddingTable::load(std::istream& in, const KnowledgeBase& kb,
                                    std::string_view name) {
  const std::string src(name);
  std::string line;
  if (!next_line(in, line)) throw ParseError(src, 1, "missing `count dim` header");

  auto parse_size = [&](std::string_view s, std::size_t lineno, const char* what) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw ParseError(src, lineno, std::string("bad ") + what + " '" + std::string(s) + "'");
    }
    return v;
  };

  std::vector<std::string> header;
  for (auto& f : split(trim(line), ' ')) {
    if (!f.empty()) header.push_back(std::move(f));
  }
  if (header.size() != 2) throw ParseError(src, 1, "header must be `count dim`");
  const std::size_t count = parse_size(header[0], 1, "count");
  const std::size_t dim = parse_size(header[1], 1, "dim");
  if (dim == 0) throw ParseError(src, 1, "dim must be positive");

  EmbeddingTable table(kb, dim);
  table.data_.reserve(count * dim);
  std::vector<double> values(dim);
  std::size_t lineno = 1;
  std::size_t row = 0;
  while (next_line(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ++row;
    const char* p = line.data();
    const char* end = p + line.size();
    auto skip_ws = [&] {
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
    };
    skip_ws();
    const char* id_begin = p;
    while (p < end && *p != ' ' && *p != '\t') ++p;
    std::string_view id(id_begin, static_cast<std::size_t>(p - id_begin));
    auto e = kb.find_entity(id);
    if (!e) throw ParseError(src, lineno, "row " + std::to_string(row) + ": unknown entity " + std::string(id));
    if (table.contains(*e)) {
      throw ParseError(src, lineno, "row " + std::to_string(row) + ": duplicate entity " + std::string(id));
    }
    std::size_t n = 0;
    for (skip_ws(); p < end; skip_ws()) {
      double v = 0;
      auto [q, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) {
        throw ParseError(src, lineno, "row " + std::to_string(row) + ": bad number");
      }
      if (n < dim) values[n] = v;
      ++n;
      p = q;
    }
    if (n != dim) {
      throw ParseError(src, lineno, "row " + std::to_string(row) + ": expected " +
                                        std::to_string(dim) + " values, got " + std::to_string(n));
    }
    table.set(*e, values);
  }
  if (row != count) {
    throw ParseError(src, lineno, "header declares " + std::to_string(count) + " rows, found " +
                                      std::to_string(row));
  }
  return table;
}

EmbeddingTable EmbeddingTable::load_file(const std::filesystem::path& path,
                                         const KnowledgeBase& kb) {
  auto in = open_or_throw(path);
  return load(in, kb, path.string());
}

bool average_embedding_into(std::span<const EntityIdx> entities, const EmbeddingTable& table,
                            std::span<double> out) {
  // Summation order is fixed by id so the mean does not depend on input order.
  if (!std::is_sorted(entities.begin(), entities.end())) {
    EntitySet sorted = make_entity_set({entities.begin(), entities.end()});
    return average_embedding_into(sorted, table, out);
  }
  std::fill(out.begin(), out.end(), 0.0);
  std::size_t n = 0;
  for (EntityIdx e : entities) {
    auto v = table.vector(e);
    if (v.empty()) continue;
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += v[d];
    ++n;
  }
  if (n == 0) return true;
  const double inv = 1.0 / static_cast<double>(n);
  for (double& x : out) x *= inv;
  return false;
}

AverageEmbedding average_embedding(std::span<const EntityIdx> entities,
                                   const EmbeddingTable& table) {
  AverageEmbedding out;
  out.mean.assign(table.dim(), 0.0);
  out.empty = average_embedding_into(entities, table, out.mean);
  return out;
}

std::vector<Triple> one_hop_triples(std::span<const EntityIdx> entities, const KnowledgeBase& kb) {
  std::vector<Triple> out;
  for (EntityIdx h : entities) {
    for (const auto& t : kb.triples_from(h)) {
      if (std::binary_search(entities.begin(), entities.end(), t.tail)) out.push_back(t);
    }
  }
  return out;
}

}  // namespace kinctx
