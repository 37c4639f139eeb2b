#include "kinctx/entity_linker.hpp"

#include <algorithm>

namespace kinctx {

const TextField* LinkedExample::field(std::string_view name) const {
  for (const auto& f : fields) {
    if (f.name == name) return &f;
  }
  return nullptr;
}

TextField* LinkedExample::field(std::string_view name) {
  for (auto& f : fields) {
    if (f.name == name) return &f;
  }
  return nullptr;
}

std::size_t LinkedExample::mention_count() const {
  std::size_t n = 0;
  for (const auto& f : fields) n += f.mentions.size();
  return n;
}

void recompute_entities(LinkedExample& ex) {
  std::vector<EntityIdx> ids;
  for (const auto& f : ex.fields) {
    for (const auto& m : f.mentions) ids.push_back(m.entity);
  }
  ex.entities = make_entity_set(std::move(ids));
}

void LinkerIndex::add(const std::string& folded, EntityIdx entity) {
  if (folded.empty()) return;
  auto [it, fresh] = aliases_.try_emplace(folded, Entry{entity, false});
  if (!fresh && it->second.entity != entity) {
    it->second.ambiguous = true;
    it->second.entity = std::min(it->second.entity, entity);
  }
  for (std::size_t p = 1; p < folded.size(); ++p) {
    if (is_token_boundary(folded, p)) prefixes_.insert(folded.substr(0, p));
  }
}

LinkerIndex LinkerIndex::build(const KnowledgeBase& kb) {
  LinkerIndex index;
  index.aliases_.reserve(kb.alias_count());
  for (std::size_t i = 0; i < kb.alias_count(); ++i) {
    index.add(fold_case(trim(kb.alias_at(i))), kb.alias_owner(i));
  }
  return index;
}

LinkerIndex LinkerIndex::from_aliases(std::span<const std::pair<std::string, EntityIdx>> aliases) {
  LinkerIndex index;
  for (const auto& [alias, e] : aliases) index.add(fold_case(trim(alias)), e);
  return index;
}

std::vector<Mention> LinkerIndex::link(std::string_view text) const {
  std::vector<Mention> out;
  if (aliases_.empty()) return out;
  const std::string folded = fold_case(text);
  const std::size_t n = folded.size();

  std::vector<std::size_t> boundaries;
  for (std::size_t p = 0; p <= n; ++p) {
    if (is_token_boundary(folded, p)) boundaries.push_back(p);
  }

  std::size_t b = 0;
  while (b < boundaries.size()) {
    const std::size_t start = boundaries[b];
    if (start >= n || is_space_byte(static_cast<unsigned char>(folded[start]))) {
      ++b;
      continue;
    }
    std::size_t best_end = 0;
    const Entry* best = nullptr;
    std::string candidate;
    for (std::size_t e = b + 1; e < boundaries.size(); ++e) {
      const std::size_t end = boundaries[e];
      candidate.assign(folded, start, end - start);
      if (auto it = aliases_.find(candidate); it != aliases_.end()) {
        best_end = end;
        best = &it->second;
      }
      if (!prefixes_.contains(candidate)) break;
    }
    if (best) {
      out.push_back({{start, best_end},
                     std::string(text.substr(start, best_end - start)),
                     best->entity,
                     best->ambiguous});
      while (b < boundaries.size() && boundaries[b] < best_end) ++b;
    } else {
      ++b;
    }
  }
  return out;
}

std::size_t LinkerIndex::approx_memory_bytes() const {
  std::size_t bytes = 0;
  for (const auto& [k, v] : aliases_) bytes += sizeof(std::string) + k.capacity() + sizeof(v) + 16;
  for (const auto& k : prefixes_) bytes += sizeof(std::string) + k.capacity() + 16;
  return bytes;
}

void link_example(LinkedExample& ex, const LinkerIndex& index) {
  for (auto& f : ex.fields) f.mentions = index.link(f.text);
  recompute_entities(ex);
}

void link_all_serial(std::span<LinkedExample> examples, const LinkerIndex& index) {
  for (auto& ex : examples) link_example(ex, index);
}

void link_all(std::span<LinkedExample> examples, const LinkerIndex& index) {
  const auto n = static_cast<std::ptrdiff_t>(examples.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < n; ++i) link_example(examples[static_cast<std::size_t>(i)], index);
}

}  // namespace kinctx
