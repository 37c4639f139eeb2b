#include "kinctx/pretrain_builder.hpp"

#include <algorithm>
#include <cmath>

namespace kinctx {

std::string_view task_name(PretrainTask task) {
  switch (task) {
    case PretrainTask::mep: return "mep";
    case PretrainTask::edg: return "edg";
    case PretrainTask::kqa: return "kqa";
  }
  return "?";
}

PretrainTask parse_pretrain_task(std::string_view name) {
  if (name == "mep") return PretrainTask::mep;
  if (name == "edg") return PretrainTask::edg;
  if (name == "kqa") return PretrainTask::kqa;
  throw Error("unknown pretraining task '" + std::string(name) + "'");
}

std::size_t PretrainExample::target_count() const {
  std::size_t n = 0;
  for (auto m : mask) n += m;
  return n;
}

namespace {

// Tokens of every field in order, each tagged with the index of the mention
// covering it (or -1).
struct TaggedTokens {
  std::vector<std::string> tokens;
  std::vector<std::ptrdiff_t> mention;
  std::size_t mention_count = 0;
};

TaggedTokens tag_tokens(const LinkedExample& doc) {
  TaggedTokens out;
  for (const auto& f : doc.fields) {
    std::size_t m = 0;
    for (auto& tok : tokenize(f.text)) {
      while (m < f.mentions.size() && f.mentions[m].span.end <= tok.span.start) ++m;
      std::ptrdiff_t owner = -1;
      if (m < f.mentions.size() && f.mentions[m].span.start <= tok.span.start &&
          tok.span.end <= f.mentions[m].span.end) {
        owner = static_cast<std::ptrdiff_t>(out.mention_count + m);
      }
      out.tokens.push_back(std::move(tok.text));
      out.mention.push_back(owner);
    }
    out.mention_count += f.mentions.size();
  }
  return out;
}

void append(PretrainExample& ex, std::vector<std::string> tokens, bool masked) {
  for (auto& t : tokens) {
    if (masked) ex.targets.emplace(ex.tokens.size(), t);
    ex.tokens.push_back(std::move(t));
    ex.mask.push_back(masked ? 1 : 0);
  }
}

const std::string& surface_in(const LinkedExample& doc, EntityIdx e, const KnowledgeBase& kb) {
  for (const auto& f : doc.fields) {
    for (const auto& m : f.mentions) {
      if (m.entity == e) return m.surface;
    }
  }
  return kb.primary_surface(e);
}

}  // namespace

std::optional<PretrainExample> build_mep(const LinkedExample& doc,
                                         std::span<const std::string> vocab, Rng& rng,
                                         const MepOptions& options, MepStats* stats) {
  if (doc.mention_count() == 0) return std::nullopt;
  auto tagged = tag_tokens(doc);
  if (std::none_of(tagged.mention.begin(), tagged.mention.end(),
                   [](std::ptrdiff_t m) { return m >= 0; })) {
    return std::nullopt;
  }

  // One branch per mention, drawn in mention order.
  std::vector<bool> special(tagged.mention_count);
  for (std::size_t m = 0; m < tagged.mention_count; ++m) {
    special[m] = rng.bernoulli(options.special_probability);
    if (stats) ++(special[m] ? stats->special_entities : stats->random_entities);
  }
  if (vocab.empty() && std::find(special.begin(), special.end(), false) != special.end()) {
    throw Error("build_mep: random replacement needs a non-empty vocabulary");
  }

  PretrainExample ex;
  ex.task = PretrainTask::mep;
  ex.tokens.reserve(tagged.tokens.size());
  for (std::size_t i = 0; i < tagged.tokens.size(); ++i) {
    const auto owner = tagged.mention[i];
    if (owner < 0) {
      ex.tokens.push_back(std::move(tagged.tokens[i]));
      ex.mask.push_back(0);
      continue;
    }
    ex.targets.emplace(i, tagged.tokens[i]);
    ex.tokens.push_back(special[static_cast<std::size_t>(owner)] ? options.special_token
                                                                 : vocab[rng.below(vocab.size())]);
    ex.mask.push_back(1);
  }
  return ex;
}

std::optional<PretrainExample> build_edg(const LinkedExample& doc) {
  if (doc.mention_count() == 0) return std::nullopt;

  std::vector<const Mention*> ordered;
  for (const auto& f : doc.fields) {
    for (const auto& m : f.mentions) ordered.push_back(&m);
  }
  // Fields are already in order; within a field mentions are sorted by start.
  std::vector<EntityIdx> seen;
  std::vector<std::string> surfaces;
  for (const Mention* m : ordered) {
    if (std::find(seen.begin(), seen.end(), m->entity) != seen.end()) continue;
    seen.push_back(m->entity);
    surfaces.push_back(m->surface);
  }

  PretrainExample ex;
  ex.task = PretrainTask::edg;
  append(ex, token_strings("Entities:"), false);
  for (std::size_t i = 0; i < surfaces.size(); ++i) {
    if (i) append(ex, {","}, false);
    append(ex, token_strings(surfaces[i]), false);
  }
  append(ex, token_strings("Text:"), false);
  for (const auto& f : doc.fields) append(ex, token_strings(f.text), true);
  if (ex.target_count() == 0) return std::nullopt;
  return ex;
}

void KqaTemplates::set(std::string relation_id, std::string question_template) {
  by_relation_[std::move(relation_id)] = std::move(question_template);
}

std::string KqaTemplates::question(const KnowledgeBase& kb, RelationIdx relation,
                                   std::string_view head_surface) const {
  std::string out(kDefault);
  if (auto it = by_relation_.find(kb.relation_id(relation)); it != by_relation_.end()) {
    out = it->second;
  }
  auto replace_all = [&](std::string_view key, std::string_view value) {
    for (std::size_t pos = out.find(key); pos != std::string::npos;
         pos = out.find(key, pos + value.size())) {
      out.replace(pos, key.size(), value);
    }
  };
  replace_all("{relation}", kb.relation_surface(relation));
  replace_all("{head}", head_surface);
  return out;
}

std::optional<PretrainExample> build_kqa(const LinkedExample& doc, const KnowledgeBase& kb,
                                         Rng& rng, const KqaTemplates& templates) {
  auto candidates = one_hop_triples(doc.entities, kb);
  if (candidates.empty()) return std::nullopt;
  const Triple& t = candidates[rng.below(candidates.size())];

  PretrainExample ex;
  ex.task = PretrainTask::kqa;
  const std::string prompt =
      "Question: " + templates.question(kb, t.relation, surface_in(doc, t.head, kb)) + " Answer:";
  append(ex, token_strings(prompt), false);
  append(ex, token_strings(surface_in(doc, t.tail, kb)), true);
  if (ex.target_count() == 0) return std::nullopt;
  return ex;
}

PackResult pack_instances(std::vector<PretrainExample> examples, std::size_t max_len, Rng& rng) {
  PackResult result;
  for (PretrainTask task : {PretrainTask::mep, PretrainTask::edg, PretrainTask::kqa}) {
    std::vector<PretrainExample> group;
    for (auto& ex : examples) {
      if (ex.task != task) continue;
      if (ex.size() > max_len) {
        ++result.dropped;
        continue;
      }
      group.push_back(std::move(ex));
    }
    rng.shuffle(group.begin(), group.end());

    PretrainInstance current{task, {}, 0};
    for (auto& ex : group) {
      if (!current.examples.empty() && current.total_tokens + ex.size() > max_len) {
        result.instances.push_back(std::move(current));
        current = PretrainInstance{task, {}, 0};
      }
      current.total_tokens += ex.size();
      current.examples.push_back(std::move(ex));
    }
    if (!current.examples.empty()) result.instances.push_back(std::move(current));
  }
  return result;
}

void mix_instances(std::vector<PretrainInstance>& instances, Rng& rng) {
  rng.shuffle(instances.begin(), instances.end());
}

double masked_loss(const PretrainInstance& instance, std::span<const double> token_logprobs) {
  std::size_t total = 0;
  for (const auto& ex : instance.examples) total += ex.size();
  if (token_logprobs.size() != total) {
    throw Error("masked_loss: expected " + std::to_string(total) + " log-probabilities, got " +
                std::to_string(token_logprobs.size()));
  }
  if (instance.examples.empty()) throw Error("masked_loss: empty instance");

  double outer = 0.0;
  std::size_t offset = 0;
  for (const auto& ex : instance.examples) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < ex.size(); ++i) {
      if (!ex.mask[i]) continue;
      const double lp = token_logprobs[offset + i];
      if (std::isnan(lp)) {
        throw Error("masked_loss: missing log-probability at masked position " +
                    std::to_string(offset + i));
      }
      if (lp > 0.0) {
        throw Error("masked_loss: positive log-probability at position " +
                    std::to_string(offset + i));
      }
      sum -= lp;
      ++count;
    }
    if (count == 0) throw Error("masked_loss: example without masked positions");
    outer += sum / static_cast<double>(count);
    offset += ex.size();
  }
  return outer / static_cast<double>(instance.examples.size());
}

namespace {

void build_document(const LinkedExample& doc, std::size_t index, const KnowledgeBase& kb,
                    std::span<const std::string> vocab, const CorpusOptions& options,
                    const KqaTemplates& templates, std::vector<PretrainExample>& out) {
  Rng rng(derive_seed(options.seed, index));
  if (options.mep) {
    if (auto ex = build_mep(doc, vocab, rng, options.mep_options)) out.push_back(std::move(*ex));
  }
  if (options.edg) {
    if (auto ex = build_edg(doc)) out.push_back(std::move(*ex));
  }
  if (options.kqa) {
    if (auto ex = build_kqa(doc, kb, rng, templates)) out.push_back(std::move(*ex));
  }
}

}  // namespace

std::vector<PretrainExample> build_corpus_serial(std::span<const LinkedExample> docs,
                                                 const KnowledgeBase& kb,
                                                 std::span<const std::string> vocab,
                                                 const CorpusOptions& options,
                                                 const KqaTemplates& templates) {
  std::vector<PretrainExample> out;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    build_document(docs[d], d, kb, vocab, options, templates, out);
  }
  return out;
}

std::vector<PretrainExample> build_corpus(std::span<const LinkedExample> docs,
                                          const KnowledgeBase& kb,
                                          std::span<const std::string> vocab,
                                          const CorpusOptions& options,
                                          const KqaTemplates& templates) {
  std::vector<std::vector<PretrainExample>> per_doc(docs.size());
  const auto n = static_cast<std::ptrdiff_t>(docs.size());
#pragma omp parallel for schedule(dynamic, 32)
  for (std::ptrdiff_t d = 0; d < n; ++d) {
    const auto i = static_cast<std::size_t>(d);
    build_document(docs[i], i, kb, vocab, options, templates, per_doc[i]);
  }
  std::vector<PretrainExample> out;
  for (auto& v : per_doc) {
    for (auto& ex : v) out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace kinctx
