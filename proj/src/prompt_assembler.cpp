#include "kinctx/prompt_assembler.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace kinctx {

using nlohmann::json;

TaskKind parse_task_kind(std::string_view name) {
  if (name == "classification") return TaskKind::classification;
  if (name == "multiple_choice") return TaskKind::multiple_choice;
  if (name == "extractive") return TaskKind::extractive;
  throw Error("unknown task kind '" + std::string(name) + "'");
}

std::string_view task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::classification: return "classification";
    case TaskKind::multiple_choice: return "multiple_choice";
    case TaskKind::extractive: return "extractive";
  }
  return "?";
}

// --- Verbalizer -------------------------------------------------------------

Verbalizer::Verbalizer(std::vector<std::pair<std::string, std::string>> class_to_word)
    : pairs_(std::move(class_to_word)) {
  for (std::size_t i = 0; i < pairs_.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (pairs_[i].first == pairs_[j].first) throw Error("verbalizer: repeated class " + pairs_[i].first);
      if (pairs_[i].second == pairs_[j].second) {
        throw Error("verbalizer: label word '" + pairs_[i].second + "' used twice");
      }
    }
  }
}

const std::string& Verbalizer::word(std::string_view class_id) const {
  for (const auto& [c, w] : pairs_) {
    if (c == class_id) return w;
  }
  throw Error("label '" + std::string(class_id) + "' is not in the verbalizer");
}

const std::string& Verbalizer::class_of(std::string_view w) const {
  for (const auto& [c, word] : pairs_) {
    if (word == w) return c;
  }
  throw Error("label word '" + std::string(w) + "' is not in the verbalizer");
}

bool Verbalizer::has_class(std::string_view class_id) const {
  return std::any_of(pairs_.begin(), pairs_.end(), [&](const auto& p) { return p.first == class_id; });
}

std::vector<std::string> Verbalizer::words() const {
  std::vector<std::string> out;
  for (const auto& p : pairs_) out.push_back(p.second);
  return out;
}

std::vector<std::string> Verbalizer::classes() const {
  std::vector<std::string> out;
  for (const auto& p : pairs_) out.push_back(p.first);
  return out;
}

// --- Template table ---------------------------------------------------------

TemplateTable TemplateTable::parse(std::string_view json_text) {
  TemplateTable table;
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(std::string("template table: ") + e.what());
  }
  if (!doc.is_object()) throw Error("template table must be a JSON object keyed by task id");
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const auto& v = it.value();
    TaskTemplate t;
    t.task_id = it.key();
    try {
      t.kind = parse_task_kind(v.at("kind").get<std::string>());
      t.preamble = v.value("preamble", "");
      t.input_format = v.at("input").get<std::string>();
      t.answer_prefix = v.at("answer_prefix").get<std::string>();
      t.field_separator = v.value("field_separator", "\n");
      t.example_separator = v.value("example_separator", "\n\n");
      t.metric = v.value("metric", "accuracy");
      t.positive_label = v.value("positive_label", "");
      if (v.contains("labels")) {
        for (const auto& pair : v.at("labels")) {
          t.label_words.emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<std::string>());
        }
      }
    } catch (const json::exception& e) {
      throw Error("template '" + it.key() + "': " + e.what());
    }
    if (t.kind == TaskKind::classification && t.label_words.empty()) {
      throw Error("template '" + it.key() + "': classification needs label words");
    }
    (void)t.verbalizer();  // validates distinctness
    table.templates_.emplace(t.task_id, std::move(t));
  }
  return table;
}

const TemplateTable& TemplateTable::builtin() {
  static const TemplateTable table = parse(builtin_templates_json());
  return table;
}

TemplateTable TemplateTable::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const TaskTemplate& TemplateTable::get(std::string_view task_id) const {
  auto it = templates_.find(task_id);
  if (it == templates_.end()) throw Error("no template for task '" + std::string(task_id) + "'");
  return it->second;
}

bool TemplateTable::contains(std::string_view task_id) const {
  return templates_.find(task_id) != templates_.end();
}

std::vector<std::string> TemplateTable::task_ids() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : templates_) out.push_back(k);
  return out;
}

// --- Rendering --------------------------------------------------------------

std::string format_choices(std::span<const std::string> choices) {
  std::string out;
  for (std::size_t i = 0; i < choices.size(); ++i) {
    if (i) out += ' ';
    out += '(';
    out += static_cast<char>('A' + static_cast<int>(i % 26));
    out += ") ";
    out += choices[i];
  }
  return out;
}

std::string render_input(const LinkedExample& ex, const TaskTemplate& tmpl) {
  const std::string& fmt = tmpl.input_format;
  std::string out;
  std::size_t i = 0;
  while (i < fmt.size()) {
    if (fmt[i] == '{') {
      const auto close = fmt.find('}', i);
      if (close == std::string::npos) throw Error("template '" + tmpl.task_id + "': unterminated placeholder");
      const std::string name = fmt.substr(i + 1, close - i - 1);
      if (name == "choices") {
        out += format_choices(ex.choices);
      } else if (const auto* f = ex.field(name)) {
        out += f->text;
      } else if (name == "context") {
        // Optional for multiple-choice formats.
      } else {
        throw Error("example '" + ex.id + "' has no field '" + name + "' required by template '" +
                    tmpl.task_id + "'");
      }
      i = close + 1;
    } else {
      out += fmt[i++];
    }
  }
  return out;
}

namespace {

std::string answer_text(const LinkedExample& demo, const TaskTemplate& tmpl,
                        const Verbalizer* verbalizer) {
  if (!demo.label) throw Error("demonstration '" + demo.id + "' has no label");
  if (demo.label->empty()) return {};
  if (tmpl.kind == TaskKind::classification) {
    if (!verbalizer) throw Error("classification prompt needs a verbalizer");
    return verbalizer->word(*demo.label);
  }
  return *demo.label;
}

}  // namespace

std::string render_demo(const LinkedExample& demo, const TaskTemplate& tmpl,
                        const Verbalizer* verbalizer) {
  std::string out = render_input(demo, tmpl) + tmpl.field_separator + tmpl.answer_prefix;
  const std::string answer = answer_text(demo, tmpl, verbalizer);
  if (!answer.empty()) out += " " + answer;
  return out;
}

std::string render_prompt(std::span<const LinkedExample> demos, const LinkedExample& target,
                          const TaskTemplate& tmpl, const Verbalizer* verbalizer) {
  std::vector<std::string> parts;
  if (!tmpl.preamble.empty()) parts.push_back(tmpl.preamble);
  for (const auto& d : demos) parts.push_back(render_demo(d, tmpl, verbalizer));
  parts.push_back(render_input(target, tmpl) + tmpl.field_separator + tmpl.answer_prefix);
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += tmpl.example_separator;
    out += parts[i];
  }
  return out;
}

std::optional<std::string> parse_answer(std::string_view rendered_demo, const TaskTemplate& tmpl) {
  const std::string marker = tmpl.field_separator + tmpl.answer_prefix;
  const auto pos = rendered_demo.rfind(marker);
  if (pos == std::string_view::npos) return std::nullopt;
  auto rest = rendered_demo.substr(pos + marker.size());
  if (rest.empty()) return std::string();
  if (rest.front() != ' ') return std::nullopt;
  return std::string(rest.substr(1));
}

// --- Truncation -------------------------------------------------------------

LinkedExample truncate(const LinkedExample& ex, std::size_t max_tokens) {
  if (max_tokens == 0) throw Error("truncate: max_tokens must be positive");
  std::vector<std::vector<Token>> tokens;
  std::size_t total = 0;
  for (const auto& f : ex.fields) {
    tokens.push_back(tokenize(f.text));
    total += tokens.back().size();
  }
  if (total <= max_tokens) return ex;

  LinkedExample out = ex;
  const bool had_mentions = ex.mention_count() > 0;
  std::size_t excess = total - max_tokens;
  for (std::size_t fi = out.fields.size(); fi-- > 0 && excess > 0;) {
    auto& f = out.fields[fi];
    const auto& toks = tokens[fi];
    const std::size_t cut = std::min(excess, toks.size());
    if (cut == 0) continue;
    const std::size_t keep = toks.size() - cut;
    const std::size_t new_len = keep == 0 ? 0 : toks[keep - 1].span.end;
    f.text.resize(new_len);
    std::erase_if(f.mentions, [&](const Mention& m) { return m.span.end > new_len; });
    excess -= cut;
  }
  if (had_mentions) recompute_entities(out);
  return out;
}

// --- Destruction ------------------------------------------------------------

namespace {

constexpr Destruction kAllDestructions[] = {
    Destruction::origin,        Destruction::shuffle_entity, Destruction::shuffle_non_entity,
    Destruction::shuffle_label, Destruction::remove_entity,  Destruction::remove_label,
    Destruction::no_demonstration,
};

struct Edit {
  Span span;
  std::string replacement;
  /// When set, the replacement text becomes a mention of this entity.
  std::optional<EntityIdx> entity;
};

// Rewrites a field with sorted, non-overlapping edits, shifting surviving
// mentions. Mentions touched by an edit are dropped unless the edit
// re-creates them.
void apply_edits(TextField& field, std::vector<Edit> edits) {
  std::sort(edits.begin(), edits.end(),
            [](const Edit& a, const Edit& b) { return a.span.start < b.span.start; });
  std::string text;
  std::vector<Mention> mentions;
  std::size_t cursor = 0;
  std::size_t e = 0;
  std::ptrdiff_t shift = 0;
  auto flush_mentions_before = [&](std::size_t limit) {
    for (const auto& m : field.mentions) {
      if (m.span.start >= cursor && m.span.end <= limit) {
        Mention moved = m;
        moved.span.start = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(m.span.start) + shift);
        moved.span.end = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(m.span.end) + shift);
        mentions.push_back(std::move(moved));
      }
    }
  };
  for (; e < edits.size(); ++e) {
    const Edit& ed = edits[e];
    flush_mentions_before(ed.span.start);
    text.append(field.text, cursor, ed.span.start - cursor);
    const std::size_t at = text.size();
    text += ed.replacement;
    if (ed.entity && !ed.replacement.empty()) {
      mentions.push_back({{at, text.size()}, ed.replacement, *ed.entity, false});
    }
    shift += static_cast<std::ptrdiff_t>(ed.replacement.size()) -
             static_cast<std::ptrdiff_t>(ed.span.size());
    cursor = ed.span.end;
  }
  flush_mentions_before(field.text.size());
  text.append(field.text, cursor, std::string::npos);
  std::sort(mentions.begin(), mentions.end(),
            [](const Mention& a, const Mention& b) { return a.span.start < b.span.start; });
  field.text = std::move(text);
  field.mentions = std::move(mentions);
}

void shuffle_entities(LinkedExample& demo, const KnowledgeBase& kb, Rng& rng) {
  if (kb.alias_count() == 0) throw Error("shuffle_entity needs a knowledge base with aliases");
  for (auto& f : demo.fields) {
    std::vector<Edit> edits;
    for (const auto& m : f.mentions) {
      const std::size_t a = rng.below(kb.alias_count());
      edits.push_back({m.span, kb.alias_at(a), kb.alias_owner(a)});
    }
    apply_edits(f, std::move(edits));
  }
  recompute_entities(demo);
}

// Widens a deletion by one neighbouring space so no double space is left.
Span with_space(const std::string& t, Span s, std::size_t floor) {
  if (s.end < t.size() && t[s.end] == ' ') {
    ++s.end;
  } else if (s.start > floor && t[s.start - 1] == ' ') {
    --s.start;
  }
  return s;
}

std::optional<Span> find_on_boundaries(const std::string& folded_text, const std::string& folded) {
  for (auto pos = folded_text.find(folded); pos != std::string::npos; pos = folded_text.find(folded, pos + 1)) {
    const std::size_t end = pos + folded.size();
    if (is_token_boundary(folded_text, pos) && is_token_boundary(folded_text, end)) return Span{pos, end};
  }
  return std::nullopt;
}

void remove_entities(LinkedExample& demo) {
  for (auto& f : demo.fields) {
    std::vector<Edit> edits;
    std::vector<std::string> removed;
    std::size_t consumed = 0;
    for (const auto& m : f.mentions) {
      const Span s = with_space(f.text, m.span, consumed);
      edits.push_back({s, {}, std::nullopt});
      removed.push_back(fold_case(m.surface));
      consumed = s.end;
    }
    apply_edits(f, std::move(edits));
    // Deleting a span can join its neighbours into another copy of a removed
    // surface ("new new york york"); delete those as well.
    for (bool changed = true; changed;) {
      changed = false;
      for (const auto& surface : removed) {
        if (surface.empty()) continue;
        if (auto hit = find_on_boundaries(fold_case(f.text), surface)) {
          const Span s = with_space(f.text, *hit, 0);
          f.text.erase(s.start, s.size());
          changed = true;
        }
      }
    }
  }
  recompute_entities(demo);
}

void shuffle_non_entities(LinkedExample& demo, std::span<const std::string> vocab, Rng& rng,
                          DestructionAudit& audit) {
  struct Slot {
    std::size_t field;
    Span span;
  };
  std::vector<Slot> candidates;
  std::size_t entity_tokens = 0;
  for (std::size_t fi = 0; fi < demo.fields.size(); ++fi) {
    const auto& f = demo.fields[fi];
    for (const auto& tok : tokenize(f.text)) {
      const bool inside = std::any_of(f.mentions.begin(), f.mentions.end(), [&](const Mention& m) {
        return m.span.start <= tok.span.start && tok.span.end <= m.span.end;
      });
      if (inside) {
        ++entity_tokens;
      } else if (tok.is_word) {
        candidates.push_back({fi, tok.span});
      }
    }
  }
  const std::size_t want = entity_tokens;
  const std::size_t take = std::min(want, candidates.size());
  audit.entity_tokens += entity_tokens;
  audit.replaced_non_entity_tokens += take;
  audit.shortfall += want - take;
  if (take == 0) return;
  if (vocab.empty()) throw Error("shuffle_non_entity needs a vocabulary");

  // Partial Fisher-Yates picks `take` distinct slots.
  for (std::size_t i = 0; i < take; ++i) {
    std::swap(candidates[i], candidates[i + rng.below(candidates.size() - i)]);
  }
  std::vector<std::vector<Edit>> per_field(demo.fields.size());
  for (std::size_t i = 0; i < take; ++i) {
    per_field[candidates[i].field].push_back({candidates[i].span, vocab[rng.below(vocab.size())], std::nullopt});
  }
  for (std::size_t fi = 0; fi < demo.fields.size(); ++fi) {
    if (!per_field[fi].empty()) apply_edits(demo.fields[fi], std::move(per_field[fi]));
  }
}

void shuffle_label(LinkedExample& demo, std::span<const std::string> label_space, Rng& rng) {
  std::span<const std::string> space = label_space.empty() ? std::span<const std::string>(demo.choices)
                                                           : label_space;
  std::vector<std::string> wrong;
  for (const auto& l : space) {
    if (!demo.label || l != *demo.label) wrong.push_back(l);
  }
  std::sort(wrong.begin(), wrong.end());
  wrong.erase(std::unique(wrong.begin(), wrong.end()), wrong.end());
  if (space.size() < 2 || wrong.empty()) {
    throw Error("shuffle_label needs at least two labels (demo '" + demo.id + "')");
  }
  demo.label = wrong[rng.below(wrong.size())];
}

}  // namespace

Destruction parse_destruction(std::string_view name) {
  for (auto d : kAllDestructions) {
    if (destruction_name(d) == name) return d;
  }
  throw Error("unknown destruction setting '" + std::string(name) + "'");
}

std::string_view destruction_name(Destruction setting) {
  switch (setting) {
    case Destruction::origin: return "origin";
    case Destruction::shuffle_entity: return "shuffle_entity";
    case Destruction::shuffle_non_entity: return "shuffle_non_entity";
    case Destruction::shuffle_label: return "shuffle_label";
    case Destruction::remove_entity: return "remove_entity";
    case Destruction::remove_label: return "remove_label";
    case Destruction::no_demonstration: return "no_demonstration";
  }
  return "?";
}

std::span<const Destruction> all_destructions() { return kAllDestructions; }

std::vector<LinkedExample> destruct(std::span<const LinkedExample> demos, Destruction setting,
                                    const KnowledgeBase& kb,
                                    std::span<const std::string> label_space,
                                    std::span<const std::string> vocab, Rng& rng,
                                    DestructionAudit* audit) {
  if (setting == Destruction::no_demonstration) return {};
  std::vector<LinkedExample> out(demos.begin(), demos.end());
  DestructionAudit local;
  for (auto& demo : out) {
    switch (setting) {
      case Destruction::origin: break;
      case Destruction::shuffle_entity: shuffle_entities(demo, kb, rng); break;
      case Destruction::shuffle_non_entity: shuffle_non_entities(demo, vocab, rng, local); break;
      case Destruction::shuffle_label: shuffle_label(demo, label_space, rng); break;
      case Destruction::remove_entity: remove_entities(demo); break;
      case Destruction::remove_label: demo.label = std::string(); break;
      case Destruction::no_demonstration: break;
    }
  }
  if (audit) *audit = local;
  return out;
}

// --- Candidates -------------------------------------------------------------

std::vector<std::string> candidates_for(const LinkedExample& target, const TaskTemplate& tmpl,
                                        std::size_t span_ngram) {
  switch (tmpl.kind) {
    case TaskKind::classification:
      return tmpl.verbalizer().words();
    case TaskKind::multiple_choice:
      if (target.choices.empty()) throw Error("example '" + target.id + "' has no choices");
      return target.choices;
    case TaskKind::extractive:
      break;
  }
  const TextField* ctx = target.field("context");
  if (!ctx) throw Error("example '" + target.id + "' has no context");
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  auto add = [&](std::string s) {
    if (!s.empty() && seen.insert(s).second) out.push_back(std::move(s));
  };
  for (const auto& m : ctx->mentions) add(m.surface);
  if (span_ngram > 0) {
    const auto toks = tokenize(ctx->text);
    for (std::size_t i = 0; i < toks.size(); ++i) {
      for (std::size_t n = 1; n <= span_ngram && i + n <= toks.size(); ++n) {
        add(ctx->text.substr(toks[i].span.start, toks[i + n - 1].span.end - toks[i].span.start));
      }
    }
  }
  if (out.empty()) throw Error("example '" + target.id + "' has no answer candidates");
  return out;
}

}  // namespace kinctx
