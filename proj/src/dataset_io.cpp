#include "kinctx/dataset_io.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

#include <json.hpp>

namespace kinctx {

using nlohmann::json;

namespace {

std::string scalar_text(const json& v) {
  return v.is_string() ? v.get<std::string>() : v.dump();
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return in;
}

}  // namespace

std::vector<LinkedExample> read_dataset(std::istream& in, std::string_view source,
                                        const KnowledgeBase* kb) {
  const std::string name(source);
  std::vector<LinkedExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(name, lineno, e.what());
    }
    if (!row.is_object()) throw ParseError(name, lineno, "expected a JSON object");

    LinkedExample ex;
    ex.id = row.contains("id") ? scalar_text(row["id"]) : std::to_string(lineno);
    auto add_field = [&](const char* key, bool required) {
      if (!row.contains(key)) {
        if (required) throw ParseError(name, lineno, std::string("missing \"") + key + "\"");
        return;
      }
      if (!row[key].is_string()) throw ParseError(name, lineno, std::string("\"") + key + "\" must be a string");
      ex.fields.push_back({key, row[key].get<std::string>(), {}});
    };
    try {
      if (row.contains("question")) {
        add_field("question", true);
        add_field("context", false);
        if (row.contains("choices")) ex.choices = row["choices"].get<std::vector<std::string>>();
        if (row.contains("answer")) ex.label = scalar_text(row["answer"]);
      } else {
        add_field("text", true);
        add_field("text_pair", false);
        if (row.contains("label")) ex.label = scalar_text(row["label"]);
      }
      if (row.contains("entities")) {
        if (!kb) throw ParseError(name, lineno, "pre-linked entities need a knowledge base");
        std::vector<EntityIdx> ids;
        for (const auto& e : row["entities"]) {
          const auto id = e.get<std::string>();
          auto idx = kb->find_entity(id);
          if (!idx) throw ParseError(name, lineno, "unknown entity '" + id + "'");
          ids.push_back(*idx);
        }
        ex.entities = make_entity_set(std::move(ids));
      }
    } catch (const json::exception& e) {
      throw ParseError(name, lineno, e.what());
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<LinkedExample> read_dataset_file(const std::filesystem::path& path,
                                             const KnowledgeBase* kb) {
  auto in = open_input(path);
  return read_dataset(in, path.string(), kb);
}

std::vector<LinkedExample> read_documents(std::istream& in) {
  std::vector<LinkedExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto text = trim(line);
    if (text.empty()) continue;
    LinkedExample ex;
    ex.id = std::to_string(lineno);
    ex.fields.push_back({"text", std::string(text), {}});
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<LinkedExample> read_documents_file(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_documents(in);
}

void link_dataset(std::span<LinkedExample> examples, const LinkerIndex& index) {
  std::vector<EntitySet> prelinked(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) prelinked[i] = examples[i].entities;
  link_all(examples, index);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].mention_count() == 0 && !prelinked[i].empty()) {
      examples[i].entities = std::move(prelinked[i]);
    }
  }
}

std::vector<std::string> word_vocabulary(std::span<const LinkedExample> examples) {
  std::set<std::string> words;
  for (const auto& ex : examples) {
    for (const auto& f : ex.fields) {
      for (auto& tok : tokenize(f.text)) {
        if (tok.is_word) words.insert(std::move(tok.text));
      }
    }
  }
  return {words.begin(), words.end()};
}

void write_mentions(std::ostream& out, std::span<const LinkedExample> examples,
                    const KnowledgeBase& kb) {
  for (const auto& ex : examples) {
    nlohmann::ordered_json row;
    row["id"] = ex.id;
    auto mentions = nlohmann::ordered_json::array();
    for (const auto& f : ex.fields) {
      for (const auto& m : f.mentions) {
        mentions.push_back({{"field", f.name},
                            {"start", m.span.start},
                            {"end", m.span.end},
                            {"surface", m.surface},
                            {"entity", kb.entity_id(m.entity)},
                            {"ambiguous", m.ambiguous}});
      }
    }
    row["mentions"] = std::move(mentions);
    auto entities = nlohmann::ordered_json::array();
    for (EntityIdx e : ex.entities) entities.push_back(kb.entity_id(e));
    row["entities"] = std::move(entities);
    out << row.dump() << '\n';
  }
}

void write_pretrain(std::ostream& out, std::span<const PretrainInstance> instances) {
  for (std::size_t i = 0; i < instances.size(); ++i) {
    for (const auto& ex : instances[i].examples) {
      nlohmann::ordered_json row;
      row["instance"] = i;
      row["task"] = task_name(ex.task);
      row["tokens"] = ex.tokens;
      row["mask"] = ex.mask;
      auto targets = nlohmann::ordered_json::object();
      for (const auto& [pos, tok] : ex.targets) targets[std::to_string(pos)] = tok;
      row["targets"] = std::move(targets);
      out << row.dump() << '\n';
    }
  }
}

std::vector<std::string> read_contexts_file(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto text = trim(line);
    if (text.empty()) continue;
    if (text.front() != '{') {
      out.emplace_back(text);
      continue;
    }
    try {
      const auto row = json::parse(text);
      if (row.contains("prompt")) {
        out.push_back(row["prompt"].get<std::string>());
      } else {
        const auto tokens = row.at("tokens").get<std::vector<std::string>>();
        const auto mask = row.at("mask").get<std::vector<int>>();
        if (mask.size() != tokens.size()) throw ParseError(path.string(), lineno, "tokens/mask length mismatch");
        std::vector<std::string> prefix;
        for (std::size_t i = 0; i < tokens.size() && !mask[i]; ++i) prefix.push_back(tokens[i]);
        out.push_back(join_tokens(prefix));
      }
    } catch (const json::exception& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
  }
  if (out.empty()) throw Error(path.string() + ": no contexts");
  return out;
}

}  // namespace kinctx
