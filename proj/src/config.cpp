#include "kinctx/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>

#include "kinctx/text.hpp"

namespace kinctx {

const std::vector<std::string>& known_setting_keys() {
  static const std::vector<std::string> keys{
      "task", "train", "test", "aliases", "triples", "relations", "embeddings", "templates",
      "k", "seeds", "retriever", "alpha", "gamma", "subset_size", "order", "normalization",
      "calibration", "threshold", "prior_contexts", "prior_samples",
      "content_free_inputs", "destruction", "suite", "metric", "positive_label",
      "max_example_tokens", "span_ngram", "relevance_min", "relevance_max",
      "scorer", "mock_bias", "mock_default_bias", "mock_boost", "mock_seed",
      "remote_url", "remote_timeout", "remote_max_inflight", "jobs", "record_runtime",
  };
  return keys;
}

namespace {

std::string unquote(std::string v) {
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) {
    return v.substr(1, v.size() - 2);
  }
  return v;
}

template <typename T>
T parse_integer(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw Error("setting '" + std::string(key) + "': '" + std::string(text) + "' is not a non-negative integer");
  }
  return value;
}

double parse_double(std::string_view key, std::string_view text) {
  double value = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw Error("setting '" + std::string(key) + "': '" + std::string(text) + "' is not a number");
  }
  return value;
}

}  // namespace

Settings Settings::parse(std::istream& in, std::string_view source) {
  Settings s;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto text = trim(line);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ParseError(std::string(source), lineno, "expected key = value");
    const auto key = trim(std::string_view(text).substr(0, eq));
    auto value = unquote(trim(std::string_view(text).substr(eq + 1)));
    try {
      s.set(key, std::move(value));
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(std::string(source), lineno, e.what());
    }
  }
  return s;
}

Settings Settings::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  return parse(in, path.string());
}

void Settings::set(const std::string& key, std::string value) {
  const auto& keys = known_setting_keys();
  if (std::find(keys.begin(), keys.end(), key) == keys.end()) throw Error("unknown setting '" + key + "'");
  values_[key] = std::move(value);
}

void Settings::merge(const Settings& overrides) {
  for (const auto& [k, v] : overrides.values_) values_[k] = v;
}

bool Settings::has(std::string_view key) const { return values_.find(key) != values_.end(); }

std::optional<std::string> Settings::get(std::string_view key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string Settings::get_or(std::string_view key, std::string fallback) const {
  auto v = get(key);
  return v ? *v : std::move(fallback);
}

const std::string& Settings::require(std::string_view key) const {
  auto it = values_.find(key);
  if (it == values_.end() || it->second.empty()) throw Error("missing setting '" + std::string(key) + "'");
  return it->second;
}

std::optional<double> Settings::number(std::string_view key) const {
  auto v = get(key);
  if (!v) return std::nullopt;
  return parse_double(key, *v);
}

std::optional<std::size_t> Settings::count(std::string_view key) const {
  auto v = get(key);
  if (!v) return std::nullopt;
  return parse_integer<std::size_t>(key, *v);
}

std::optional<std::uint64_t> Settings::unsigned_number(std::string_view key) const {
  auto v = get(key);
  if (!v) return std::nullopt;
  return parse_integer<std::uint64_t>(key, *v);
}

std::optional<bool> Settings::flag(std::string_view key) const {
  auto v = get(key);
  if (!v) return std::nullopt;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw Error("setting '" + std::string(key) + "': expected true or false");
}

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
  std::vector<std::uint64_t> out;
  for (const auto& part : split(text, ',')) {
    const auto t = trim(part);
    if (t.empty()) continue;
    out.push_back(parse_integer<std::uint64_t>("seeds", t));
  }
  if (out.empty()) throw Error("seed list is empty");
  return out;
}

std::map<std::string, double> parse_bias_list(std::string_view text) {
  std::map<std::string, double> out;
  for (const auto& part : split(text, ',')) {
    const auto t = trim(part);
    if (t.empty()) continue;
    const auto colon = t.rfind(':');
    if (colon == std::string::npos) throw Error("mock_bias entry '" + t + "' is not candidate:weight");
    out[trim(std::string_view(t).substr(0, colon))] =
        parse_double("mock_bias", trim(std::string_view(t).substr(colon + 1)));
  }
  return out;
}

ExperimentConfig experiment_from_settings(const Settings& s) {
  ExperimentConfig c;
  c.task = s.get_or("task", "");
  if (auto v = s.count("k")) c.k = *v;
  if (auto v = s.get("seeds")) c.seeds = parse_seed_list(*v);
  if (auto v = s.get("retriever")) c.selection = parse_demo_selection(*v);
  if (auto v = s.number("alpha")) c.retriever.alpha = *v;
  if (auto v = s.number("gamma")) c.retriever.gamma = *v;
  if (auto v = s.count("subset_size")) c.retriever.subset_size = *v;
  if (auto v = s.get("order")) c.retriever.order = parse_order_policy(*v);
  if (auto v = s.get("normalization")) c.retriever.normalization = parse_normalization(*v);
  if (auto v = s.get("calibration")) c.calibration = parse_calibration(*v);
  if (auto v = s.number("threshold")) c.threshold = *v;
  if (auto v = s.count("prior_samples")) c.prior_samples = *v;
  if (auto v = s.get("content_free_inputs")) {
    c.content_free_inputs.clear();
    for (const auto& part : split(*v, '|')) c.content_free_inputs.push_back(trim(part));
  }
  if (auto v = s.get("destruction"); v && *v != "none") c.destruction = parse_destruction(*v);
  if (auto v = s.get("metric")) c.metric = *v;
  if (auto v = s.get("positive_label")) c.positive_label = *v;
  if (auto v = s.count("max_example_tokens")) c.max_example_tokens = *v;
  if (auto v = s.count("span_ngram")) c.span_ngram = *v;
  c.relevance_min = s.number("relevance_min");
  c.relevance_max = s.number("relevance_max");
  if (auto v = s.flag("record_runtime")) c.record_runtime = *v;
  c.validate();
  return c;
}

std::unique_ptr<Scorer> scorer_from_settings(const Settings& s) {
  const auto kind = s.get_or("scorer", "mock");
  if (kind == "mock") {
    MockScorerConfig m;
    if (auto v = s.get("mock_bias")) m.base_bias = parse_bias_list(*v);
    if (auto v = s.number("mock_default_bias")) m.default_bias = *v;
    if (auto v = s.number("mock_boost")) m.signal_boost = *v;
    if (auto v = s.unsigned_number("mock_seed")) m.seed = *v;
    return std::make_unique<MockScorer>(std::move(m));
  }
  if (kind == "remote") {
    RemoteScorerConfig r;
    r.base_url = s.require("remote_url");
    if (auto v = s.count("remote_timeout")) r.timeout = std::chrono::milliseconds(*v);
    if (auto v = s.count("remote_max_inflight")) r.max_inflight = *v;
    return std::make_unique<RemoteScorer>(std::move(r));
  }
  throw Error("unknown scorer '" + kind + "' (expected mock or remote)");
}

}  // namespace kinctx
