#include "kinctx/eval_harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>

#include <json.hpp>

#include "kinctx/dataset_io.hpp"
#include "kinctx/pretrain_builder.hpp"

namespace kinctx {

Calibration parse_calibration(std::string_view name) {
  if (name == "none") return Calibration::none;
  if (name == "kpc") return Calibration::kpc;
  if (name == "content_free") return Calibration::content_free;
  throw Error("unknown calibration '" + std::string(name) + "'");
}

std::string_view calibration_name(Calibration c) {
  switch (c) {
    case Calibration::none: return "none";
    case Calibration::kpc: return "kpc";
    case Calibration::content_free: return "content_free";
  }
  return "?";
}

DemoSelection parse_demo_selection(std::string_view name) {
  if (name == "ker") return DemoSelection::ker;
  if (name == "random") return DemoSelection::random;
  throw Error("unknown retriever '" + std::string(name) + "' (expected ker or random)");
}

std::string_view demo_selection_name(DemoSelection s) {
  return s == DemoSelection::ker ? "ker" : "random";
}

namespace {

bool known_metric(std::string_view m) {
  return m == "accuracy" || m == "binary_f1" || m == "exact_match";
}

}  // namespace

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw Error("experiment: seed list is empty");
  if (!metric.empty() && !known_metric(metric)) throw Error("experiment: unknown metric '" + metric + "'");
  if (max_example_tokens == 0) throw Error("experiment: max_example_tokens must be positive");
  if (prior_samples == 0) throw Error("experiment: prior_samples must be positive");
  if (threshold < 0.0) throw Error("experiment: threshold must be >= 0");
  if (relevance_min && relevance_max && *relevance_min > *relevance_max) {
    throw Error("experiment: relevance_min exceeds relevance_max");
  }
  retriever.validate();
}

// --- Metrics ----------------------------------------------------------------

std::pair<double, double> mean_and_std(std::span<const double> values) {
  if (values.empty()) throw Error("mean of an empty list");
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

std::string normalize_answer(std::string_view s) {
  std::string cleaned;
  cleaned.reserve(s.size());
  for (unsigned char c : s) {
    if (std::ispunct(c)) continue;
    cleaned += static_cast<char>(std::tolower(c));
  }
  std::string out;
  for (const auto& word : split(cleaned, ' ')) {
    const auto w = trim(word);
    if (w.empty() || w == "a" || w == "an" || w == "the") continue;
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

double compute_metric(std::span<const std::string> predictions, std::span<const std::string> golds,
                      std::string_view metric, std::string_view positive) {
  if (predictions.size() != golds.size()) {
    throw Error("compute_metric: " + std::to_string(predictions.size()) + " predictions for " +
                std::to_string(golds.size()) + " golds");
  }
  if (golds.empty()) throw Error("compute_metric: no examples");
  const auto n = static_cast<double>(golds.size());
  if (metric == "accuracy") {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < golds.size(); ++i) hit += predictions[i] == golds[i];
    return static_cast<double>(hit) / n;
  }
  if (metric == "exact_match") {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < golds.size(); ++i) {
      hit += normalize_answer(predictions[i]) == normalize_answer(golds[i]);
    }
    return static_cast<double>(hit) / n;
  }
  if (metric == "binary_f1") {
    if (positive.empty()) throw Error("binary_f1 needs a positive label");
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < golds.size(); ++i) {
      const bool p = predictions[i] == positive, g = golds[i] == positive;
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
    }
    if (tp == 0) return 0.0;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    return 2.0 * precision * recall / (precision + recall);
  }
  throw Error("unknown metric '" + std::string(metric) + "'");
}

// --- Demonstrations ---------------------------------------------------------

namespace {

enum Stream : std::uint64_t { kSelect = 1, kDestruct = 2, kPrior = 3 };

bool no_demonstrations(const ExperimentConfig& config) {
  return config.k == 0 || config.destruction == Destruction::no_demonstration;
}

std::vector<std::size_t> random_selection(std::size_t n, std::size_t k, OrderPolicy order, Rng& rng) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  const std::size_t take = std::min(k, n);
  for (std::size_t i = 0; i < take; ++i) std::swap(pool[i], pool[i + rng.below(n - i)]);
  pool.resize(take);
  if (order == OrderPolicy::random) rng.shuffle(pool.begin(), pool.end());
  return pool;
}

const TaskTemplate& template_of(const EvalData& data) {
  if (!data.templ) throw Error("evaluation needs a task template");
  return *data.templ;
}

}  // namespace

std::vector<std::size_t> select_demonstrations(const ExperimentConfig& config, const EvalData& data,
                                               std::uint64_t seed) {
  if (no_demonstrations(config)) return {};
  if (data.train.empty()) throw Error("evaluation: empty training set");
  if (config.selection == DemoSelection::random) {
    Rng rng(derive_seed(seed, kSelect));
    return random_selection(data.train.size(), config.k, config.retriever.order, rng);
  }
  if (!data.embeddings) throw Error("KER selection needs an embedding table");
  RetrieverConfig rc = config.retriever;
  rc.k = config.k;
  rc.seed = seed;
  auto plan = retrieve(data.train, data.test, rc, *data.embeddings);
  if (!config.relevance_min && !config.relevance_max) return plan.selected;

  const double lo = config.relevance_min.value_or(-INFINITY);
  const double hi = config.relevance_max.value_or(INFINITY);
  std::vector<std::size_t> rows;
  std::vector<double> weights;
  for (std::size_t r = 0; r < plan.s.size(); ++r) {
    if (plan.s[r] >= lo && plan.s[r] <= hi) {
      rows.push_back(r);
      weights.push_back(plan.s_prime[r]);
    }
  }
  if (rows.empty()) throw Error("no training example has relevance inside the configured range");
  Rng rng(derive_seed(seed, kSelect));
  auto positions = select_examples(weights, config.k, rng);
  apply_order(positions, weights, rc.order, rng);
  std::vector<std::size_t> out;
  for (std::size_t p : positions) out.push_back(plan.subset_ids[rows[p]]);
  return out;
}

namespace {

std::vector<LinkedExample> materialize(const ExperimentConfig& config, const EvalData& data,
                                       std::uint64_t seed, std::span<const std::size_t> selected) {
  if (no_demonstrations(config)) return {};
  const auto& tmpl = template_of(data);
  std::vector<LinkedExample> demos;
  for (std::size_t i : selected) demos.push_back(data.train[i]);

  if (config.destruction && *config.destruction != Destruction::origin) {
    if (!data.kb) throw Error("destruction needs a knowledge base");
    std::vector<std::string> labels;
    if (tmpl.kind == TaskKind::classification) labels = tmpl.verbalizer().classes();
    std::vector<std::string> own_vocab;
    std::span<const std::string> vocab = data.vocab;
    if (vocab.empty()) {
      own_vocab = word_vocabulary(data.train);
      vocab = own_vocab;
    }
    Rng rng(derive_seed(seed, kDestruct));
    demos = destruct(demos, *config.destruction, *data.kb, labels, vocab, rng);
  }
  for (auto& d : demos) d = truncate(d, config.max_example_tokens);
  return demos;
}

}  // namespace

std::vector<LinkedExample> prepare_demonstrations(const ExperimentConfig& config, const EvalData& data,
                                                  std::uint64_t seed) {
  return materialize(config, data, seed, select_demonstrations(config, data, seed));
}

std::string build_prompt(std::span<const LinkedExample> demos, const LinkedExample& target,
                         const TaskTemplate& tmpl, std::size_t max_example_tokens) {
  const auto verbalizer = tmpl.verbalizer();
  const Verbalizer* v = tmpl.kind == TaskKind::classification ? &verbalizer : nullptr;
  return render_prompt(demos, truncate(target, max_example_tokens), tmpl, v);
}

// --- Evaluation -------------------------------------------------------------

namespace {

std::vector<std::string> sample_contexts(std::span<const std::string> contexts, std::size_t n,
                                         std::uint64_t seed) {
  if (contexts.empty()) throw Error("kpc calibration needs prior contexts");
  if (n >= contexts.size()) return {contexts.begin(), contexts.end()};
  std::vector<std::size_t> idx(contexts.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, kPrior));
  for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  std::vector<std::string> out;
  for (std::size_t i : idx) out.push_back(contexts[i]);
  return out;
}

LinkedExample content_free_target(const LinkedExample& target, const std::string& filler) {
  LinkedExample out;
  out.id = target.id;
  out.choices = target.choices;
  for (const auto& f : target.fields) out.fields.push_back({f.name, filler, {}});
  return out;
}

std::map<std::string, std::string> echo(const ExperimentConfig& c, std::string_view metric,
                                        std::string_view positive) {
  std::map<std::string, std::string> out;
  auto num = [](double v) { return nlohmann::json(v).dump(); };
  out["task"] = c.task;
  out["k"] = std::to_string(c.k);
  out["retriever"] = std::string(demo_selection_name(c.selection));
  out["alpha"] = num(c.retriever.alpha);
  out["gamma"] = num(c.retriever.gamma);
  out["subset_size"] = std::to_string(c.retriever.subset_size);
  out["order"] = std::string(order_policy_name(c.retriever.order));
  out["normalization"] =
      c.retriever.normalization == NormalizationMode::per_target ? "per_target" : "per_train_row";
  out["calibration"] = std::string(calibration_name(c.calibration));
  out["destruction"] = c.destruction ? std::string(destruction_name(*c.destruction)) : "none";
  out["metric"] = std::string(metric);
  if (!positive.empty()) out["positive_label"] = std::string(positive);
  out["max_example_tokens"] = std::to_string(c.max_example_tokens);
  out["span_ngram"] = std::to_string(c.span_ngram);
  if (c.calibration == Calibration::kpc) {
    out["prior_samples"] = std::to_string(c.prior_samples);
    out["threshold"] = num(c.threshold);
  }
  if (c.relevance_min) out["relevance_min"] = num(*c.relevance_min);
  if (c.relevance_max) out["relevance_max"] = num(*c.relevance_max);
  return out;
}

std::string key_of(const std::vector<std::string>& candidates) {
  std::string key;
  for (const auto& c : candidates) {
    key += c;
    key += '\x1f';
  }
  return key;
}

SeedResult run_seed(const ExperimentConfig& config, const EvalData& data, const Scorer& scorer,
                    std::uint64_t seed, std::span<const std::string> golds) {
  const auto& tmpl = template_of(data);
  const auto verbalizer = tmpl.verbalizer();
  const bool classify = tmpl.kind == TaskKind::classification;
  const Verbalizer* v = classify ? &verbalizer : nullptr;

  SeedResult result;
  result.seed = seed;
  const auto selected = select_demonstrations(config, data, seed);
  for (std::size_t i : selected) result.demo_ids.push_back(data.train[i].id);
  const auto demos = materialize(config, data, seed, selected);

  const std::size_t n = data.test.size();
  std::vector<std::vector<std::string>> candidates(n);
  for (std::size_t j = 0; j < n; ++j) candidates[j] = candidates_for(data.test[j], tmpl, config.span_ngram);

  std::map<std::string, PriorTable> priors;
  if (config.calibration == Calibration::kpc) {
    const auto contexts = sample_contexts(data.prior_contexts, config.prior_samples, seed);
    for (const auto& c : candidates) {
      auto key = key_of(c);
      if (!priors.count(key)) priors.emplace(key, estimate_prior(scorer, contexts, c, config.threshold));
    }
  }

  result.predictions.assign(n, {});
  std::exception_ptr failure;
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t jj = 0; jj < count; ++jj) {
    const auto j = static_cast<std::size_t>(jj);
    try {
      const auto& target = data.test[j];
      const auto& cands = candidates[j];
      const auto prompt = build_prompt(demos, target, tmpl, config.max_example_tokens);
      const std::string truth = classify ? verbalizer.word(golds[j]) : golds[j];
      const bool truth_listed = std::find(cands.begin(), cands.end(), truth) != cands.end();
      const auto dist = truth_listed ? scorer.score_with_oracle(prompt, cands, truth)
                                     : scorer.score(prompt, cands);
      std::string pred;
      switch (config.calibration) {
        case Calibration::none:
          pred = predict(dist, v);
          break;
        case Calibration::kpc:
          pred = calibrated_predict(dist, priors.at(key_of(cands)), v);
          break;
        case Calibration::content_free: {
          std::vector<std::string> cf_prompts;
          for (const auto& filler : config.content_free_inputs) {
            cf_prompts.push_back(build_prompt(demos, content_free_target(target, filler), tmpl,
                                              config.max_example_tokens));
          }
          pred = content_free_calibrate(scorer, cf_prompts, dist, v);
          break;
        }
      }
      result.predictions[j] = std::move(pred);
    } catch (...) {
#pragma omp critical(kinctx_eval_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  const std::string metric = config.metric.empty() ? tmpl.metric : config.metric;
  const std::string positive = config.positive_label.empty() ? tmpl.positive_label : config.positive_label;
  result.score = compute_metric(result.predictions, golds, metric, positive);
  return result;
}

}  // namespace

Report run_icl_eval(const ExperimentConfig& config, const EvalData& data, const Scorer& scorer) {
  config.validate();
  const auto& tmpl = template_of(data);
  if (data.test.empty()) throw Error("evaluation: empty test set");
  const auto started = std::chrono::steady_clock::now();

  std::vector<std::string> golds;
  for (const auto& ex : data.test) {
    if (!ex.label) throw Error("test example '" + ex.id + "' has no label");
    golds.push_back(*ex.label);
  }
  const std::string metric = config.metric.empty() ? tmpl.metric : config.metric;
  const std::string positive = config.positive_label.empty() ? tmpl.positive_label : config.positive_label;
  if (!known_metric(metric)) throw Error("unknown metric '" + metric + "'");
  if (metric == "exact_match" && tmpl.kind == TaskKind::classification) {
    throw Error("exact_match does not apply to classification task '" + tmpl.task_id + "'");
  }

  Report report;
  report.task = config.task.empty() ? tmpl.task_id : config.task;
  report.metric = metric;
  report.config = echo(config, metric, positive);
  std::vector<double> scores;
  for (std::uint64_t seed : config.seeds) {
    report.per_seed.push_back(run_seed(config, data, scorer, seed, golds));
    scores.push_back(report.per_seed.back().score);
  }
  std::tie(report.mean, report.std) = mean_and_std(scores);
  if (config.record_runtime) {
    report.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  }
  return report;
}

std::map<Destruction, Report> run_destruction_suite(const ExperimentConfig& config,
                                                    const EvalData& data, const Scorer& scorer) {
  std::map<Destruction, Report> out;
  for (Destruction d : all_destructions()) {
    ExperimentConfig c = config;
    c.destruction = d;
    out.emplace(d, run_icl_eval(c, data, scorer));
  }
  return out;
}

std::vector<std::pair<std::string, std::size_t>> label_frequency_stats(
    const Scorer& scorer, std::span<const std::string> prompts, std::span<const std::string> pool,
    std::size_t top_k) {
  if (pool.empty()) throw Error("label_frequency_stats: empty candidate pool");
  if (top_k > pool.size()) throw Error("label_frequency_stats: top_k exceeds the pool size");
  std::vector<std::size_t> counts(pool.size(), 0);
  for (const auto& prompt : prompts) {
    const auto dist = scorer.score(prompt, pool);
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dist.probs[a] > dist.probs[b]; });
    for (std::size_t i = 0; i < top_k; ++i) ++counts[order[i]];
  }
  std::vector<std::pair<std::string, std::size_t>> out;
  for (std::size_t i = 0; i < pool.size(); ++i) out.emplace_back(pool[i], counts[i]);
  return out;
}

std::vector<std::string> kqa_contexts(std::span<const LinkedExample> docs, const KnowledgeBase& kb,
                                      std::uint64_t seed) {
  std::vector<std::string> out;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    Rng rng(derive_seed(seed, d));
    auto ex = build_kqa(docs[d], kb, rng);
    if (!ex) continue;
    std::vector<std::string> prefix;
    for (std::size_t i = 0; i < ex->size() && !ex->mask[i]; ++i) prefix.push_back(ex->tokens[i]);
    out.push_back(join_tokens(prefix));
  }
  return out;
}

std::string Report::to_json() const {
  nlohmann::ordered_json doc;
  doc["task"] = task;
  doc["metric"] = metric;
  auto seeds = nlohmann::ordered_json::array();
  auto rows = nlohmann::ordered_json::array();
  for (const auto& r : per_seed) {
    seeds.push_back(r.seed);
    rows.push_back({{"seed", r.seed}, {"score", r.score}, {"demos", r.demo_ids}, {"predictions", r.predictions}});
  }
  doc["seeds"] = std::move(seeds);
  doc["per_seed"] = std::move(rows);
  doc["mean"] = mean;
  doc["std"] = std;
  doc["std_kind"] = "population";
  if (runtime_seconds) doc["runtime_seconds"] = *runtime_seconds;
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config) cfg[k] = v;
  doc["config"] = std::move(cfg);
  return doc.dump(2) + "\n";
}

}  // namespace kinctx
