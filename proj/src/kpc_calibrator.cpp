#include "kinctx/kpc_calibrator.hpp"

#include <fstream>
#include <limits>

#include <json.hpp>

namespace kinctx {

double PriorTable::prior_of(std::string_view candidate) const {
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i] == candidate) return priors[i];
  }
  throw Error("no prior for candidate '" + std::string(candidate) + "'");
}

bool PriorTable::contains(std::string_view candidate) const {
  for (const auto& c : candidates) {
    if (c == candidate) return true;
  }
  return false;
}

namespace {

void check_inputs(std::span<const std::string> contexts, std::span<const std::string> candidates) {
  if (contexts.empty()) throw Error("estimate_prior: empty context set");
  if (candidates.empty()) throw Error("estimate_prior: empty candidate set");
}

PriorTable average(std::span<const PredictionDistribution> dists,
                   std::span<const std::string> candidates, double threshold) {
  PriorTable table;
  table.candidates.assign(candidates.begin(), candidates.end());
  table.priors.assign(candidates.size(), 0.0);
  table.sample_count = dists.size();
  table.threshold = threshold;
  for (const auto& d : dists) {
    for (std::size_t i = 0; i < d.probs.size(); ++i) table.priors[i] += d.probs[i];
  }
  for (double& p : table.priors) p /= static_cast<double>(dists.size());
  return table;
}

}  // namespace

PriorTable estimate_prior_serial(const Scorer& scorer, std::span<const std::string> contexts,
                                 std::span<const std::string> candidates, double threshold) {
  check_inputs(contexts, candidates);
  std::vector<PredictionDistribution> dists;
  dists.reserve(contexts.size());
  for (const auto& c : contexts) dists.push_back(scorer.score(c, candidates));
  return average(dists, candidates, threshold);
}

PriorTable estimate_prior(const Scorer& scorer, std::span<const std::string> contexts,
                          std::span<const std::string> candidates, double threshold) {
  check_inputs(contexts, candidates);
  std::vector<PredictionDistribution> dists(contexts.size());
  const auto n = static_cast<std::ptrdiff_t>(contexts.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      dists[static_cast<std::size_t>(i)] = scorer.score(contexts[static_cast<std::size_t>(i)], candidates);
    } catch (...) {
#pragma omp critical(kinctx_prior_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return average(dists, candidates, threshold);
}

std::vector<std::string> filter_candidates(const PriorTable& table, double threshold) {
  if (!(threshold >= 0.0)) throw Error("filter_candidates: threshold must be >= 0");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < table.candidates.size(); ++i) {
    if (table.priors[i] >= threshold) out.push_back(table.candidates[i]);
  }
  if (out.empty()) throw Error("filter_candidates: every candidate is below the prior threshold");
  return out;
}

std::size_t argmax_index(std::span<const double> values) {
  if (values.empty()) throw Error("argmax of an empty list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

namespace {

std::string as_label(const std::string& candidate, const Verbalizer* verbalizer) {
  return verbalizer ? verbalizer->class_of(candidate) : candidate;
}

}  // namespace

std::string predict(const PredictionDistribution& dist, const Verbalizer* verbalizer) {
  return as_label(dist.candidates[argmax_index(dist.probs)], verbalizer);
}

std::string calibrated_predict(const PredictionDistribution& dist, const PriorTable& table,
                               const Verbalizer* verbalizer) {
  std::size_t best = 0;
  double best_ratio = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < dist.candidates.size(); ++i) {
    const double prior = table.prior_of(dist.candidates[i]);
    if (prior < table.threshold) continue;
    if (!(prior > 0.0)) {
      throw Error("calibrated_predict: zero prior for '" + dist.candidates[i] + "'");
    }
    const double ratio = dist.probs[i] / prior;
    if (!any || ratio > best_ratio) {
      best = i;
      best_ratio = ratio;
      any = true;
    }
  }
  if (!any) throw Error("calibrated_predict: every candidate is below the prior threshold");
  return as_label(dist.candidates[best], verbalizer);
}

PriorTable content_free_prior(const Scorer& scorer, std::span<const std::string> content_free_prompts,
                              std::span<const std::string> candidates) {
  return estimate_prior_serial(scorer, content_free_prompts, candidates, 0.0);
}

std::string content_free_calibrate(const Scorer& scorer,
                                   std::span<const std::string> content_free_prompts,
                                   const PredictionDistribution& dist, const Verbalizer* verbalizer) {
  const auto table = content_free_prior(scorer, content_free_prompts, dist.candidates);
  return calibrated_predict(dist, table, verbalizer);
}

void save_prior_cache(const PriorTable& table, const std::filesystem::path& path) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < table.candidates.size(); ++i) doc[table.candidates[i]] = table.priors[i];
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

PriorTable load_prior_cache(const std::filesystem::path& path, double threshold) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
  if (!doc.is_object() || doc.empty()) throw Error(path.string() + ": expected a non-empty object");
  PriorTable table;
  table.sample_count = 1;
  table.threshold = threshold;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (!it.value().is_number()) throw Error(path.string() + ": prior of '" + it.key() + "' is not a number");
    const double p = it.value().get<double>();
    if (!(p >= 0.0 && p <= 1.0)) throw Error(path.string() + ": prior of '" + it.key() + "' outside [0, 1]");
    table.candidates.push_back(it.key());
    table.priors.push_back(p);
  }
  return table;
}

}  // namespace kinctx
