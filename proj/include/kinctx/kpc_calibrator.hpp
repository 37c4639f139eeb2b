#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kinctx/lm_scorer.hpp"
#include "kinctx/prompt_assembler.hpp"

namespace kinctx {

inline constexpr double kDefaultPriorThreshold = 1e-4;

/// Mean candidate probabilities over a set of neutral contexts.
struct PriorTable {
  std::vector<std::string> candidates;
  std::vector<double> priors;
  std::size_t sample_count = 0;
  double threshold = kDefaultPriorThreshold;

  double prior_of(std::string_view candidate) const;
  bool contains(std::string_view candidate) const;
};

/// Reference loop: P(v) = (1/|S|) Σ p(v | context).
PriorTable estimate_prior_serial(const Scorer& scorer, std::span<const std::string> contexts,
                                 std::span<const std::string> candidates,
                                 double threshold = kDefaultPriorThreshold);
/// Scores contexts in parallel, then sums them in context order, so the
/// result is bit-identical to the serial loop.
PriorTable estimate_prior(const Scorer& scorer, std::span<const std::string> contexts,
                          std::span<const std::string> candidates,
                          double threshold = kDefaultPriorThreshold);

/// Candidates with prior >= threshold, in table order. Throws when none
/// survive or the threshold is negative.
std::vector<std::string> filter_candidates(const PriorTable& table, double threshold);

/// Position of the largest probability; the first one wins a tie.
std::size_t argmax_index(std::span<const double> values);

/// Best candidate, mapped to its class id when a verbalizer is given.
std::string predict(const PredictionDistribution& dist, const Verbalizer* verbalizer = nullptr);

/// argmax of p(v) / P(v) over the candidates whose prior passes the table
/// threshold. Throws on a zero prior for a surviving candidate or a
/// candidate missing from the table.
std::string calibrated_predict(const PredictionDistribution& dist, const PriorTable& table,
                               const Verbalizer* verbalizer = nullptr);

/// Prior from content-free prompts such as "N/A" (no filtering).
PriorTable content_free_prior(const Scorer& scorer, std::span<const std::string> content_free_prompts,
                              std::span<const std::string> candidates);

std::string content_free_calibrate(const Scorer& scorer,
                                   std::span<const std::string> content_free_prompts,
                                   const PredictionDistribution& dist,
                                   const Verbalizer* verbalizer = nullptr);

/// Prior cache as a JSON object {candidate: prior}, keys in table order.
void save_prior_cache(const PriorTable& table, const std::filesystem::path& path);
/// The cache does not record |S|; the loaded table reports sample_count 1.
PriorTable load_prior_cache(const std::filesystem::path& path, double threshold = kDefaultPriorThreshold);

}  // namespace kinctx
