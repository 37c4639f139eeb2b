#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kinctx/entity_linker.hpp"
#include "kinctx/ker_retriever.hpp"
#include "kinctx/knowledge_store.hpp"
#include "kinctx/kpc_calibrator.hpp"
#include "kinctx/lm_scorer.hpp"
#include "kinctx/prompt_assembler.hpp"

namespace kinctx {

enum class Calibration { none, kpc, content_free };
enum class DemoSelection { ker, random };

Calibration parse_calibration(std::string_view name);
std::string_view calibration_name(Calibration c);
DemoSelection parse_demo_selection(std::string_view name);
std::string_view demo_selection_name(DemoSelection s);

inline const std::vector<std::uint64_t>& default_seeds() {
  static const std::vector<std::uint64_t> seeds{12, 24, 42, 90, 100};
  return seeds;
}

struct ExperimentConfig {
  std::string task;
  std::size_t k = 8;
  std::vector<std::uint64_t> seeds = default_seeds();
  DemoSelection selection = DemoSelection::ker;
  /// alpha, gamma, subset size, normalization and order; k and seed are
  /// taken from this struct and the seed list.
  RetrieverConfig retriever;
  Calibration calibration = Calibration::none;
  std::optional<Destruction> destruction;
  /// Empty means the template's metric.
  std::string metric;
  /// Empty means the template's positive label.
  std::string positive_label;
  std::size_t max_example_tokens = 256;
  std::size_t span_ngram = 0;
  std::size_t prior_samples = 1000;
  double threshold = kDefaultPriorThreshold;
  std::vector<std::string> content_free_inputs{"N/A"};
  /// Only subset rows whose aggregate relevance s lies in [min, max] may be
  /// drawn (KER only).
  std::optional<double> relevance_min;
  std::optional<double> relevance_max;
  bool record_runtime = false;

  /// Throws on an empty seed list or an unknown metric.
  void validate() const;
};

/// Inputs shared by every seed. Datasets must already be linked.
struct EvalData {
  std::span<const LinkedExample> train;
  std::span<const LinkedExample> test;
  const KnowledgeBase* kb = nullptr;
  const EmbeddingTable* embeddings = nullptr;
  const TaskTemplate* templ = nullptr;
  /// Neutral contexts for the KPC prior; required for calibration = kpc.
  std::span<const std::string> prior_contexts;
  /// Replacement words for Shuffle Non-Entity; defaults to the training vocabulary.
  std::span<const std::string> vocab;
};

struct SeedResult {
  std::uint64_t seed = 0;
  double score = 0.0;
  /// Training ids of the demonstrations, in prompt order.
  std::vector<std::string> demo_ids;
  std::vector<std::string> predictions;
};

struct Report {
  std::string task;
  std::string metric;
  std::vector<SeedResult> per_seed;
  double mean = 0.0;
  /// Population standard deviation over seeds.
  double std = 0.0;
  std::optional<double> runtime_seconds;
  std::map<std::string, std::string> config;

  /// Deterministic JSON (keys in a fixed order, no runtime unless recorded).
  std::string to_json() const;
};

/// Mean and population standard deviation, summed in input order.
std::pair<double, double> mean_and_std(std::span<const double> values);

/// accuracy, binary_f1 (positive class `positive`) or exact_match.
double compute_metric(std::span<const std::string> predictions, std::span<const std::string> golds,
                      std::string_view metric, std::string_view positive = {});

/// Lowercase, strip punctuation and the articles a/an/the, collapse spaces.
std::string normalize_answer(std::string_view s);

/// Demonstrations chosen for one seed (before destruction), as train indices.
std::vector<std::size_t> select_demonstrations(const ExperimentConfig& config, const EvalData& data,
                                               std::uint64_t seed);

/// The prompt for one target given the already destructed demonstrations.
std::string build_prompt(std::span<const LinkedExample> demos, const LinkedExample& target,
                         const TaskTemplate& tmpl, std::size_t max_example_tokens);

/// Demonstrations of one seed after selection, ordering, destruction and
/// truncation.
std::vector<LinkedExample> prepare_demonstrations(const ExperimentConfig& config, const EvalData& data,
                                                  std::uint64_t seed);

Report run_icl_eval(const ExperimentConfig& config, const EvalData& data, const Scorer& scorer);

/// One report per destruction setting over the same seeds and selections.
std::map<Destruction, Report> run_destruction_suite(const ExperimentConfig& config,
                                                    const EvalData& data, const Scorer& scorer);

/// Neutral prior contexts: the question part ("Question: ... Answer:") of a
/// knowledge QA example built from each document that has an in-document
/// triple. Document d draws from derive_seed(seed, d).
std::vector<std::string> kqa_contexts(std::span<const LinkedExample> docs, const KnowledgeBase& kb,
                                      std::uint64_t seed);

/// Counts how often each pool candidate lands in the top_k of a prompt.
/// Output follows pool order. Throws when top_k exceeds the pool.
std::vector<std::pair<std::string, std::size_t>> label_frequency_stats(
    const Scorer& scorer, std::span<const std::string> prompts, std::span<const std::string> pool,
    std::size_t top_k);

}  // namespace kinctx
