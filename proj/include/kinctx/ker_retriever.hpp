#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "kinctx/common.hpp"
#include "kinctx/entity_linker.hpp"
#include "kinctx/knowledge_store.hpp"

namespace kinctx {

/// Where the Jaccard / semantic normalizers of the relevance score come from.
enum class NormalizationMode {
  /// max over the training subset of d(k, j), for each target j.
  per_target,
  /// max over the training subset of d(i, k) between training examples i and
  /// k, for each training row i. Not bounded to [0, 1].
  per_train_row,
};

/// Presentation order of the selected demonstrations.
enum class OrderPolicy { draw, ascending, descending, random };

OrderPolicy parse_order_policy(std::string_view name);
std::string_view order_policy_name(OrderPolicy policy);
NormalizationMode parse_normalization(std::string_view name);

struct RetrieverConfig {
  double alpha = 0.3;
  double gamma = 0.01;
  std::size_t k = 8;
  std::size_t subset_size = 512;
  std::uint64_t seed = 0;
  NormalizationMode normalization = NormalizationMode::per_target;
  OrderPolicy order = OrderPolicy::draw;

  /// Throws unless 0 <= alpha <= 1 and gamma > 0.
  void validate() const;
};

struct RelevanceNorms {
  double max_jaccard = 0.0;
  double max_semantic = 0.0;
};

struct RetrievalPlan {
  /// Training indices in the sampled subset, ascending.
  std::vector<std::size_t> subset_ids;
  std::size_t target_count = 0;
  /// Relevance, row-major: row = position in subset_ids, column = target.
  std::vector<double> d_matrix;
  /// Aggregate relevance per subset row.
  std::vector<double> s;
  /// s normalized to sum to one (uniform when every s is zero).
  std::vector<double> s_prime;
  /// Selected training indices, in presentation order.
  std::vector<std::size_t> selected;

  double d(std::size_t row, std::size_t target) const {
    return d_matrix[row * target_count + target];
  }
};

/// |a ∩ b| / |a ∪ b| over sorted sets; 0 when both are empty.
double jaccard(std::span<const EntityIdx> a, std::span<const EntityIdx> b);

/// Euclidean distance between the two averaged entity embeddings.
double semantic_distance(std::span<const EntityIdx> a, std::span<const EntityIdx> b,
                         const EmbeddingTable& table);

/// Relevance of one (training, target) pair given the normalizers:
///   alpha * (jac + gamma) / (max_jac + gamma)
///   + (1 - alpha) * (1 - sem / max_sem)
/// where sem / max_sem is taken as 0 when max_sem is 0.
double relevance(double jac, double sem, const RelevanceNorms& norms, double alpha, double gamma);

/// Relevance matrix (subset rows x targets), reference implementation.
std::vector<double> relevance_matrix_serial(std::span<const std::span<const EntityIdx>> train,
                                            std::span<const std::span<const EntityIdx>> targets,
                                            const EmbeddingTable& table,
                                            const RetrieverConfig& config);
/// OpenMP implementation; bit-identical to the serial one.
std::vector<double> relevance_matrix(std::span<const std::span<const EntityIdx>> train,
                                     std::span<const std::span<const EntityIdx>> targets,
                                     const EmbeddingTable& table, const RetrieverConfig& config);

/// Fills d, s and s' for the given subset against all targets. Throws on an
/// empty subset or target set. `plan.subset_ids` is set to 0..n-1.
RetrievalPlan sampling_weights(std::span<const LinkedExample> subset,
                               std::span<const LinkedExample> targets,
                               const RetrieverConfig& config, const EmbeddingTable& table);

/// Weighted sampling without replacement: each draw renormalizes over the
/// remaining items. Returns positions in draw order. k larger than the
/// number of weights returns every position in descending-weight order.
std::vector<std::size_t> select_examples(std::span<const double> weights, std::size_t k, Rng& rng);

/// Reorders selected positions by their weight (or shuffles them).
void apply_order(std::vector<std::size_t>& selected, std::span<const double> weights,
                 OrderPolicy policy, Rng& rng);

/// Subset sampling, relevance, weights and selection, all driven by
/// config.seed. `selected` holds indices into `train`.
RetrievalPlan retrieve(std::span<const LinkedExample> train,
                       std::span<const LinkedExample> targets, const RetrieverConfig& config,
                       const EmbeddingTable& table);

/// Same as retrieve, over bare entity sets.
RetrievalPlan retrieve_sets(std::span<const std::span<const EntityIdx>> train,
                            std::span<const std::span<const EntityIdx>> targets,
                            const RetrieverConfig& config, const EmbeddingTable& table);

}  // namespace kinctx
