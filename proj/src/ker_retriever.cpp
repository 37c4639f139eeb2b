#include "kinctx/ker_retriever.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kinctx {

OrderPolicy parse_order_policy(std::string_view name) {
  if (name == "draw") return OrderPolicy::draw;
  if (name == "asc" || name == "ascending") return OrderPolicy::ascending;
  if (name == "desc" || name == "descending") return OrderPolicy::descending;
  if (name == "random") return OrderPolicy::random;
  throw Error("unknown order policy '" + std::string(name) + "'");
}

std::string_view order_policy_name(OrderPolicy policy) {
  switch (policy) {
    case OrderPolicy::draw: return "draw";
    case OrderPolicy::ascending: return "asc";
    case OrderPolicy::descending: return "desc";
    case OrderPolicy::random: return "random";
  }
  return "?";
}

NormalizationMode parse_normalization(std::string_view name) {
  if (name == "per_target") return NormalizationMode::per_target;
  if (name == "per_train_row") return NormalizationMode::per_train_row;
  throw Error("unknown normalization '" + std::string(name) + "'");
}

void RetrieverConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("alpha must lie in [0, 1]");
  if (!(gamma > 0.0)) throw Error("gamma must be positive");
  if (subset_size == 0) throw Error("subset_size must be positive");
}

double jaccard(std::span<const EntityIdx> a, std::span<const EntityIdx> b) {
  std::size_t inter = 0;
  auto ia = a.begin(), ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++inter;
      ++ia;
      ++ib;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

double euclidean(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double diff = a[d] - b[d];
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

}  // namespace

double semantic_distance(std::span<const EntityIdx> a, std::span<const EntityIdx> b,
                         const EmbeddingTable& table) {
  auto ma = average_embedding(a, table);
  auto mb = average_embedding(b, table);
  return euclidean(ma.mean, mb.mean);
}

double relevance(double jac, double sem, const RelevanceNorms& norms, double alpha, double gamma) {
  const double jac_term = (jac + gamma) / (norms.max_jaccard + gamma);
  const double sem_ratio = norms.max_semantic > 0.0 ? sem / norms.max_semantic : 0.0;
  return alpha * jac_term + (1.0 - alpha) * (1.0 - sem_ratio);
}

namespace {

using SetList = std::span<const std::span<const EntityIdx>>;

// Row-major mean embeddings, one row per set.
std::vector<double> means_serial(SetList sets, const EmbeddingTable& table) {
  const std::size_t dim = table.dim();
  std::vector<double> out(sets.size() * dim);
  for (std::size_t i = 0; i < sets.size(); ++i) {
    average_embedding_into(sets[i], table, std::span<double>(out).subspan(i * dim, dim));
  }
  return out;
}

std::vector<double> means_parallel(SetList sets, const EmbeddingTable& table) {
  const std::size_t dim = table.dim();
  std::vector<double> out(sets.size() * dim);
  const auto n = static_cast<std::ptrdiff_t>(sets.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto r = static_cast<std::size_t>(i);
    average_embedding_into(sets[r], table, std::span<double>(out).subspan(r * dim, dim));
  }
  return out;
}

// Under per-target normalization both terms are within [0, 1] analytically;
// this removes last-bit rounding past the ends.
double bounded(double d) { return std::clamp(d, 0.0, 1.0); }

std::span<const double> row(const std::vector<double>& m, std::size_t i, std::size_t dim) {
  return std::span<const double>(m).subspan(i * dim, dim);
}

// Normalizers between training rows, for the as-printed reading.
std::vector<RelevanceNorms> train_row_norms(SetList train, const std::vector<double>& means,
                                            std::size_t dim, bool parallel) {
  const std::size_t n = train.size();
  std::vector<RelevanceNorms> norms(n);
  const auto sn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 8) if (parallel)
  for (std::ptrdiff_t ii = 0; ii < sn; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    RelevanceNorms r;
    for (std::size_t k = 0; k < n; ++k) {
      r.max_jaccard = std::max(r.max_jaccard, jaccard(train[i], train[k]));
      r.max_semantic = std::max(r.max_semantic, euclidean(row(means, i, dim), row(means, k, dim)));
    }
    norms[i] = r;
  }
  return norms;
}

}  // namespace

std::vector<double> relevance_matrix_serial(SetList train, SetList targets,
                                            const EmbeddingTable& table,
                                            const RetrieverConfig& config) {
  config.validate();
  const std::size_t n = train.size(), m = targets.size(), dim = table.dim();
  const auto train_means = means_serial(train, table);
  const auto target_means = means_serial(targets, table);

  std::vector<double> jac(n * m), sem(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      jac[i * m + j] = jaccard(train[i], targets[j]);
      sem[i * m + j] = euclidean(row(train_means, i, dim), row(target_means, j, dim));
    }
  }

  std::vector<double> d(n * m);
  if (config.normalization == NormalizationMode::per_target) {
    for (std::size_t j = 0; j < m; ++j) {
      RelevanceNorms norms;
      for (std::size_t k = 0; k < n; ++k) {
        norms.max_jaccard = std::max(norms.max_jaccard, jac[k * m + j]);
        norms.max_semantic = std::max(norms.max_semantic, sem[k * m + j]);
      }
      for (std::size_t i = 0; i < n; ++i) {
        d[i * m + j] = bounded(relevance(jac[i * m + j], sem[i * m + j], norms, config.alpha,
                                         config.gamma));
      }
    }
  } else {
    const auto norms = train_row_norms(train, train_means, dim, false);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        d[i * m + j] =
            relevance(jac[i * m + j], sem[i * m + j], norms[i], config.alpha, config.gamma);
      }
    }
  }
  return d;
}

std::vector<double> relevance_matrix(SetList train, SetList targets, const EmbeddingTable& table,
                                     const RetrieverConfig& config) {
  config.validate();
  const std::size_t n = train.size(), m = targets.size(), dim = table.dim();
  const auto train_means = means_parallel(train, table);
  const auto target_means = means_parallel(targets, table);

  // Pass 1: raw distances. `d` holds Jaccard until pass 3 overwrites it.
  std::vector<double> d(n * m), sem(n * m);
  const auto sn = static_cast<std::ptrdiff_t>(n);
  const auto sm = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < sn; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const auto a = row(train_means, i, dim);
    for (std::size_t j = 0; j < m; ++j) {
      d[i * m + j] = jaccard(train[i], targets[j]);
      sem[i * m + j] = euclidean(a, row(target_means, j, dim));
    }
  }

  // Pass 2: normalizers. Max is order-independent, so results match serial.
  if (config.normalization == NormalizationMode::per_target) {
    std::vector<RelevanceNorms> norms(m);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t jj = 0; jj < sm; ++jj) {
      const auto j = static_cast<std::size_t>(jj);
      RelevanceNorms r;
      for (std::size_t k = 0; k < n; ++k) {
        r.max_jaccard = std::max(r.max_jaccard, d[k * m + j]);
        r.max_semantic = std::max(r.max_semantic, sem[k * m + j]);
      }
      norms[j] = r;
    }
    // Pass 3.
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ii = 0; ii < sn; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      for (std::size_t j = 0; j < m; ++j) {
        d[i * m + j] =
            bounded(relevance(d[i * m + j], sem[i * m + j], norms[j], config.alpha, config.gamma));
      }
    }
  } else {
    const auto norms = train_row_norms(train, train_means, dim, true);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ii = 0; ii < sn; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      for (std::size_t j = 0; j < m; ++j) {
        d[i * m + j] = relevance(d[i * m + j], sem[i * m + j], norms[i], config.alpha, config.gamma);
      }
    }
  }
  return d;
}

namespace {

void fill_weights(RetrievalPlan& plan) {
  const std::size_t n = plan.subset_ids.size(), m = plan.target_count;
  plan.s.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) acc += plan.d_matrix[i * m + j];
    plan.s[i] = acc / static_cast<double>(m);
  }
  const double total = std::accumulate(plan.s.begin(), plan.s.end(), 0.0);
  plan.s_prime.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    plan.s_prime[i] = total > 0.0 ? plan.s[i] / total : 1.0 / static_cast<double>(n);
  }
}

std::vector<std::span<const EntityIdx>> entity_spans(std::span<const LinkedExample> xs) {
  std::vector<std::span<const EntityIdx>> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.emplace_back(x.entities);
  return out;
}

}  // namespace

RetrievalPlan sampling_weights(std::span<const LinkedExample> subset,
                               std::span<const LinkedExample> targets,
                               const RetrieverConfig& config, const EmbeddingTable& table) {
  if (subset.empty()) throw Error("sampling_weights: empty training subset");
  if (targets.empty()) throw Error("sampling_weights: empty target set");
  const auto train_sets = entity_spans(subset);
  const auto target_sets = entity_spans(targets);
  RetrievalPlan plan;
  plan.subset_ids.resize(subset.size());
  std::iota(plan.subset_ids.begin(), plan.subset_ids.end(), std::size_t{0});
  plan.target_count = targets.size();
  plan.d_matrix = relevance_matrix(train_sets, target_sets, table, config);
  fill_weights(plan);
  return plan;
}

namespace {

std::vector<std::size_t> by_descending_weight(std::vector<std::size_t> positions,
                                              std::span<const double> weights) {
  std::stable_sort(positions.begin(), positions.end(),
                   [&](std::size_t a, std::size_t b) { return weights[a] > weights[b]; });
  return positions;
}

}  // namespace

std::vector<std::size_t> select_examples(std::span<const double> weights, std::size_t k,
                                         Rng& rng) {
  const std::size_t n = weights.size();
  for (double w : weights) {
    if (!(w >= 0.0)) throw Error("select_examples: negative or NaN weight");
  }
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (k > n) return by_descending_weight(std::move(all), weights);

  std::vector<std::size_t> chosen;
  std::vector<bool> taken(n, false);
  chosen.reserve(k);
  while (chosen.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!taken[i]) total += weights[i];
    }
    if (!(total > 0.0)) {
      // Positive mass exhausted: fill deterministically.
      std::vector<std::size_t> rest;
      for (std::size_t i = 0; i < n; ++i) {
        if (!taken[i]) rest.push_back(i);
      }
      for (std::size_t i : by_descending_weight(std::move(rest), weights)) {
        if (chosen.size() == k) break;
        chosen.push_back(i);
      }
      break;
    }
    const double u = rng.uniform() * total;
    double cumulative = 0.0;
    std::size_t pick = n;
    std::size_t last_positive = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i] || weights[i] <= 0.0) continue;
      last_positive = i;
      cumulative += weights[i];
      if (u < cumulative) {
        pick = i;
        break;
      }
    }
    if (pick == n) pick = last_positive;  // u rounded past the final sum
    taken[pick] = true;
    chosen.push_back(pick);
  }
  return chosen;
}

void apply_order(std::vector<std::size_t>& selected, std::span<const double> weights,
                 OrderPolicy policy, Rng& rng) {
  switch (policy) {
    case OrderPolicy::draw:
      break;
    case OrderPolicy::ascending:
      std::stable_sort(selected.begin(), selected.end(),
                       [&](std::size_t a, std::size_t b) { return weights[a] < weights[b]; });
      break;
    case OrderPolicy::descending:
      std::stable_sort(selected.begin(), selected.end(),
                       [&](std::size_t a, std::size_t b) { return weights[a] > weights[b]; });
      break;
    case OrderPolicy::random:
      rng.shuffle(selected.begin(), selected.end());
      break;
  }
}

RetrievalPlan retrieve_sets(std::span<const std::span<const EntityIdx>> train,
                            std::span<const std::span<const EntityIdx>> targets,
                            const RetrieverConfig& config, const EmbeddingTable& table) {
  config.validate();
  if (train.empty()) throw Error("retrieve: empty training set");
  if (targets.empty()) throw Error("retrieve: empty target set");
  Rng rng(config.seed);

  RetrievalPlan plan;
  const std::size_t n = train.size();
  if (config.subset_size >= n) {
    plan.subset_ids.resize(n);
    std::iota(plan.subset_ids.begin(), plan.subset_ids.end(), std::size_t{0});
  } else {
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < config.subset_size; ++i) {
      std::swap(pool[i], pool[i + rng.below(n - i)]);
    }
    pool.resize(config.subset_size);
    std::sort(pool.begin(), pool.end());
    plan.subset_ids = std::move(pool);
  }

  std::vector<std::span<const EntityIdx>> subset;
  subset.reserve(plan.subset_ids.size());
  for (std::size_t i : plan.subset_ids) subset.push_back(train[i]);
  plan.target_count = targets.size();
  plan.d_matrix = relevance_matrix(subset, targets, table, config);
  fill_weights(plan);

  auto positions = select_examples(plan.s_prime, config.k, rng);
  apply_order(positions, plan.s_prime, config.order, rng);
  plan.selected.reserve(positions.size());
  for (std::size_t p : positions) plan.selected.push_back(plan.subset_ids[p]);
  return plan;
}

RetrievalPlan retrieve(std::span<const LinkedExample> train,
                       std::span<const LinkedExample> targets, const RetrieverConfig& config,
                       const EmbeddingTable& table) {
  const auto train_sets = entity_spans(train);
  const auto target_sets = entity_spans(targets);
  return retrieve_sets(train_sets, target_sets, config, table);
}

}  // namespace kinctx
