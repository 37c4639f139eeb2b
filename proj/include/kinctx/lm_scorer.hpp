#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <condition_variable>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kinctx/common.hpp"

namespace kinctx {

/// Probabilities of each candidate at the output position. Not renormalized:
/// the candidates may cover only part of the model's vocabulary.
struct PredictionDistribution {
  std::vector<std::string> candidates;
  std::vector<double> probs;

  /// Throws unless sizes match, candidates are distinct, probs >= 0 and the
  /// total lies in (0, 1] (with a small rounding allowance).
  void validate() const;
  double prob_of(std::string_view candidate) const;
};

/// Scoring oracle standing in for the language model. Implementations must
/// allow concurrent calls.
class Scorer {
 public:
  virtual ~Scorer() = default;

  /// Throws on an empty or repeated candidate list.
  PredictionDistribution score(std::string_view prompt, std::span<const std::string> candidates) const;

  /// Scoring with the gold answer available. Only controlled test scorers
  /// use the truth; real models ignore it.
  PredictionDistribution score_with_oracle(std::string_view prompt,
                                           std::span<const std::string> candidates,
                                           std::string_view truth) const;

  /// One log-probability per token, each <= 0. Throws on empty input.
  std::vector<double> token_logprobs(std::span<const std::string> tokens) const;

 protected:
  virtual PredictionDistribution do_score(std::string_view prompt,
                                          std::span<const std::string> candidates) const = 0;
  virtual PredictionDistribution do_score_with_oracle(std::string_view prompt,
                                                      std::span<const std::string> candidates,
                                                      std::string_view truth) const;
  virtual std::vector<double> do_token_logprobs(std::span<const std::string> tokens) const = 0;
};

struct MockScorerConfig {
  /// Frequency bias b(v) per candidate; candidates not listed use default_bias.
  std::map<std::string, double> base_bias;
  double default_bias = 1.0;
  /// Multiplier t on the true candidate.
  double signal_boost = 2.0;
  std::uint64_t seed = 0;
  /// Constant returned by token_logprobs.
  double token_logprob = -0.69314718055994530942;

  /// Throws unless every bias is positive, t > 1 and token_logprob <= 0.
  void validate() const;
  double bias(std::string_view candidate) const;
};

/// p(v) ∝ b(v) · (t if v is the truth), normalized over the candidates. The
/// prompt is ignored. Throws when the truth is not a candidate.
PredictionDistribution mock_score(std::string_view prompt, std::span<const std::string> candidates,
                                  const MockScorerConfig& config, std::string_view truth);

/// Deterministic, prompt-invariant bias injector. Without a truth it returns
/// p ∝ b, which is what a neutral context sees.
class MockScorer final : public Scorer {
 public:
  explicit MockScorer(MockScorerConfig config);
  const MockScorerConfig& config() const { return config_; }

 protected:
  PredictionDistribution do_score(std::string_view prompt,
                                  std::span<const std::string> candidates) const override;
  PredictionDistribution do_score_with_oracle(std::string_view prompt,
                                              std::span<const std::string> candidates,
                                              std::string_view truth) const override;
  std::vector<double> do_token_logprobs(std::span<const std::string> tokens) const override;

 private:
  MockScorerConfig config_;
};

struct RemoteScorerConfig {
  std::string base_url;  ///< e.g. "http://127.0.0.1:8080"
  std::chrono::milliseconds timeout{30000};
  std::size_t max_inflight = 4;
};

/// HTTP client for a model server:
///   POST /v1/score {"prompt", "candidates"} -> {"scores"} (log-probabilities)
///   POST /v1/token_logprobs {"tokens"} -> {"logprobs"}
/// Non-2xx replies, timeouts and malformed bodies raise TransportError.
class RemoteScorer final : public Scorer {
 public:
  explicit RemoteScorer(RemoteScorerConfig config);
  const RemoteScorerConfig& config() const { return config_; }

 protected:
  PredictionDistribution do_score(std::string_view prompt,
                                  std::span<const std::string> candidates) const override;
  std::vector<double> do_token_logprobs(std::span<const std::string> tokens) const override;

 private:
  std::string post(const std::string& path, const std::string& body) const;

  RemoteScorerConfig config_;
  std::string host_;
  mutable std::mutex mutex_;
  mutable std::condition_variable slot_free_;
  mutable std::size_t inflight_ = 0;
};

}  // namespace kinctx
