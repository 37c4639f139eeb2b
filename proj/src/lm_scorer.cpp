#include "kinctx/lm_scorer.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include <httplib.h>
#include <json.hpp>

namespace kinctx {

using nlohmann::json;

namespace {

constexpr double kSumSlack = 1e-9;

void check_candidates(std::span<const std::string> candidates) {
  if (candidates.empty()) throw Error("score: candidate list is empty");
  std::unordered_set<std::string_view> seen;
  for (const auto& c : candidates) {
    if (!seen.insert(c).second) throw Error("score: duplicate candidate '" + c + "'");
  }
}

}  // namespace

void PredictionDistribution::validate() const {
  if (candidates.empty()) throw Error("distribution has no candidates");
  if (candidates.size() != probs.size()) throw Error("distribution: candidate/probability count mismatch");
  check_candidates(candidates);
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw Error("distribution: probability outside [0, inf)");
    total += p;
  }
  if (!(total > 0.0) || total > 1.0 + kSumSlack) {
    throw Error("distribution: total probability " + std::to_string(total) + " outside (0, 1]");
  }
}

double PredictionDistribution::prob_of(std::string_view candidate) const {
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i] == candidate) return probs[i];
  }
  throw Error("candidate '" + std::string(candidate) + "' not in distribution");
}

PredictionDistribution Scorer::score(std::string_view prompt,
                                     std::span<const std::string> candidates) const {
  check_candidates(candidates);
  auto dist = do_score(prompt, candidates);
  dist.validate();
  return dist;
}

PredictionDistribution Scorer::score_with_oracle(std::string_view prompt,
                                                 std::span<const std::string> candidates,
                                                 std::string_view truth) const {
  check_candidates(candidates);
  auto dist = do_score_with_oracle(prompt, candidates, truth);
  dist.validate();
  return dist;
}

PredictionDistribution Scorer::do_score_with_oracle(std::string_view prompt,
                                                    std::span<const std::string> candidates,
                                                    std::string_view) const {
  return do_score(prompt, candidates);
}

std::vector<double> Scorer::token_logprobs(std::span<const std::string> tokens) const {
  if (tokens.empty()) throw Error("token_logprobs: empty token list");
  auto out = do_token_logprobs(tokens);
  if (out.size() != tokens.size()) throw TransportError("token_logprobs: length mismatch");
  for (double lp : out) {
    if (!(lp <= 0.0)) throw Error("token_logprobs: log-probability above zero");
  }
  return out;
}

// --- Mock -------------------------------------------------------------------

void MockScorerConfig::validate() const {
  if (!(default_bias > 0.0)) throw Error("mock scorer: default bias must be positive");
  for (const auto& [c, b] : base_bias) {
    if (!(b > 0.0)) throw Error("mock scorer: bias of '" + c + "' must be positive");
  }
  if (!(signal_boost > 1.0)) throw Error("mock scorer: signal boost must exceed 1");
  if (!(token_logprob <= 0.0)) throw Error("mock scorer: token log-probability must be <= 0");
}

double MockScorerConfig::bias(std::string_view candidate) const {
  auto it = base_bias.find(std::string(candidate));
  return it == base_bias.end() ? default_bias : it->second;
}

namespace {

PredictionDistribution normalized(std::span<const std::string> candidates, const MockScorerConfig& config,
                                  std::string_view truth) {
  PredictionDistribution dist;
  dist.candidates.assign(candidates.begin(), candidates.end());
  double total = 0.0;
  for (const auto& c : candidates) {
    const double w = config.bias(c) * (c == truth ? config.signal_boost : 1.0);
    dist.probs.push_back(w);
    total += w;
  }
  for (double& p : dist.probs) p /= total;
  return dist;
}

}  // namespace

PredictionDistribution mock_score(std::string_view, std::span<const std::string> candidates,
                                  const MockScorerConfig& config, std::string_view truth) {
  check_candidates(candidates);
  if (std::find(candidates.begin(), candidates.end(), truth) == candidates.end()) {
    throw Error("mock_score: truth '" + std::string(truth) + "' is not a candidate");
  }
  return normalized(candidates, config, truth);
}

MockScorer::MockScorer(MockScorerConfig config) : config_(std::move(config)) { config_.validate(); }

PredictionDistribution MockScorer::do_score(std::string_view,
                                            std::span<const std::string> candidates) const {
  return normalized(candidates, config_, {});
}

PredictionDistribution MockScorer::do_score_with_oracle(std::string_view prompt,
                                                        std::span<const std::string> candidates,
                                                        std::string_view truth) const {
  return mock_score(prompt, candidates, config_, truth);
}

std::vector<double> MockScorer::do_token_logprobs(std::span<const std::string> tokens) const {
  return std::vector<double>(tokens.size(), config_.token_logprob);
}

// --- Remote -----------------------------------------------------------------

RemoteScorer::RemoteScorer(RemoteScorerConfig config) : config_(std::move(config)) {
  if (config_.base_url.empty()) throw Error("remote scorer: empty base url");
  if (config_.max_inflight == 0) throw Error("remote scorer: max_inflight must be positive");
  host_ = config_.base_url;
  while (!host_.empty() && host_.back() == '/') host_.pop_back();
}

std::string RemoteScorer::post(const std::string& path, const std::string& body) const {
  {
    std::unique_lock lock(mutex_);
    slot_free_.wait(lock, [&] { return inflight_ < config_.max_inflight; });
    ++inflight_;
  }
  struct Release {
    const RemoteScorer* self;
    ~Release() {
      {
        std::lock_guard lock(self->mutex_);
        --self->inflight_;
      }
      self->slot_free_.notify_one();
    }
  } release{this};

  httplib::Client client(host_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  auto res = client.Post(path, body, "application/json");
  if (!res) {
    throw TransportError("POST " + host_ + path + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    throw TransportError("POST " + host_ + path + " returned HTTP " + std::to_string(res->status));
  }
  return res->body;
}

namespace {

std::vector<double> numbers_at(const std::string& body, const char* key, std::size_t expected) {
  std::vector<double> out;
  try {
    const auto doc = json::parse(body);
    out = doc.at(key).get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw TransportError(std::string("malformed scorer reply: ") + e.what());
  }
  if (out.size() != expected) {
    throw TransportError("scorer reply has " + std::to_string(out.size()) + " values for " +
                         std::to_string(expected) + " inputs");
  }
  return out;
}

}  // namespace

PredictionDistribution RemoteScorer::do_score(std::string_view prompt,
                                              std::span<const std::string> candidates) const {
  json req{{"prompt", prompt}, {"candidates", std::vector<std::string>(candidates.begin(), candidates.end())}};
  const auto scores = numbers_at(post("/v1/score", req.dump()), "scores", candidates.size());
  PredictionDistribution dist;
  dist.candidates.assign(candidates.begin(), candidates.end());
  for (double s : scores) dist.probs.push_back(std::exp(s));
  return dist;
}

std::vector<double> RemoteScorer::do_token_logprobs(std::span<const std::string> tokens) const {
  json req{{"tokens", std::vector<std::string>(tokens.begin(), tokens.end())}};
  return numbers_at(post("/v1/token_logprobs", req.dump()), "logprobs", tokens.size());
}

}  // namespace kinctx
