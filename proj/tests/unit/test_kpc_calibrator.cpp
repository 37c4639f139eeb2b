#include <doctest.h>

#include <filesystem>
#include <map>

#include "fixtures/fixtures.hpp"
#include "kinctx/kpc_calibrator.hpp"
#include "kinctx/prompt_assembler.hpp"

using namespace kinctx;

namespace {

// Returns a fixed distribution per prompt; unknown prompts are uniform.
class TableScorer final : public Scorer {
 public:
  explicit TableScorer(std::map<std::string, std::vector<double>> rows) : rows_(std::move(rows)) {}

 protected:
  PredictionDistribution do_score(std::string_view prompt, std::span<const std::string> candidates) const override {
    PredictionDistribution d;
    d.candidates.assign(candidates.begin(), candidates.end());
    if (auto it = rows_.find(std::string(prompt)); it != rows_.end()) {
      d.probs = it->second;
    } else {
      d.probs.assign(candidates.size(), 1.0 / static_cast<double>(candidates.size()));
    }
    return d;
  }
  std::vector<double> do_token_logprobs(std::span<const std::string> tokens) const override {
    return std::vector<double>(tokens.size(), -1.0);
  }

 private:
  std::map<std::string, std::vector<double>> rows_;
};

PredictionDistribution dist(std::vector<std::string> c, std::vector<double> p) { return {std::move(c), std::move(p)}; }

PriorTable table_of(std::vector<std::string> c, std::vector<double> p) {
  PriorTable t;
  t.candidates = std::move(c);
  t.priors = std::move(p);
  t.sample_count = 1;
  return t;
}

}  // namespace

TEST_CASE("prior is the mean over contexts") {
  const TableScorer s({{"s1", {0.2, 0.8}}, {"s2", {0.4, 0.6}}});
  const std::vector<std::string> c{"A", "B"};
  const std::vector<std::string> two{"s1", "s2"}, one{"s1"};
  const auto p = estimate_prior(s, two, c);
  CHECK(p.prior_of("A") == doctest::Approx(0.3));
  CHECK(p.prior_of("B") == doctest::Approx(0.7));
  CHECK(p.sample_count == 2);
  const auto single = estimate_prior(s, one, c);
  CHECK(single.priors == std::vector<double>{0.2, 0.8});
  CHECK_THROWS_AS(estimate_prior(s, {}, c), Error);
  CHECK_THROWS_AS(estimate_prior(s, two, {}), Error);
}

TEST_CASE("mock prior over neutral contexts is proportional to the bias") {
  MockScorerConfig cfg;
  cfg.base_bias = {{"World", 1.0}, {"Sports", 3.0}, {"Business", 0.5}, {"Technology", 1.5}};
  const MockScorer s(cfg);
  const std::vector<std::string> c{"World", "Sports", "Business", "Technology"};
  std::vector<std::string> ctx;
  for (int i = 0; i < 50; ++i) ctx.push_back("Question: q" + std::to_string(i) + " Answer:");
  const auto p = estimate_prior(s, ctx, c);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(std::abs(p.priors[i] - cfg.bias(c[i]) / 6.0) < 1e-12);
}

TEST_CASE("parallel prior equals the serial loop") {
  std::map<std::string, std::vector<double>> rows;
  std::vector<std::string> ctx;
  Rng rng(3);
  for (int i = 0; i < 300; ++i) {
    const double a = rng.uniform() * 0.5, b = rng.uniform() * 0.5;
    ctx.push_back("c" + std::to_string(i));
    rows[ctx.back()] = {a, b, 1.0 - a - b};
  }
  const TableScorer s(rows);
  const std::vector<std::string> c{"x", "y", "z"};
  CHECK(estimate_prior(s, ctx, c).priors == estimate_prior_serial(s, ctx, c).priors);
}

TEST_CASE("prior is permutation invariant and linear in the context set") {
  std::map<std::string, std::vector<double>> rows;
  Rng rng(4);
  std::vector<std::string> s1, s2;
  for (int i = 0; i < 30; ++i) {
    const double a = rng.uniform();
    const std::string name = "c" + std::to_string(i);
    rows[name] = {a * 0.9, (1 - a) * 0.9};
    (i < 12 ? s1 : s2).push_back(name);
  }
  const TableScorer s(rows);
  const std::vector<std::string> c{"A", "B"};
  auto both = s1;
  both.insert(both.end(), s2.begin(), s2.end());
  auto shuffled = both;
  rng.shuffle(shuffled.begin(), shuffled.end());
  const auto p = estimate_prior(s, both, c);
  const auto q = estimate_prior(s, shuffled, c);
  const auto p1 = estimate_prior(s, s1, c), p2 = estimate_prior(s, s2, c);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(p.priors[i] == doctest::Approx(q.priors[i]).epsilon(1e-14));
    CHECK(p.priors[i] == doctest::Approx((12 * p1.priors[i] + 18 * p2.priors[i]) / 30).epsilon(1e-14));
  }
}

TEST_CASE("filtering") {
  const auto t = table_of({"A", "B"}, {0.5, 1e-6});
  CHECK(filter_candidates(t, 1e-4) == std::vector<std::string>{"A"});
  CHECK(filter_candidates(t, 0.0) == std::vector<std::string>{"A", "B"});
  CHECK_THROWS_AS(filter_candidates(t, 0.9), Error);
  CHECK_THROWS_AS(filter_candidates(t, -1.0), Error);
}

TEST_CASE("argmax prediction") {
  CHECK(predict(dist({"A", "B"}, {0.6, 0.4})) == "A");
  CHECK(predict(dist({"A", "B"}, {0.3, 0.3})) == "A");
  const Verbalizer v({{"world", "World"}, {"sports", "Sports"}, {"business", "Business"}, {"tech", "Technology"}});
  MockScorerConfig cfg;
  cfg.base_bias = {{"World", 1.0}, {"Sports", 3.0}, {"Business", 0.5}, {"Technology", 1.5}};
  const auto d = mock_score("p", v.words(), cfg, "Business");
  // weights 1, 3, 1, 1.5: Sports wins by hand.
  CHECK(predict(d, &v) == "sports");
  CHECK(argmax_index(std::vector<double>{1, 3, 3}) == 1);
}

TEST_CASE("calibrated prediction examples") {
  const auto d = dist({"A", "B"}, {0.6, 0.4});
  CHECK(calibrated_predict(d, table_of({"A", "B"}, {0.9, 0.3})) == "B");
  CHECK(calibrated_predict(d, table_of({"A", "B"}, {0.5, 0.5})) == predict(d));
  CHECK_THROWS_AS(calibrated_predict(d, table_of({"A"}, {0.9})), Error);

  // Candidates under the threshold are skipped.
  auto t = table_of({"A", "B"}, {0.9, 1e-6});
  CHECK(calibrated_predict(dist({"A", "B"}, {0.5, 0.5}), t) == "A");
  t.threshold = 0.0;
  CHECK(calibrated_predict(dist({"A", "B"}, {0.5, 0.5}), t) == "B");
  auto zero = table_of({"A", "B"}, {0.0, 0.5});
  CHECK(calibrated_predict(d, zero) == "B");
  zero.threshold = 0.0;
  CHECK_THROWS_AS(calibrated_predict(d, zero), Error);
}

TEST_CASE("calibration removes the mock bias") {
  MockScorerConfig cfg;
  cfg.base_bias = {{"A", 1.0}, {"B", 4.0}};
  const MockScorer s(cfg);
  const std::vector<std::string> c{"A", "B"};
  const std::vector<std::string> ctx{"Question: Where is Paris? Answer:", "Question: Who? Answer:"};
  const auto prior = estimate_prior(s, ctx, c);
  const auto d = s.score_with_oracle("target prompt", c, "A");
  CHECK(predict(d) == "B");
  CHECK(calibrated_predict(d, prior) == "A");
  const std::vector<std::string> na{"N/A"};
  CHECK(content_free_calibrate(s, na, d) == "A");
}

TEST_CASE("calibration properties") {
  Rng rng(6);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.below(5);
    std::vector<std::string> c;
    std::vector<double> p, prior;
    for (std::size_t i = 0; i < n; ++i) {
      c.push_back("c" + std::to_string(i));
      p.push_back(rng.uniform() / static_cast<double>(n));
      prior.push_back(0.01 + rng.uniform());
    }
    const auto d = dist(c, p);
    const auto t = table_of(c, prior);
    auto scaled = d;
    const double k = 0.25;
    for (auto& x : scaled.probs) x *= k;
    CHECK(predict(scaled) == predict(d));
    CHECK(calibrated_predict(scaled, t) == calibrated_predict(d, t));
    const auto flat = table_of(c, std::vector<double>(n, 0.37));
    CHECK(calibrated_predict(d, flat) == predict(d));
  }
}

TEST_CASE("content-free prior") {
  const TableScorer s({{"N/A", {0.1, 0.9}}});
  const std::vector<std::string> c{"A", "B"};
  const std::vector<std::string> na{"N/A"};
  const auto p = content_free_prior(s, na, c);
  CHECK(p.priors == std::vector<double>{0.1, 0.9});
  CHECK(p.threshold == 0.0);
  const TableScorer uniform({});
  const auto d = dist(c, {0.3, 0.6});
  CHECK(content_free_calibrate(uniform, na, d) == predict(d));
}

TEST_CASE("prior cache round trip") {
  const auto path = std::filesystem::temp_directory_path() / "kinctx_prior_cache_test.json";
  const auto t = table_of({"Positive", "Negative"}, {0.25, 0.125});
  save_prior_cache(t, path);
  const auto back = load_prior_cache(path);
  CHECK(back.candidates == t.candidates);
  CHECK(back.priors == t.priors);
  CHECK(back.sample_count == 1);
  std::filesystem::remove(path);
  CHECK_THROWS(load_prior_cache(path));
}
