#include <doctest.h>

#include <cmath>
#include <future>

#include "fixtures/fixtures.hpp"
#include "kinctx/lm_scorer.hpp"
#include "kinctx/pretrain_builder.hpp"

using namespace kinctx;

namespace {

MockScorerConfig biased(std::map<std::string, double> b, double t = 2.0) {
  MockScorerConfig c;
  c.base_bias = std::move(b);
  c.signal_boost = t;
  return c;
}

}  // namespace

TEST_CASE("mock scorer examples") {
  const std::vector<std::string> ab{"A", "B"};
  auto d = mock_score("anything", ab, biased({{"A", 1}, {"B", 1}}), "A");
  CHECK(d.probs[0] == doctest::Approx(2.0 / 3));
  CHECK(d.probs[1] == doctest::Approx(1.0 / 3));

  d = mock_score("anything", ab, biased({{"A", 1}, {"B", 4}}), "A");
  CHECK(d.probs[0] == doctest::Approx(2.0 / 6));
  CHECK(d.probs[1] == doctest::Approx(4.0 / 6));
  CHECK(d.probs[1] > d.probs[0]);

  CHECK_THROWS_AS(mock_score("p", ab, biased({}), "C"), Error);
}

TEST_CASE("mock scorer with uniform bias always ranks the truth first") {
  const std::vector<std::string> c{"w", "x", "y", "z"};
  const MockScorer s(biased({}));
  for (const auto& truth : c) {
    const auto d = s.score_with_oracle("p", c, truth);
    const auto best = std::max_element(d.probs.begin(), d.probs.end()) - d.probs.begin();
    CHECK(c[static_cast<std::size_t>(best)] == truth);
  }
}

TEST_CASE("mock scorer ignores the prompt and is reproducible") {
  const std::vector<std::string> c{"A", "B", "C"};
  const MockScorer s(biased({{"A", 0.3}, {"B", 2.5}}, 3.0));
  const auto base = s.score_with_oracle("one prompt", c, "C");
  for (const char* p : {"", "another", "Paris is in France\n\nReview:"}) {
    const auto d = s.score_with_oracle(p, c, "C");
    CHECK(d.probs == base.probs);
  }
  CHECK(s.score("x", c).probs == s.score("y", c).probs);
  const auto neutral = s.score("x", c);
  CHECK(neutral.probs[0] == doctest::Approx(0.3 / 3.8));
}

TEST_CASE("scorer contract: permutation, duplicates, empty lists") {
  const MockScorer s(biased({{"A", 1}, {"B", 3}, {"C", 0.5}}));
  const std::vector<std::string> c{"A", "B", "C"};
  const std::vector<std::string> p{"C", "A", "B"};
  const auto d1 = s.score_with_oracle("q", c, "B");
  const auto d2 = s.score_with_oracle("q", p, "B");
  for (const auto& name : c) CHECK(d1.prob_of(name) == doctest::Approx(d2.prob_of(name)).epsilon(1e-15));
  CHECK(d2.candidates == p);

  const std::vector<std::string> dup{"A", "A"};
  CHECK_THROWS_AS(s.score("q", dup), Error);
  CHECK_THROWS_AS(s.score("q", {}), Error);
}

TEST_CASE("distribution validation") {
  PredictionDistribution d{{"a", "b"}, {0.2, 0.3}};
  CHECK_NOTHROW(d.validate());
  d.probs = {0.0, 0.0};
  CHECK_THROWS_AS(d.validate(), Error);
  d.probs = {0.8, 0.7};
  CHECK_THROWS_AS(d.validate(), Error);
  d.probs = {-0.1, 0.5};
  CHECK_THROWS_AS(d.validate(), Error);
  d.probs = {0.5};
  CHECK_THROWS_AS(d.validate(), Error);
}

TEST_CASE("mock config validation") {
  CHECK_THROWS_AS(biased({{"A", 0}}).validate(), Error);
  CHECK_THROWS_AS(biased({}, 1.0).validate(), Error);
  CHECK_NOTHROW(biased({{"A", 2}}).validate());
}

TEST_CASE("mock token log-probabilities plumb into the masked loss") {
  const MockScorer s(biased({}));
  PretrainInstance inst;
  PretrainExample ex;
  ex.tokens = {"a", "b", "c", "d"};
  ex.mask = {0, 1, 1, 0};
  ex.targets = {{1, "b"}, {2, "c"}};
  inst.examples.push_back(ex);
  const auto lp = s.token_logprobs(ex.tokens);
  CHECK(masked_loss(inst, lp) == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK_THROWS_AS(s.token_logprobs({}), Error);
}

TEST_CASE("remote scorer round trip against a fixture server") {
  fixtures::FixtureServer server;
  RemoteScorerConfig cfg;
  cfg.base_url = server.url();
  const RemoteScorer remote(cfg);
  const std::vector<std::string> c{"A", "B", "C"};
  const auto d = remote.score("hello", c);
  CHECK(d.candidates == c);
  CHECK(d.probs[0] == doctest::Approx(0.5));
  CHECK(d.probs[1] == doctest::Approx(0.25));
  CHECK(d.probs[2] == doctest::Approx(0.125));

  const std::vector<std::string> toks{"x", "y"};
  const auto lp = remote.token_logprobs(toks);
  REQUIRE(lp.size() == 2);
  CHECK(lp[0] == doctest::Approx(-0.1));
  CHECK(lp[1] == doctest::Approx(-0.2));

  CHECK_THROWS_AS(remote.score("FAIL", c), TransportError);
  CHECK_THROWS_AS(remote.score("SHORT", c), TransportError);
}

TEST_CASE("remote scorer reports an unreachable server as a transport error") {
  int port = 0;
  {
    fixtures::FixtureServer gone;
    port = std::stoi(gone.url().substr(gone.url().rfind(':') + 1));
  }
  RemoteScorerConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
  cfg.timeout = std::chrono::milliseconds(500);
  const RemoteScorer remote(cfg);
  const std::vector<std::string> c{"A"};
  CHECK_THROWS_AS(remote.score("x", c), TransportError);
}

TEST_CASE("remote scorer bounds requests in flight") {
  fixtures::FixtureServer server;
  server.set_delay_ms(40);
  RemoteScorerConfig cfg;
  cfg.base_url = server.url();
  cfg.max_inflight = 2;
  const RemoteScorer remote(cfg);
  const std::vector<std::string> c{"A", "B"};
  std::vector<std::future<PredictionDistribution>> calls;
  for (int i = 0; i < 8; ++i) {
    calls.push_back(std::async(std::launch::async, [&] { return remote.score("p", c); }));
  }
  for (auto& f : calls) CHECK(f.get().probs.size() == 2);
  CHECK(server.requests() == 8);
  CHECK(server.peak_inflight() <= 2);
  CHECK(server.peak_inflight() >= 1);
}
