#include <doctest.h>

#include <cmath>

#include "fixtures/fixtures.hpp"
#include "kinctx/dataset_io.hpp"
#include "kinctx/eval_harness.hpp"

using namespace kinctx;

namespace {

// Small news-style world: every example mentions one or two places, the
// label is a fixed function of the first place.
struct World {
  KnowledgeBase kb = fixtures::toy_kb();
  EmbeddingTable table;
  std::vector<LinkedExample> train, test;
  const TaskTemplate* templ = &TemplateTable::builtin().get("agnews");

  World() : table(kb, 4) {
    Rng rng(99);
    for (EntityIdx e = 0; e < kb.entity_count(); ++e) {
      std::vector<double> v(4);
      for (auto& x : v) x = rng.uniform();
      table.set(e, v);
    }
    const std::vector<std::string> places{"Paris", "France", "Berlin", "Germany", "NYC", "USA"};
    const std::vector<std::string> classes{"world", "sports", "business", "technology"};
    for (int i = 0; i < 12; ++i) {
      const auto& a = places[static_cast<std::size_t>(i) % places.size()];
      const auto& b = places[static_cast<std::size_t>(i * 5 + 1) % places.size()];
      train.push_back(fixtures::text_example("tr" + std::to_string(i), "Report from " + a + " on " + b + " today.",
                                             classes[static_cast<std::size_t>(i) % 4]));
    }
    for (int i = 0; i < 10; ++i) {
      const auto& a = places[static_cast<std::size_t>(i * 7 + 3) % places.size()];
      test.push_back(fixtures::text_example("te" + std::to_string(i), "Latest from " + a + ".",
                                            classes[static_cast<std::size_t>(i) % 4]));
    }
    const auto index = LinkerIndex::build(kb);
    link_all(train, index);
    link_all(test, index);
  }

  EvalData data() const {
    EvalData d;
    d.train = train;
    d.test = test;
    d.kb = &kb;
    d.embeddings = &table;
    d.templ = templ;
    return d;
  }
};

}  // namespace

TEST_CASE("metric examples") {
  const std::vector<std::string> p{"pos", "pos", "neg"}, g{"pos", "neg", "neg"};
  CHECK(compute_metric(p, g, "binary_f1", "pos") == doctest::Approx(0.666667).epsilon(1e-5));
  CHECK(compute_metric(p, g, "accuracy") == doctest::Approx(2.0 / 3));
  CHECK(compute_metric(g, g, "accuracy") == 1.0);
  CHECK(compute_metric(g, g, "binary_f1", "pos") == 1.0);
  CHECK(compute_metric(g, g, "exact_match") == 1.0);
  const std::vector<std::string> em_p{"The Eiffel Tower"}, em_g{"eiffel tower"};
  CHECK(compute_metric(em_p, em_g, "exact_match") == 1.0);
  CHECK(normalize_answer("  An  apple, the PIE! ") == "apple pie");
  const std::vector<std::string> none{"neg", "neg"}, gold2{"pos", "neg"};
  CHECK(compute_metric(none, gold2, "binary_f1", "pos") == 0.0);
  CHECK_THROWS_AS(compute_metric(p, gold2, "accuracy"), Error);
  CHECK_THROWS_AS(compute_metric(p, g, "binary_f1"), Error);
  CHECK_THROWS_AS(compute_metric(p, g, "bleu"), Error);
}

TEST_CASE("mean and population std") {
  const std::vector<double> v{1, 2, 3, 4};
  const auto [m, s] = mean_and_std(v);
  CHECK(m == 2.5);
  CHECK(s == doctest::Approx(std::sqrt(1.25)));
  const std::vector<double> one{0.7};
  CHECK(mean_and_std(one).second == 0.0);
}

TEST_CASE("config validation") {
  ExperimentConfig c;
  CHECK_NOTHROW(c.validate());
  c.seeds.clear();
  CHECK_THROWS_AS(c.validate(), Error);
  c.seeds = {1};
  c.metric = "rouge";
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK(c.k == 8);
  CHECK(default_seeds() == std::vector<std::uint64_t>{12, 24, 42, 90, 100});
}

TEST_CASE("K=0 reproduces the No Demonstration setting") {
  const World w;
  MockScorerConfig mc;
  mc.base_bias = {{"Sports", 2.0}};
  const MockScorer scorer(mc);
  ExperimentConfig zero;
  zero.k = 0;
  zero.seeds = {12, 24};
  ExperimentConfig nodemo;
  nodemo.seeds = zero.seeds;
  nodemo.destruction = Destruction::no_demonstration;
  const auto a = run_icl_eval(zero, w.data(), scorer);
  const auto b = run_icl_eval(nodemo, w.data(), scorer);
  CHECK(a.mean == b.mean);
  for (std::size_t i = 0; i < a.per_seed.size(); ++i) {
    CHECK(a.per_seed[i].predictions == b.per_seed[i].predictions);
    CHECK(a.per_seed[i].demo_ids.empty());
  }
  CHECK(build_prompt({}, w.test[0], *w.templ, 256) == "Article: Latest from Germany.\nAnswer:");
}

TEST_CASE("KPC with KER beats the uncalibrated random baseline on a biased mock") {
  const World w;
  MockScorerConfig mc;
  mc.base_bias = {{"World", 1.0}, {"Sports", 4.0}, {"Business", 1.5}, {"Technology", 0.5}};
  const MockScorer scorer(mc);
  const auto contexts = kqa_contexts(w.train, w.kb, 0);
  REQUIRE_FALSE(contexts.empty());
  auto data = w.data();
  data.prior_contexts = contexts;

  ExperimentConfig base;
  base.selection = DemoSelection::random;
  base.calibration = Calibration::none;
  ExperimentConfig ours;
  ours.calibration = Calibration::kpc;
  const auto lo = run_icl_eval(base, data, scorer);
  const auto hi = run_icl_eval(ours, data, scorer);
  CHECK(hi.mean >= lo.mean);
  CHECK(hi.mean == 1.0);
  // With t=2 only Sports-truth targets survive the bias uncalibrated.
  CHECK(lo.mean < 0.5);

  ExperimentConfig cf = base;
  cf.calibration = Calibration::content_free;
  CHECK(run_icl_eval(cf, data, scorer).mean == 1.0);
}

TEST_CASE("reports are reproducible and consistent") {
  const World w;
  MockScorerConfig mc;
  mc.base_bias = {{"Sports", 1.8}};
  const MockScorer scorer(mc);
  ExperimentConfig c;
  c.k = 4;
  const auto a = run_icl_eval(c, w.data(), scorer);
  const auto b = run_icl_eval(c, w.data(), scorer);
  CHECK(a.to_json() == b.to_json());
  CHECK(a.to_json().find("runtime") == std::string::npos);
  std::vector<double> scores;
  for (const auto& s : a.per_seed) scores.push_back(s.score);
  const auto [m, sd] = mean_and_std(scores);
  CHECK(m == a.mean);
  CHECK(sd == a.std);
  CHECK(a.per_seed.size() == 5);
  for (const auto& s : a.per_seed) CHECK(s.demo_ids.size() == 4);

  c.record_runtime = true;
  CHECK(run_icl_eval(c, w.data(), scorer).runtime_seconds.has_value());
}

TEST_CASE("destruction suite: paired selections and entity sensitivity") {
  const World w;
  std::vector<std::string> surfaces;
  for (std::size_t i = 0; i < w.kb.alias_count(); ++i) surfaces.push_back(w.kb.alias_at(i));
  const fixtures::EntityOverlapScorer scorer(surfaces);
  ExperimentConfig c;
  c.k = 12;
  c.seeds = {12, 24, 42};
  const auto suite = run_destruction_suite(c, w.data(), scorer);
  REQUIRE(suite.size() == 7);
  const auto& origin = suite.at(Destruction::origin);
  const auto& removed = suite.at(Destruction::remove_entity);
  CHECK(origin.mean == 1.0);
  CHECK(removed.mean < origin.mean);
  for (const auto& [setting, report] : suite) {
    for (std::size_t s = 0; s < report.per_seed.size(); ++s) {
      if (setting == Destruction::no_demonstration) {
        CHECK(report.per_seed[s].demo_ids.empty());
      } else {
        CHECK(report.per_seed[s].demo_ids == origin.per_seed[s].demo_ids);
      }
    }
  }
  ExperimentConfig zero = c;
  zero.k = 0;
  CHECK(run_icl_eval(zero, w.data(), scorer).mean == suite.at(Destruction::no_demonstration).mean);

  // The bias mock cannot see the perturbation at all.
  const MockScorer mock(MockScorerConfig{});
  ExperimentConfig m = c;
  m.destruction = Destruction::origin;
  const auto mo = run_icl_eval(m, w.data(), mock);
  m.destruction = Destruction::remove_entity;
  CHECK(run_icl_eval(m, w.data(), mock).mean == mo.mean);
}

TEST_CASE("random selection draws distinct demonstrations") {
  const World w;
  ExperimentConfig c;
  c.selection = DemoSelection::random;
  c.k = 5;
  const auto a = select_demonstrations(c, w.data(), 7);
  CHECK(a == select_demonstrations(c, w.data(), 7));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
  CHECK(a.size() == 5);
}

TEST_CASE("relevance range restricts the drawable rows") {
  const World w;
  ExperimentConfig c;
  c.k = 3;
  RetrieverConfig rc = c.retriever;
  rc.k = 3;
  rc.seed = 12;
  const auto plan = retrieve(w.train, w.test, rc, w.table);
  auto sorted = plan.s;
  std::sort(sorted.begin(), sorted.end());
  c.relevance_min = sorted[sorted.size() / 2];
  const auto chosen = select_demonstrations(c, w.data(), 12);
  CHECK(chosen.size() == 3);
  for (auto i : chosen) {
    const auto row = std::find(plan.subset_ids.begin(), plan.subset_ids.end(), i) - plan.subset_ids.begin();
    CHECK(plan.s[static_cast<std::size_t>(row)] >= *c.relevance_min);
  }
  c.relevance_min = 2.0;
  CHECK_THROWS_AS(select_demonstrations(c, w.data(), 12), Error);
}

TEST_CASE("label frequency statistics") {
  MockScorerConfig mc;
  mc.base_bias = {{"a", 1.0}, {"b", 5.0}, {"c", 3.0}, {"d", 0.2}};
  const MockScorer scorer(mc);
  const std::vector<std::string> pool{"a", "b", "c", "d"};
  const std::vector<std::string> prompts{"p1", "p2", "p3"};
  for (const auto& [cand, n] : label_frequency_stats(scorer, prompts, pool, 4)) CHECK(n == 3);
  const auto top2 = label_frequency_stats(scorer, prompts, pool, 2);
  CHECK(top2 == std::vector<std::pair<std::string, std::size_t>>{{"a", 0}, {"b", 3}, {"c", 3}, {"d", 0}});
  CHECK_THROWS_AS(label_frequency_stats(scorer, prompts, pool, 5), Error);
}

TEST_CASE("prior contexts come from in-document triples") {
  const World w;
  const auto ctx = kqa_contexts(w.train, w.kb, 1);
  CHECK_FALSE(ctx.empty());
  for (const auto& c : ctx) {
    CHECK(c.rfind("Question :", 0) == 0);
    CHECK(c.size() > 10);
    CHECK(c.substr(c.size() - 8) == "Answer :");
  }
  CHECK(ctx == kqa_contexts(w.train, w.kb, 1));
}
