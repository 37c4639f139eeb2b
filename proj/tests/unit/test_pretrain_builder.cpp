#include <doctest.h>

#include <cmath>
#include <limits>
#include <map>

#include "fixtures/fixtures.hpp"
#include "kinctx/pretrain_builder.hpp"

using namespace kinctx;

namespace {

LinkedExample linked(const KnowledgeBase& kb, const std::string& text) {
  auto ex = fixtures::text_example("d", text);
  link_example(ex, LinkerIndex::build(kb));
  return ex;
}

PretrainExample example_of(std::size_t len, std::size_t masked, PretrainTask task = PretrainTask::mep) {
  PretrainExample ex;
  ex.task = task;
  for (std::size_t i = 0; i < len; ++i) {
    ex.tokens.push_back("t" + std::to_string(i));
    ex.mask.push_back(i < masked ? 1 : 0);
    if (i < masked) ex.targets.emplace(i, ex.tokens.back());
  }
  return ex;
}

}  // namespace

TEST_CASE("MEP with both entities in the special branch") {
  const auto kb = fixtures::toy_kb();
  const auto doc = linked(kb, "Paris is in France");
  Rng rng(0);
  MepOptions always;
  always.special_probability = 1.0;
  const std::vector<std::string> vocab{"w"};
  const auto ex = build_mep(doc, vocab, rng, always);
  REQUIRE(ex);
  CHECK(ex->tokens == std::vector<std::string>{"_", "is", "in", "_"});
  CHECK(ex->mask == std::vector<std::uint8_t>{1, 0, 0, 1});
  CHECK(ex->targets == std::map<std::size_t, std::string>{{0, "Paris"}, {3, "France"}});
}

TEST_CASE("MEP skips documents without mentions") {
  const auto kb = fixtures::toy_kb();
  Rng rng(0);
  const std::vector<std::string> vocab{"w"};
  CHECK_FALSE(build_mep(linked(kb, "nothing to see"), vocab, rng));
}

TEST_CASE("MEP corrupts every token of an entity with one branch") {
  const auto kb = fixtures::toy_kb();
  const auto doc = linked(kb, "I flew from New York City to Paris Hilton");
  const std::vector<std::string> vocab{"zz"};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const auto ex = build_mep(doc, vocab, rng);
    REQUIRE(ex);
    // "New York City" = positions 3..5, "Paris Hilton" = 7..8.
    CHECK(ex->mask == std::vector<std::uint8_t>{0, 0, 0, 1, 1, 1, 0, 1, 1});
    CHECK(((ex->tokens[3] == "_") == (ex->tokens[5] == "_")));
    CHECK(((ex->tokens[7] == "_") == (ex->tokens[8] == "_")));
    CHECK(ex->targets.at(4) == "York");
  }
}

TEST_CASE("EDG layout") {
  const auto kb = fixtures::toy_kb();
  const auto ex = build_edg(linked(kb, "Paris is in France"));
  REQUIRE(ex);
  CHECK(join_tokens(ex->tokens) == "Entities : Paris , France Text : Paris is in France");
  const std::size_t prefix = 7;
  for (std::size_t i = 0; i < ex->size(); ++i) CHECK(ex->mask[i] == (i >= prefix ? 1 : 0));
  CHECK(ex->targets.size() == 4);
  CHECK(ex->targets.at(prefix) == "Paris");

  const auto single = build_edg(linked(kb, "Berlin is big"));
  REQUIRE(single);
  CHECK(join_tokens(single->tokens) == "Entities : Berlin Text : Berlin is big");
  CHECK_FALSE(build_edg(linked(kb, "no entity")));
}

TEST_CASE("EDG lists surfaces in first-mention order") {
  const auto kb = fixtures::toy_kb();
  const auto doc = linked(kb, "France, Paris and France again with Berlin");
  const auto ex = build_edg(doc);
  REQUIRE(ex);
  CHECK(join_tokens(ex->tokens).rfind("Entities : France , Paris , Berlin Text :", 0) == 0);
}

TEST_CASE("KQA over the single available triple") {
  const auto kb = fixtures::toy_kb();
  Rng rng(1);
  const auto ex = build_kqa(linked(kb, "Paris is in France"), kb, rng);
  REQUIRE(ex);
  // Paris -> France (capital_of) is the only triple inside {Paris, France}.
  CHECK(join_tokens(ex->tokens) == "Question : What is the capital of of Paris ? Answer : France");
  CHECK(ex->target_count() == 1);
  CHECK(ex->mask.back() == 1);
  CHECK(ex->targets.at(ex->size() - 1) == "France");
  Rng r2(1);
  CHECK_FALSE(build_kqa(linked(kb, "Paris and Berlin"), kb, r2));
}

TEST_CASE("KQA triple choice is reproducible under a seed") {
  const auto kb = fixtures::toy_kb();
  const auto doc = linked(kb, "Paris, France, Berlin and Germany");
  REQUIRE(one_hop_triples(doc.entities, kb).size() == 3);
  std::set<std::string> seen;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng a(seed), b(seed);
    const auto x = build_kqa(doc, kb, a);
    const auto y = build_kqa(doc, kb, b);
    REQUIRE(x);
    CHECK(x->tokens == y->tokens);
    seen.insert(join_tokens(x->tokens));
  }
  CHECK(seen.size() == 3);
}

TEST_CASE("KQA per-relation templates") {
  const auto kb = fixtures::toy_kb();
  KqaTemplates templates;
  templates.set("capital_of", "{head} is the capital of which country?");
  Rng rng(0);
  const auto ex = build_kqa(linked(kb, "Paris is in France"), kb, rng, templates);
  REQUIRE(ex);
  CHECK(join_tokens(ex->tokens) == "Question : Paris is the capital of which country ? Answer : France");
}

TEST_CASE("packing three 700-token examples into 2048") {
  std::vector<PretrainExample> in{example_of(700, 1), example_of(700, 1), example_of(700, 1)};
  Rng rng(0);
  const auto packed = pack_instances(in, 2048, rng);
  REQUIRE(packed.instances.size() == 2);
  CHECK(packed.instances[0].examples.size() == 2);
  CHECK(packed.instances[1].examples.size() == 1);
  CHECK(packed.dropped == 0);
}

TEST_CASE("packing drops and counts oversized examples") {
  std::vector<PretrainExample> in{example_of(10, 1), example_of(3000, 1)};
  Rng rng(0);
  const auto packed = pack_instances(in, 2048, rng);
  CHECK(packed.dropped == 1);
  CHECK(packed.instances.size() == 1);
}

TEST_CASE("masked loss examples") {
  PretrainInstance inst;
  inst.examples.push_back(example_of(3, 2));
  std::vector<double> lp{std::log(0.5), std::log(0.5), -9.0};
  CHECK(masked_loss(inst, lp) == doctest::Approx(0.693147).epsilon(1e-6));

  PretrainInstance two;
  two.examples.push_back(example_of(1, 1));
  two.examples.push_back(example_of(2, 2));
  std::vector<double> lp2{-1.0, -2.0, -4.0};
  CHECK(masked_loss(two, lp2) == doctest::Approx(2.0));

  std::vector<double> perfect{0.0, 0.0, 0.0};
  CHECK(masked_loss(two, perfect) == 0.0);
}

TEST_CASE("masked loss rejects missing and positive log-probabilities") {
  PretrainInstance inst;
  inst.examples.push_back(example_of(3, 2));
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(masked_loss(inst, std::vector<double>{nan, -1, -1}), Error);
  CHECK_NOTHROW(masked_loss(inst, std::vector<double>{-1, -1, nan}));
  CHECK_THROWS_AS(masked_loss(inst, std::vector<double>{0.5, -1, -1}), Error);
  CHECK_THROWS_AS(masked_loss(inst, std::vector<double>{-1, -1}), Error);
}

TEST_CASE("corpus construction: OpenMP matches serial") {
  const auto kb = fixtures::toy_kb();
  const auto index = LinkerIndex::build(kb);
  const std::vector<std::string> texts{"Paris is in France", "NYC is in the USA", "Berlin, Germany and France",
                                       "no entities at all"};
  std::vector<LinkedExample> docs;
  for (int i = 0; i < 300; ++i) docs.push_back(fixtures::text_example(std::to_string(i), texts[i % 4]));
  link_all(docs, index);
  const std::vector<std::string> vocab{"alpha", "beta", "gamma"};
  CorpusOptions options;
  options.seed = 42;
  const auto a = build_corpus_serial(docs, kb, vocab, options);
  const auto b = build_corpus(docs, kb, vocab, options);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].tokens == b[i].tokens);
    CHECK(a[i].mask == b[i].mask);
    CHECK(a[i].task == b[i].task);
  }
  for (const auto& ex : a) {
    CHECK(ex.target_count() >= 1);
    CHECK(ex.mask.size() == ex.tokens.size());
    for (std::size_t i = 0; i < ex.size(); ++i) CHECK((ex.mask[i] == 1) == (ex.targets.count(i) == 1));
  }
}

TEST_CASE("MEP special-token share over many entities") {
  const auto kb = fixtures::toy_kb();
  const auto doc = linked(kb, "Paris France Berlin Germany NYC");
  const std::vector<std::string> vocab{"w"};
  Rng rng(42);
  MepStats stats;
  for (int i = 0; i < 2000; ++i) build_mep(doc, vocab, rng, {}, &stats);
  const double n = static_cast<double>(stats.special_entities + stats.random_entities);
  CHECK(n == 10000);
  CHECK(static_cast<double>(stats.special_entities) / n == doctest::Approx(0.5).epsilon(0.04));
}

TEST_CASE("packing conserves examples and respects the budget") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<PretrainExample> in;
    std::size_t fitting = 0;
    const std::size_t max_len = 50 + rng.below(100);
    const std::size_t n = rng.below(40);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t len = 1 + rng.below(120);
      in.push_back(example_of(len, 1, static_cast<PretrainTask>(rng.below(3))));
      if (len <= max_len) ++fitting;
    }
    const auto packed = pack_instances(in, max_len, rng);
    std::size_t kept = 0;
    for (const auto& inst : packed.instances) {
      std::size_t tokens = 0;
      for (const auto& ex : inst.examples) {
        CHECK(ex.task == inst.task);
        tokens += ex.size();
      }
      CHECK(tokens == inst.total_tokens);
      CHECK(tokens <= max_len);
      CHECK_FALSE(inst.examples.empty());
      kept += inst.examples.size();
    }
    CHECK(kept == fitting);
    CHECK(kept + packed.dropped == n);
  }
}
