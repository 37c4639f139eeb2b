// Serial reference vs OpenMP for each parallel kernel.
//   build/bench/bench_kernels --benchmark_filter=Relevance

#include <benchmark/benchmark.h>

#include <sstream>

#include "kinctx/entity_linker.hpp"
#include "kinctx/ker_retriever.hpp"
#include "kinctx/knowledge_store.hpp"
#include "kinctx/kpc_calibrator.hpp"
#include "kinctx/lm_scorer.hpp"
#include "kinctx/pretrain_builder.hpp"

using namespace kinctx;

namespace {

constexpr std::size_t kEntities = 20000;

const KnowledgeBase& kb() {
  static const KnowledgeBase k = [] {
    std::ostringstream aliases, triples;
    Rng rng(1);
    for (std::size_t i = 0; i < kEntities; ++i) {
      aliases << 'Q' << i << "\tname" << i;
      if (i % 4 == 0) aliases << "\tbig name" << i;
      aliases << '\n';
    }
    for (std::size_t i = 0; i < kEntities * 3; ++i) {
      triples << 'Q' << rng.below(kEntities) << "\tP" << rng.below(40) << "\tQ" << rng.below(kEntities) << '\n';
    }
    std::istringstream a(aliases.str()), t(triples.str());
    return KnowledgeBase::load(a, t);
  }();
  return k;
}

const EmbeddingTable& table() {
  static const EmbeddingTable t = [] {
    EmbeddingTable e(kb(), 32);
    Rng rng(2);
    std::vector<double> v(32);
    for (EntityIdx i = 0; i < kEntities; ++i) {
      for (auto& x : v) x = rng.uniform() * 2 - 1;
      e.set(i, v);
    }
    return e;
  }();
  return t;
}

std::vector<LinkedExample> documents(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LinkedExample> docs(n);
  for (std::size_t d = 0; d < n; ++d) {
    std::string text = "the report";
    for (int w = 0; w < 24; ++w) {
      text += rng.bernoulli(0.2) ? " name" + std::to_string(rng.below(2000)) : " said so";
    }
    docs[d].id = "d" + std::to_string(d);
    docs[d].fields.push_back({"text", std::move(text), {}});
  }
  return docs;
}

const LinkerIndex& index() {
  static const LinkerIndex i = LinkerIndex::build(kb());
  return i;
}

std::vector<LinkedExample> linked(std::size_t n, std::uint64_t seed) {
  auto docs = documents(n, seed);
  link_all(docs, index());
  return docs;
}

void relevance(benchmark::State& state, bool parallel) {
  static const auto train = linked(512, 3), targets = linked(64, 4);
  std::vector<std::span<const EntityIdx>> ts, qs;
  for (const auto& e : train) ts.emplace_back(e.entities);
  for (const auto& e : targets) qs.emplace_back(e.entities);
  const RetrieverConfig cfg;
  for (auto _ : state) {
    auto d = parallel ? relevance_matrix(ts, qs, table(), cfg) : relevance_matrix_serial(ts, qs, table(), cfg);
    benchmark::DoNotOptimize(d.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ts.size() * qs.size()));
}

void linking(benchmark::State& state, bool parallel) {
  const auto docs = documents(2000, 5);
  for (auto _ : state) {
    state.PauseTiming();
    auto work = docs;
    state.ResumeTiming();
    if (parallel) {
      link_all(work, index());
    } else {
      link_all_serial(work, index());
    }
    benchmark::DoNotOptimize(work.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(docs.size()));
}

void corpus(benchmark::State& state, bool parallel) {
  static const auto docs = linked(2000, 6);
  const std::vector<std::string> vocab{"alpha", "beta", "gamma", "delta"};
  CorpusOptions opt;
  opt.seed = 7;
  for (auto _ : state) {
    auto out = parallel ? build_corpus(docs, kb(), vocab, opt) : build_corpus_serial(docs, kb(), vocab, opt);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(docs.size()));
}

void prior(benchmark::State& state, bool parallel) {
  MockScorerConfig mc;
  mc.base_bias = {{"World", 1.0}, {"Sports", 3.0}, {"Business", 0.5}, {"Technology", 1.5}};
  const MockScorer scorer(mc);
  const std::vector<std::string> c{"World", "Sports", "Business", "Technology"};
  std::vector<std::string> ctx;
  for (int i = 0; i < 5000; ++i) ctx.push_back("Question : What is the P1 of name" + std::to_string(i) + " ? Answer :");
  for (auto _ : state) {
    auto p = parallel ? estimate_prior(scorer, ctx, c) : estimate_prior_serial(scorer, ctx, c);
    benchmark::DoNotOptimize(p.priors.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ctx.size()));
}

}  // namespace

BENCHMARK_CAPTURE(relevance, serial, false)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(relevance, openmp, true)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(linking, serial, false)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(linking, openmp, true)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(corpus, serial, false)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(corpus, openmp, true)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(prior, serial, false)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(prior, openmp, true)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
