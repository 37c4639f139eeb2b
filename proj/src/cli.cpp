#include "kinctx/cli.hpp"

#include <omp.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "kinctx/config.hpp"
#include "kinctx/dataset_io.hpp"
#include "kinctx/entity_linker.hpp"
#include "kinctx/eval_harness.hpp"
#include "kinctx/ker_retriever.hpp"
#include "kinctx/knowledge_store.hpp"
#include "kinctx/kpc_calibrator.hpp"
#include "kinctx/lm_scorer.hpp"
#include "kinctx/pretrain_builder.hpp"
#include "kinctx/prompt_assembler.hpp"

namespace kinctx {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

struct KbPaths {
  std::string aliases;
  std::string triples;
  std::string relations;

  void add_to(CLI::App* app, bool required = true) {
    auto* a = app->add_option("--aliases", aliases, "entity<TAB>alias lines");
    auto* t = app->add_option("--triples", triples, "head<TAB>relation<TAB>tail lines");
    if (required) {
      a->required();
      t->required();
    }
    app->add_option("--relations", relations, "relation<TAB>label lines");
  }
  bool given() const { return !aliases.empty() || !triples.empty(); }
};

KnowledgeBase load_kb(const KbPaths& paths) {
  std::cerr << "loading knowledge base from " << paths.aliases << " and " << paths.triples << "\n";
  auto kb = KnowledgeBase::load_files(paths.aliases, paths.triples);
  if (!paths.relations.empty()) {
    std::ifstream in(paths.relations);
    if (!in) throw Error("cannot open " + paths.relations);
    kb.load_relation_labels(in, paths.relations);
  }
  return kb;
}

// Results go to `path` when set, else to standard output.
void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
  if (!out) throw Error("write failed: " + path);
}

void set_jobs(int jobs) {
  if (jobs > 0) omp_set_num_threads(jobs);
}

fs::path resolve(const fs::path& base, const std::string& value) {
  fs::path p(value);
  return p.is_absolute() ? p : base / p;
}

std::vector<std::string> comma_list(const std::string& text) {
  std::vector<std::string> out;
  for (const auto& part : split(text, ',')) {
    auto t = trim(part);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

// --- ingest-kb ----------------------------------------------------------

struct IngestArgs {
  KbPaths kb;
  std::string out_aliases;
  std::string out_triples;
};

void run_ingest(const IngestArgs& a) {
  const auto kb = load_kb(a.kb);
  const auto c = kb.counts();
  ojson doc{{"entities", c.entities},
            {"aliases", c.aliases},
            {"relations", c.relations},
            {"triples", c.triples},
            {"approx_memory_bytes", kb.approx_memory_bytes()}};
  if (!a.out_aliases.empty() || !a.out_triples.empty()) {
    if (a.out_aliases.empty() || a.out_triples.empty()) {
      throw Error("--out-aliases and --out-triples go together");
    }
    std::ofstream oa(a.out_aliases), ot(a.out_triples);
    if (!oa) throw Error("cannot write " + a.out_aliases);
    if (!ot) throw Error("cannot write " + a.out_triples);
    kb.save(oa, ot);
  }
  std::cout << doc.dump(2) << "\n";
}

// --- link -----------------------------------------------------------------

struct LinkArgs {
  KbPaths kb;
  std::string input;
  bool documents = false;
  std::string out;
};

void run_link(const LinkArgs& a) {
  const auto kb = load_kb(a.kb);
  auto examples = a.documents ? read_documents_file(a.input) : read_dataset_file(a.input, &kb);
  const auto index = LinkerIndex::build(kb);
  link_dataset(examples, index);
  std::ostringstream out;
  write_mentions(out, examples, kb);
  emit(a.out, out.str());
  std::size_t mentions = 0;
  for (const auto& ex : examples) mentions += ex.mention_count();
  std::cerr << "linked " << examples.size() << " examples, " << mentions << " mentions\n";
}

// --- build-pretrain ---------------------------------------------------------

struct PretrainArgs {
  KbPaths kb;
  std::string corpus;
  std::string task = "all";
  std::size_t max_len = 2048;
  std::uint64_t seed = 0;
  double special_probability = 0.5;
  std::string out;
};

void run_build_pretrain(const PretrainArgs& a) {
  const auto kb = load_kb(a.kb);
  auto docs = read_documents_file(a.corpus);
  link_dataset(docs, LinkerIndex::build(kb));

  CorpusOptions options;
  options.seed = a.seed;
  options.mep_options.special_probability = a.special_probability;
  if (a.task != "all") {
    const auto only = parse_pretrain_task(a.task);
    options.mep = only == PretrainTask::mep;
    options.edg = only == PretrainTask::edg;
    options.kqa = only == PretrainTask::kqa;
  }
  const auto vocab = word_vocabulary(docs);
  auto examples = build_corpus(docs, kb, vocab, options);
  const std::size_t built = examples.size();
  Rng rng(derive_seed(a.seed, docs.size()));
  auto packed = pack_instances(std::move(examples), a.max_len, rng);
  mix_instances(packed.instances, rng);
  std::ostringstream out;
  write_pretrain(out, packed.instances);
  emit(a.out, out.str());
  std::cerr << built << " examples, " << packed.instances.size() << " instances, " << packed.dropped
            << " dropped (longer than " << a.max_len << ")\n";
}

// --- retrieve -------------------------------------------------------------

struct RetrieveArgs {
  KbPaths kb;
  std::string embeddings;
  std::string train;
  std::string test;
  RetrieverConfig config;
  std::string order = "draw";
  std::string normalization = "per_target";
  bool with_matrix = false;
  std::string out;
};

void run_retrieve(RetrieveArgs a) {
  a.config.order = parse_order_policy(a.order);
  a.config.normalization = parse_normalization(a.normalization);
  a.config.validate();
  const auto kb = load_kb(a.kb);
  const auto table = EmbeddingTable::load_file(a.embeddings, kb);
  auto train = read_dataset_file(a.train, &kb);
  auto test = read_dataset_file(a.test, &kb);
  const auto index = LinkerIndex::build(kb);
  link_dataset(train, index);
  link_dataset(test, index);
  const auto plan = retrieve(train, test, a.config, table);

  ojson doc;
  doc["seed"] = a.config.seed;
  doc["k"] = a.config.k;
  doc["alpha"] = a.config.alpha;
  doc["gamma"] = a.config.gamma;
  doc["order"] = order_policy_name(a.config.order);
  auto subset = ojson::array();
  for (std::size_t i : plan.subset_ids) subset.push_back(train[i].id);
  doc["subset"] = std::move(subset);
  doc["s"] = plan.s;
  doc["s_prime"] = plan.s_prime;
  auto selected = ojson::array();
  for (std::size_t i : plan.selected) selected.push_back(train[i].id);
  doc["selected"] = std::move(selected);
  if (a.with_matrix) {
    auto rows = ojson::array();
    for (std::size_t r = 0; r < plan.subset_ids.size(); ++r) {
      rows.push_back(std::vector<double>(plan.d_matrix.begin() + static_cast<std::ptrdiff_t>(r * plan.target_count),
                                         plan.d_matrix.begin() + static_cast<std::ptrdiff_t>((r + 1) * plan.target_count)));
    }
    doc["d"] = std::move(rows);
  }
  emit(a.out, doc.dump(2) + "\n");
}

// --- assemble-prompt --------------------------------------------------------

struct AssembleArgs {
  KbPaths kb;
  std::string task;
  std::string templates;
  std::string demos;
  std::string targets;
  std::string destruction = "origin";
  std::uint64_t seed = 0;
  std::size_t max_example_tokens = 256;
  std::size_t span_ngram = 0;
  std::string out;
};

void run_assemble(const AssembleArgs& a) {
  const TemplateTable loaded = a.templates.empty() ? TemplateTable() : TemplateTable::load_file(a.templates);
  const TemplateTable& table = a.templates.empty() ? TemplateTable::builtin() : loaded;
  const auto& tmpl = table.get(a.task);
  const Destruction setting = parse_destruction(a.destruction);

  KnowledgeBase kb;
  if (a.kb.given()) kb = load_kb(a.kb);
  const bool needs_kb = setting == Destruction::shuffle_entity || setting == Destruction::remove_entity ||
                        setting == Destruction::shuffle_non_entity;
  if (needs_kb && !a.kb.given()) throw Error("--destruction " + a.destruction + " needs --aliases and --triples");
  auto demos = a.demos.empty() ? std::vector<LinkedExample>() : read_dataset_file(a.demos, &kb);
  auto targets = read_dataset_file(a.targets, &kb);
  if (a.kb.given()) {
    const auto index = LinkerIndex::build(kb);
    link_dataset(demos, index);
    link_dataset(targets, index);
  }
  std::vector<std::string> labels;
  if (tmpl.kind == TaskKind::classification) labels = tmpl.verbalizer().classes();
  const auto vocab = word_vocabulary(demos);
  Rng rng(derive_seed(a.seed, 2));
  auto destructed = destruct(demos, setting, kb, labels, vocab, rng);
  for (auto& d : destructed) d = truncate(d, a.max_example_tokens);

  std::ostringstream out;
  for (const auto& t : targets) {
    ojson row;
    row["id"] = t.id;
    row["prompt"] = build_prompt(destructed, t, tmpl, a.max_example_tokens);
    row["candidates"] = candidates_for(t, tmpl, a.span_ngram);
    out << row.dump() << "\n";
  }
  emit(a.out, out.str());
}

// --- calibrate -------------------------------------------------------------

struct ScorerArgs {
  std::string kind = "mock";
  std::string mock_bias;
  double mock_boost = 2.0;
  std::string remote_url;
  std::size_t remote_timeout = 30000;
  std::size_t remote_max_inflight = 4;

  void add_to(CLI::App* app) {
    app->add_option("--scorer", kind, "mock or remote");
    app->add_option("--mock-bias", mock_bias, "candidate:weight list, e.g. A:1,B:4");
    app->add_option("--mock-boost", mock_boost, "multiplier on the true candidate");
    app->add_option("--remote-url", remote_url, "model server base url");
    app->add_option("--remote-timeout", remote_timeout, "request timeout in ms");
    app->add_option("--remote-max-inflight", remote_max_inflight, "concurrent request limit");
  }
  std::unique_ptr<Scorer> make() const {
    Settings s;
    s.set("scorer", kind);
    if (!mock_bias.empty()) s.set("mock_bias", mock_bias);
    s.set("mock_boost", nlohmann::json(mock_boost).dump());
    if (!remote_url.empty()) s.set("remote_url", remote_url);
    s.set("remote_timeout", std::to_string(remote_timeout));
    s.set("remote_max_inflight", std::to_string(remote_max_inflight));
    return scorer_from_settings(s);
  }
};

struct CalibrateArgs {
  ScorerArgs scorer;
  std::string contexts;
  std::string candidates;
  std::string task;
  double threshold = kDefaultPriorThreshold;
  std::size_t prior_samples = 1000;
  std::uint64_t seed = 0;
  std::string prior_cache;
  std::string prompts;
  std::string out;
};

void run_calibrate(const CalibrateArgs& a) {
  const auto scorer = a.scorer.make();
  std::vector<std::string> candidates = comma_list(a.candidates);
  const Verbalizer* verbalizer = nullptr;
  Verbalizer v;
  if (!a.task.empty()) {
    const auto& tmpl = TemplateTable::builtin().get(a.task);
    if (tmpl.kind == TaskKind::classification) {
      v = tmpl.verbalizer();
      verbalizer = &v;
      if (candidates.empty()) candidates = v.words();
    }
  }

  PriorTable table;
  if (!a.prior_cache.empty() && fs::exists(a.prior_cache)) {
    table = load_prior_cache(a.prior_cache, a.threshold);
    std::cerr << "priors read from " << a.prior_cache << "\n";
    if (candidates.empty()) candidates = table.candidates;
  } else {
    if (candidates.empty()) throw Error("calibrate needs --candidates, --task or an existing --prior-cache");
    if (a.contexts.empty()) throw Error("calibrate needs --contexts to estimate priors");
    auto contexts = read_contexts_file(a.contexts);
    if (a.prior_samples < contexts.size()) {
      Rng rng(a.seed);
      rng.shuffle(contexts.begin(), contexts.end());
      contexts.resize(a.prior_samples);
    }
    table = estimate_prior(*scorer, contexts, candidates, a.threshold);
    if (!a.prior_cache.empty()) save_prior_cache(table, a.prior_cache);
  }

  ojson doc;
  ojson priors = ojson::object();
  for (std::size_t i = 0; i < table.candidates.size(); ++i) priors[table.candidates[i]] = table.priors[i];
  doc["priors"] = std::move(priors);
  doc["sample_count"] = table.sample_count;
  doc["threshold"] = table.threshold;
  doc["retained"] = filter_candidates(table, table.threshold);

  if (!a.prompts.empty()) {
    std::ifstream in(a.prompts);
    if (!in) throw Error("cannot open " + a.prompts);
    auto rows = ojson::array();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      ojson row;
      std::string prompt;
      std::vector<std::string> cands = candidates;
      try {
        const auto j = nlohmann::json::parse(line);
        prompt = j.at("prompt").get<std::string>();
        if (j.contains("candidates")) cands = j["candidates"].get<std::vector<std::string>>();
        if (j.contains("id")) row["id"] = j["id"];
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(a.prompts, lineno, e.what());
      }
      const auto dist = scorer->score(prompt, cands);
      row["prediction"] = predict(dist, verbalizer);
      row["calibrated"] = calibrated_predict(dist, table, verbalizer);
      rows.push_back(std::move(row));
    }
    doc["predictions"] = std::move(rows);
  }
  emit(a.out, doc.dump(2) + "\n");
}

// --- evaluate ---------------------------------------------------------------

struct EvaluateArgs {
  std::string config;
  std::string out;
  std::vector<std::string> overrides;
  std::string seeds;
};

void run_evaluate(const EvaluateArgs& a) {
  Settings s = Settings::load_file(a.config);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error("--set expects key=value, got '" + kv + "'");
    s.set(trim(std::string_view(kv).substr(0, eq)), trim(std::string_view(kv).substr(eq + 1)));
  }
  if (!a.seeds.empty()) s.set("seeds", a.seeds);
  if (auto jobs = s.count("jobs")) set_jobs(static_cast<int>(*jobs));

  const fs::path base = fs::path(a.config).parent_path();
  auto path_of = [&](std::string_view key) { return resolve(base, s.require(key)); };

  const auto config = experiment_from_settings(s);
  const TemplateTable loaded =
      s.has("templates") ? TemplateTable::load_file(path_of("templates")) : TemplateTable();
  const TemplateTable& table = s.has("templates") ? loaded : TemplateTable::builtin();
  const auto& tmpl = table.get(s.require("task"));

  KbPaths kb_paths{path_of("aliases").string(), path_of("triples").string(),
                   s.has("relations") ? path_of("relations").string() : std::string()};
  const auto kb = load_kb(kb_paths);
  EmbeddingTable embeddings;
  if (config.selection == DemoSelection::ker) embeddings = EmbeddingTable::load_file(path_of("embeddings"), kb);

  auto train = read_dataset_file(path_of("train"), &kb);
  auto test = read_dataset_file(path_of("test"), &kb);
  const auto index = LinkerIndex::build(kb);
  link_dataset(train, index);
  link_dataset(test, index);

  std::vector<std::string> contexts;
  if (config.calibration == Calibration::kpc) {
    contexts = s.has("prior_contexts") ? read_contexts_file(path_of("prior_contexts"))
                                       : kqa_contexts(train, kb, config.seeds.front());
    if (contexts.empty()) throw Error("no prior contexts: the training set has no in-example triples");
  }
  const auto vocab = word_vocabulary(train);
  const auto scorer = scorer_from_settings(s);

  EvalData data;
  data.train = train;
  data.test = test;
  data.kb = &kb;
  data.embeddings = config.selection == DemoSelection::ker ? &embeddings : nullptr;
  data.templ = &tmpl;
  data.prior_contexts = contexts;
  data.vocab = vocab;

  std::cerr << "evaluating " << tmpl.task_id << " on " << test.size() << " targets, " << config.seeds.size()
            << " seeds\n";
  const auto started = std::chrono::steady_clock::now();
  std::string text;
  if (s.flag("suite").value_or(false)) {
    ojson doc = ojson::object();
    for (const auto& [setting, report] : run_destruction_suite(config, data, *scorer)) {
      doc[std::string(destruction_name(setting))] = ojson::parse(report.to_json());
    }
    text = doc.dump(2) + "\n";
  } else {
    const auto report = run_icl_eval(config, data, *scorer);
    text = report.to_json();
    std::cerr << report.metric << " " << report.mean << " +- " << report.std << "\n";
  }
  std::cerr << "finished in "
            << std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count() << " s\n";
  emit(a.out, text);
}

}  // namespace

int dispatch(int argc, char** argv) {
  CLI::App app{"Knowledge-aware in-context learning toolkit"};
  app.require_subcommand(1);
  int jobs = 0;
  std::function<void()> action;

  auto add_jobs = [&](CLI::App* sub) {
    sub->add_option("--jobs", jobs, "worker threads (default: all cores)");
  };

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest-kb", "validate a knowledge base and print its counts");
  ingest.kb.add_to(c_ingest);
  c_ingest->add_option("--out-aliases", ingest.out_aliases, "write canonical aliases here");
  c_ingest->add_option("--out-triples", ingest.out_triples, "write canonical triples here");
  add_jobs(c_ingest);
  c_ingest->callback([&] { action = [&] { run_ingest(ingest); }; });

  LinkArgs link;
  auto* c_link = app.add_subcommand("link", "link entity mentions in a dataset");
  link.kb.add_to(c_link);
  c_link->add_option("--input", link.input, "JSONL dataset or plain-text documents")->required();
  c_link->add_flag("--documents", link.documents, "input is one plain-text document per line");
  c_link->add_option("--out", link.out, "output JSONL (default: stdout)");
  add_jobs(c_link);
  c_link->callback([&] { action = [&] { run_link(link); }; });

  PretrainArgs pre;
  auto* c_pre = app.add_subcommand("build-pretrain", "build packed MEP/EDG/KQA pretraining data");
  pre.kb.add_to(c_pre);
  c_pre->add_option("--corpus", pre.corpus, "one document per line")->required();
  c_pre->add_option("--task", pre.task, "mep, edg, kqa or all")
      ->check(CLI::IsMember({"mep", "edg", "kqa", "all"}));
  c_pre->add_option("--max-len", pre.max_len, "tokens per packed instance")->check(CLI::PositiveNumber);
  c_pre->add_option("--seed", pre.seed, "random seed");
  c_pre->add_option("--special-probability", pre.special_probability, "MEP special-token branch rate")
      ->check(CLI::Range(0.0, 1.0));
  c_pre->add_option("--out", pre.out, "output JSONL (default: stdout)");
  add_jobs(c_pre);
  c_pre->callback([&] { action = [&] { run_build_pretrain(pre); }; });

  RetrieveArgs ret;
  auto* c_ret = app.add_subcommand("retrieve", "select demonstrations by knowledge relevance");
  ret.kb.add_to(c_ret);
  c_ret->add_option("--embeddings", ret.embeddings, "entity embedding table")->required();
  c_ret->add_option("--train", ret.train, "training JSONL")->required();
  c_ret->add_option("--test", ret.test, "target JSONL")->required();
  c_ret->add_option("--k", ret.config.k, "demonstrations to select");
  c_ret->add_option("--alpha", ret.config.alpha, "weight of the Jaccard term");
  c_ret->add_option("--gamma", ret.config.gamma, "Jaccard smoothing");
  c_ret->add_option("--subset-size", ret.config.subset_size, "training subset size");
  c_ret->add_option("--seed", ret.config.seed, "random seed");
  c_ret->add_option("--order", ret.order, "draw, asc, desc or random")
      ->check(CLI::IsMember({"draw", "asc", "desc", "random"}));
  c_ret->add_option("--normalization", ret.normalization, "per_target or per_train_row")
      ->check(CLI::IsMember({"per_target", "per_train_row"}));
  c_ret->add_flag("--matrix", ret.with_matrix, "include the relevance matrix");
  c_ret->add_option("--out", ret.out, "output JSON (default: stdout)");
  add_jobs(c_ret);
  c_ret->callback([&] { action = [&] { run_retrieve(ret); }; });

  AssembleArgs asm_args;
  auto* c_asm = app.add_subcommand("assemble-prompt", "render prompts for target examples");
  asm_args.kb.add_to(c_asm, false);
  c_asm->add_option("--task", asm_args.task, "template id")->required();
  c_asm->add_option("--templates", asm_args.templates, "template table JSON (default: built-in)");
  c_asm->add_option("--demos", asm_args.demos, "demonstrations JSONL, in prompt order");
  c_asm->add_option("--targets", asm_args.targets, "target JSONL")->required();
  c_asm->add_option("--destruction", asm_args.destruction, "perturbation applied to the demonstrations");
  c_asm->add_option("--seed", asm_args.seed, "random seed");
  c_asm->add_option("--max-example-tokens", asm_args.max_example_tokens, "truncation length");
  c_asm->add_option("--span-ngram", asm_args.span_ngram, "extractive QA span length");
  c_asm->add_option("--out", asm_args.out, "output JSONL (default: stdout)");
  add_jobs(c_asm);
  c_asm->callback([&] { action = [&] { run_assemble(asm_args); }; });

  CalibrateArgs cal;
  auto* c_cal = app.add_subcommand("calibrate", "estimate contextual priors and calibrate predictions");
  cal.scorer.add_to(c_cal);
  c_cal->add_option("--contexts", cal.contexts, "neutral contexts (text, prompt JSONL or pretraining JSONL)");
  c_cal->add_option("--candidates", cal.candidates, "comma-separated candidates");
  c_cal->add_option("--task", cal.task, "take label words from this template");
  c_cal->add_option("--threshold", cal.threshold, "minimum prior")->check(CLI::NonNegativeNumber);
  c_cal->add_option("--prior-samples", cal.prior_samples, "contexts to sample")->check(CLI::PositiveNumber);
  c_cal->add_option("--seed", cal.seed, "random seed");
  c_cal->add_option("--prior-cache", cal.prior_cache, "prior JSON to reuse or create");
  c_cal->add_option("--prompts", cal.prompts, "JSONL of {prompt, candidates?} to predict");
  c_cal->add_option("--out", cal.out, "output JSON (default: stdout)");
  add_jobs(c_cal);
  c_cal->callback([&] { action = [&] { run_calibrate(cal); }; });

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "run an in-context learning experiment");
  c_ev->add_option("--config", ev.config, "key = value experiment file")->required();
  c_ev->add_option("--out", ev.out, "report JSON (default: stdout)");
  c_ev->add_option("--set", ev.overrides, "override a config key (key=value)");
  c_ev->add_option("--seeds", ev.seeds, "comma-separated seeds");
  c_ev->add_option("--seed", ev.seeds, "run a single seed");
  add_jobs(c_ev);
  c_ev->callback([&] { action = [&] { run_evaluate(ev); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    set_jobs(jobs);
    action();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace kinctx
