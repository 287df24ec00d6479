// detox: decoding-time toxicity mitigation toolkit.
//
// Subcommand map:
//   lm train          count-train the base model
//   datastore build   build a single-polarity retrieval store
//   generate          sample continuations under a mitigation backend
//   corpus sample     seeded without-replacement sampling
//   corpus count      per-label token and block totals
//   corpus translate  run a translation provider over a corpus
//   corpus roundtrip  forward/back translation toxicity study
//   run static        one-shot experiment (all data at once)
//   run continual     language-incremental experiment
//   run ablation      grid sweep over one axis
//   run init          write a starter config
//   synth make        generate the bundled synthetic benchmark world

#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "detox/corpus.hpp"
#include "detox/datastore.hpp"
#include "detox/decoder.hpp"
#include "detox/experts.hpp"
#include "detox/io.hpp"
#include "detox/metrics.hpp"
#include "detox/ngram_lm.hpp"
#include "detox/orchestrator.hpp"
#include "detox/scorer.hpp"
#include "detox/synth.hpp"
#include "detox/vocab.hpp"

namespace {

using namespace detox;
using nlohmann::json;

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string part;
  while (std::getline(ss, part, ','))
    if (!part.empty()) out.push_back(part);
  return out;
}

// Provider spec: a single name or a '+'-chain, e.g. "prefix_map+lossy".
std::shared_ptr<MtProvider> make_provider(const std::string& spec, double rate,
                                          std::uint64_t seed,
                                          const std::string& endpoint) {
  std::vector<std::shared_ptr<MtProvider>> stages;
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, '+')) {
    if (part == "identity") {
      stages.push_back(std::make_shared<IdentityMtProvider>());
    } else if (part == "prefix_map") {
      stages.push_back(std::make_shared<PrefixMapMtProvider>());
    } else if (part == "lossy") {
      stages.push_back(std::make_shared<LossyMtProvider>(rate, seed));
    } else if (part == "remote") {
      if (endpoint.empty())
        throw CLI::ValidationError("--endpoint is required for the remote provider");
      stages.push_back(std::make_shared<RemoteMtProvider>(endpoint));
    } else {
      throw CLI::ValidationError("unknown provider: " + part);
    }
  }
  if (stages.empty()) throw CLI::ValidationError("empty provider spec");
  if (stages.size() == 1) return stages.front();
  return std::make_shared<ChainedMtProvider>(std::move(stages));
}

Polarity polarity_from_string(const std::string& name) {
  if (name == "toxic") return Polarity::kToxic;
  if (name == "nontoxic") return Polarity::kNontoxic;
  throw CLI::ValidationError("--polarity must be toxic or nontoxic");
}

void print_stage_stats(const char* name, const StageStats& s) {
  std::cout << name << ": mean=" << s.mean << " p25=" << s.p25
            << " p50=" << s.p50 << " p75=" << s.p75 << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"decoding-time toxicity mitigation toolkit"};
  app.require_subcommand(1);

  // ---------------------------------------------------------------- lm train
  auto* lm_cmd = app.add_subcommand("lm", "base model commands");
  lm_cmd->require_subcommand(1);
  auto* lm_train = lm_cmd->add_subcommand("train", "count-train a model");
  struct {
    std::string in, out;
    int order = 3;
    double add_k = 1e-3;
    std::vector<double> lambdas;
  } lmo;
  lm_train->add_option("--in", lmo.in, "training corpus (JSONL)")
      ->required()
      ->check(CLI::ExistingFile);
  lm_train->add_option("--out", lmo.out, "model output path")->required();
  lm_train->add_option("--order", lmo.order, "n-gram order");
  lm_train->add_option("--add-k", lmo.add_k, "add-k smoothing constant");
  lm_train->add_option("--lambdas", lmo.lambdas,
                       "interpolation weights, lowest order first");
  lm_train->callback([&] {
    const LoadResult loaded = load_corpus(lmo.in);
    for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";
    std::vector<std::string> texts;
    texts.reserve(loaded.samples.size());
    for (const auto& s : loaded.samples) texts.push_back(s.text);
    auto vocab = std::make_shared<Vocab>(build_vocab(texts));
    std::vector<TokenSequence> corpus;
    corpus.reserve(loaded.samples.size());
    for (const auto& s : loaded.samples)
      corpus.push_back(tokenize(s.text, *vocab, s.language));
    SmoothingConfig smoothing;
    smoothing.add_k = lmo.add_k;
    smoothing.lambdas = lmo.lambdas;
    const NgramLM lm = train_lm(corpus, lmo.order, smoothing, vocab);
    save_lm(lm, lmo.out);
    std::cout << "model: " << lmo.out << "\n"
              << "vocab: " << lm.vocab().size() << " tokens\n"
              << "trained_tokens: " << lm.trained_tokens() << "\n";
  });

  // ---------------------------------------------------------- datastore build
  auto* ds_cmd = app.add_subcommand("datastore", "retrieval store commands");
  ds_cmd->require_subcommand(1);
  auto* ds_build = ds_cmd->add_subcommand("build", "build a store from a corpus");
  struct {
    std::string polarity, in, lm, out;
    ContextKeyConfig key;
  } dso;
  ds_build->add_option("--polarity", dso.polarity, "toxic or nontoxic")
      ->required();
  ds_build->add_option("--in", dso.in, "labeled corpus (JSONL)")
      ->required()
      ->check(CLI::ExistingFile);
  ds_build->add_option("--lm", dso.lm, "base model supplying the vocabulary")
      ->required()
      ->check(CLI::ExistingFile);
  ds_build->add_option("--out", dso.out, "store output path")->required();
  ds_build->add_option("--key-dim", dso.key.dim, "context key dimension");
  ds_build->add_option("--key-window", dso.key.window, "context window");
  ds_build->add_option("--key-seed", dso.key.seed, "key projection seed");
  ds_build->callback([&] {
    const Polarity polarity = polarity_from_string(dso.polarity);
    const NgramLM lm = load_lm(dso.lm);
    const LoadResult loaded = load_corpus(dso.in);
    for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";
    std::vector<LabeledSample> matching;
    for (const auto& s : loaded.samples)
      if (s.label == polarity) matching.push_back(s);
    const Datastore store = build_datastore(matching, lm, dso.key, polarity);
    save_datastore(store, dso.out);
    std::cout << "store: " << dso.out << "\n"
              << "entries: " << store.size() << "\n";
    for (const auto& [lang, n] : store.provenance)
      std::cout << "language " << lang << ": " << n << " entries\n";
  });

  // ------------------------------------------------------------------ generate
  auto* gen_cmd = app.add_subcommand("generate", "sample continuations");
  struct {
    std::string backend = "retrieval";
    std::string prompts, out, lm, toxic_store, nontoxic_store, experts;
    std::string filter_stage = "auto";
    double alpha = 2.0, top_p = 0.9, temperature = 1.0;
    int k = 25, max_new_tokens = 32;
    std::uint64_t seed = 0;
    std::size_t neighbors = 1024;
    double retrieval_temperature = 200.0;
    unsigned threads = 0;
  } go;
  gen_cmd->add_option("--backend", go.backend,
                      "retrieval, experts or base_only");
  gen_cmd->add_option("--prompts", go.prompts, "prompt file (JSONL)")
      ->required()
      ->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", go.out, "generation records output")->required();
  gen_cmd->add_option("--lm", go.lm, "base model path")
      ->check(CLI::ExistingFile);
  gen_cmd->add_option("--toxic-store", go.toxic_store, "toxic store (retrieval)")
      ->check(CLI::ExistingFile);
  gen_cmd
      ->add_option("--nontoxic-store", go.nontoxic_store,
                   "non-toxic store (retrieval)")
      ->check(CLI::ExistingFile);
  gen_cmd->add_option("--experts", go.experts, "expert pair directory");
  gen_cmd->add_option("--alpha", go.alpha, "ensemble strength");
  gen_cmd->add_option("--top-p", go.top_p, "nucleus mass");
  gen_cmd->add_option("--filter-stage", go.filter_stage,
                      "auto, before_ensemble or after_ensemble");
  gen_cmd->add_option("--k", go.k, "continuations per prompt");
  gen_cmd->add_option("--max-new-tokens", go.max_new_tokens,
                      "generation length cap");
  gen_cmd->add_option("--seed", go.seed, "generation seed");
  gen_cmd->add_option("--temperature", go.temperature, "sampling temperature");
  gen_cmd->add_option("--neighbors", go.neighbors,
                      "neighbours retrieved per step");
  gen_cmd->add_option("--retrieval-temperature", go.retrieval_temperature,
                      "distance temperature");
  gen_cmd->add_option("--threads", go.threads, "worker threads (0 = auto)");
  gen_cmd->callback([&] {
    const Backend backend = backend_from_string(go.backend);
    BackendState state;
    if (backend == Backend::kExperts) {
      if (go.experts.empty())
        throw CLI::ValidationError("--experts is required for the experts backend");
      auto pair = std::make_shared<ExpertPair>(load_expert_pair(go.experts));
      auto base = go.lm.empty()
                      ? pair->base
                      : std::shared_ptr<const NgramLM>(
                            std::make_shared<NgramLM>(load_lm(go.lm)));
      state = experts_state(std::move(base), std::move(pair));
    } else {
      if (go.lm.empty())
        throw CLI::ValidationError("--lm is required for this backend");
      auto base = std::make_shared<NgramLM>(load_lm(go.lm));
      if (backend == Backend::kRetrieval) {
        if (go.toxic_store.empty() || go.nontoxic_store.empty())
          throw CLI::ValidationError(
              "--toxic-store and --nontoxic-store are required for retrieval");
        RetrievalConfig retrieval;
        retrieval.k = go.neighbors;
        retrieval.temperature = go.retrieval_temperature;
        state = retrieval_state(
            std::move(base),
            std::make_shared<Datastore>(load_datastore(go.toxic_store)),
            std::make_shared<Datastore>(load_datastore(go.nontoxic_store)),
            retrieval);
      } else {
        state = base_only_state(std::move(base));
      }
    }
    EnsembleConfig ens;
    ens.alpha = go.alpha;
    ens.top_p = go.top_p;
    ens.backend = backend;
    ens.filter_stage = go.filter_stage == "auto"
                           ? default_filter_stage(backend)
                           : filter_stage_from_string(go.filter_stage);
    GenerationConfig gen;
    gen.k_gen = go.k;
    gen.max_new_tokens = go.max_new_tokens;
    gen.seed = go.seed;
    gen.temperature = go.temperature;
    const auto prompts = load_prompts(go.prompts);
    const auto records = generate_batch(prompts, state, ens, gen, go.threads);
    save_records(records, go.out);
    std::cout << "records: " << go.out << "\n"
              << "prompts: " << records.size() << "\n"
              << "continuations_per_prompt: " << gen.k_gen << "\n";
  });

  // -------------------------------------------------------------------- corpus
  auto* corpus_cmd = app.add_subcommand("corpus", "corpus tooling");
  corpus_cmd->require_subcommand(1);

  auto* c_sample = corpus_cmd->add_subcommand(
      "sample", "seeded without-replacement sampling");
  struct {
    std::string in, out, lang;
    std::size_t toxic = 3000, nontoxic = 10000;
    std::uint64_t seed = 0;
  } cso;
  c_sample->add_option("--in", cso.in)->required()->check(CLI::ExistingFile);
  c_sample->add_option("--out", cso.out)->required();
  c_sample->add_option("--toxic", cso.toxic, "toxic samples to draw");
  c_sample->add_option("--nontoxic", cso.nontoxic, "non-toxic samples to draw");
  c_sample->add_option("--seed", cso.seed);
  c_sample->add_option("--lang", cso.lang, "restrict the pool to one language");
  c_sample->callback([&] {
    const LoadResult loaded = load_corpus(cso.in);
    for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";
    std::vector<LabeledSample> pool;
    for (const auto& s : loaded.samples)
      if (cso.lang.empty() || s.language == cso.lang) pool.push_back(s);
    SamplingPlan plan;
    plan.toxic = cso.toxic;
    plan.nontoxic = cso.nontoxic;
    plan.seed = cso.seed;
    const auto selection = sample_plan(pool, plan);
    save_corpus(selection, cso.out);
    std::cout << "selection: " << cso.out << "\n"
              << "samples: " << selection.size() << "\n";
  });

  auto* c_count = corpus_cmd->add_subcommand("count", "per-label token totals");
  struct {
    std::string in;
    std::size_t block_size = 1024;
  } cco;
  c_count->add_option("--in", cco.in)->required()->check(CLI::ExistingFile);
  c_count->add_option("--block-size", cco.block_size);
  c_count->callback([&] {
    const LoadResult loaded = load_corpus(cco.in);
    for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";
    std::vector<std::string> texts;
    for (const auto& s : loaded.samples) texts.push_back(s.text);
    const Vocab vocab = build_vocab(texts);
    const TokenCountReport r = count_tokens(loaded.samples, vocab, cco.block_size);
    json j = {{"nontoxic_tokens", r.nontoxic_tokens},
              {"toxic_tokens", r.toxic_tokens},
              {"nontoxic_blocks", r.nontoxic_blocks},
              {"toxic_blocks", r.toxic_blocks}};
    std::cout << j.dump(2) << "\n";
  });

  auto* c_translate =
      corpus_cmd->add_subcommand("translate", "translate a corpus");
  struct {
    std::string in, out, target, provider = "identity", endpoint;
    double rate = 0.1, max_failure_fraction = 0.25;
    std::uint64_t seed = 0;
  } cto;
  c_translate->add_option("--in", cto.in)->required()->check(CLI::ExistingFile);
  c_translate->add_option("--out", cto.out)->required();
  c_translate->add_option("--target", cto.target, "target language")->required();
  c_translate->add_option("--provider", cto.provider,
                          "identity, prefix_map, lossy, remote or a '+'-chain");
  c_translate->add_option("--rate", cto.rate, "lossy deletion rate");
  c_translate->add_option("--seed", cto.seed, "lossy provider seed");
  c_translate->add_option("--endpoint", cto.endpoint, "remote provider URL");
  c_translate->add_option("--max-failure-fraction", cto.max_failure_fraction);
  c_translate->callback([&] {
    const LoadResult loaded = load_corpus(cto.in);
    for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";
    auto provider = make_provider(cto.provider, cto.rate, cto.seed, cto.endpoint);
    const TranslateResult result = translate_batch(
        loaded.samples, *provider, cto.target, cto.max_failure_fraction);
    save_corpus(result.samples, cto.out);
    for (const auto& [index, error] : result.failures)
      std::cerr << "sample " << index << " failed: " << error << "\n";
    std::cout << "translated: " << cto.out << "\n"
              << "provider: " << provider->id() << "\n"
              << "ok: " << result.samples.size() << "\n"
              << "failed: " << result.failures.size() << "\n";
  });

  auto* c_roundtrip = corpus_cmd->add_subcommand(
      "roundtrip", "forward/back translation toxicity study");
  struct {
    std::string in, target, provider = "identity", endpoint, lexicon, out;
    double rate = 0.1;
    std::uint64_t seed = 0;
  } cro;
  c_roundtrip->add_option("--in", cro.in)->required()->check(CLI::ExistingFile);
  c_roundtrip->add_option("--target", cro.target)->required();
  c_roundtrip->add_option("--provider", cro.provider);
  c_roundtrip->add_option("--rate", cro.rate);
  c_roundtrip->add_option("--seed", cro.seed);
  c_roundtrip->add_option("--endpoint", cro.endpoint);
  c_roundtrip->add_option("--lexicon", cro.lexicon, "lexicon scorer weights")
      ->required()
      ->check(CLI::ExistingFile);
  c_roundtrip->add_option("--out", cro.out, "optional JSON report path");
  c_roundtrip->callback([&] {
    const LoadResult loaded = load_corpus(cro.in);
    for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";
    auto provider = make_provider(cro.provider, cro.rate, cro.seed, cro.endpoint);
    LexiconScorer scorer = LexiconScorer::from_file(cro.lexicon);
    const RoundtripReport report = roundtrip_study(
        loaded.samples, *provider, cro.target,
        [&](const std::string& text, const std::string& lang) {
          return scorer.score(text, lang);
        });
    print_stage_stats("original", report.original);
    print_stage_stats("translated", report.translated);
    print_stage_stats("backtranslated", report.backtranslated);
    if (!cro.out.empty()) {
      json stages = {
          {"original",
           {{"mean", report.original.mean}, {"p25", report.original.p25},
            {"p50", report.original.p50}, {"p75", report.original.p75}}},
          {"translated",
           {{"mean", report.translated.mean}, {"p25", report.translated.p25},
            {"p50", report.translated.p50}, {"p75", report.translated.p75}}},
          {"backtranslated",
           {{"mean", report.backtranslated.mean},
            {"p25", report.backtranslated.p25},
            {"p50", report.backtranslated.p50},
            {"p75", report.backtranslated.p75}}}};
      json j;
      j["stages"] = stages;
      json triples = json::array();
      for (const auto& t : report.triples) triples.push_back({t[0], t[1], t[2]});
      j["triples"] = triples;
      write_file(cro.out, j.dump(2) + "\n");
      std::cout << "report: " << cro.out << "\n";
    }
  });

  // ----------------------------------------------------------------------- run
  auto* run_cmd = app.add_subcommand("run", "experiment runners");
  run_cmd->require_subcommand(1);

  std::string static_config;
  auto* run_static_cmd =
      run_cmd->add_subcommand("static", "all data at once");
  run_static_cmd->add_option("--config", static_config)
      ->required()
      ->check(CLI::ExistingFile);
  run_static_cmd->callback([&] {
    const ExperimentConfig cfg = load_experiment_config(static_config);
    const EvalReport report = run_static(cfg);
    std::cout << "output: " << cfg.output_dir << "\n"
              << "emt: " << report.mitigated.overall << "\n"
              << "base_emt: " << report.base.overall << "\n"
              << "relative: " << report.relative_overall << "\n";
  });

  std::string continual_config;
  auto* run_cont_cmd =
      run_cmd->add_subcommand("continual", "languages added one at a time");
  run_cont_cmd->add_option("--config", continual_config)
      ->required()
      ->check(CLI::ExistingFile);
  run_cont_cmd->callback([&] {
    const ExperimentConfig cfg = load_experiment_config(continual_config);
    const ContinualRun run = run_continual(cfg);
    std::cout << "output: " << cfg.output_dir << "\n"
              << "steps: " << run.steps.size() << "\n";
    if (!run.steps.empty())
      for (const auto& [lang, v] : run.steps.back().emt_per_language)
        std::cout << "final_emt " << lang << ": " << v << "\n";
  });

  std::string ablation_config, ablation_axis;
  auto* run_abl_cmd = run_cmd->add_subcommand("ablation", "grid sweep");
  run_abl_cmd->add_option("--config", ablation_config)
      ->required()
      ->check(CLI::ExistingFile);
  run_abl_cmd
      ->add_option("--axis", ablation_axis,
                   "alpha_grid, datastore_size, translation_quality_proxy "
                   "or data_size")
      ->required();
  run_abl_cmd->callback([&] {
    const ExperimentConfig cfg = load_experiment_config(ablation_config);
    const AblationReport report =
        run_ablation(cfg, ablation_axis_from_string(ablation_axis));
    std::cout << "output: " << cfg.output_dir << "\n"
              << "points: " << report.points.size() << "\n";
    for (const auto& p : report.points) {
      std::cout << "point " << p.label << ": ";
      if (!p.error.empty()) {
        std::cout << "FAILED: " << p.error << "\n";
        continue;
      }
      const auto it = p.metrics.find("relative");
      std::cout << "relative="
                << (it == p.metrics.end() ? 0.0 : it->second) << "\n";
    }
  });

  std::string init_out = "exp.conf";
  auto* run_init_cmd = run_cmd->add_subcommand("init", "write a starter config");
  run_init_cmd->add_option("--out", init_out);
  run_init_cmd->callback([&] {
    ExperimentConfig cfg;
    cfg.languages = {"aa", "bb", "cc"};
    cfg.plan.toxic = 120;
    cfg.plan.nontoxic = 400;
    cfg.corpus_path = "pool.jsonl";
    cfg.prompts_path = "prompts.jsonl";
    cfg.lexicon_path = "lexicon.json";
    cfg.seed = 7;
    cfg.plan.seed = 7;
    cfg.alpha_grid = {0.0, 0.5, 1.0, 2.0, 4.0};
    cfg.datastore_size_grid = {1, 2, 4};
    cfg.deletion_rate_grid = {0.0, 0.2, 0.4};
    cfg.data_size_grid = {{30, 100}, {60, 200}, {120, 400}};
    save_experiment_config(cfg, init_out);
    std::cout << "config: " << init_out << "\n";
  });

  // --------------------------------------------------------------------- synth
  auto* synth_cmd = app.add_subcommand("synth", "synthetic benchmark world");
  synth_cmd->require_subcommand(1);
  auto* synth_make = synth_cmd->add_subcommand("make", "generate world files");
  struct {
    std::string out_dir;
    std::string languages = "aa,bb,cc";
    int toxic_types = 10, nontoxic_types = 200;
    int toxic_samples = 150, nontoxic_samples = 500;
    int min_tokens = 6, max_tokens = 12;
    double density = 0.4, weight = 0.9;
    std::uint64_t seed = 0;
    int prompts = 600;
  } so;
  synth_make->add_option("--out-dir", so.out_dir)->required();
  synth_make->add_option("--languages", so.languages, "comma-separated codes");
  synth_make->add_option("--toxic-types", so.toxic_types);
  synth_make->add_option("--nontoxic-types", so.nontoxic_types);
  synth_make->add_option("--toxic-samples", so.toxic_samples);
  synth_make->add_option("--nontoxic-samples", so.nontoxic_samples);
  synth_make->add_option("--min-tokens", so.min_tokens);
  synth_make->add_option("--max-tokens", so.max_tokens);
  synth_make->add_option("--density", so.density);
  synth_make->add_option("--weight", so.weight);
  synth_make->add_option("--seed", so.seed);
  synth_make->add_option("--prompts", so.prompts, "prompt count (0 = none)");
  synth_make->callback([&] {
    SynthConfig cfg;
    cfg.languages = split_list(so.languages);
    cfg.toxic_types_per_language = so.toxic_types;
    cfg.nontoxic_types_per_language = so.nontoxic_types;
    cfg.toxic_samples_per_language = so.toxic_samples;
    cfg.nontoxic_samples_per_language = so.nontoxic_samples;
    cfg.min_tokens = so.min_tokens;
    cfg.max_tokens = so.max_tokens;
    cfg.toxic_density = so.density;
    cfg.toxic_weight = so.weight;
    cfg.seed = so.seed;
    const SynthWorld world = make_synth_world(cfg);
    std::filesystem::create_directories(so.out_dir);
    const auto dir = std::filesystem::path(so.out_dir);
    save_corpus(world.pool, (dir / "pool.jsonl").string());
    LexiconScorer(world.lexicon).save((dir / "lexicon.json").string());
    if (so.prompts > 0)
      save_prompts(make_prompt_set(cfg, so.prompts, cfg.seed),
                   (dir / "prompts.jsonl").string());
    std::cout << "world: " << so.out_dir << "\n"
              << "pool: " << world.pool.size() << " samples\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
