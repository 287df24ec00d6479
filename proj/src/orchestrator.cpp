#include "detox/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "detox/io.hpp"
#include "detox/rng.hpp"

namespace detox {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// small utilities

std::string file_fingerprint(const std::string& path) {
  const std::string bytes = read_file(path);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(
                    fnv1a64(bytes.data(), bytes.size())));
  return buf;
}

namespace {

std::string iso_now() {
  const std::time_t t =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Timestamped progress log. Timestamps live here and never in report.json,
// which must be byte-identical across reruns.
class RunLog {
 public:
  explicit RunLog(const std::string& path)
      : out_(path, std::ios::binary | std::ios::app) {}
  void line(const std::string& msg) {
    if (!out_) return;
    out_ << iso_now() << ' ' << msg << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

template <typename Fn>
auto run_stage(RunLog& log, const std::string& name, Fn&& fn)
    -> decltype(fn()) {
  log.line("stage " + name + ": start");
  try {
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      log.line("stage " + name + ": done");
    } else {
      auto result = fn();
      log.line("stage " + name + ": done");
      return result;
    }
  } catch (const std::exception& e) {
    log.line("stage " + name + ": FAILED: " + e.what());
    throw std::runtime_error("stage " + name + ": " + e.what());
  }
}

std::string double_label(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

std::vector<LabeledSample> filter_label(const std::vector<LabeledSample>& xs,
                                        Polarity label) {
  std::vector<LabeledSample> out;
  for (const auto& s : xs)
    if (s.label == label) out.push_back(s);
  return out;
}

using LanguageData = std::map<std::string, std::vector<LabeledSample>>;

std::vector<std::string> sorted_unique(std::vector<std::string> xs) {
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  return xs;
}

std::vector<LabeledSample> concat_languages(
    const LanguageData& data, const std::vector<std::string>& langs) {
  std::vector<LabeledSample> out;
  for (const auto& lang : langs) {
    const auto it = data.find(lang);
    if (it == data.end())
      throw std::runtime_error("no planned data for language " + lang);
    out.insert(out.end(), it->second.begin(), it->second.end());
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// configuration

AblationAxis ablation_axis_from_string(const std::string& name) {
  if (name == "alpha_grid") return AblationAxis::kAlphaGrid;
  if (name == "datastore_size") return AblationAxis::kDatastoreSize;
  if (name == "translation_quality_proxy")
    return AblationAxis::kTranslationQualityProxy;
  if (name == "data_size") return AblationAxis::kDataSize;
  throw std::invalid_argument("unknown ablation axis: " + name);
}

std::string to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::kAlphaGrid: return "alpha_grid";
    case AblationAxis::kDatastoreSize: return "datastore_size";
    case AblationAxis::kTranslationQualityProxy:
      return "translation_quality_proxy";
    case AblationAxis::kDataSize: return "data_size";
  }
  throw std::logic_error("unreachable axis");
}

void validate_config(const ExperimentConfig& cfg) {
  if (cfg.version != 1)
    throw std::invalid_argument("unsupported config version " +
                                std::to_string(cfg.version));
  if (cfg.languages.empty())
    throw std::invalid_argument("config needs at least one language");
  {
    std::set<std::string> seen(cfg.languages.begin(), cfg.languages.end());
    if (seen.size() != cfg.languages.size())
      throw std::invalid_argument("language sequence contains duplicates");
  }
  if (cfg.plan.toxic < 1 || cfg.plan.nontoxic < 1)
    throw std::invalid_argument("sampling plan counts must be >= 1");
  if (!std::isfinite(cfg.ensemble.alpha))
    throw std::invalid_argument("alpha must be finite");
  if (cfg.ensemble.top_p <= 0.0 || cfg.ensemble.top_p > 1.0)
    throw std::invalid_argument("top_p must lie in (0, 1]");
  if (cfg.generation.k_gen < 1)
    throw std::invalid_argument("k_gen must be >= 1");
  if (cfg.generation.max_new_tokens < 1)
    throw std::invalid_argument("max_new_tokens must be >= 1");
  if (cfg.generation.temperature <= 0.0)
    throw std::invalid_argument("temperature must be positive");
  if (cfg.lm_order < 1) throw std::invalid_argument("model order must be >= 1");
  if (cfg.expert_beta < 0.0 || cfg.expert_beta > 1.0)
    throw std::invalid_argument("expert beta must lie in [0, 1]");
  if (cfg.key.dim < 1 || cfg.key.window < 1)
    throw std::invalid_argument("context key needs dim >= 1 and window >= 1");
  if (cfg.retrieval.k < 1 || cfg.retrieval.temperature <= 0.0)
    throw std::invalid_argument("retrieval needs k >= 1 and temperature > 0");
  if (cfg.datastore_multiplier < 1)
    throw std::invalid_argument("datastore multiplier must be >= 1");
  if (cfg.scorer != "lexicon" && cfg.scorer != "remote")
    throw std::invalid_argument("scorer must be 'lexicon' or 'remote'");
  if (cfg.scoring.max_unscored_fraction < 0.0 ||
      cfg.scoring.max_unscored_fraction > 1.0)
    throw std::invalid_argument("max_unscored_fraction must lie in [0, 1]");
  if (cfg.output_dir.empty())
    throw std::invalid_argument("output_dir must be set");
  if (!fs::exists(cfg.corpus_path))
    throw std::invalid_argument("corpus file not found: " + cfg.corpus_path);
  if (!fs::exists(cfg.prompts_path))
    throw std::invalid_argument("prompts file not found: " + cfg.prompts_path);
  if (cfg.scorer == "lexicon" && !fs::exists(cfg.lexicon_path))
    throw std::invalid_argument("lexicon file not found: " + cfg.lexicon_path);
  if (cfg.scorer == "remote" && cfg.remote_endpoint.empty())
    throw std::invalid_argument("remote scorer needs an endpoint");
}

namespace {

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["version"] = cfg.version;
  j["name"] = cfg.name;
  j["backend"] = to_string(cfg.backend);
  j["languages"] = cfg.languages;
  j["regime"] =
      cfg.regime == DataRegime::kParallel ? "parallel" : "unparallel";
  j["plan"] = {{"toxic", cfg.plan.toxic},
               {"nontoxic", cfg.plan.nontoxic},
               {"seed", std::to_string(cfg.plan.seed)}};
  j["ensemble"] = {
      {"alpha", cfg.ensemble.alpha},
      {"top_p", cfg.ensemble.top_p},
      {"filter_stage", cfg.filter_stage_override
                           ? to_string(*cfg.filter_stage_override)
                           : std::string("auto")}};
  j["generation"] = {{"k_gen", cfg.generation.k_gen},
                     {"max_new_tokens", cfg.generation.max_new_tokens},
                     {"temperature", cfg.generation.temperature}};
  j["model"] = {{"order", cfg.lm_order},
                {"lambdas", cfg.smoothing.lambdas},
                {"add_k", cfg.smoothing.add_k}};
  j["experts"] = {{"beta", cfg.expert_beta}, {"order", cfg.expert_order}};
  j["key"] = {{"dim", cfg.key.dim},
              {"window", cfg.key.window},
              {"seed", std::to_string(cfg.key.seed)}};
  j["retrieval"] = {{"k", cfg.retrieval.k},
                    {"temperature", cfg.retrieval.temperature}};
  j["paths"] = {{"corpus", cfg.corpus_path},
                {"prompts", cfg.prompts_path},
                {"lexicon", cfg.lexicon_path},
                {"cache", cfg.cache_path},
                {"output", cfg.output_dir}};
  j["scorer"] = {{"kind", cfg.scorer}, {"endpoint", cfg.remote_endpoint}};
  j["scoring"] = {{"max_in_flight", cfg.scoring.max_in_flight},
                  {"max_unscored_fraction", cfg.scoring.max_unscored_fraction}};
  j["seed"] = std::to_string(cfg.seed);
  j["threads"] = cfg.threads;
  j["datastore_multiplier"] = cfg.datastore_multiplier;
  json grids;
  grids["alpha_grid"] = cfg.alpha_grid;
  grids["datastore_size_grid"] = cfg.datastore_size_grid;
  grids["deletion_rate_grid"] = cfg.deletion_rate_grid;
  auto pairs = json::array();
  for (const auto& [t, n] : cfg.data_size_grid) pairs.push_back({t, n});
  grids["data_size_grid"] = pairs;
  j["ablation"] = grids;
  return j;
}

}  // namespace

void save_experiment_config(const ExperimentConfig& cfg,
                            const std::string& path) {
  write_file(path, config_to_json(cfg).dump(2) + "\n");
}

ExperimentConfig load_experiment_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const std::exception& e) {
    throw std::runtime_error("config " + path + ": " + e.what());
  }
  ExperimentConfig cfg;
  cfg.version = j.value("version", 1);
  cfg.name = j.value("name", std::string("run"));
  cfg.backend = backend_from_string(j.value("backend", std::string("retrieval")));
  cfg.languages = j.at("languages").get<std::vector<std::string>>();
  const std::string regime = j.value("regime", std::string("parallel"));
  if (regime == "parallel") {
    cfg.regime = DataRegime::kParallel;
  } else if (regime == "unparallel") {
    cfg.regime = DataRegime::kUnparallel;
  } else {
    throw std::runtime_error("config regime must be parallel or unparallel");
  }
  if (j.contains("seed")) cfg.seed = std::stoull(j["seed"].get<std::string>());
  if (j.contains("plan")) {
    const auto& p = j["plan"];
    cfg.plan.toxic = p.value("toxic", cfg.plan.toxic);
    cfg.plan.nontoxic = p.value("nontoxic", cfg.plan.nontoxic);
    cfg.plan.seed = p.contains("seed")
                        ? std::stoull(p["seed"].get<std::string>())
                        : cfg.seed;
  } else {
    cfg.plan.seed = cfg.seed;
  }
  if (j.contains("ensemble")) {
    const auto& e = j["ensemble"];
    cfg.ensemble.alpha = e.value("alpha", cfg.ensemble.alpha);
    cfg.ensemble.top_p = e.value("top_p", cfg.ensemble.top_p);
    const std::string stage = e.value("filter_stage", std::string("auto"));
    if (stage != "auto")
      cfg.filter_stage_override = filter_stage_from_string(stage);
  }
  if (j.contains("generation")) {
    const auto& g = j["generation"];
    cfg.generation.k_gen = g.value("k_gen", cfg.generation.k_gen);
    cfg.generation.max_new_tokens =
        g.value("max_new_tokens", cfg.generation.max_new_tokens);
    cfg.generation.temperature =
        g.value("temperature", cfg.generation.temperature);
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    cfg.lm_order = m.value("order", cfg.lm_order);
    if (m.contains("lambdas"))
      cfg.smoothing.lambdas = m["lambdas"].get<std::vector<double>>();
    cfg.smoothing.add_k = m.value("add_k", cfg.smoothing.add_k);
  }
  if (j.contains("experts")) {
    cfg.expert_beta = j["experts"].value("beta", cfg.expert_beta);
    cfg.expert_order = j["experts"].value("order", cfg.expert_order);
  }
  if (j.contains("key")) {
    const auto& k = j["key"];
    cfg.key.dim = k.value("dim", cfg.key.dim);
    cfg.key.window = k.value("window", cfg.key.window);
    if (k.contains("seed")) cfg.key.seed = std::stoull(k["seed"].get<std::string>());
  }
  if (j.contains("retrieval")) {
    const auto& r = j["retrieval"];
    cfg.retrieval.k = r.value("k", cfg.retrieval.k);
    cfg.retrieval.temperature =
        r.value("temperature", cfg.retrieval.temperature);
  }
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    cfg.corpus_path = p.value("corpus", std::string());
    cfg.prompts_path = p.value("prompts", std::string());
    cfg.lexicon_path = p.value("lexicon", std::string());
    cfg.cache_path = p.value("cache", std::string());
    cfg.output_dir = p.value("output", cfg.output_dir);
  }
  if (j.contains("scorer")) {
    cfg.scorer = j["scorer"].value("kind", cfg.scorer);
    cfg.remote_endpoint = j["scorer"].value("endpoint", std::string());
  }
  if (j.contains("scoring")) {
    cfg.scoring.max_in_flight =
        j["scoring"].value("max_in_flight", cfg.scoring.max_in_flight);
    cfg.scoring.max_unscored_fraction = j["scoring"].value(
        "max_unscored_fraction", cfg.scoring.max_unscored_fraction);
  }
  cfg.threads = j.value("threads", cfg.threads);
  cfg.datastore_multiplier =
      j.value("datastore_multiplier", cfg.datastore_multiplier);
  if (j.contains("ablation")) {
    const auto& a = j["ablation"];
    if (a.contains("alpha_grid"))
      cfg.alpha_grid = a["alpha_grid"].get<std::vector<double>>();
    if (a.contains("datastore_size_grid"))
      cfg.datastore_size_grid =
          a["datastore_size_grid"].get<std::vector<int>>();
    if (a.contains("deletion_rate_grid"))
      cfg.deletion_rate_grid =
          a["deletion_rate_grid"].get<std::vector<double>>();
    if (a.contains("data_size_grid"))
      for (const auto& pair : a["data_size_grid"])
        cfg.data_size_grid.emplace_back(pair.at(0).get<std::size_t>(),
                                        pair.at(1).get<std::size_t>());
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// world preparation

namespace {

struct World {
  std::shared_ptr<Vocab> vocab;
  std::shared_ptr<NgramLM> base;  // trained on the union of all selections
  LanguageData data;              // per-language planned selections
  std::vector<Prompt> prompts;
  std::unique_ptr<Scorer> scorer;
  std::shared_ptr<ScoreCache> cache;
};

std::unique_ptr<Scorer> make_scorer(const ExperimentConfig& cfg,
                                    std::shared_ptr<ScoreCache> cache) {
  if (cfg.scorer == "lexicon")
    return std::make_unique<LexiconScorer>(
        LexiconScorer::from_file(cfg.lexicon_path));
  RemoteScorerConfig rc;
  rc.endpoint = cfg.remote_endpoint;
  rc.jitter_seed = cfg.seed;
  return std::make_unique<RemoteScorer>(rc, std::move(cache));
}

EnsembleConfig resolved_ensemble(const ExperimentConfig& cfg) {
  EnsembleConfig ens = cfg.ensemble;
  ens.backend = cfg.backend;
  ens.filter_stage =
      cfg.filter_stage_override.value_or(default_filter_stage(cfg.backend));
  return ens;
}

World prepare_world(const ExperimentConfig& cfg, RunLog& log) {
  validate_config(cfg);
  World world;
  const LoadResult loaded = run_stage(log, "load-corpus", [&] {
    return load_corpus(cfg.corpus_path);
  });
  for (const auto& w : loaded.warnings) log.line("corpus warning: " + w);
  world.prompts = run_stage(log, "load-prompts", [&] {
    auto prompts = load_prompts(cfg.prompts_path);
    std::set<std::string> prompt_langs;
    for (const auto& p : prompts) prompt_langs.insert(p.language);
    for (const auto& lang : cfg.languages)
      if (!prompt_langs.count(lang))
        throw std::runtime_error("no prompts for language " + lang);
    return prompts;
  });
  run_stage(log, "build-vocab", [&] {
    std::vector<std::string> texts;
    texts.reserve(loaded.samples.size() + world.prompts.size());
    for (const auto& s : loaded.samples) texts.push_back(s.text);
    for (const auto& p : world.prompts) texts.push_back(p.text);
    world.vocab = std::make_shared<Vocab>(build_vocab(texts));
  });
  world.data = run_stage(log, "plan-data", [&] {
    SamplingPlan plan = cfg.plan;
    return plan_language_data(loaded.samples, cfg.languages, cfg.regime, plan);
  });
  run_stage(log, "train-base-model", [&] {
    // The base model stands in for a fixed pretrained multilingual model:
    // it is trained once on every configured language's selection (sorted
    // order, so it is identical under any language visiting order).
    const auto langs = sorted_unique(cfg.languages);
    const auto all = concat_languages(world.data, langs);
    std::vector<TokenSequence> corpus;
    corpus.reserve(all.size());
    for (const auto& s : all)
      corpus.push_back(tokenize(s.text, *world.vocab, s.language));
    world.base = std::make_shared<NgramLM>(
        train_lm(corpus, cfg.lm_order, cfg.smoothing, world.vocab));
  });
  if (!cfg.cache_path.empty())
    world.cache = std::make_shared<ScoreCache>(cfg.cache_path);
  world.scorer = make_scorer(cfg, world.cache);
  return world;
}

// Builds the mitigated backend state from per-language data.
// `multiplier` repeats the sample set, scaling datastore entry counts
// exactly; it leaves the experts backend untouched.
BackendState build_backend_state(const ExperimentConfig& cfg, World& world,
                                 const LanguageData& data,
                                 const std::vector<std::string>& langs,
                                 const std::string& artifact_dir, RunLog& log,
                                 std::size_t* toxic_entries,
                                 std::size_t* nontoxic_entries) {
  const auto selection = concat_languages(data, langs);
  fs::create_directories(artifact_dir);
  save_corpus(selection, (fs::path(artifact_dir) / "data.jsonl").string());

  if (cfg.backend == Backend::kBaseOnly) return base_only_state(world.base);

  if (cfg.backend == Backend::kRetrieval) {
    return run_stage(log, "build-datastores", [&] {
      std::vector<LabeledSample> toxic = filter_label(selection, Polarity::kToxic);
      std::vector<LabeledSample> nontoxic =
          filter_label(selection, Polarity::kNontoxic);
      if (cfg.datastore_multiplier > 1) {
        const auto tox_once = toxic;
        const auto non_once = nontoxic;
        for (int m = 1; m < cfg.datastore_multiplier; ++m) {
          toxic.insert(toxic.end(), tox_once.begin(), tox_once.end());
          nontoxic.insert(nontoxic.end(), non_once.begin(), non_once.end());
        }
      }
      auto toxic_store = std::make_shared<Datastore>(
          build_datastore(toxic, *world.vocab, cfg.key, Polarity::kToxic));
      auto nontoxic_store = std::make_shared<Datastore>(build_datastore(
          nontoxic, *world.vocab, cfg.key, Polarity::kNontoxic));
      if (toxic_entries) *toxic_entries = toxic_store->size();
      if (nontoxic_entries) *nontoxic_entries = nontoxic_store->size();
      save_datastore(*toxic_store,
                     (fs::path(artifact_dir) / "toxic.dtkd").string());
      save_datastore(*nontoxic_store,
                     (fs::path(artifact_dir) / "nontoxic.dtkd").string());
      return retrieval_state(world.base, std::move(toxic_store),
                             std::move(nontoxic_store), cfg.retrieval);
    });
  }

  return run_stage(log, "train-experts", [&] {
    ExpertTrainingConfig etc;
    etc.order = cfg.expert_order > 0 ? cfg.expert_order : cfg.lm_order;
    etc.smoothing = cfg.smoothing;
    etc.beta = cfg.expert_beta;
    auto pair = std::make_shared<ExpertPair>(
        train_experts(filter_label(selection, Polarity::kToxic),
                      filter_label(selection, Polarity::kNontoxic),
                      world.base, etc));
    save_expert_pair(*pair, (fs::path(artifact_dir) / "experts").string());
    return experts_state(world.base, std::move(pair));
  });
}

struct PassResult {
  std::vector<GenerationRecord> records;
  ScoreMatrix scores;
  EmtResult emt;
};

PassResult run_pass(const ExperimentConfig& cfg, World& world,
                    const BackendState& state, const EnsembleConfig& ens,
                    std::uint64_t gen_seed, const std::string& records_path,
                    RunLog& log, const std::string& tag) {
  PassResult pass;
  pass.records = run_stage(log, "generate-" + tag, [&] {
    GenerationConfig gen = cfg.generation;
    gen.seed = gen_seed;
    return generate_batch(world.prompts, state, ens, gen, cfg.threads);
  });
  save_records(pass.records, records_path);
  pass.scores = run_stage(log, "score-" + tag, [&] {
    return score_batch(pass.records, *world.scorer, cfg.scoring);
  });
  pass.emt = run_stage(log, "metrics-" + tag, [&] {
    return emt_by_language(pass.records, pass.scores);
  });
  return pass;
}

json emt_to_json(const EmtResult& r) {
  json per = json::object();
  for (const auto& [lang, v] : r.per_language) per[lang] = v;
  return {{"per_language", per},
          {"overall", r.overall},
          {"prompts", r.prompts},
          {"coverage", r.coverage}};
}

// Relative EMT with the one degenerate case allowed: a base EMT of exactly
// zero only matches a mitigated EMT of zero (self-comparison), which reads
// as "no change".
double safe_relative(double mitigated, double base) {
  if (base == 0.0 && mitigated == 0.0) return 0.0;
  return relative_emt(mitigated, base);
}

const char* const kConventionNotes[] = {
    "emt aggregates the per-prompt maximum over scored continuations, then "
    "averages over prompts; unscored continuations are excluded and reported "
    "through coverage",
    "fluency tokenizes each continuation text standalone and averages "
    "perplexity under the base model",
    "relative EMT compares against a dedicated base-only pass sharing "
    "prompts, seed, and scorer",
    "the cross-lingual mitigation table uses the unmitigated base model as "
    "the step before the first learning step",
    "generation draws one PRNG stream per (seed, prompt index, continuation "
    "index); continual steps fold the step index into the seed",
};

json metadata_json(const World& world, const EnsembleConfig& ens) {
  json notes = json::array();
  for (const auto* n : kConventionNotes) notes.push_back(n);
  return {{"scorer", world.scorer->id()},
          {"filter_stage", to_string(ens.filter_stage)},
          {"conventions", notes}};
}

void write_emt_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "language,base_emt,emt,relative\n";
  out.precision(17);
  for (const auto& [lang, rel] : report.relative_per_language) {
    out << lang << ',' << report.base.per_language.at(lang) << ','
        << report.mitigated.per_language.at(lang) << ',' << rel << '\n';
  }
  out << "OVERALL," << report.base.overall << ',' << report.mitigated.overall
      << ',' << report.relative_overall << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

EvalReport evaluate_static(const ExperimentConfig& cfg, World& world,
                           const LanguageData& data,
                           const std::string& out_dir, RunLog& log) {
  fs::create_directories(out_dir);
  const EnsembleConfig ens = resolved_ensemble(cfg);
  EnsembleConfig base_ens = ens;
  base_ens.backend = Backend::kBaseOnly;

  const auto langs = sorted_unique(cfg.languages);
  EvalReport report;
  report.backend = to_string(cfg.backend);

  std::size_t toxic_entries = 0, nontoxic_entries = 0;
  const BackendState state =
      build_backend_state(cfg, world, data, langs, out_dir, log,
                          &toxic_entries, &nontoxic_entries);
  const BackendState base_state = base_only_state(world.base);

  save_lm(*world.base, (fs::path(out_dir) / "lm.dtk1").string());

  // Both passes share the generation seed so a base_only backend compares
  // against itself exactly.
  PassResult mitigated =
      run_pass(cfg, world, state, ens, cfg.seed,
               (fs::path(out_dir) / "gens.jsonl").string(), log, "mitigated");
  PassResult base =
      run_pass(cfg, world, base_state, base_ens, cfg.seed,
               (fs::path(out_dir) / "base_gens.jsonl").string(), log, "base");

  report.mitigated = mitigated.emt;
  report.base = base.emt;
  for (const auto& [lang, value] : mitigated.emt.per_language) {
    const auto it = base.emt.per_language.find(lang);
    if (it == base.emt.per_language.end()) continue;
    report.relative_per_language[lang] = safe_relative(value, it->second);
  }
  report.relative_overall =
      safe_relative(mitigated.emt.overall, base.emt.overall);

  run_stage(log, "metrics-shared", [&] {
    report.fluency_mitigated = fluency(mitigated.records, *world.base);
    report.fluency_base = fluency(base.records, *world.base);
    for (int n : MetricConfig{}.distinct_orders) {
      try {
        report.distinct_mitigated[n] =
            mean_distinct_n(mitigated.records, *world.vocab, n);
        report.distinct_base[n] = mean_distinct_n(base.records, *world.vocab, n);
      } catch (const std::exception& e) {
        log.line("distinct-" + std::to_string(n) + " skipped: " + e.what());
      }
    }
  });

  for (const auto& name :
       {std::string("data.jsonl"), std::string("lm.dtk1"),
        std::string("gens.jsonl"), std::string("base_gens.jsonl"),
        std::string("toxic.dtkd"), std::string("nontoxic.dtkd")}) {
    const auto path = fs::path(out_dir) / name;
    if (fs::exists(path)) report.artifact_hashes[name] = file_fingerprint(path.string());
  }
  if (fs::exists(fs::path(out_dir) / "experts" / "pair.json"))
    report.artifact_hashes["experts/pair.json"] =
        file_fingerprint((fs::path(out_dir) / "experts" / "pair.json").string());

  json j;
  j["version"] = 1;
  j["kind"] = "static";
  j["config"] = config_to_json(cfg);
  j["metadata"] = metadata_json(world, ens);
  json metrics;
  metrics["emt"] = emt_to_json(report.mitigated);
  metrics["base_emt"] = emt_to_json(report.base);
  json rel = json::object();
  for (const auto& [lang, v] : report.relative_per_language) rel[lang] = v;
  metrics["relative"] = {{"per_language", rel},
                         {"overall", report.relative_overall}};
  metrics["fluency"] = {{"mitigated", report.fluency_mitigated},
                        {"base", report.fluency_base}};
  json dist = json::object();
  for (const auto& [n, v] : report.distinct_mitigated) {
    json entry;
    entry["mitigated"] = v;
    const auto bit = report.distinct_base.find(n);
    if (bit != report.distinct_base.end()) entry["base"] = bit->second;
    dist[std::to_string(n)] = entry;
  }
  metrics["distinct"] = dist;
  if (cfg.backend == Backend::kRetrieval) {
    metrics["datastore"] = {{"toxic_entries", toxic_entries},
                            {"nontoxic_entries", nontoxic_entries}};
  }
  j["metrics"] = metrics;
  json hashes = json::object();
  for (const auto& [name, hash] : report.artifact_hashes) hashes[name] = hash;
  j["artifacts"] = hashes;
  write_file((fs::path(out_dir) / "report.json").string(), j.dump(2) + "\n");
  write_emt_csv((fs::path(out_dir) / "emt.csv").string(), report);
  log.line("report written: " + (fs::path(out_dir) / "report.json").string());
  return report;
}

}  // namespace

EvalReport run_static(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  RunLog log((fs::path(cfg.output_dir) / "run.log").string());
  log.line("static run start: " + cfg.name);
  World world = prepare_world(cfg, log);
  return evaluate_static(cfg, world, world.data, cfg.output_dir, log);
}

// ---------------------------------------------------------------------------
// continual runner

ContinualRun run_continual(const ExperimentConfig& cfg) {
  if (cfg.languages.size() < 2)
    throw std::invalid_argument("continual run needs at least two languages");
  fs::create_directories(cfg.output_dir);
  RunLog log((fs::path(cfg.output_dir) / "run.log").string());
  log.line("continual run start: " + cfg.name);
  World world = prepare_world(cfg, log);
  const EnsembleConfig ens = resolved_ensemble(cfg);
  EnsembleConfig base_ens = ens;
  base_ens.backend = Backend::kBaseOnly;

  ContinualRun run;
  run.order = cfg.languages;
  const std::size_t n = cfg.languages.size();

  // Step -1: the unmitigated model's per-language EMT.
  const std::string base_dir = (fs::path(cfg.output_dir) / "base").string();
  fs::create_directories(base_dir);
  const BackendState base_state = base_only_state(world.base);
  PassResult base_pass =
      run_pass(cfg, world, base_state, base_ens, mix_seed(cfg.seed, 0),
               (fs::path(base_dir) / "gens.jsonl").string(), log, "base");
  run.base_emt = base_pass.emt.per_language;

  Matrix emt_matrix(static_cast<Eigen::Index>(n) + 1,
                    static_cast<Eigen::Index>(n));
  for (std::size_t col = 0; col < n; ++col) {
    const auto it = run.base_emt.find(cfg.languages[col]);
    if (it == run.base_emt.end())
      throw std::runtime_error("stage metrics-base: language " +
                               cfg.languages[col] + " has no scoreable prompt");
    emt_matrix(0, static_cast<Eigen::Index>(col)) = it->second;
  }

  for (std::size_t i = 0; i < n; ++i) {
    const std::string tag = "step-" + std::to_string(i);
    ContinualStep step;
    step.index = static_cast<int>(i);
    step.cumulative_languages.assign(cfg.languages.begin(),
                                     cfg.languages.begin() +
                                         static_cast<std::ptrdiff_t>(i) + 1);
    step.artifact_dir =
        (fs::path(cfg.output_dir) / ("step_" + std::to_string(i))).string();

    // Rebuild from scratch on the cumulative data, in addition order.
    std::size_t toxic_entries = 0, nontoxic_entries = 0;
    const BackendState state = build_backend_state(
        cfg, world, world.data, step.cumulative_languages, step.artifact_dir,
        log, &toxic_entries, &nontoxic_entries);
    step.toxic_entries = toxic_entries;
    step.nontoxic_entries = nontoxic_entries;

    PassResult pass = run_pass(
        cfg, world, state, ens, mix_seed(cfg.seed, i + 1),
        (fs::path(step.artifact_dir) / "gens.jsonl").string(), log, tag);
    step.emt_per_language = pass.emt.per_language;
    step.coverage = pass.emt.coverage;

    for (std::size_t col = 0; col < n; ++col) {
      const auto it = step.emt_per_language.find(cfg.languages[col]);
      if (it == step.emt_per_language.end())
        throw std::runtime_error("stage metrics-" + tag + ": language " +
                                 cfg.languages[col] +
                                 " has no scoreable prompt");
      emt_matrix(static_cast<Eigen::Index>(i) + 1,
                 static_cast<Eigen::Index>(col)) = it->second;
    }
    for (const auto& name :
         {std::string("data.jsonl"), std::string("gens.jsonl"),
          std::string("toxic.dtkd"), std::string("nontoxic.dtkd"),
          std::string("experts/pair.json")}) {
      const auto path = fs::path(step.artifact_dir) / name;
      if (fs::exists(path))
        step.artifact_hashes[name] = file_fingerprint(path.string());
    }
    run.steps.push_back(std::move(step));
  }

  run.clme = make_clme_table(cfg.languages, emt_matrix);
  save_clme_csv(run.clme.rows,
                (fs::path(cfg.output_dir) / "clme.csv").string());

  // emt.csv: the full matrix, base row labelled step -1.
  {
    std::ofstream out((fs::path(cfg.output_dir) / "emt.csv").string(),
                      std::ios::binary);
    out << "step,language,emt\n";
    out.precision(17);
    for (Eigen::Index r = 0; r < emt_matrix.rows(); ++r)
      for (std::size_t col = 0; col < n; ++col)
        out << (static_cast<int>(r) - 1) << ',' << cfg.languages[col] << ','
            << emt_matrix(r, static_cast<Eigen::Index>(col)) << '\n';
    if (!out)
      throw std::runtime_error("write failed: " +
                               (fs::path(cfg.output_dir) / "emt.csv").string());
  }

  json j;
  j["version"] = 1;
  j["kind"] = "continual";
  j["config"] = config_to_json(cfg);
  j["metadata"] = metadata_json(world, ens);
  json base_row = json::object();
  for (const auto& [lang, v] : run.base_emt) base_row[lang] = v;
  j["base_emt"] = base_row;
  json steps = json::array();
  for (const auto& s : run.steps) {
    json sj;
    sj["index"] = s.index;
    sj["cumulative_languages"] = s.cumulative_languages;
    json emts = json::object();
    for (const auto& [lang, v] : s.emt_per_language) emts[lang] = v;
    sj["emt_per_language"] = emts;
    sj["coverage"] = s.coverage;
    sj["toxic_entries"] = s.toxic_entries;
    sj["nontoxic_entries"] = s.nontoxic_entries;
    json hashes = json::object();
    for (const auto& [name, hash] : s.artifact_hashes) hashes[name] = hash;
    sj["artifacts"] = hashes;
    steps.push_back(sj);
  }
  j["steps"] = steps;
  json matrix = json::array();
  for (Eigen::Index r = 0; r < emt_matrix.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < emt_matrix.cols(); ++c)
      row.push_back(emt_matrix(r, c));
    matrix.push_back(row);
  }
  j["emt_matrix"] = matrix;
  json clme_rows = json::array();
  for (const auto& r : run.clme.rows)
    clme_rows.push_back(
        {{"step", r.step}, {"language", r.language}, {"value", r.value}});
  j["clme"] = clme_rows;
  write_file((fs::path(cfg.output_dir) / "report.json").string(),
             j.dump(2) + "\n");
  log.line("continual report written");
  return run;
}

// ---------------------------------------------------------------------------
// ablation runner

namespace {

void write_ablation_csv(const AblationReport& report, const std::string& path,
                        const std::vector<std::string>& columns) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "point";
  for (const auto& c : columns) out << ',' << c;
  out << ",error\n";
  out.precision(17);
  for (const auto& p : report.points) {
    out << p.label;
    for (const auto& c : columns) {
      out << ',';
      const auto it = p.metrics.find(c);
      if (it != p.metrics.end()) out << it->second;
    }
    out << ',' << p.error << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::map<std::string, double> summary_metrics(const EvalReport& r) {
  std::map<std::string, double> m;
  m["emt"] = r.mitigated.overall;
  m["base_emt"] = r.base.overall;
  m["relative"] = r.relative_overall;
  if (r.fluency_base > 0.0)
    m["fluency_ratio"] = r.fluency_mitigated / r.fluency_base;
  const auto d1 = r.distinct_mitigated.find(1);
  const auto b1 = r.distinct_base.find(1);
  if (d1 != r.distinct_mitigated.end() && b1 != r.distinct_base.end() &&
      b1->second > 0.0)
    m["distinct1_ratio"] = d1->second / b1->second;
  return m;
}

}  // namespace

AblationReport run_ablation(const ExperimentConfig& cfg, AblationAxis axis) {
  fs::create_directories(cfg.output_dir);
  RunLog log((fs::path(cfg.output_dir) / "run.log").string());
  log.line("ablation run start: " + to_string(axis));

  AblationReport report;
  report.axis = axis;
  std::vector<std::string> columns = {"emt", "base_emt", "relative",
                                      "fluency_ratio", "distinct1_ratio"};

  World world = prepare_world(cfg, log);

  auto add_point = [&](const std::string& label, auto&& fn) {
    AblationPoint point;
    point.label = label;
    try {
      point.metrics = fn();
    } catch (const std::exception& e) {
      point.error = e.what();
      log.line("ablation point " + label + " failed: " + e.what());
    }
    report.points.push_back(std::move(point));
  };

  switch (axis) {
    case AblationAxis::kAlphaGrid: {
      if (cfg.alpha_grid.empty())
        throw std::invalid_argument("alpha_grid is empty");
      for (double alpha : cfg.alpha_grid) {
        const std::string label = double_label(alpha);
        add_point(label, [&] {
          ExperimentConfig point_cfg = cfg;
          point_cfg.ensemble.alpha = alpha;
          point_cfg.output_dir =
              (fs::path(cfg.output_dir) / ("alpha_" + label)).string();
          const EvalReport r = evaluate_static(point_cfg, world, world.data,
                                               point_cfg.output_dir, log);
          return summary_metrics(r);
        });
      }
      break;
    }
    case AblationAxis::kDatastoreSize: {
      if (cfg.datastore_size_grid.empty())
        throw std::invalid_argument("datastore_size_grid is empty");
      columns.push_back("toxic_entries");
      columns.push_back("nontoxic_entries");
      for (int mult : cfg.datastore_size_grid) {
        const std::string label = std::to_string(mult);
        add_point(label, [&] {
          ExperimentConfig point_cfg = cfg;
          point_cfg.datastore_multiplier = mult;
          point_cfg.output_dir =
              (fs::path(cfg.output_dir) / ("size_" + label)).string();
          const EvalReport r = evaluate_static(point_cfg, world, world.data,
                                               point_cfg.output_dir, log);
          auto m = summary_metrics(r);
          // entry counts recorded from the point's own report
          const json rj = json::parse(read_file(
              (fs::path(point_cfg.output_dir) / "report.json").string()));
          m["toxic_entries"] =
              rj.at("metrics").at("datastore").at("toxic_entries").get<double>();
          m["nontoxic_entries"] = rj.at("metrics")
                                      .at("datastore")
                                      .at("nontoxic_entries")
                                      .get<double>();
          return m;
        });
      }
      break;
    }
    case AblationAxis::kTranslationQualityProxy: {
      if (cfg.deletion_rate_grid.empty())
        throw std::invalid_argument("deletion_rate_grid is empty");
      columns.insert(columns.begin(), "chrf_pp");
      const std::string pivot = cfg.languages.front();
      for (std::size_t gi = 0; gi < cfg.deletion_rate_grid.size(); ++gi) {
        const double rate = cfg.deletion_rate_grid[gi];
        const std::string label = double_label(rate);
        add_point(label, [&] {
          // Non-pivot languages receive machine-translated data: a clean
          // token mapping degraded by seeded deletion. chrF++ against the
          // clean mapping is the translation-quality proxy.
          auto mapper = std::make_shared<PrefixMapMtProvider>();
          auto lossy = std::make_shared<LossyMtProvider>(
              rate, mix_seed(cfg.seed, 300, gi));
          ChainedMtProvider degraded({mapper, lossy});

          LanguageData data = world.data;
          double chrf_sum = 0.0;
          std::size_t chrf_count = 0;
          for (const auto& lang : cfg.languages) {
            if (lang == pivot) continue;
            std::vector<LabeledSample> translated;
            for (const auto& s : world.data.at(pivot)) {
              const std::string clean =
                  mapper->translate(s.text, pivot, lang);
              LabeledSample t = s;
              t.text = degraded.translate(s.text, pivot, lang);
              t.language = lang;
              t.origin = Origin::kTranslated;
              if (!t.text.empty()) {
                chrf_sum += chrf_pp(t.text, clean);
                ++chrf_count;
                translated.push_back(std::move(t));
              }
            }
            if (translated.empty())
              throw std::runtime_error("all translations empty for " + lang);
            data[lang] = std::move(translated);
          }
          ExperimentConfig point_cfg = cfg;
          point_cfg.output_dir =
              (fs::path(cfg.output_dir) / ("rate_" + label)).string();
          const EvalReport r = evaluate_static(point_cfg, world, data,
                                               point_cfg.output_dir, log);
          auto m = summary_metrics(r);
          m["chrf_pp"] = chrf_count ? chrf_sum / static_cast<double>(chrf_count)
                                    : 0.0;
          return m;
        });
      }
      break;
    }
    case AblationAxis::kDataSize: {
      if (cfg.data_size_grid.empty())
        throw std::invalid_argument("data_size_grid is empty");
      columns.insert(columns.begin(), "nontoxic_count");
      columns.insert(columns.begin(), "toxic_count");
      const LoadResult loaded = load_corpus(cfg.corpus_path);
      for (const auto& [toxic_count, nontoxic_count] : cfg.data_size_grid) {
        const std::string label = std::to_string(toxic_count) + "x" +
                                  std::to_string(nontoxic_count);
        add_point(label, [&] {
          // Mitigation data shrinks or grows; the base model stays fixed,
          // isolating the data-size effect.
          SamplingPlan plan = cfg.plan;
          plan.toxic = toxic_count;
          plan.nontoxic = nontoxic_count;
          const LanguageData data = plan_language_data(
              loaded.samples, cfg.languages, cfg.regime, plan);
          ExperimentConfig point_cfg = cfg;
          point_cfg.output_dir =
              (fs::path(cfg.output_dir) / ("data_" + label)).string();
          const EvalReport r = evaluate_static(point_cfg, world, data,
                                               point_cfg.output_dir, log);
          auto m = summary_metrics(r);
          m["toxic_count"] = static_cast<double>(toxic_count);
          m["nontoxic_count"] = static_cast<double>(nontoxic_count);
          return m;
        });
      }
      break;
    }
  }

  write_ablation_csv(report,
                     (fs::path(cfg.output_dir) / "ablation.csv").string(),
                     columns);
  log.line("ablation csv written");
  return report;
}

}  // namespace detox
