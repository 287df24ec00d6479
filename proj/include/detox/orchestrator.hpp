#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "detox/context_key.hpp"
#include "detox/corpus.hpp"
#include "detox/datastore.hpp"
#include "detox/decoder.hpp"
#include "detox/experts.hpp"
#include "detox/metrics.hpp"
#include "detox/ngram_lm.hpp"
#include "detox/scorer.hpp"

namespace detox {

/// One experiment, fully resolved. Loaded from a versioned JSON config file
/// (see load_experiment_config) or built in code.
struct ExperimentConfig {
  int version = 1;
  std::string name = "run";
  Backend backend = Backend::kRetrieval;
  std::vector<std::string> languages;  // ordered; continual adds them in turn
  DataRegime regime = DataRegime::kParallel;
  SamplingPlan plan;                   // per-language counts; seed 0 = run seed
  EnsembleConfig ensemble;             // filter stage resolved per backend
  std::optional<FilterStage> filter_stage_override;
  GenerationConfig generation;

  int lm_order = 3;
  SmoothingConfig smoothing;
  double expert_beta = 0.3;
  int expert_order = 0;                // side-model order; 0 = lm_order
  ContextKeyConfig key;
  RetrievalConfig retrieval;

  std::string corpus_path;
  std::string prompts_path;
  std::string scorer = "lexicon";      // "lexicon" or "remote"
  std::string lexicon_path;            // scorer == lexicon
  std::string remote_endpoint;         // scorer == remote
  std::string cache_path;              // optional score cache (remote)
  std::string output_dir = "out";
  std::uint64_t seed = 0;
  ScoreBatchConfig scoring;
  unsigned threads = 0;                // generation workers, 0 = auto
  int datastore_multiplier = 1;        // repeats the datastore sample set

  // Ablation axes (run_ablation only).
  std::vector<double> alpha_grid;
  std::vector<int> datastore_size_grid;           // sample-set multipliers
  std::vector<double> deletion_rate_grid;         // translation-quality proxy
  std::vector<std::pair<std::size_t, std::size_t>> data_size_grid;  // (toxic, nontoxic)
};

ExperimentConfig load_experiment_config(const std::string& path);
void save_experiment_config(const ExperimentConfig& cfg,
                            const std::string& path);

/// Checks structural invariants and that every referenced file exists.
/// Throws std::invalid_argument describing the first problem.
void validate_config(const ExperimentConfig& cfg);

struct EvalReport {
  std::string backend;
  EmtResult mitigated;
  EmtResult base;
  std::map<std::string, double> relative_per_language;
  double relative_overall = 0.0;
  double fluency_mitigated = 0.0;
  double fluency_base = 0.0;
  std::map<int, double> distinct_mitigated;  // n -> value
  std::map<int, double> distinct_base;
  std::map<std::string, std::string> artifact_hashes;  // file -> fnv1a64 hex
};

struct ContinualStep {
  int index = 0;
  std::vector<std::string> cumulative_languages;
  std::string artifact_dir;
  std::map<std::string, double> emt_per_language;
  double coverage = 1.0;
  std::size_t toxic_entries = 0;     // retrieval backend bookkeeping
  std::size_t nontoxic_entries = 0;
  std::map<std::string, std::string> artifact_hashes;
};

struct ContinualRun {
  std::vector<std::string> order;
  std::map<std::string, double> base_emt;  // unmitigated row (step -1)
  std::vector<ContinualStep> steps;
  ClmeTable clme;
};

/// All data made available at once: trains the base model and backend
/// artifacts on the union of every language's selection, generates and
/// scores both the mitigated pass and a base-only twin with the same
/// prompts and seed, and writes report.json / emt.csv / artifacts into
/// cfg.output_dir.
EvalReport run_static(const ExperimentConfig& cfg);

/// Adds languages one at a time, rebuilding backend artifacts from the
/// cumulative data at every step and evaluating every configured language.
/// Writes report.json, clme.csv and per-step artifact directories.
ContinualRun run_continual(const ExperimentConfig& cfg);

enum class AblationAxis {
  kAlphaGrid,
  kDatastoreSize,
  kTranslationQualityProxy,
  kDataSize,
};
AblationAxis ablation_axis_from_string(const std::string& name);
std::string to_string(AblationAxis axis);

struct AblationPoint {
  std::string label;                       // grid-point value as text
  std::map<std::string, double> metrics;   // axis-specific columns
  std::string error;                       // empty when the point succeeded
};

struct AblationReport {
  AblationAxis axis = AblationAxis::kAlphaGrid;
  std::vector<AblationPoint> points;
};

/// One run_static per grid point (failures recorded, grid continues) plus a
/// combined ablation.csv under cfg.output_dir.
AblationReport run_ablation(const ExperimentConfig& cfg, AblationAxis axis);

/// fnv1a64 of a file's bytes, as fixed-width hex. The artifact fingerprint
/// used in reports.
std::string file_fingerprint(const std::string& path);

}  // namespace detox
