#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "detox/datastore.hpp"
#include "detox/experts.hpp"
#include "detox/ngram_lm.hpp"
#include "detox/types.hpp"

namespace detox {

enum class Backend { kRetrieval, kExperts, kBaseOnly };
enum class FilterStage { kBeforeEnsemble, kAfterEnsemble };

std::string to_string(Backend b);
Backend backend_from_string(const std::string& name);
std::string to_string(FilterStage s);
FilterStage filter_stage_from_string(const std::string& name);

struct EnsembleConfig {
  double alpha = 2.0;
  double top_p = 0.9;
  FilterStage filter_stage = FilterStage::kAfterEnsemble;
  Backend backend = Backend::kBaseOnly;
};

/// Conventional stage for each backend: the steering-LM backend filters each
/// distribution before ensembling, the retrieval backend filters the
/// ensembled distribution.
FilterStage default_filter_stage(Backend b);

struct GenerationConfig {
  int k_gen = 25;
  int max_new_tokens = 32;
  std::uint64_t seed = 0;
  double temperature = 1.0;
};

struct Prompt {
  std::string text;
  std::string language;
};

std::vector<Prompt> load_prompts(const std::string& path);
void save_prompts(const std::vector<Prompt>& prompts, const std::string& path);

struct GenerationRecord {
  Prompt prompt;
  std::size_t prompt_index = 0;
  std::vector<std::string> continuations;  // k_gen entries
  std::vector<int> token_counts;           // tokens per continuation, sans EOS
  EnsembleConfig ensemble;
  GenerationConfig generation;
};

/// Everything a backend needs at decode time. Build through the factory
/// functions below so the invariants (matching vocabularies, matching key
/// configurations, correct polarities) hold by construction.
struct BackendState {
  std::shared_ptr<const NgramLM> base;
  std::shared_ptr<const Datastore> toxic_store;
  std::shared_ptr<const Datastore> nontoxic_store;
  std::shared_ptr<const ContextKeyer> keyer;
  RetrievalConfig retrieval;
  std::shared_ptr<const ExpertPair> experts;
};

BackendState base_only_state(std::shared_ptr<const NgramLM> base);
BackendState retrieval_state(std::shared_ptr<const NgramLM> base,
                             std::shared_ptr<const Datastore> toxic_store,
                             std::shared_ptr<const Datastore> nontoxic_store,
                             const RetrievalConfig& retrieval);
BackendState experts_state(std::shared_ptr<const NgramLM> base,
                           std::shared_ptr<const ExpertPair> experts);

/// Numerically shifted softmax; the result sums to 1 within 1e-9.
Vector softmax(const Vector& logits);

/// softmax(z + alpha * (z_plus - z_minus)). Throws on length mismatch.
Vector ensemble(const Vector& z, const Vector& z_plus, const Vector& z_minus,
                double alpha);

/// Keeps the smallest set of highest-probability tokens whose cumulative
/// mass reaches top_p and renormalizes it; boundary ties go to the lower
/// token id. Input must sum to 1 within 1e-6.
Vector top_p_filter(const Vector& p, double top_p);

/// The decode-time distribution for one step, per the configured backend
/// and filter stage. Throws when the state lacks the backend's resources.
Vector next_token_distribution(std::span<const TokenId> context,
                               const BackendState& state,
                               const EnsembleConfig& ens);

/// Samples k_gen continuations for one prompt; each continuation runs on
/// its own PRNG stream derived from (seed, prompt_index, continuation
/// index), so results do not depend on scheduling.
GenerationRecord generate(const Prompt& prompt, std::size_t prompt_index,
                          const BackendState& state, const EnsembleConfig& ens,
                          const GenerationConfig& gen);

/// generate() over all prompts on a small worker pool. Output order matches
/// prompt order regardless of thread count (0 = hardware concurrency).
std::vector<GenerationRecord> generate_batch(const std::vector<Prompt>& prompts,
                                             const BackendState& state,
                                             const EnsembleConfig& ens,
                                             const GenerationConfig& gen,
                                             unsigned n_threads = 0);

// JSONL persistence for generation records (one record per line).
void save_records(const std::vector<GenerationRecord>& records,
                  const std::string& path);
std::vector<GenerationRecord> load_records(const std::string& path);

}  // namespace detox
