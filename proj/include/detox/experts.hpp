#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "detox/corpus.hpp"
#include "detox/ngram_lm.hpp"
#include "detox/types.hpp"

namespace detox {

struct ExpertTrainingConfig {
  int order = 3;
  SmoothingConfig smoothing;
  /// Probability-interpolation weight toward the base model: each side
  /// answers (1-beta) * count-model + beta * base. beta=1 collapses both
  /// sides onto the base model.
  double beta = 0.3;
  /// Reserved for a gradient-trained backend; the count backend ignores it.
  double learning_rate = 5e-6;
};

/// A steering pair: `expert` is count-trained on non-toxic text,
/// `anti_expert` on toxic text, and both are interpolated with the shared
/// base model when queried. Immutable once trained.
struct ExpertPair {
  NgramLM expert;
  NgramLM anti_expert;
  std::shared_ptr<const NgramLM> base;
  double beta = 0.3;
  double learning_rate = 5e-6;
  std::map<std::string, std::uint64_t> provenance;  // language -> tokens seen
};

/// Trains both sides on the base model's vocabulary. Throws when a side is
/// empty (naming the side) or when a sample's label does not match its side.
ExpertPair train_experts(const std::vector<LabeledSample>& toxic,
                         const std::vector<LabeledSample>& nontoxic,
                         std::shared_ptr<const NgramLM> base,
                         const ExpertTrainingConfig& cfg);

/// Log-probability logits (z_plus from the expert, z_minus from the
/// anti-expert) for the next token after `context`.
std::pair<Vector, Vector> expert_logits(const ExpertPair& pair,
                                        std::span<const TokenId> context);

/// One side's interpolated distribution: (1-beta)*counts + beta*base.
Vector side_distribution(const NgramLM& counts, const NgramLM& base,
                         double beta, std::span<const TokenId> context);

/// Writes expert.dtk1, anti_expert.dtk1, base.dtk1 and pair.json into `dir`
/// (created if needed). load_expert_pair reads them back bit-exactly.
void save_expert_pair(const ExpertPair& pair, const std::string& dir);
ExpertPair load_expert_pair(const std::string& dir);

}  // namespace detox
