#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "detox/corpus.hpp"
#include "detox/decoder.hpp"
#include "detox/scorer.hpp"

namespace detox {

/// Knobs for the bundled synthetic benchmark world. Each language owns a
/// disjoint token subspace: ordinary words "<lang>w<i>" and flagged words
/// "<lang>x<i>" that carry lexicon weight. Instances are generated as
/// abstract token-type sequences and realized once per language, so the
/// pool is parallel across languages by construction.
struct SynthConfig {
  std::vector<std::string> languages = {"aa", "bb", "cc"};
  int nontoxic_types_per_language = 200;
  int toxic_types_per_language = 10;
  int toxic_samples_per_language = 150;
  int nontoxic_samples_per_language = 500;
  int min_tokens = 6;
  int max_tokens = 12;
  double toxic_density = 0.4;  // fraction of flagged positions in toxic text
  double toxic_weight = 0.9;   // lexicon weight of every flagged word
  std::uint64_t seed = 0;
};

struct SynthWorld {
  std::vector<LabeledSample> pool;  // language-major, parallel-grouped
  LexiconScorer::Weights lexicon;   // per language: flagged word -> weight
};

SynthWorld make_synth_world(const SynthConfig& cfg);

/// `count` prompts cycling through the configured languages, each a short
/// sequence of ordinary (unflagged) words in its language.
std::vector<Prompt> make_prompt_set(const SynthConfig& cfg, int count,
                                    std::uint64_t seed);

}  // namespace detox
