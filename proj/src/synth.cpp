#include "detox/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "detox/rng.hpp"

namespace detox {

namespace {

// Abstract instance: token types plus which positions carry a flagged word.
struct InstanceShape {
  std::vector<int> types;        // type index within its class
  std::vector<bool> flagged;     // true = toxic-class token
};

InstanceShape make_shape(const SynthConfig& cfg, std::uint64_t instance,
                         bool toxic) {
  SplitMix64 rng(mix_seed(cfg.seed, 100, instance));
  const int span = cfg.max_tokens - cfg.min_tokens + 1;
  const int len =
      cfg.min_tokens + static_cast<int>(rng.next_below(
                           static_cast<std::uint64_t>(std::max(1, span))));
  InstanceShape shape;
  shape.types.resize(static_cast<std::size_t>(len));
  shape.flagged.assign(static_cast<std::size_t>(len), false);
  if (toxic) {
    int n_flagged = static_cast<int>(
        std::max(1.0, std::floor(cfg.toxic_density * len + 0.5)));
    n_flagged = std::min(n_flagged, len);
    std::vector<int> positions(static_cast<std::size_t>(len));
    std::iota(positions.begin(), positions.end(), 0);
    shuffle(positions, rng);
    for (int i = 0; i < n_flagged; ++i)
      shape.flagged[static_cast<std::size_t>(positions[static_cast<std::size_t>(i)])] =
          true;
  }
  for (std::size_t i = 0; i < shape.types.size(); ++i) {
    const int pool = shape.flagged[i] ? cfg.toxic_types_per_language
                                      : cfg.nontoxic_types_per_language;
    shape.types[i] =
        static_cast<int>(rng.next_below(static_cast<std::uint64_t>(pool)));
  }
  return shape;
}

std::string realize(const InstanceShape& shape, const std::string& lang) {
  std::string text;
  for (std::size_t i = 0; i < shape.types.size(); ++i) {
    if (i) text += ' ';
    text += lang;
    text += shape.flagged[i] ? 'x' : 'w';
    text += std::to_string(shape.types[i]);
  }
  return text;
}

}  // namespace

SynthWorld make_synth_world(const SynthConfig& cfg) {
  if (cfg.languages.empty())
    throw std::invalid_argument("synthetic world needs at least one language");
  if (cfg.min_tokens < 1 || cfg.max_tokens < cfg.min_tokens)
    throw std::invalid_argument("bad token length range");
  if (cfg.toxic_types_per_language < 1 || cfg.nontoxic_types_per_language < 1)
    throw std::invalid_argument("each class needs at least one token type");

  const int total =
      cfg.toxic_samples_per_language + cfg.nontoxic_samples_per_language;
  std::vector<InstanceShape> shapes;
  shapes.reserve(static_cast<std::size_t>(total));
  for (int g = 0; g < total; ++g)
    shapes.push_back(make_shape(cfg, static_cast<std::uint64_t>(g),
                                g < cfg.toxic_samples_per_language));

  SynthWorld world;
  for (const auto& lang : cfg.languages) {
    for (int g = 0; g < total; ++g) {
      LabeledSample s;
      s.text = realize(shapes[static_cast<std::size_t>(g)], lang);
      s.language = lang;
      s.label = g < cfg.toxic_samples_per_language ? Polarity::kToxic
                                                   : Polarity::kNontoxic;
      s.source_id = "src-" + std::to_string(g);
      s.parallel_group = g;
      s.origin = Origin::kInLanguage;
      world.pool.push_back(std::move(s));
    }
    for (int i = 0; i < cfg.toxic_types_per_language; ++i)
      world.lexicon[lang][lang + "x" + std::to_string(i)] = cfg.toxic_weight;
  }
  return world;
}

std::vector<Prompt> make_prompt_set(const SynthConfig& cfg, int count,
                                    std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("prompt count must be >= 1");
  std::vector<Prompt> prompts;
  prompts.reserve(static_cast<std::size_t>(count));
  for (int p = 0; p < count; ++p) {
    const std::string& lang =
        cfg.languages[static_cast<std::size_t>(p) % cfg.languages.size()];
    SplitMix64 rng(mix_seed(seed, 200, static_cast<std::uint64_t>(p)));
    const int len = 3 + static_cast<int>(rng.next_below(3));  // 3..5 words
    std::string text;
    for (int i = 0; i < len; ++i) {
      if (i) text += ' ';
      text += lang + "w" +
              std::to_string(rng.next_below(static_cast<std::uint64_t>(
                  cfg.nontoxic_types_per_language)));
    }
    prompts.push_back({text, lang});
  }
  return prompts;
}

}  // namespace detox
