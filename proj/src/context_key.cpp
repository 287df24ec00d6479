#include "detox/context_key.hpp"

#include <stdexcept>

#include "detox/rng.hpp"
#include "detox/vocab.hpp"

namespace detox {

ContextKeyer::ContextKeyer(ContextKeyConfig cfg, TokenId vocab_size)
    : cfg_(cfg) {
  if (cfg_.dim < 1) throw std::invalid_argument("key dim must be >= 1");
  if (cfg_.window < 1) throw std::invalid_argument("key window must be >= 1");
  if (vocab_size < 1) throw std::invalid_argument("vocab must be non-empty");
  table_.resize(vocab_size, cfg_.dim);
  for (TokenId t = 0; t < vocab_size; ++t) {
    SplitMix64 rng(mix_seed(cfg_.seed, static_cast<std::uint64_t>(t)));
    for (int j = 0; j < cfg_.dim; ++j)
      table_(t, j) = 2.0 * rng.next_double() - 1.0;
  }
}

Vector ContextKeyer::key(std::span<const TokenId> context) const {
  Vector mean = Vector::Zero(cfg_.dim);
  const int have = static_cast<int>(context.size());
  for (int i = 0; i < cfg_.window; ++i) {
    const int pos = have - cfg_.window + i;
    const TokenId tok = pos >= 0 ? context[static_cast<std::size_t>(pos)]
                                 : Vocab::kBos;
    if (tok < 0 || tok >= vocab_size())
      throw std::out_of_range("context token outside key table");
    mean += table_.row(tok).transpose();
  }
  mean /= static_cast<double>(cfg_.window);
  const double norm = mean.norm();
  if (norm > 0.0) {
    mean /= norm;
  } else {
    mean[0] = 1.0;  // canonical key for an exactly cancelling window
  }
  return mean;
}

}  // namespace detox
