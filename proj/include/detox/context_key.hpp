#pragma once

#include <cstdint>
#include <span>

#include "detox/types.hpp"

namespace detox {

/// Shape of the deterministic context-key embedding. Must stay fixed for
/// the lifetime of any datastore built with it.
struct ContextKeyConfig {
  int dim = 64;
  int window = 4;
  std::uint64_t seed = 0;

  bool operator==(const ContextKeyConfig&) const = default;
};

// Maps a token context to a unit-norm key vector: the mean of seeded
// random-projection embeddings of the last `window` token ids, contexts
// shorter than the window left-padded with BOS. Same seed and same
// trailing window always give the same key.
class ContextKeyer {
 public:
  ContextKeyer(ContextKeyConfig cfg, TokenId vocab_size);

  Vector key(std::span<const TokenId> context) const;

  const ContextKeyConfig& config() const { return cfg_; }
  TokenId vocab_size() const { return static_cast<TokenId>(table_.rows()); }

 private:
  ContextKeyConfig cfg_;
  Matrix table_;  // V x dim token embeddings, rows drawn uniform in [-1, 1)
};

}  // namespace detox
