#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "detox/types.hpp"
#include "detox/vocab.hpp"

namespace detox {

/// Interpolation weights per order (empty = uniform) plus an add-k constant
/// applied within each order.
struct SmoothingConfig {
  std::vector<double> lambdas;
  double add_k = 0.0;
};

// Interpolated add-k n-gram model. The conditional distribution is
//   p(w | ctx) = sum_o lambda_o * p_o(w | last o-1 tokens)
// where p_o is the add-k estimate at order o. An order whose context is
// unseen and has no add-k mass falls back to the next lower order, so
// queries never fail. Immutable once trained.
class NgramLM {
 public:
  struct ContextCounts {
    std::map<TokenId, std::uint64_t> counts;
    std::uint64_t total = 0;
  };
  using OrderTable = std::map<std::vector<TokenId>, ContextCounts>;

  NgramLM() = default;
  NgramLM(int order, SmoothingConfig smoothing,
          std::shared_ptr<const Vocab> vocab);

  void observe(std::span<const TokenId> ids);

  /// Exact conditional distribution for the next token; sums to 1 within
  /// 1e-9. Entries may be zero when add_k is zero.
  Vector next_distribution(std::span<const TokenId> context) const;

  /// Probability of one token under next_distribution.
  double next_probability(std::span<const TokenId> context,
                          TokenId target) const;

  int order() const { return order_; }
  const SmoothingConfig& smoothing() const { return smoothing_; }
  const Vocab& vocab() const { return *vocab_; }
  std::shared_ptr<const Vocab> vocab_ptr() const { return vocab_; }
  const std::vector<OrderTable>& tables() const { return tables_; }
  std::vector<OrderTable>& mutable_tables() { return tables_; }
  std::uint64_t trained_tokens() const { return trained_tokens_; }
  void set_trained_tokens(std::uint64_t n) { trained_tokens_ = n; }

 private:
  int order_ = 1;
  SmoothingConfig smoothing_;
  std::shared_ptr<const Vocab> vocab_;
  // tables_[o-1] maps an (o-1)-token context to its target counts.
  std::vector<OrderTable> tables_;
  std::uint64_t trained_tokens_ = 0;
};

/// Count-trains an LM over framed token sequences.
/// Throws std::invalid_argument on an empty corpus.
NgramLM train_lm(const std::vector<TokenSequence>& corpus, int order,
                 const SmoothingConfig& smoothing,
                 std::shared_ptr<const Vocab> vocab);

/// Next-token logits: log of next_distribution with zero probabilities
/// floored at 1e-300 so every entry stays finite.
Vector next_logits(const NgramLM& lm, std::span<const TokenId> context);

/// exp(-(1/N) sum log p(token_i | prefix)) over the N = len-1 targets of a
/// framed sequence (EOS scored, BOS not). Throws std::domain_error when a
/// target has probability zero.
double perplexity(const NgramLM& lm, const TokenSequence& seq);

}  // namespace detox
