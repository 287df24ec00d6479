#include "detox/ngram_lm.hpp"

#include <cmath>
#include <stdexcept>

namespace detox {

namespace {

constexpr double kLogitFloor = 1e-300;

std::vector<TokenId> context_at_order(std::span<const TokenId> context,
                                      int order) {
  // Last order-1 tokens, left-padded with BOS.
  const int want = order - 1;
  std::vector<TokenId> ctx(static_cast<std::size_t>(want), Vocab::kBos);
  const int have = static_cast<int>(context.size());
  for (int i = 0; i < want && i < have; ++i)
    ctx[static_cast<std::size_t>(want - 1 - i)] =
        context[static_cast<std::size_t>(have - 1 - i)];
  return ctx;
}

}  // namespace

NgramLM::NgramLM(int order, SmoothingConfig smoothing,
                 std::shared_ptr<const Vocab> vocab)
    : order_(order), smoothing_(std::move(smoothing)), vocab_(std::move(vocab)) {
  if (order_ < 1) throw std::invalid_argument("ngram order must be >= 1");
  if (!vocab_) throw std::invalid_argument("ngram lm requires a vocab");
  if (smoothing_.add_k < 0.0)
    throw std::invalid_argument("add-k constant must be >= 0");
  auto& ls = smoothing_.lambdas;
  if (ls.empty())
    ls.assign(static_cast<std::size_t>(order_), 1.0 / order_);
  if (static_cast<int>(ls.size()) != order_)
    throw std::invalid_argument("one interpolation weight per order required");
  double sum = 0.0;
  for (double l : ls) {
    if (l < 0.0) throw std::invalid_argument("interpolation weights must be >= 0");
    sum += l;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw std::invalid_argument("interpolation weights must sum to 1");
  for (double& l : ls) l /= sum;
  tables_.resize(static_cast<std::size_t>(order_));
}

void NgramLM::observe(std::span<const TokenId> ids) {
  for (std::size_t i = 1; i < ids.size(); ++i) {
    const TokenId target = ids[i];
    for (int o = 1; o <= order_; ++o) {
      auto ctx = context_at_order(ids.subspan(0, i), o);
      auto& cc = tables_[static_cast<std::size_t>(o - 1)][std::move(ctx)];
      ++cc.counts[target];
      ++cc.total;
    }
    ++trained_tokens_;
  }
}

Vector NgramLM::next_distribution(std::span<const TokenId> context) const {
  const auto V = static_cast<Eigen::Index>(vocab_->size());
  const double k = smoothing_.add_k;
  Vector acc = Vector::Zero(V);
  Vector prev = Vector::Constant(V, 1.0 / static_cast<double>(V));
  Vector cur(V);
  for (int o = 1; o <= order_; ++o) {
    const auto& table = tables_[static_cast<std::size_t>(o - 1)];
    auto it = table.find(context_at_order(context, o));
    const std::uint64_t total = it == table.end() ? 0 : it->second.total;
    const double denom = static_cast<double>(total) + k * static_cast<double>(V);
    if (denom > 0.0) {
      cur.setConstant(k / denom);
      if (it != table.end())
        for (const auto& [tok, c] : it->second.counts)
          cur[tok] += static_cast<double>(c) / denom;
    } else {
      cur = prev;  // unseen context, no add-k mass: back off
    }
    acc += smoothing_.lambdas[static_cast<std::size_t>(o - 1)] * cur;
    prev = cur;
  }
  return acc;
}

double NgramLM::next_probability(std::span<const TokenId> context,
                                 TokenId target) const {
  if (target < 0 || target >= vocab_->size())
    throw std::out_of_range("target token out of vocabulary");
  return next_distribution(context)[target];
}

NgramLM train_lm(const std::vector<TokenSequence>& corpus, int order,
                 const SmoothingConfig& smoothing,
                 std::shared_ptr<const Vocab> vocab) {
  if (corpus.empty()) throw std::invalid_argument("empty training corpus");
  NgramLM lm(order, smoothing, std::move(vocab));
  for (const auto& seq : corpus) lm.observe(seq.ids);
  return lm;
}

Vector next_logits(const NgramLM& lm, std::span<const TokenId> context) {
  Vector p = lm.next_distribution(context);
  for (Eigen::Index i = 0; i < p.size(); ++i)
    p[i] = std::log(p[i] > 0.0 ? p[i] : kLogitFloor);
  return p;
}

double perplexity(const NgramLM& lm, const TokenSequence& seq) {
  if (seq.ids.size() < 2)
    throw std::invalid_argument("perplexity needs a framed, non-empty sequence");
  double log_sum = 0.0;
  std::size_t n = 0;
  std::span<const TokenId> ids(seq.ids);
  for (std::size_t i = 1; i < ids.size(); ++i) {
    const double p = lm.next_probability(ids.subspan(0, i), ids[i]);
    if (p <= 0.0) throw std::domain_error("infinite perplexity");
    log_sum += std::log(p);
    ++n;
  }
  return std::exp(-log_sum / static_cast<double>(n));
}

}  // namespace detox
