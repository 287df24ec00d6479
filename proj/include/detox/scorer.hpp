#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "detox/decoder.hpp"
#include "detox/rng.hpp"
#include "detox/types.hpp"

namespace detox {

struct ToxicityScore {
  double value = 0.0;  // in [0, 1]
  std::string scorer_id;
  std::string language;
};

/// Text -> toxicity in [0,1]. Implementations throw std::runtime_error when
/// an item cannot be scored.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::string id() const = 0;
  virtual double score(const std::string& text, const std::string& language) = 0;
};

/// Offline noisy-OR scorer over per-language token weight lists:
/// value = 1 - prod(1 - w) across matched token occurrences. A language
/// missing from the lexicon scores 0 everywhere. Stateless and thread-safe.
class LexiconScorer : public Scorer {
 public:
  using Weights = std::map<std::string, std::map<std::string, double>>;

  LexiconScorer() = default;
  explicit LexiconScorer(Weights weights);  // validates weights lie in [0,1]

  /// JSON file: {"<lang>": {"<token>": weight, ...}, ...}
  static LexiconScorer from_file(const std::string& path);
  void save(const std::string& path) const;

  std::string id() const override { return "lexicon"; }
  double score(const std::string& text, const std::string& language) override;

  const Weights& weights() const { return weights_; }

 private:
  Weights weights_;
};

/// Append-only JSONL score cache keyed by (scorer id, language, text hash).
/// Lookups never touch the network; stores append one line and flush.
class ScoreCache {
 public:
  explicit ScoreCache(std::string path);

  std::optional<double> lookup(const std::string& scorer_id,
                               const std::string& language,
                               const std::string& text);
  void store(const std::string& scorer_id, const std::string& language,
             const std::string& text, double value);
  std::size_t size() const;

 private:
  using Key = std::tuple<std::string, std::string, std::uint64_t>;
  std::string path_;
  std::map<Key, double> entries_;
  mutable std::mutex mutex_;
};

/// Blocking token bucket. Defaults to 1 permit/second, the public quota of
/// the scoring service this client targets.
class RateLimiter {
 public:
  explicit RateLimiter(double permits_per_second, double burst = 1.0);
  void acquire();

 private:
  double rate_;
  double capacity_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
  std::mutex mutex_;
};

struct RemoteScorerConfig {
  std::string endpoint;  // scheme://host[:port]
  std::string api_key_env = "PERSPECTIVE_API_KEY";
  double requests_per_second = 1.0;
  int max_retries = 5;
  double base_backoff_seconds = 0.5;  // doubles per retry, jittered
  std::uint64_t jitter_seed = 0;
};

/// HTTP client for a comment-analysis endpoint: POST
/// {endpoint}/v1alpha1/comments:analyze?key=$API_KEY and read
/// attributeScores.TOXICITY.summaryScore.value. 429s retry with jittered
/// exponential backoff; other failures throw. Results go through the shared
/// cache when one is attached.
class RemoteScorer : public Scorer {
 public:
  RemoteScorer(RemoteScorerConfig cfg, std::shared_ptr<ScoreCache> cache);

  std::string id() const override { return "perspective:TOXICITY"; }
  double score(const std::string& text, const std::string& language) override;

  std::uint64_t network_calls() const { return network_calls_.load(); }

 private:
  double score_uncached(const std::string& text, const std::string& language);

  RemoteScorerConfig cfg_;
  std::shared_ptr<ScoreCache> cache_;
  RateLimiter limiter_;
  std::atomic<std::uint64_t> network_calls_{0};
  SplitMix64 jitter_;
  std::mutex jitter_mutex_;
};

struct ScoreBatchConfig {
  unsigned max_in_flight = 4;          // concurrent scoring workers
  double max_unscored_fraction = 0.25; // above this the batch fails
};

/// Per-continuation scores for a batch of generation records. Unscored
/// cells are NaN with mask 0; positions are fixed by (prompt, continuation)
/// index so the result is independent of worker scheduling.
struct ScoreMatrix {
  Matrix values;  // prompts x k_gen, NaN where unscored
  Matrix mask;    // 1.0 scored / 0.0 unscored
  double coverage = 0.0;
  std::vector<std::string> errors;  // "prompt i continuation j: why"
};

ScoreMatrix score_batch(const std::vector<GenerationRecord>& records,
                        Scorer& scorer, const ScoreBatchConfig& cfg = {});

}  // namespace detox
