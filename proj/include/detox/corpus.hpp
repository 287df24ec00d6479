#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "detox/types.hpp"
#include "detox/vocab.hpp"

namespace detox {

enum class Origin { kInLanguage, kTranslated };

/// One labeled corpus line. `source_id` identifies the underlying instance
/// and is shared by its translations; `parallel_group` groups those
/// translations into one parallel unit.
struct LabeledSample {
  std::string text;
  std::string language;
  Polarity label = Polarity::kNontoxic;
  std::string source_id;
  std::optional<std::int64_t> parallel_group;
  Origin origin = Origin::kInLanguage;
};

struct LoadResult {
  std::vector<LabeledSample> samples;
  std::vector<std::string> warnings;  // one line per malformed input line
  std::size_t total_lines = 0;
};

/// Reads JSONL samples ({"text","lang","label",...}). Malformed lines are
/// skipped and reported with their line numbers; more than 1% malformed is
/// a hard error. An empty file yields an empty list plus a warning.
LoadResult load_corpus(const std::string& path);

void save_corpus(const std::vector<LabeledSample>& samples,
                 const std::string& path);

/// Seeded without-replacement sampling counts, the 3K/10K regime by default.
struct SamplingPlan {
  std::size_t toxic = 3000;
  std::size_t nontoxic = 10000;
  std::uint64_t seed = 0;
};

/// Without-replacement sample of `plan.toxic` + `plan.nontoxic` items,
/// stable across runs. Throws with the label and shortfall when a pool is
/// too small.
std::vector<LabeledSample> sample_plan(const std::vector<LabeledSample>& pool,
                                       const SamplingPlan& plan);

struct TokenCountReport {
  std::uint64_t nontoxic_tokens = 0;
  std::uint64_t toxic_tokens = 0;
  std::uint64_t nontoxic_blocks = 0;
  std::uint64_t toxic_blocks = 0;
};

/// Per-label token totals (BOS/EOS excluded); sequences are chunked at
/// block_size, which changes block counts but never token totals.
TokenCountReport count_tokens(const std::vector<LabeledSample>& samples,
                              const Vocab& vocab,
                              std::size_t block_size = 1024);

// ---------------------------------------------------------------------------
// Machine translation providers

class MtProvider {
 public:
  virtual ~MtProvider() = default;
  virtual std::string id() const = 0;
  virtual std::string translate(const std::string& text,
                                const std::string& source_lang,
                                const std::string& target_lang) = 0;
};

/// Returns the text unchanged. The "perfect translation" reference.
class IdentityMtProvider : public MtProvider {
 public:
  std::string id() const override { return "identity"; }
  std::string translate(const std::string& text, const std::string&,
                        const std::string&) override {
    return text;
  }
};

/// Deletes each token with the given rate, deterministically per
/// (seed, text, position). Models toxicity erosion in translation.
class LossyMtProvider : public MtProvider {
 public:
  LossyMtProvider(double deletion_rate, std::uint64_t seed);
  std::string id() const override;
  std::string translate(const std::string& text, const std::string& source_lang,
                        const std::string& target_lang) override;
  double deletion_rate() const { return rate_; }

 private:
  double rate_;
  std::uint64_t seed_;
};

/// Token-wise mapper for the synthetic languages: rewrites each token's
/// language prefix from source to target (aa12 -> bb12), leaving tokens
/// without the source prefix alone. This is the toy analogue of a real
/// translator between the disjoint token subspaces.
class PrefixMapMtProvider : public MtProvider {
 public:
  std::string id() const override { return "prefix_map"; }
  std::string translate(const std::string& text, const std::string& source_lang,
                        const std::string& target_lang) override;
};

/// Applies the given providers in order; models a pipeline such as a
/// prefix mapper followed by lossy token deletion.
class ChainedMtProvider : public MtProvider {
 public:
  explicit ChainedMtProvider(std::vector<std::shared_ptr<MtProvider>> stages);
  std::string id() const override;
  std::string translate(const std::string& text, const std::string& source_lang,
                        const std::string& target_lang) override;

 private:
  std::vector<std::shared_ptr<MtProvider>> stages_;
};

/// POSTs {"text","source","target"} to {endpoint}/translate and expects
/// {"translation": "..."} back.
class RemoteMtProvider : public MtProvider {
 public:
  explicit RemoteMtProvider(std::string endpoint);
  std::string id() const override { return "remote"; }
  std::string translate(const std::string& text, const std::string& source_lang,
                        const std::string& target_lang) override;

 private:
  std::string endpoint_;
};

struct TranslateResult {
  std::vector<LabeledSample> samples;
  std::vector<std::pair<std::size_t, std::string>> failures;  // (index, error)
};

/// Translates every sample into target_lang, carrying label, source id and
/// parallel group over and flipping origin to translated. Per-item failures
/// are enumerated; the batch throws when more than max_failure_fraction of
/// the items fail.
TranslateResult translate_batch(const std::vector<LabeledSample>& samples,
                                MtProvider& provider,
                                const std::string& target_lang,
                                double max_failure_fraction = 0.25);

struct StageStats {
  double mean = 0.0;
  double p25 = 0.0;
  double p50 = 0.0;
  double p75 = 0.0;
};

struct RoundtripReport {
  // score triples per sample: original, translated, backtranslated
  std::vector<std::array<double, 3>> triples;
  StageStats original;
  StageStats translated;
  StageStats backtranslated;
};

using ScoreFn =
    std::function<double(const std::string& text, const std::string& lang)>;

/// Translates source-language samples to target_lang and back, scoring the
/// text at each stage.
RoundtripReport roundtrip_study(const std::vector<LabeledSample>& samples,
                                MtProvider& provider,
                                const std::string& target_lang,
                                const ScoreFn& score);

enum class DataRegime { kParallel, kUnparallel };

/// Splits a multilingual pool into per-language training selections.
/// Parallel: one seeded choice of parallel groups shared by every language.
/// Unparallel: a single seeded shuffle of instances partitioned into
/// pairwise-disjoint per-language slices.
std::map<std::string, std::vector<LabeledSample>> plan_language_data(
    const std::vector<LabeledSample>& pool,
    const std::vector<std::string>& languages, DataRegime regime,
    const SamplingPlan& plan);

StageStats stage_stats(std::vector<double> values);

}  // namespace detox
