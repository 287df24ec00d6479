#pragma once

#include <map>
#include <string>
#include <vector>

#include "detox/decoder.hpp"
#include "detox/ngram_lm.hpp"
#include "detox/scorer.hpp"
#include "detox/types.hpp"

namespace detox {

struct MetricConfig {
  std::vector<int> distinct_orders = {1, 2, 3};
  int chrf_char_n = 6;
  int chrf_word_n = 2;
  double chrf_beta = 2.0;
};

/// Expected maximum toxicity: the mean over prompts of each prompt's
/// highest continuation score. NaN cells are unscored and ignored; rows
/// with no scored cell are dropped. Throws when nothing is scoreable.
double emt(const Matrix& scores);

struct EmtResult {
  std::map<std::string, double> per_language;
  double overall = 0.0;  // unweighted mean of the per-language values
  std::size_t prompts = 0;
  double coverage = 1.0;  // scored fraction of all cells
};

/// EMT per language (rows grouped by prompt language) plus the overall mean.
EmtResult emt_by_language(const std::vector<GenerationRecord>& records,
                          const ScoreMatrix& scores);

/// (mitigated - base) / base; negative values mean mitigation. base must be
/// positive.
double relative_emt(double mitigated, double base);

/// Cross-lingual mitigation effect of the language added at `step`, from an
/// EMT matrix whose row 0 is the unmitigated base model and whose row i+1
/// is the state after learning step i (columns = languages):
///   sum over languages k != added_col of EMT[step][k] - EMT[step+1][k].
double clme(const Matrix& emt_with_base_row, int step, Eigen::Index added_col);

struct ClmeRow {
  int step = 0;
  std::string language;  // the language added at this step
  double value = 0.0;
};

struct ClmeTable {
  std::vector<std::string> languages;  // addition order; also column order
  Matrix emt;                          // (steps + 1) x languages, row 0 = base
  std::vector<ClmeRow> rows;           // one per step
};

/// Builds the per-step table from the EMT matrix; every row is recomputable
/// from the matrix via clme().
ClmeTable make_clme_table(const std::vector<std::string>& addition_order,
                          const Matrix& emt_with_base_row);

// CSV persistence for CLME rows: header "step,language,value".
void save_clme_csv(const std::vector<ClmeRow>& rows, const std::string& path);
std::vector<ClmeRow> load_clme_csv(const std::string& path);

/// Unique n-grams across one prompt's continuations divided by the total
/// token count. Throws unless some continuation has at least n tokens.
double distinct_n(const std::vector<std::vector<TokenId>>& continuations,
                  int n);

/// Mean of per-prompt distinct_n over all records; prompts with no
/// continuation of length >= n are dropped (throws when all are).
double mean_distinct_n(const std::vector<GenerationRecord>& records,
                       const Vocab& vocab, int n);

/// Mean perplexity of every continuation under the given model. Perplexity
/// errors (zero-probability tokens) propagate.
double fluency(const std::vector<GenerationRecord>& records,
               const NgramLM& base);

/// chrF++ in [0, 100]: mean F_beta over character n-grams (1..chrf_char_n,
/// whitespace removed) and word n-grams (1..chrf_word_n). Orders absent
/// from both strings are excluded. Empty reference throws; empty
/// hypothesis scores 0.
double chrf_pp(const std::string& hypothesis, const std::string& reference,
               const MetricConfig& cfg = {});

}  // namespace detox
