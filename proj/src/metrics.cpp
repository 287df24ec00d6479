#include "detox/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace detox {

double emt(const Matrix& scores) {
  if (scores.rows() == 0 || scores.cols() == 0)
    throw std::invalid_argument("empty score matrix");
  double sum = 0.0;
  std::size_t rows_used = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    double row_max = -1.0;
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      const double v = scores(i, j);
      if (!std::isnan(v)) row_max = std::max(row_max, v);
    }
    if (row_max < 0.0) continue;  // nothing scored in this row
    sum += row_max;
    ++rows_used;
  }
  if (rows_used == 0)
    throw std::runtime_error("no scoreable rows in the score matrix");
  return sum / static_cast<double>(rows_used);
}

EmtResult emt_by_language(const std::vector<GenerationRecord>& records,
                          const ScoreMatrix& scores) {
  if (records.size() != static_cast<std::size_t>(scores.values.rows()))
    throw std::invalid_argument("records and score matrix disagree on rows");
  // Gather row indices per language, preserving order.
  std::map<std::string, std::vector<Eigen::Index>> rows_by_lang;
  for (std::size_t i = 0; i < records.size(); ++i)
    rows_by_lang[records[i].prompt.language].push_back(
        static_cast<Eigen::Index>(i));

  EmtResult result;
  result.coverage = scores.coverage;
  for (const auto& [lang, rows] : rows_by_lang) {
    Matrix sub(static_cast<Eigen::Index>(rows.size()), scores.values.cols());
    for (std::size_t r = 0; r < rows.size(); ++r)
      sub.row(static_cast<Eigen::Index>(r)) = scores.values.row(rows[r]);
    try {
      result.per_language[lang] = emt(sub);
      result.prompts += rows.size();
    } catch (const std::runtime_error&) {
      // Language had no scoreable prompt; it is dropped and shows up only
      // through the coverage figure.
    }
  }
  if (result.per_language.empty())
    throw std::runtime_error("no language had a scoreable prompt");
  double sum = 0.0;
  for (const auto& [lang, value] : result.per_language) sum += value;
  result.overall = sum / static_cast<double>(result.per_language.size());
  return result;
}

double relative_emt(double mitigated, double base) {
  if (base <= 0.0)
    throw std::invalid_argument("relative EMT needs a positive base EMT");
  return (mitigated - base) / base;
}

double clme(const Matrix& emt_with_base_row, int step, Eigen::Index added_col) {
  if (step < 0 || step + 1 >= emt_with_base_row.rows())
    throw std::invalid_argument("CLME step " + std::to_string(step) +
                                " out of range");
  if (added_col < 0 || added_col >= emt_with_base_row.cols())
    throw std::invalid_argument("CLME language column out of range");
  double sum = 0.0;
  for (Eigen::Index k = 0; k < emt_with_base_row.cols(); ++k) {
    if (k == added_col) continue;
    sum += emt_with_base_row(step, k) - emt_with_base_row(step + 1, k);
  }
  return sum;
}

ClmeTable make_clme_table(const std::vector<std::string>& addition_order,
                          const Matrix& emt_with_base_row) {
  if (emt_with_base_row.cols() !=
      static_cast<Eigen::Index>(addition_order.size()))
    throw std::invalid_argument("EMT matrix columns must match languages");
  if (emt_with_base_row.rows() !=
      static_cast<Eigen::Index>(addition_order.size()) + 1)
    throw std::invalid_argument(
        "EMT matrix needs one base row plus one row per step");
  ClmeTable table;
  table.languages = addition_order;
  table.emt = emt_with_base_row;
  for (std::size_t i = 0; i < addition_order.size(); ++i) {
    table.rows.push_back({static_cast<int>(i), addition_order[i],
                          clme(emt_with_base_row, static_cast<int>(i),
                               static_cast<Eigen::Index>(i))});
  }
  return table;
}

void save_clme_csv(const std::vector<ClmeRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "step,language,value\n";
  for (const auto& r : rows) {
    std::ostringstream line;
    line.precision(17);
    line << r.step << ',' << r.language << ',' << r.value << '\n';
    out << line.str();
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<ClmeRow> load_clme_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open CLME file: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "step,language,value")
    throw std::runtime_error("unexpected CLME CSV header in " + path);
  std::vector<ClmeRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string step_s, lang, value_s;
    if (!std::getline(ss, step_s, ',') || !std::getline(ss, lang, ',') ||
        !std::getline(ss, value_s))
      throw std::runtime_error("malformed CLME CSV row: " + line);
    rows.push_back({std::stoi(step_s), lang, std::stod(value_s)});
  }
  return rows;
}

double distinct_n(const std::vector<std::vector<TokenId>>& continuations,
                  int n) {
  if (n < 1) throw std::invalid_argument("n-gram order must be >= 1");
  std::uint64_t total_tokens = 0;
  std::set<std::vector<TokenId>> grams;
  bool any_long_enough = false;
  for (const auto& tokens : continuations) {
    total_tokens += tokens.size();
    if (tokens.size() < static_cast<std::size_t>(n)) continue;
    any_long_enough = true;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i)
      grams.insert(std::vector<TokenId>(
          tokens.begin() + static_cast<std::ptrdiff_t>(i),
          tokens.begin() + static_cast<std::ptrdiff_t>(i + n)));
  }
  if (!any_long_enough)
    throw std::invalid_argument("no continuation has at least " +
                                std::to_string(n) + " tokens");
  return static_cast<double>(grams.size()) /
         static_cast<double>(total_tokens);
}

double mean_distinct_n(const std::vector<GenerationRecord>& records,
                       const Vocab& vocab, int n) {
  double sum = 0.0;
  std::size_t used = 0;
  for (const auto& r : records) {
    std::vector<std::vector<TokenId>> continuations;
    for (const auto& text : r.continuations) {
      auto ids = tokenize(text, vocab, r.prompt.language).ids;
      continuations.emplace_back(ids.begin() + 1, ids.end() - 1);  // content
    }
    try {
      sum += distinct_n(continuations, n);
      ++used;
    } catch (const std::invalid_argument&) {
      // prompt produced nothing of length n; dropped
    }
  }
  if (used == 0)
    throw std::runtime_error("no prompt has a continuation of length " +
                             std::to_string(n));
  return sum / static_cast<double>(used);
}

double fluency(const std::vector<GenerationRecord>& records,
               const NgramLM& base) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& r : records) {
    for (const auto& text : r.continuations) {
      sum += perplexity(base, tokenize(text, base.vocab(), r.prompt.language));
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("no continuations to score");
  return sum / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// chrF++

namespace {

using NgramCounts = std::map<std::string, std::uint64_t>;

NgramCounts char_ngrams(const std::string& stripped, int n) {
  NgramCounts counts;
  if (stripped.size() < static_cast<std::size_t>(n)) return counts;
  for (std::size_t i = 0; i + n <= stripped.size(); ++i)
    ++counts[stripped.substr(i, static_cast<std::size_t>(n))];
  return counts;
}

NgramCounts word_ngrams(const std::vector<std::string>& words, int n) {
  NgramCounts counts;
  if (words.size() < static_cast<std::size_t>(n)) return counts;
  for (std::size_t i = 0; i + n <= words.size(); ++i) {
    std::string gram;
    for (std::size_t j = 0; j < static_cast<std::size_t>(n); ++j) {
      if (j) gram += ' ';
      gram += words[i + j];
    }
    ++counts[gram];
  }
  return counts;
}

std::string strip_whitespace(const std::string& text) {
  std::string out;
  for (char c : text)
    if (c != ' ' && c != '\t' && c != '\n' && c != '\r') out += c;
  return out;
}

// F_beta of one n-gram order; `skip` reports when both sides are empty.
double order_f(const NgramCounts& hyp, const NgramCounts& ref, double beta,
               bool& skip) {
  std::uint64_t hyp_total = 0, ref_total = 0, matched = 0;
  for (const auto& [g, c] : hyp) hyp_total += c;
  for (const auto& [g, c] : ref) ref_total += c;
  skip = hyp_total == 0 && ref_total == 0;
  if (skip) return 0.0;
  for (const auto& [g, c] : hyp) {
    const auto it = ref.find(g);
    if (it != ref.end()) matched += std::min(c, it->second);
  }
  const double precision =
      hyp_total ? static_cast<double>(matched) / static_cast<double>(hyp_total)
                : 0.0;
  const double recall =
      ref_total ? static_cast<double>(matched) / static_cast<double>(ref_total)
                : 0.0;
  const double denom = beta * beta * precision + recall;
  if (denom == 0.0) return 0.0;
  return (1.0 + beta * beta) * precision * recall / denom;
}

}  // namespace

double chrf_pp(const std::string& hypothesis, const std::string& reference,
               const MetricConfig& cfg) {
  if (reference.empty())
    throw std::invalid_argument("chrF++ needs a non-empty reference");
  if (hypothesis.empty()) return 0.0;

  const std::string hyp_chars = strip_whitespace(hypothesis);
  const std::string ref_chars = strip_whitespace(reference);
  const auto hyp_words = split_words(hypothesis);
  const auto ref_words = split_words(reference);

  double sum = 0.0;
  std::size_t used = 0;
  for (int n = 1; n <= cfg.chrf_char_n; ++n) {
    bool skip = false;
    const double f = order_f(char_ngrams(hyp_chars, n),
                             char_ngrams(ref_chars, n), cfg.chrf_beta, skip);
    if (!skip) {
      sum += f;
      ++used;
    }
  }
  for (int n = 1; n <= cfg.chrf_word_n; ++n) {
    bool skip = false;
    const double f = order_f(word_ngrams(hyp_words, n),
                             word_ngrams(ref_words, n), cfg.chrf_beta, skip);
    if (!skip) {
      sum += f;
      ++used;
    }
  }
  if (used == 0) return 0.0;
  return 100.0 * sum / static_cast<double>(used);
}

}  // namespace detox
