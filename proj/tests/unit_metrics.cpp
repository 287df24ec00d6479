#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "detox/metrics.hpp"
#include "detox/rng.hpp"
#include "detox/vocab.hpp"
#include "doctest.h"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace detox;

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

TEST_CASE("expected maximum toxicity takes the mean of per-prompt maxima") {
  Matrix scores(2, 3);
  scores << 0.1, 0.9, 0.3, 0.2, 0.1, 0.4;
  CHECK(emt(scores) == doctest::Approx((0.9 + 0.4) / 2.0));
}

TEST_CASE("unscored cells are ignored; empty rows are dropped") {
  Matrix scores(3, 2);
  scores << 0.5, kNaN, kNaN, kNaN, 0.1, 0.7;
  // middle row has no scored cell: mean of 0.5 and 0.7
  CHECK(emt(scores) == doctest::Approx(0.6));
  Matrix none(2, 2);
  none << kNaN, kNaN, kNaN, kNaN;
  CHECK_THROWS(emt(none));
}

TEST_CASE("expected maximum toxicity agrees with its brute recomputation on "
          "random matrices") {
  SplitMix64 rng(808);
  for (int trial = 0; trial < 60; ++trial) {
    const int rows = 1 + static_cast<int>(rng.next_below(12));
    const int cols = 1 + static_cast<int>(rng.next_below(8));
    Matrix m(rows, cols);
    bool any = false;
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) {
        if (rng.next_double() < 0.2) {
          m(i, j) = kNaN;
        } else {
          m(i, j) = rng.next_double();
          any = true;
        }
      }
    if (!any) continue;
    CHECK(emt(m) == doctest::Approx(oracle::emt_brute(m)).epsilon(1e-12));
  }
}

TEST_CASE("per-language aggregation groups prompt rows and averages "
          "languages equally") {
  std::vector<GenerationRecord> records(4);
  records[0].prompt = {"p0", "aa"};
  records[1].prompt = {"p1", "bb"};
  records[2].prompt = {"p2", "aa"};
  records[3].prompt = {"p3", "bb"};
  ScoreMatrix scores;
  scores.values = Matrix(4, 2);
  scores.values << 0.2, 0.4,   // aa
                   0.9, 0.1,   // bb
                   0.6, 0.0,   // aa
                   0.3, 0.5;   // bb
  scores.mask = Matrix::Ones(4, 2);
  scores.coverage = 1.0;

  const EmtResult result = emt_by_language(records, scores);
  CHECK(result.per_language.at("aa") == doctest::Approx((0.4 + 0.6) / 2));
  CHECK(result.per_language.at("bb") == doctest::Approx((0.9 + 0.5) / 2));
  CHECK(result.overall ==
        doctest::Approx((result.per_language.at("aa") +
                         result.per_language.at("bb")) / 2));
  CHECK(result.prompts == 4);
}

TEST_CASE("a language whose prompts are all unscored is dropped from the "
          "aggregate") {
  std::vector<GenerationRecord> records(2);
  records[0].prompt = {"p0", "aa"};
  records[1].prompt = {"p1", "bb"};
  ScoreMatrix scores;
  scores.values = Matrix(2, 1);
  scores.values << 0.8, kNaN;
  scores.mask = Matrix::Zero(2, 1);
  scores.mask(0, 0) = 1.0;
  scores.coverage = 0.5;
  const EmtResult result = emt_by_language(records, scores);
  CHECK(result.per_language.count("aa") == 1);
  CHECK(result.per_language.count("bb") == 0);
  CHECK(result.overall == doctest::Approx(0.8));
  CHECK(result.coverage == doctest::Approx(0.5));
}

TEST_CASE("relative mitigation reproduces the reference arithmetic") {
  CHECK(relative_emt(0.23, 0.37) ==
        doctest::Approx(-0.3783783783783784).epsilon(1e-15));
  CHECK(relative_emt(0.27, 0.37) ==
        doctest::Approx(-0.2702702702702703).epsilon(1e-15));
  // the two reductions round to 38% and 27% of base
  CHECK(std::abs(relative_emt(0.23, 0.37) * 100 + 38) < 1.0);
  CHECK(std::abs(relative_emt(0.27, 0.37) * 100 + 27) < 0.5);
  CHECK(relative_emt(0.37, 0.37) == doctest::Approx(0.0));
  CHECK(relative_emt(0.74, 0.37) == doctest::Approx(1.0));
  CHECK_THROWS(relative_emt(0.2, 0.0));
}

TEST_CASE("cross-lingual mitigation hand case") {
  // adding language 0 at step 0; its column is excluded from the sum
  Matrix m(2, 3);
  m << 0.40, 0.35, 0.30,
       0.20, 0.31, 0.27;
  CHECK(clme(m, 0, 0) == doctest::Approx(0.04 + 0.03).epsilon(1e-12));
  // excluding a different column changes the sum accordingly
  CHECK(clme(m, 0, 1) == doctest::Approx(0.20 + 0.03).epsilon(1e-12));
  CHECK_THROWS(clme(m, 1, 0));   // no row for step+1
  CHECK_THROWS(clme(m, 0, 5));   // no such column
}

TEST_CASE("the per-step table is recomputable row by row from its matrix") {
  SplitMix64 rng(550);
  const std::vector<std::string> langs = {"aa", "bb", "cc", "dd"};
  Matrix m(5, 4);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.next_double();

  const ClmeTable table = make_clme_table(langs, m);
  REQUIRE(table.rows.size() == langs.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    CHECK(table.rows[i].step == static_cast<int>(i));
    CHECK(table.rows[i].language == langs[i]);
    const double recomputed = clme(table.emt, static_cast<int>(i),
                                   static_cast<Eigen::Index>(i));
    CHECK(table.rows[i].value == recomputed);  // exact, no tolerance
  }
  CHECK_THROWS(make_clme_table(langs, Matrix::Zero(4, 4)));  // missing base row
}

TEST_CASE("per-step tables survive the CSV round-trip") {
  testutil::TempDir dir("clme_csv");
  std::vector<ClmeRow> rows = {{0, "aa", 0.07},
                               {1, "bb", -0.0125},
                               {2, "cc", 0.3333333333333333}};
  const std::string path = dir.file("table.csv");
  save_clme_csv(rows, path);
  const auto back = load_clme_csv(path);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].step == rows[i].step);
    CHECK(back[i].language == rows[i].language);
    CHECK(back[i].value == doctest::Approx(rows[i].value).epsilon(1e-15));
  }
}

TEST_CASE("diversity ratio hand cases") {
  CHECK(distinct_n({{1, 1, 1, 1}}, 1) == doctest::Approx(0.25));
  CHECK(distinct_n({{1, 2}, {3, 4}}, 1) == doctest::Approx(1.0));
  CHECK(distinct_n({{1, 2, 1, 2}}, 2) == doctest::Approx(0.5));
  // short continuations still count toward the denominator
  CHECK(distinct_n({{1, 2, 3}, {4}}, 2) == doctest::Approx(2.0 / 4.0));
  CHECK_THROWS(distinct_n({{1}}, 2));
  CHECK_THROWS(distinct_n({{1, 2}}, 0));
}

TEST_CASE("diversity agrees with its brute recomputation on random inputs") {
  SplitMix64 rng(881);
  for (int trial = 0; trial < 80; ++trial) {
    std::vector<std::vector<TokenId>> conts(1 + rng.next_below(5));
    bool any = false;
    for (auto& c : conts) {
      const int len = static_cast<int>(rng.next_below(9));
      for (int i = 0; i < len; ++i)
        c.push_back(static_cast<TokenId>(rng.next_below(5)));
      if (len >= 2) any = true;
    }
    if (!any) continue;
    for (int n : {1, 2, 3}) {
      bool long_enough = false;
      for (const auto& c : conts)
        if (static_cast<int>(c.size()) >= n) long_enough = true;
      if (!long_enough) continue;
      CHECK(distinct_n(conts, n) ==
            doctest::Approx(oracle::distinct_brute(conts, n)).epsilon(1e-12));
    }
  }
}

TEST_CASE("fluency is the mean continuation perplexity under the given model") {
  const std::vector<std::string> texts = {"a b a b", "b a b a"};
  auto vocab = std::make_shared<Vocab>(build_vocab(texts));
  std::vector<TokenSequence> corpus;
  for (const auto& t : texts) corpus.push_back(tokenize(t, *vocab));
  SmoothingConfig sm;
  sm.add_k = 0.1;
  const NgramLM lm = train_lm(corpus, 2, sm, vocab);

  GenerationRecord rec;
  rec.prompt = {"p", ""};
  rec.continuations = {"a b", "b a"};
  rec.token_counts = {2, 2};
  const double direct = (perplexity(lm, tokenize("a b", *vocab)) +
                         perplexity(lm, tokenize("b a", *vocab))) / 2.0;
  CHECK(fluency({rec}, lm) == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("translation overlap score identities") {
  CHECK(chrf_pp("the quick brown fox", "the quick brown fox") ==
        doctest::Approx(100.0));
  CHECK(chrf_pp("aaaa bbbb", "cccc dddd") == doctest::Approx(0.0));
  CHECK(chrf_pp("", "reference") == doctest::Approx(0.0));
  CHECK_THROWS(chrf_pp("hypothesis", ""));
  // symmetric inputs give symmetric precision/recall, so equal F
  CHECK(chrf_pp("ab cd", "cd ab") == doctest::Approx(chrf_pp("cd ab", "ab cd")));
}

TEST_CASE("translation overlap agrees with the brute n-gram F-score on "
          "random pairs") {
  SplitMix64 rng(99);
  for (int trial = 0; trial < 60; ++trial) {
    const std::string hyp = oracle::random_text(rng, 10);
    const std::string ref = oracle::random_text(rng, 10);
    CHECK(chrf_pp(hyp, ref) ==
          doctest::Approx(oracle::chrf_brute(hyp, ref)).epsilon(1e-9));
  }
}

TEST_CASE("partial overlap scores strictly between the identities") {
  const double v = chrf_pp("ora mira tel", "ora mira vok");
  CHECK(v > 0.0);
  CHECK(v < 100.0);
}
