#include <algorithm>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "detox/corpus.hpp"
#include "detox/rng.hpp"
#include "detox/vocab.hpp"
#include "doctest.h"
#include "support/mock_http.hpp"
#include "support/temp_dir.hpp"

using namespace detox;

namespace {

std::vector<LabeledSample> small_pool(std::size_t toxic, std::size_t nontoxic,
                                      const std::string& lang = "aa") {
  std::vector<LabeledSample> pool;
  for (std::size_t i = 0; i < toxic; ++i) {
    LabeledSample s;
    s.text = lang + "x" + std::to_string(i) + " " + lang + "w0";
    s.language = lang;
    s.label = Polarity::kToxic;
    s.source_id = lang + "-tox-" + std::to_string(i);
    pool.push_back(s);
  }
  for (std::size_t i = 0; i < nontoxic; ++i) {
    LabeledSample s;
    s.text = lang + "w" + std::to_string(i % 7) + " " + lang + "w" +
             std::to_string((i + 1) % 7);
    s.language = lang;
    s.label = Polarity::kNontoxic;
    s.source_id = lang + "-non-" + std::to_string(i);
    pool.push_back(s);
  }
  return pool;
}

// An MtProvider that fails on texts containing a marker substring.
class FailingMtProvider : public MtProvider {
 public:
  explicit FailingMtProvider(std::string marker) : marker_(std::move(marker)) {}
  std::string id() const override { return "failing"; }
  std::string translate(const std::string& text, const std::string&,
                        const std::string& target) override {
    if (text.find(marker_) != std::string::npos)
      throw std::runtime_error("provider rejected text");
    return text + " @" + target;
  }

 private:
  std::string marker_;
};

}  // namespace

TEST_CASE("corpus files round-trip through save and load") {
  testutil::TempDir dir("corpus_rt");
  std::vector<LabeledSample> samples;
  LabeledSample a;
  a.text = "aaw1 aax2";
  a.language = "aa";
  a.label = Polarity::kToxic;
  a.source_id = "s-1";
  a.parallel_group = 42;
  a.origin = Origin::kTranslated;
  samples.push_back(a);
  LabeledSample b;
  b.text = "bbw3";
  b.language = "bb";
  b.label = Polarity::kNontoxic;
  b.source_id = "s-2";
  samples.push_back(b);

  const std::string path = dir.file("c.jsonl");
  save_corpus(samples, path);
  const LoadResult back = load_corpus(path);
  CHECK(back.warnings.empty());
  REQUIRE(back.samples.size() == 2);
  CHECK(back.samples[0].text == "aaw1 aax2");
  CHECK(back.samples[0].language == "aa");
  CHECK(back.samples[0].label == Polarity::kToxic);
  CHECK(back.samples[0].source_id == "s-1");
  REQUIRE(back.samples[0].parallel_group.has_value());
  CHECK(*back.samples[0].parallel_group == 42);
  CHECK(back.samples[0].origin == Origin::kTranslated);
  CHECK(back.samples[1].label == Polarity::kNontoxic);
  CHECK_FALSE(back.samples[1].parallel_group.has_value());
  CHECK(back.samples[1].origin == Origin::kInLanguage);
}

TEST_CASE("malformed lines are skipped with line-numbered warnings") {
  testutil::TempDir dir("corpus_warn");
  const std::string path = dir.file("c.jsonl");
  {
    std::ofstream out(path);
    for (int i = 0; i < 200; ++i)
      out << R"({"text":"aaw1","lang":"aa","label":"nontoxic"})" << "\n";
    out << "this is not json\n";  // line 201
    for (int i = 0; i < 100; ++i)
      out << R"({"text":"aaw2","lang":"aa","label":"toxic"})" << "\n";
  }
  const LoadResult result = load_corpus(path);
  CHECK(result.samples.size() == 300);
  CHECK(result.total_lines == 301);
  REQUIRE(result.warnings.size() == 1);
  CHECK(result.warnings[0].find("line 201") != std::string::npos);
}

TEST_CASE("more than one percent malformed lines is a hard error") {
  testutil::TempDir dir("corpus_err");
  const std::string path = dir.file("c.jsonl");
  {
    std::ofstream out(path);
    for (int i = 0; i < 50; ++i)
      out << R"({"text":"aaw1","lang":"aa","label":"nontoxic"})" << "\n";
    out << R"({"text":"missing label","lang":"aa"})" << "\n";
  }
  CHECK_THROWS_AS(load_corpus(path), std::runtime_error);
}

TEST_CASE("blank lines are ignored; an empty file warns instead of failing") {
  testutil::TempDir dir("corpus_empty");
  const std::string path = dir.file("c.jsonl");
  {
    std::ofstream out(path);
    out << "\n   \n\t\n";
  }
  const LoadResult result = load_corpus(path);
  CHECK(result.samples.empty());
  CHECK(result.total_lines == 0);
  REQUIRE(result.warnings.size() == 1);
  CHECK(result.warnings[0].find("empty") != std::string::npos);
  CHECK_THROWS(load_corpus(dir.file("missing.jsonl")));
}

TEST_CASE("unknown labels and bad parallel groups are rejected per line") {
  testutil::TempDir dir("corpus_schema");
  const std::string path = dir.file("c.jsonl");
  {
    std::ofstream out(path);
    for (int i = 0; i < 400; ++i)
      out << R"({"text":"aaw1","lang":"aa","label":"nontoxic"})" << "\n";
    out << R"({"text":"t","lang":"aa","label":"spicy"})" << "\n";
    out << R"({"text":"t","lang":"aa","label":"toxic","parallel_group":"x"})"
        << "\n";
    out << R"({"text":"t","lang":"aa","label":"toxic","origin":"alien"})"
        << "\n";
  }
  const LoadResult result = load_corpus(path);
  CHECK(result.samples.size() == 400);
  CHECK(result.warnings.size() == 3);
}

TEST_CASE("sampling plans draw exact per-label counts without replacement") {
  const auto pool = small_pool(40, 120);
  SamplingPlan plan;
  plan.toxic = 12;
  plan.nontoxic = 30;
  plan.seed = 5;
  const auto sampled = sample_plan(pool, plan);
  REQUIRE(sampled.size() == 42);
  std::size_t toxic = 0;
  std::set<std::string> ids;
  for (const auto& s : sampled) {
    if (s.label == Polarity::kToxic) ++toxic;
    ids.insert(s.source_id);
  }
  CHECK(toxic == 12);
  CHECK(ids.size() == sampled.size());  // no duplicates
}

TEST_CASE("sampling is seed-deterministic and seed-sensitive") {
  const auto pool = small_pool(40, 120);
  SamplingPlan plan;
  plan.toxic = 10;
  plan.nontoxic = 25;
  plan.seed = 7;
  const auto a = sample_plan(pool, plan);
  const auto b = sample_plan(pool, plan);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(a[i].source_id == b[i].source_id);
  plan.seed = 8;
  const auto c = sample_plan(pool, plan);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].source_id != c[i].source_id) differs = true;
  CHECK(differs);
}

TEST_CASE("a shortfall names the label and the sizes involved") {
  const auto pool = small_pool(3, 50);
  SamplingPlan plan;
  plan.toxic = 10;
  plan.nontoxic = 20;
  try {
    sample_plan(pool, plan);
    FAIL("expected a shortfall error");
  } catch (const std::invalid_argument& e) {
    const std::string what = e.what();
    CHECK(what.find("toxic") != std::string::npos);
    CHECK(what.find("10") != std::string::npos);
    CHECK(what.find("3") != std::string::npos);
  }
}

TEST_CASE("token counting is block-size invariant in totals") {
  const auto pool = small_pool(5, 9);
  std::vector<std::string> texts;
  for (const auto& s : pool) texts.push_back(s.text);
  const Vocab vocab = build_vocab(texts);

  // every sample in small_pool has exactly 2 content tokens
  const TokenCountReport r1 = count_tokens(pool, vocab, 1024);
  CHECK(r1.toxic_tokens == 10);
  CHECK(r1.nontoxic_tokens == 18);
  CHECK(r1.toxic_blocks == 5);
  CHECK(r1.nontoxic_blocks == 9);

  const TokenCountReport r2 = count_tokens(pool, vocab, 1);
  CHECK(r2.toxic_tokens == r1.toxic_tokens);
  CHECK(r2.nontoxic_tokens == r1.nontoxic_tokens);
  CHECK(r2.toxic_blocks == 10);  // one block per token now
  CHECK(r2.nontoxic_blocks == 18);
}

TEST_CASE("identity provider returns its input; lossy deletion is seeded") {
  IdentityMtProvider identity;
  CHECK(identity.translate("aaw1 aaw2", "aa", "bb") == "aaw1 aaw2");

  LossyMtProvider never(0.0, 3);
  CHECK(never.translate("aaw1 aaw2 aax3", "aa", "bb") == "aaw1 aaw2 aax3");

  // the deletion rate must stay below 1 so text can survive translation
  CHECK_THROWS(LossyMtProvider(1.0, 3));
  CHECK_THROWS(LossyMtProvider(-0.1, 3));

  LossyMtProvider half(0.5, 3);
  const std::string once = half.translate("aaw1 aaw2 aaw3 aaw4", "aa", "bb");
  CHECK(once == half.translate("aaw1 aaw2 aaw3 aaw4", "aa", "bb"));
  LossyMtProvider other_seed(0.5, 4);
  // different seeds eventually disagree on some text
  bool differs = false;
  for (int i = 0; i < 20 && !differs; ++i) {
    const std::string text = "aaw" + std::to_string(i) + " aaw1 aaw2 aaw3";
    differs = half.translate(text, "aa", "bb") !=
              other_seed.translate(text, "aa", "bb");
  }
  CHECK(differs);
}

TEST_CASE("prefix mapping rewrites only tokens of the source language") {
  PrefixMapMtProvider mapper;
  CHECK(mapper.translate("aaw1 aax2 zz9", "aa", "bb") == "bbw1 bbx2 zz9");
  // mapping back restores the original
  CHECK(mapper.translate("bbw1 bbx2 zz9", "bb", "aa") == "aaw1 aax2 zz9");
}

TEST_CASE("chained providers apply their stages in order") {
  auto mapper = std::make_shared<PrefixMapMtProvider>();
  auto lossy = std::make_shared<LossyMtProvider>(0.0, 1);
  ChainedMtProvider chain({mapper, lossy});
  CHECK(chain.translate("aaw1 aaw2", "aa", "bb") == "bbw1 bbw2");
  CHECK(chain.id().find("prefix_map") != std::string::npos);
}

TEST_CASE("the remote provider speaks the documented wire format") {
  mock::TranslationServer server;
  RemoteMtProvider remote(server.endpoint());
  CHECK(remote.translate("aaw1 aax2", "aa", "cc") == "ccw1 ccx2");
  CHECK(server.requests() == 1);
  // unreachable endpoint surfaces as an exception
  RemoteMtProvider dead("http://127.0.0.1:1");
  CHECK_THROWS(dead.translate("aaw1", "aa", "bb"));
}

TEST_CASE("batch translation carries identity fields and flips origin") {
  auto pool = small_pool(2, 3);
  pool[0].parallel_group = 9;
  PrefixMapMtProvider mapper;
  const TranslateResult result = translate_batch(pool, mapper, "bb");
  CHECK(result.failures.empty());
  REQUIRE(result.samples.size() == pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    CHECK(result.samples[i].language == "bb");
    CHECK(result.samples[i].label == pool[i].label);
    CHECK(result.samples[i].source_id == pool[i].source_id);
    CHECK(result.samples[i].origin == Origin::kTranslated);
    CHECK(result.samples[i].text.substr(0, 2) == "bb");
  }
  REQUIRE(result.samples[0].parallel_group.has_value());
  CHECK(*result.samples[0].parallel_group == 9);
}

TEST_CASE("per-item translation failures are enumerated; too many abort") {
  auto pool = small_pool(0, 10);
  pool[3].text = "POISON aaw1";
  pool[7].text = "POISON aaw2";
  FailingMtProvider provider("POISON");

  const TranslateResult ok = translate_batch(pool, provider, "bb", 0.25);
  CHECK(ok.samples.size() == 8);
  REQUIRE(ok.failures.size() == 2);
  CHECK(ok.failures[0].first == 3);
  CHECK(ok.failures[1].first == 7);
  CHECK(ok.failures[0].second.find("rejected") != std::string::npos);

  CHECK_THROWS(translate_batch(pool, provider, "bb", 0.1));
}

TEST_CASE("roundtrip studies score original, translated and back") {
  auto pool = small_pool(4, 0);
  // score: fraction of tokens carrying the in-language toxic marker "x"
  ScoreFn score = [](const std::string& text, const std::string& lang) {
    const auto words = split_words(text);
    if (words.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& w : words)
      if (w.rfind(lang + "x", 0) == 0) ++hits;
    return static_cast<double>(hits) / static_cast<double>(words.size());
  };

  // a lossless mapper keeps scores identical at every stage
  PrefixMapMtProvider mapper;
  const RoundtripReport lossless = roundtrip_study(pool, mapper, "bb", score);
  REQUIRE(lossless.triples.size() == pool.size());
  for (const auto& t : lossless.triples) {
    CHECK(t[0] == doctest::Approx(0.5));
    CHECK(t[1] == doctest::Approx(0.5));
    CHECK(t[2] == doctest::Approx(0.5));
  }
  CHECK(lossless.original.mean == doctest::Approx(0.5));
  CHECK(lossless.translated.mean == doctest::Approx(0.5));
  CHECK(lossless.backtranslated.mean == doctest::Approx(0.5));
}

TEST_CASE("stage statistics use linear-interpolation percentiles") {
  const StageStats odd = stage_stats({5, 3, 1, 2, 4});
  CHECK(odd.mean == doctest::Approx(3.0));
  CHECK(odd.p25 == doctest::Approx(2.0));
  CHECK(odd.p50 == doctest::Approx(3.0));
  CHECK(odd.p75 == doctest::Approx(4.0));

  const StageStats even = stage_stats({1, 2, 3, 4});
  CHECK(even.p25 == doctest::Approx(1.75));
  CHECK(even.p50 == doctest::Approx(2.5));
  CHECK(even.p75 == doctest::Approx(3.25));

  const StageStats empty = stage_stats({});
  CHECK(empty.mean == 0.0);
}

namespace {

// Pool of parallel instances: each group has one sample per language.
std::vector<LabeledSample> parallel_pool(
    const std::vector<std::string>& languages, std::size_t toxic_groups,
    std::size_t nontoxic_groups) {
  std::vector<LabeledSample> pool;
  std::int64_t group = 0;
  auto add_group = [&](Polarity label, std::size_t i) {
    for (const auto& lang : languages) {
      LabeledSample s;
      s.text = lang + (label == Polarity::kToxic ? "x" : "w") +
               std::to_string(i);
      s.language = lang;
      s.label = label;
      s.source_id = "inst-" + std::to_string(group);  // shared by translations
      s.parallel_group = group;
      pool.push_back(s);
    }
    ++group;
  };
  for (std::size_t i = 0; i < toxic_groups; ++i)
    add_group(Polarity::kToxic, i);
  for (std::size_t i = 0; i < nontoxic_groups; ++i)
    add_group(Polarity::kNontoxic, i);
  return pool;
}

}  // namespace

TEST_CASE("parallel planning gives every language the same groups") {
  const std::vector<std::string> langs = {"aa", "bb", "cc"};
  const auto pool = parallel_pool(langs, 20, 60);
  SamplingPlan plan;
  plan.toxic = 8;
  plan.nontoxic = 20;
  plan.seed = 3;
  const auto split = plan_language_data(pool, langs, DataRegime::kParallel,
                                        plan);
  REQUIRE(split.size() == langs.size());
  std::set<std::int64_t> reference;
  for (const auto& lang : langs) {
    const auto& samples = split.at(lang);
    CHECK(samples.size() == plan.toxic + plan.nontoxic);
    std::set<std::int64_t> groups;
    std::size_t toxic = 0;
    for (const auto& s : samples) {
      CHECK(s.language == lang);
      REQUIRE(s.parallel_group.has_value());
      groups.insert(*s.parallel_group);
      if (s.label == Polarity::kToxic) ++toxic;
    }
    CHECK(toxic == plan.toxic);
    if (reference.empty())
      reference = groups;
    else
      CHECK(groups == reference);  // identical content across languages
  }
}

TEST_CASE("unparallel planning keeps per-language slices disjoint") {
  const std::vector<std::string> langs = {"aa", "bb", "cc"};
  // generous margins: each language's slice holds ~20 toxic / ~50 nontoxic
  const auto pool = parallel_pool(langs, 60, 150);
  SamplingPlan plan;
  plan.toxic = 8;
  plan.nontoxic = 20;
  plan.seed = 3;
  const auto split = plan_language_data(pool, langs, DataRegime::kUnparallel,
                                        plan);
  std::set<std::int64_t> seen;
  for (const auto& lang : langs) {
    const auto& samples = split.at(lang);
    CHECK(samples.size() == plan.toxic + plan.nontoxic);
    for (const auto& s : samples) {
      CHECK(s.language == lang);
      REQUIRE(s.parallel_group.has_value());
      // an instance may appear in at most one language's slice
      CHECK(seen.insert(*s.parallel_group).second);
    }
  }
}

TEST_CASE("planning fails loudly when a language cannot fill its slice") {
  const std::vector<std::string> langs = {"aa", "bb"};
  const auto pool = parallel_pool(langs, 4, 10);
  SamplingPlan plan;
  plan.toxic = 3;
  plan.nontoxic = 8;
  plan.seed = 1;
  // unparallel needs langs * counts disjoint instances: 2*11 = 22 > 14
  CHECK_THROWS(plan_language_data(pool, langs, DataRegime::kUnparallel, plan));
}
