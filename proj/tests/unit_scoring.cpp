#include <cstdlib>
#include <memory>
#include <string>
#include <vector>

#include "detox/scorer.hpp"
#include "doctest.h"
#include "json.hpp"
#include "support/mock_http.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace detox;

namespace {

LexiconScorer::Weights two_language_weights() {
  return {{"aa", {{"slur", 0.9}, {"hex", 0.5}}},
          {"bb", {{"vex", 0.8}}}};
}

GenerationRecord record(const std::string& lang,
                        std::vector<std::string> continuations) {
  GenerationRecord r;
  r.prompt = {"prompt", lang};
  r.continuations = std::move(continuations);
  r.token_counts.assign(r.continuations.size(), 1);
  return r;
}

// Throws on texts carrying a poison marker; deterministic otherwise.
class FlakyScorer : public Scorer {
 public:
  std::string id() const override { return "flaky"; }
  double score(const std::string& text, const std::string&) override {
    if (text.find("poison") != std::string::npos)
      throw std::runtime_error("cannot score this text");
    return 0.25;
  }
};

}  // namespace

TEST_CASE("offline lexicon scoring composes occurrence risks noisy-or style") {
  LexiconScorer scorer(two_language_weights());
  CHECK(scorer.score("clean words only", "aa") == doctest::Approx(0.0));
  CHECK(scorer.score("one slur here", "aa") == doctest::Approx(0.9));
  // two independent occurrences: 1 - (1-0.9)*(1-0.9)
  CHECK(scorer.score("slur slur", "aa") == doctest::Approx(0.99));
  // mixed weights: 1 - (1-0.9)*(1-0.5)
  CHECK(scorer.score("slur and hex", "aa") == doctest::Approx(0.95));
  // language scoping: aa words do not fire for bb
  CHECK(scorer.score("slur", "bb") == doctest::Approx(0.0));
  CHECK(scorer.score("vex", "bb") == doctest::Approx(0.8));
  // unknown language scores zero everywhere
  CHECK(scorer.score("slur", "zz") == doctest::Approx(0.0));
}

TEST_CASE("lexicon weights outside the unit interval are rejected") {
  CHECK_THROWS(LexiconScorer({{"aa", {{"w", 1.5}}}}));
  CHECK_THROWS(LexiconScorer({{"aa", {{"w", -0.1}}}}));
}

TEST_CASE("lexicon files round-trip") {
  testutil::TempDir dir("lexicon");
  LexiconScorer scorer(two_language_weights());
  const std::string path = dir.file("lexicon.json");
  scorer.save(path);
  const LexiconScorer back = LexiconScorer::from_file(path);
  CHECK(back.weights() == scorer.weights());
}

TEST_CASE("score cache hits by scorer, language and text") {
  testutil::TempDir dir("cache");
  const std::string path = dir.file("scores.jsonl");
  {
    ScoreCache cache(path);
    CHECK(!cache.lookup("s", "aa", "text").has_value());
    cache.store("s", "aa", "text", 0.42);
    CHECK(cache.lookup("s", "aa", "text") == 0.42);
    CHECK(!cache.lookup("s", "bb", "text").has_value());
    CHECK(!cache.lookup("other", "aa", "text").has_value());
    CHECK(cache.size() == 1);
  }
  // a fresh instance reloads the persisted entries
  ScoreCache reloaded(path);
  CHECK(reloaded.lookup("s", "aa", "text") == 0.42);
}

TEST_CASE("remote scoring client") {
  mock::ScoringServer server(0.91);
  setenv("PERSPECTIVE_API_KEY", "unit-test-key", 1);

  RemoteScorerConfig cfg;
  cfg.endpoint = server.endpoint();
  cfg.requests_per_second = 10000;
  cfg.base_backoff_seconds = 0.01;

  SUBCASE("parses the reported probability and sends the documented body") {
    RemoteScorer scorer(cfg, nullptr);
    CHECK(scorer.score("some text", "aa") == doctest::Approx(0.91));
    CHECK(scorer.network_calls() == 1);
    CHECK(server.last_key() == "unit-test-key");
    const auto body = nlohmann::json::parse(server.last_body());
    CHECK(body.at("comment").at("text") == "some text");
    CHECK(body.at("languages").at(0) == "aa");
    CHECK(body.at("requestedAttributes").contains("TOXICITY"));
  }

  SUBCASE("recovers from rate-limit responses with retries") {
    RemoteScorer scorer(cfg, nullptr);
    server.rate_limit_next(2);
    CHECK(scorer.score("throttled", "aa") == doctest::Approx(0.91));
    CHECK(server.requests() == 3);  // two 429s then success
  }

  SUBCASE("gives up after the configured retry budget") {
    RemoteScorerConfig strict = cfg;
    strict.max_retries = 1;
    RemoteScorer scorer(strict, nullptr);
    server.rate_limit_next(5);
    CHECK_THROWS(scorer.score("hopeless", "aa"));
  }

  SUBCASE("serves repeats from the cache without new network calls") {
    testutil::TempDir dir("remote_cache");
    auto cache = std::make_shared<ScoreCache>(dir.file("c.jsonl"));
    RemoteScorer scorer(cfg, cache);
    CHECK(scorer.score("cached text", "aa") == doctest::Approx(0.91));
    const auto calls = scorer.network_calls();
    CHECK(scorer.score("cached text", "aa") == doctest::Approx(0.91));
    CHECK(scorer.network_calls() == calls);
  }

  SUBCASE("missing credential is a configuration error") {
    RemoteScorerConfig keyless = cfg;
    keyless.api_key_env = "DETOX_TEST_UNSET_KEY";
    unsetenv("DETOX_TEST_UNSET_KEY");
    RemoteScorer scorer(keyless, nullptr);
    CHECK_THROWS(scorer.score("text", "aa"));
  }
}

TEST_CASE("batch scoring matches one-at-a-time scoring and is "
          "schedule-independent") {
  LexiconScorer scorer(two_language_weights());
  std::vector<GenerationRecord> records = {
      record("aa", {"slur here", "clean", "hex hex"}),
      record("bb", {"vex", "clean", "slur"}),
      record("aa", {"clean", "slur hex", "nothing"}),
  };

  LexiconScorer seq_scorer(two_language_weights());
  const ScoreMatrix expected = oracle::score_sequential(records, seq_scorer);

  for (unsigned workers : {1u, 4u}) {
    ScoreBatchConfig cfg;
    cfg.max_in_flight = workers;
    const ScoreMatrix got = score_batch(records, scorer, cfg);
    REQUIRE(got.values.rows() == expected.values.rows());
    REQUIRE(got.values.cols() == expected.values.cols());
    for (Eigen::Index i = 0; i < got.values.rows(); ++i)
      for (Eigen::Index j = 0; j < got.values.cols(); ++j) {
        CHECK(got.mask(i, j) == expected.mask(i, j));
        if (got.mask(i, j) == 1.0)
          CHECK(got.values(i, j) == doctest::Approx(expected.values(i, j)));
      }
    CHECK(got.coverage == doctest::Approx(1.0));
    CHECK(got.errors.empty());
  }
}

TEST_CASE("unscorable continuations are masked and enumerated") {
  FlakyScorer scorer;
  std::vector<GenerationRecord> records = {
      record("aa", {"fine", "poison apple", "fine"}),
      record("aa", {"fine", "fine", "fine"}),
  };
  ScoreBatchConfig cfg;
  cfg.max_unscored_fraction = 0.5;
  const ScoreMatrix got = score_batch(records, scorer, cfg);
  CHECK(got.mask(0, 1) == 0.0);
  CHECK(std::isnan(got.values(0, 1)));
  CHECK(got.coverage == doctest::Approx(5.0 / 6.0));
  REQUIRE(got.errors.size() == 1);
  CHECK(got.errors[0].find("cannot score") != std::string::npos);
}

TEST_CASE("a batch with too many failures fails loudly") {
  FlakyScorer scorer;
  std::vector<GenerationRecord> records = {
      record("aa", {"poison", "poison", "fine"}),
  };
  ScoreBatchConfig cfg;
  cfg.max_unscored_fraction = 0.25;
  CHECK_THROWS(score_batch(records, scorer, cfg));
}
