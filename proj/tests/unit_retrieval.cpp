#include <cmath>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "detox/context_key.hpp"
#include "detox/datastore.hpp"
#include "detox/rng.hpp"
#include "detox/synth.hpp"
#include "detox/vocab.hpp"
#include "doctest.h"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace detox;

namespace {

// A small random labeled corpus over an ad-hoc vocabulary.
std::vector<LabeledSample> random_samples(SplitMix64& rng, int count,
                                          Polarity label) {
  std::vector<LabeledSample> out;
  for (int i = 0; i < count; ++i) {
    LabeledSample s;
    s.text = oracle::random_text(rng, 9);
    s.language = (i % 2) ? "aa" : "bb";
    s.label = label;
    s.source_id = "s" + std::to_string(i);
    out.push_back(s);
  }
  return out;
}

Vocab vocab_of(const std::vector<LabeledSample>& samples) {
  std::vector<std::string> texts;
  for (const auto& s : samples) texts.push_back(s.text);
  return build_vocab(texts);
}

}  // namespace

TEST_CASE("context keys are unit length and depend only on the trailing window") {
  ContextKeyConfig cfg;
  cfg.dim = 16;
  cfg.window = 3;
  cfg.seed = 5;
  ContextKeyer keyer(cfg, 50);

  SplitMix64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<TokenId> long_ctx, short_ctx;
    for (int i = 0; i < 8; ++i)
      long_ctx.push_back(static_cast<TokenId>(rng.next_below(50)));
    short_ctx.assign(long_ctx.end() - 3, long_ctx.end());

    const Vector a = keyer.key(long_ctx);
    const Vector b = keyer.key(short_ctx);
    CHECK(std::abs(a.norm() - 1.0) <= 1e-12);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);  // prefix beyond window ignored
  }
}

TEST_CASE("short contexts are begin-padded deterministically") {
  ContextKeyConfig cfg;
  cfg.dim = 8;
  cfg.window = 4;
  ContextKeyer keyer(cfg, 20);
  const std::vector<TokenId> one{7};
  const std::vector<TokenId> padded{Vocab::kBos, Vocab::kBos, Vocab::kBos, 7};
  CHECK((keyer.key(one) - keyer.key(padded)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("same seed same key, different seed different key") {
  ContextKeyConfig a;
  a.dim = 12;
  a.seed = 1;
  ContextKeyConfig b = a;
  b.seed = 2;
  ContextKeyer ka(a, 30), ka2(a, 30), kb(b, 30);
  const std::vector<TokenId> ctx{3, 4, 5};
  CHECK((ka.key(ctx) - ka2.key(ctx)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((ka.key(ctx) - kb.key(ctx)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("datastore holds one entry per predicted position") {
  SplitMix64 rng(11);
  const auto samples = random_samples(rng, 20, Polarity::kToxic);
  const Vocab vocab = vocab_of(samples);
  ContextKeyConfig kc;
  kc.dim = 8;
  const Datastore store = build_datastore(samples, vocab, kc, Polarity::kToxic);

  std::size_t expected = 0;
  for (const auto& s : samples)
    expected += tokenize(s.text, vocab, s.language).ids.size() - 1;  // BOS is context only
  CHECK(store.size() == expected);
  CHECK(store.keys.rows() == static_cast<Eigen::Index>(expected));
  CHECK(store.keys.cols() == 8);
  CHECK(store.polarity == Polarity::kToxic);

  // every sample contributes exactly one end-marker entry
  std::size_t eos_entries = 0;
  for (TokenId v : store.values)
    if (v == Vocab::kEos) ++eos_entries;
  CHECK(eos_entries == samples.size());

  std::uint64_t prov_total = 0;
  for (const auto& [lang, n] : store.provenance) prov_total += n;
  CHECK(prov_total == expected);
}

TEST_CASE("building from mismatched polarity samples is rejected") {
  SplitMix64 rng(12);
  const auto samples = random_samples(rng, 5, Polarity::kNontoxic);
  const Vocab vocab = vocab_of(samples);
  ContextKeyConfig kc;
  CHECK_THROWS(build_datastore(samples, vocab, kc, Polarity::kToxic));
  CHECK_THROWS(build_datastore({}, vocab, kc, Polarity::kToxic));
}

TEST_CASE("append keeps existing entry rows stable") {
  SplitMix64 rng(13);
  auto first = random_samples(rng, 10, Polarity::kNontoxic);
  auto more = random_samples(rng, 6, Polarity::kNontoxic);
  std::vector<LabeledSample> all = first;
  all.insert(all.end(), more.begin(), more.end());
  const Vocab vocab = vocab_of(all);

  ContextKeyConfig kc;
  kc.dim = 8;
  Datastore grown = build_datastore(first, vocab, kc, Polarity::kNontoxic);
  const Matrix before = grown.keys;
  const std::size_t added = append(grown, more, vocab);
  CHECK(grown.size() == before.rows() + added);
  CHECK((grown.keys.topRows(before.rows()) - before).cwiseAbs().maxCoeff() ==
        0.0);

  const Datastore direct = build_datastore(all, vocab, kc, Polarity::kNontoxic);
  CHECK(direct.size() == grown.size());
  CHECK((direct.keys - grown.keys).cwiseAbs().maxCoeff() == 0.0);
  CHECK(direct.values == grown.values);
}

TEST_CASE("nearest-neighbour search matches the exhaustive scan on "
          "randomized stores") {
  SplitMix64 rng(2024);
  for (int trial = 0; trial < 25; ++trial) {
    const int dim = 2 + static_cast<int>(rng.next_below(14));
    const int entries = 1 + static_cast<int>(rng.next_below(300));
    Datastore store;
    store.vocab_size = 40;
    store.key_config.dim = dim;
    store.keys = Matrix(entries, dim);
    for (int i = 0; i < entries; ++i) {
      for (int c = 0; c < dim; ++c)
        store.keys(i, c) = rng.next_double() * 2.0 - 1.0;
      store.values.push_back(static_cast<TokenId>(rng.next_below(40)));
    }
    const std::size_t k = 1 + rng.next_below(64);
    const Vector q = oracle::random_unit_vector(rng, dim);

    const auto fast = knn_search(store, q, k);
    const auto slow = oracle::knn_scan(store, q, k);
    REQUIRE(fast.size() == slow.size());
    for (std::size_t i = 0; i < fast.size(); ++i) {
      CHECK(fast[i].index == slow[i].index);
      CHECK(fast[i].value == slow[i].value);
      CHECK(fast[i].distance == doctest::Approx(slow[i].distance).epsilon(1e-12));
    }
  }
}

TEST_CASE("duplicate-key ties resolve toward the earlier entry") {
  Datastore store;
  store.vocab_size = 10;
  store.key_config.dim = 2;
  store.keys = Matrix(4, 2);
  store.keys << 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0;
  store.values = {5, 6, 7, 8};
  Vector q(2);
  q << 1.0, 0.0;
  const auto got = knn_search(store, q, 2);
  REQUIRE(got.size() == 2);
  CHECK(got[0].index == 0);
  CHECK(got[1].index == 1);
}

TEST_CASE("retrieval distribution matches its independent recomputation") {
  SplitMix64 rng(77);
  for (int trial = 0; trial < 15; ++trial) {
    const int dim = 4 + static_cast<int>(rng.next_below(8));
    const int entries = 5 + static_cast<int>(rng.next_below(200));
    Datastore store;
    store.vocab_size = 25;
    store.key_config.dim = dim;
    store.keys = Matrix(entries, dim);
    for (int i = 0; i < entries; ++i) {
      for (int c = 0; c < dim; ++c)
        store.keys(i, c) = rng.next_double() * 2.0 - 1.0;
      store.values.push_back(static_cast<TokenId>(rng.next_below(25)));
    }
    RetrievalConfig rc;
    rc.k = 1 + rng.next_below(entries + 10);
    rc.temperature = 0.25 + rng.next_double() * 4.0;
    const Vector q = oracle::random_unit_vector(rng, dim);

    const Vector fast = knn_logits(store, q, rc);
    const Vector slow = oracle::knn_log_distribution(store, q, rc);
    REQUIRE(fast.size() == slow.size());
    CHECK((fast - slow).cwiseAbs().maxCoeff() <= 1e-9);
    // it is a log distribution: exp sums to one
    CHECK(std::abs(fast.array().exp().sum() - 1.0) <= 1e-9);
  }
}

TEST_CASE("single-entry store puts almost all mass on its value") {
  Datastore store;
  store.vocab_size = 6;
  store.key_config.dim = 3;
  store.keys = Matrix::Zero(1, 3);
  store.values = {4};
  RetrievalConfig rc;
  rc.k = 8;
  const Vector logp = knn_logits(store, Vector::Zero(3), rc);
  const Vector p = logp.array().exp();
  CHECK(p[4] > 0.999);
  for (TokenId t = 0; t < 6; ++t)
    if (t != 4) CHECK(p[t] == doctest::Approx(1e-10 / p.sum()).epsilon(1e-3));
}

TEST_CASE("two equidistant values split the weight per the hand-computed "
          "softened distance rule") {
  // entries at distance 0 and distance 1 with temperature 1:
  // weights 1 and e^-1; p = [1, e^-1] / (1 + e^-1)
  Datastore store;
  store.vocab_size = 5;
  store.key_config.dim = 1;
  store.keys = Matrix(2, 1);
  store.keys << 0.0, 1.0;
  store.values = {2, 3};
  RetrievalConfig rc;
  rc.k = 2;
  rc.temperature = 1.0;
  const Vector p = knn_logits(store, Vector::Zero(1), rc).array().exp();
  const double w1 = 1.0, w2 = std::exp(-1.0);
  CHECK(p[2] == doctest::Approx(w1 / (w1 + w2)).epsilon(1e-9));
  CHECK(p[3] == doctest::Approx(w2 / (w1 + w2)).epsilon(1e-9));
}

TEST_CASE("datastore serialization round-trips bit-exactly") {
  SplitMix64 rng(55);
  const auto samples = random_samples(rng, 25, Polarity::kToxic);
  const Vocab vocab = vocab_of(samples);
  ContextKeyConfig kc;
  kc.dim = 12;
  kc.window = 3;
  kc.seed = 9;
  const Datastore store = build_datastore(samples, vocab, kc, Polarity::kToxic);

  testutil::TempDir dir("store_io");
  const std::string path = dir.file("polarity.dtkd");
  save_datastore(store, path);
  const Datastore back = load_datastore(path);

  CHECK(back.polarity == store.polarity);
  CHECK(back.key_config == store.key_config);
  CHECK(back.vocab_size == store.vocab_size);
  CHECK(back.values == store.values);
  CHECK(back.provenance == store.provenance);
  REQUIRE(back.keys.rows() == store.keys.rows());
  CHECK((back.keys - store.keys).cwiseAbs().maxCoeff() == 0.0);

  // saving the loaded copy reproduces the original bytes
  std::ostringstream first, second;
  save_datastore(store, first);
  save_datastore(back, second);
  CHECK(first.str() == second.str());
}

TEST_CASE("corrupted datastore files are rejected") {
  SplitMix64 rng(56);
  const auto samples = random_samples(rng, 5, Polarity::kNontoxic);
  const Vocab vocab = vocab_of(samples);
  ContextKeyConfig kc;
  const Datastore store =
      build_datastore(samples, vocab, kc, Polarity::kNontoxic);
  std::ostringstream out;
  save_datastore(store, out);
  std::string bytes = out.str();
  bytes[1] = '?';
  std::istringstream in(bytes);
  CHECK_THROWS(load_datastore(in));
}
