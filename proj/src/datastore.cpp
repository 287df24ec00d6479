#include "detox/datastore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "detox/io.hpp"

namespace detox {

namespace {

constexpr char kMagic[] = "DTKD";
constexpr std::uint32_t kVersion = 1;
constexpr double kUnretrievedFloor = 1e-10;

// Appends one sample's (key, next-token) entries to keys/values.
void add_entries(Datastore& store, const ContextKeyer& keyer,
                 const LabeledSample& sample, const Vocab& vocab,
                 std::vector<Vector>& new_keys,
                 std::vector<TokenId>& new_values) {
  const auto ids = tokenize(sample.text, vocab, sample.language).ids;
  for (std::size_t i = 1; i < ids.size(); ++i) {
    std::vector<TokenId> context(ids.begin(),
                                 ids.begin() + static_cast<std::ptrdiff_t>(i));
    new_keys.push_back(keyer.key(context));
    new_values.push_back(ids[i]);
  }
  store.provenance[sample.language] +=
      static_cast<std::uint64_t>(ids.size() - 1);
}

}  // namespace

Datastore build_datastore(const std::vector<LabeledSample>& samples,
                          const Vocab& vocab,
                          const ContextKeyConfig& key_config,
                          Polarity polarity) {
  if (samples.empty())
    throw std::invalid_argument("empty datastore source");
  Datastore store;
  store.polarity = polarity;
  store.key_config = key_config;
  store.vocab_size = static_cast<std::uint32_t>(vocab.size());
  store.keys.resize(0, static_cast<Eigen::Index>(key_config.dim));
  append(store, samples, vocab);
  return store;
}

Datastore build_datastore(const std::vector<LabeledSample>& samples,
                          const NgramLM& lm, const ContextKeyConfig& key_config,
                          Polarity polarity) {
  return build_datastore(samples, lm.vocab(), key_config, polarity);
}

std::size_t append(Datastore& store, const std::vector<LabeledSample>& samples,
                   const Vocab& vocab) {
  if (static_cast<std::uint32_t>(vocab.size()) != store.vocab_size)
    throw std::invalid_argument(
        "vocabulary size " + std::to_string(vocab.size()) +
        " does not match the one this store was built with (" +
        std::to_string(store.vocab_size) + ")");
  for (const auto& s : samples) {
    if (s.label != store.polarity)
      throw std::invalid_argument(std::string("sample labeled ") + to_string(s.label) +
                                  " offered to a " + to_string(store.polarity) +
                                  " datastore");
  }
  const ContextKeyer keyer(store.key_config, vocab.size());
  std::vector<Vector> new_keys;
  std::vector<TokenId> new_values;
  for (const auto& s : samples)
    add_entries(store, keyer, s, vocab, new_keys, new_values);

  const Eigen::Index old_rows = store.keys.rows();
  store.keys.conservativeResize(
      old_rows + static_cast<Eigen::Index>(new_keys.size()), store.keys.cols());
  for (std::size_t i = 0; i < new_keys.size(); ++i)
    store.keys.row(old_rows + static_cast<Eigen::Index>(i)) =
        new_keys[i].transpose();
  store.values.insert(store.values.end(), new_values.begin(),
                      new_values.end());
  return new_keys.size();
}

std::vector<Neighbor> knn_search(const Datastore& store, const Vector& query,
                                 std::size_t k) {
  if (query.size() != store.keys.cols())
    throw std::invalid_argument(
        "query dimension " + std::to_string(query.size()) +
        " does not match key dimension " + std::to_string(store.keys.cols()));
  const Vector dists =
      (store.keys.rowwise() - query.transpose()).rowwise().squaredNorm();
  std::vector<Neighbor> all(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    all[i].index = i;
    all[i].distance = dists[static_cast<Eigen::Index>(i)];
    all[i].value = store.values[i];
  }
  const std::size_t take = std::min(k, all.size());
  auto by_distance_then_index = [](const Neighbor& a, const Neighbor& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.index < b.index;
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take),
                    all.end(), by_distance_then_index);
  all.resize(take);
  return all;
}

Vector knn_logits(const Datastore& store, const Vector& query,
                  const RetrievalConfig& retrieval) {
  if (store.size() == 0)
    throw std::runtime_error("cannot retrieve from an empty datastore");
  if (retrieval.temperature <= 0.0)
    throw std::invalid_argument("retrieval temperature must be positive");
  const auto neighbors = knn_search(store, query, retrieval.k);
  const std::size_t vocab_size = store.vocab_size;

  // Weights are shifted by the nearest distance before exponentiation; the
  // shift cancels in the normalization but keeps the sum well away from
  // underflow.
  const double nearest = neighbors.front().distance;
  Vector p = Vector::Zero(static_cast<Eigen::Index>(vocab_size));
  for (const auto& n : neighbors) {
    p[store.values[n.index]] +=
        std::exp(-(n.distance - nearest) / retrieval.temperature);
  }
  p /= p.sum();

  for (Eigen::Index w = 0; w < p.size(); ++w)
    if (p[w] == 0.0) p[w] = kUnretrievedFloor;
  p /= p.sum();
  return p.array().log().matrix();
}

// ---------------------------------------------------------------------------

void save_datastore(const Datastore& store, std::ostream& out) {
  BinaryWriter w(out);
  w.magic(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(store.keys.cols()));
  w.u32(store.vocab_size);
  w.u64(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    for (Eigen::Index j = 0; j < store.keys.cols(); ++j)
      w.f64(store.keys(static_cast<Eigen::Index>(i), j));
    w.u32(static_cast<std::uint32_t>(store.values[i]));
  }
  nlohmann::json meta;
  meta["polarity"] = to_string(store.polarity);
  meta["key"] = {{"dim", store.key_config.dim},
                 {"window", store.key_config.window},
                 {"seed", std::to_string(store.key_config.seed)}};
  auto prov = nlohmann::json::array();
  for (const auto& [lang, count] : store.provenance)
    prov.push_back({lang, count});
  meta["provenance"] = prov;
  w.str(meta.dump());
}

void save_datastore(const Datastore& store, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  save_datastore(store, out);
  if (!out) throw std::runtime_error("write failed: " + path);
}

Datastore load_datastore(std::istream& in) {
  BinaryReader r(in);
  r.expect_magic(kMagic);
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw std::runtime_error("unsupported datastore version " +
                             std::to_string(version));
  Datastore store;
  const std::uint32_t dim = r.u32();
  store.vocab_size = r.u32();
  const std::uint64_t count = r.u64();
  store.keys.resize(static_cast<Eigen::Index>(count),
                    static_cast<Eigen::Index>(dim));
  store.values.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    for (std::uint32_t j = 0; j < dim; ++j)
      store.keys(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          r.f64();
    store.values[i] = static_cast<TokenId>(r.u32());
  }
  const nlohmann::json meta = nlohmann::json::parse(r.str());
  const std::string polarity = meta.at("polarity").get<std::string>();
  if (polarity == "toxic") {
    store.polarity = Polarity::kToxic;
  } else if (polarity == "nontoxic") {
    store.polarity = Polarity::kNontoxic;
  } else {
    throw std::runtime_error("datastore has unknown polarity: " + polarity);
  }
  store.key_config.dim = meta.at("key").at("dim").get<std::size_t>();
  store.key_config.window = meta.at("key").at("window").get<std::size_t>();
  store.key_config.seed =
      std::stoull(meta.at("key").at("seed").get<std::string>());
  if (store.key_config.dim != static_cast<int>(dim))
    throw std::runtime_error("datastore key dimension mismatch");
  for (const auto& entry : meta.at("provenance"))
    store.provenance[entry.at(0).get<std::string>()] =
        entry.at(1).get<std::uint64_t>();
  return store;
}

Datastore load_datastore(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open datastore file: " + path);
  return load_datastore(in);
}

}  // namespace detox
