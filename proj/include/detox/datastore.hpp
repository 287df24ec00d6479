#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "detox/context_key.hpp"
#include "detox/corpus.hpp"
#include "detox/ngram_lm.hpp"
#include "detox/types.hpp"
#include "detox/vocab.hpp"

namespace detox {

/// Retrieval-time knobs: neighbours fetched per query and the distance
/// temperature that turns squared distances into weights.
struct RetrievalConfig {
  std::size_t k = 1024;
  double temperature = 200.0;
};

/// A single-polarity retrieval store: one (context key, next token) entry
/// per training-token position. Rows of `keys` align with `values`.
struct Datastore {
  Polarity polarity = Polarity::kNontoxic;
  ContextKeyConfig key_config;
  std::uint32_t vocab_size = 0;
  Matrix keys;                // entries x key dim
  std::vector<TokenId> values;
  std::map<std::string, std::uint64_t> provenance;  // language -> entry count

  std::size_t size() const { return values.size(); }
  Eigen::Index dim() const { return keys.cols(); }
};

/// Builds a store from samples of the matching polarity; one entry per
/// predicted position (targets include the end marker, the begin marker is
/// context only). Throws on an empty source or a polarity mismatch.
Datastore build_datastore(const std::vector<LabeledSample>& samples,
                          const Vocab& vocab, const ContextKeyConfig& key_config,
                          Polarity polarity);

/// Convenience overload keyed off a trained model's vocabulary.
Datastore build_datastore(const std::vector<LabeledSample>& samples,
                          const NgramLM& lm, const ContextKeyConfig& key_config,
                          Polarity polarity);

/// Appends entries for new samples. Existing rows are never touched, so
/// entry indices are stable across growth. Returns the number of entries
/// added. The vocabulary must be the one the store was built with.
std::size_t append(Datastore& store, const std::vector<LabeledSample>& samples,
                   const Vocab& vocab);

struct Neighbor {
  std::size_t index = 0;
  double distance = 0.0;  // squared L2
  TokenId value = 0;
};

/// Exact k-nearest-neighbour scan; ties break toward the earlier entry.
/// Returns min(k, size) neighbours ordered by (distance, index).
std::vector<Neighbor> knn_search(const Datastore& store, const Vector& query,
                                 std::size_t k);

/// Retrieval distribution over the full vocabulary as log probabilities:
/// neighbour weights exp(-distance/temperature) are accumulated per token
/// and normalized; tokens never retrieved get a tiny floor (1e-10) before a
/// final renormalization so every log is finite.
Vector knn_logits(const Datastore& store, const Vector& query,
                  const RetrievalConfig& retrieval);

// Binary serialization (round-trips bit-exactly).
void save_datastore(const Datastore& store, std::ostream& out);
void save_datastore(const Datastore& store, const std::string& path);
Datastore load_datastore(std::istream& in);
Datastore load_datastore(const std::string& path);

}  // namespace detox
