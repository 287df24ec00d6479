#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace detox {

// Dense math types. Logits, distributions and context keys are all
// double-precision column vectors; datastore keys are stacked as rows.
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

using TokenId = std::int32_t;

/// A tokenized text with its language tag.
struct TokenSequence {
  std::vector<TokenId> ids;
  std::string language;
};

enum class Polarity { kToxic, kNontoxic };

inline const char* to_string(Polarity p) {
  return p == Polarity::kToxic ? "toxic" : "nontoxic";
}

}  // namespace detox
