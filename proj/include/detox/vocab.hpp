#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "detox/types.hpp"

namespace detox {

// Word-level vocabulary. Ids are dense 0..V-1 with the three specials in
// front, so corpus tokens start at id 3.
class Vocab {
 public:
  static constexpr TokenId kBos = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kUnk = 2;

  Vocab();
  explicit Vocab(const std::vector<std::string>& corpus_tokens);

  /// Adds a token if absent; returns its id either way.
  TokenId add(const std::string& token);

  /// Id of `token`, or kUnk if unknown.
  TokenId lookup(const std::string& token) const;

  bool contains(const std::string& token) const;

  const std::string& token(TokenId id) const;

  TokenId size() const { return static_cast<TokenId>(tokens_.size()); }

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Splits UTF-8 text into word-level tokens: maximal runs of
/// non-space, non-ASCII-punctuation bytes, with each punctuation
/// character emitted as its own token. Bytes >= 0x80 count as word bytes.
std::vector<std::string> split_words(const std::string& text);

/// Tokenizes text against a fixed vocabulary. Unknown words map to UNK;
/// the result is framed as [BOS, ..., EOS]. Empty text gives [BOS, EOS].
TokenSequence tokenize(const std::string& text, const Vocab& vocab,
                       const std::string& language = "");

/// Joins token strings with single spaces; BOS/EOS are dropped.
std::string detokenize(const std::vector<TokenId>& ids, const Vocab& vocab);

/// Builds a vocabulary from raw texts in first-appearance order.
Vocab build_vocab(const std::vector<std::string>& texts);

}  // namespace detox
