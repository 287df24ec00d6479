#include "detox/vocab.hpp"

#include <cctype>
#include <stdexcept>

namespace detox {

Vocab::Vocab() {
  add("<s>");
  add("</s>");
  add("<unk>");
}

Vocab::Vocab(const std::vector<std::string>& corpus_tokens) : Vocab() {
  for (const auto& t : corpus_tokens) add(t);
}

TokenId Vocab::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  TokenId id = static_cast<TokenId>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

TokenId Vocab::lookup(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(const std::string& token) const {
  return index_.count(token) > 0;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("token id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (unsigned char c : text) {
    if (c < 0x80 && std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      cur.push_back(static_cast<char>(c));
    }
  }
  flush();
  return out;
}

TokenSequence tokenize(const std::string& text, const Vocab& vocab,
                       const std::string& language) {
  TokenSequence seq;
  seq.language = language;
  seq.ids.push_back(Vocab::kBos);
  for (const auto& w : split_words(text)) seq.ids.push_back(vocab.lookup(w));
  seq.ids.push_back(Vocab::kEos);
  return seq;
}

std::string detokenize(const std::vector<TokenId>& ids, const Vocab& vocab) {
  std::string out;
  for (TokenId id : ids) {
    if (id == Vocab::kBos || id == Vocab::kEos) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token(id);
  }
  return out;
}

Vocab build_vocab(const std::vector<std::string>& texts) {
  Vocab v;
  for (const auto& t : texts)
    for (const auto& w : split_words(t)) v.add(w);
  return v;
}

}  // namespace detox
