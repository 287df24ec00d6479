#include "detox/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace detox {

namespace {
constexpr std::uint32_t kLmVersion = 1;
}

void BinaryWriter::magic(const char tag[4]) { out_.write(tag, 4); }

void BinaryWriter::u8(std::uint8_t v) {
  out_.put(static_cast<char>(v));
}

void BinaryWriter::u32(std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out_.write(b, 4);
}

void BinaryWriter::u64(std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out_.write(b, 8);
}

void BinaryWriter::f64(double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  u64(bits);
}

void BinaryWriter::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  out_.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void BinaryReader::expect_magic(const char tag[4]) {
  char b[4];
  in_.read(b, 4);
  if (!in_ || std::memcmp(b, tag, 4) != 0)
    throw std::runtime_error(std::string("bad magic, expected ") +
                             std::string(tag, 4));
}

std::uint8_t BinaryReader::u8() {
  int c = in_.get();
  if (c == EOF) throw std::runtime_error("unexpected end of file");
  return static_cast<std::uint8_t>(c);
}

std::uint32_t BinaryReader::u32() {
  unsigned char b[4];
  in_.read(reinterpret_cast<char*>(b), 4);
  if (!in_) throw std::runtime_error("unexpected end of file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t BinaryReader::u64() {
  unsigned char b[8];
  in_.read(reinterpret_cast<char*>(b), 8);
  if (!in_) throw std::runtime_error("unexpected end of file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double BinaryReader::f64() {
  std::uint64_t bits = u64();
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

std::string BinaryReader::str() {
  std::uint32_t len = u32();
  std::string s(len, '\0');
  in_.read(s.data(), static_cast<std::streamsize>(len));
  if (!in_) throw std::runtime_error("unexpected end of file");
  return s;
}

void save_lm(const NgramLM& lm, std::ostream& out) {
  BinaryWriter w(out);
  w.magic("DTK1");
  w.u32(kLmVersion);

  const Vocab& v = lm.vocab();
  w.u32(static_cast<std::uint32_t>(v.size()));
  for (const auto& tok : v.tokens()) w.str(tok);
  w.u32(static_cast<std::uint32_t>(Vocab::kBos));
  w.u32(static_cast<std::uint32_t>(Vocab::kEos));
  w.u32(static_cast<std::uint32_t>(Vocab::kUnk));

  w.u32(static_cast<std::uint32_t>(lm.order()));
  for (double l : lm.smoothing().lambdas) w.f64(l);
  w.f64(lm.smoothing().add_k);
  w.u64(lm.trained_tokens());
  for (const auto& table : lm.tables()) {
    w.u64(table.size());
    for (const auto& [ctx, cc] : table) {
      for (TokenId id : ctx) w.u32(static_cast<std::uint32_t>(id));
      w.u32(static_cast<std::uint32_t>(cc.counts.size()));
      for (const auto& [tok, count] : cc.counts) {
        w.u32(static_cast<std::uint32_t>(tok));
        w.u64(count);
      }
    }
  }
}

NgramLM load_lm(std::istream& in) {
  BinaryReader r(in);
  r.expect_magic("DTK1");
  const std::uint32_t version = r.u32();
  if (version != kLmVersion)
    throw std::runtime_error("unsupported DTK1 version " +
                             std::to_string(version));

  const std::uint32_t vsize = r.u32();
  auto vocab = std::make_shared<Vocab>();
  for (std::uint32_t i = 0; i < vsize; ++i) {
    const std::string tok = r.str();
    if (i < 3) {
      if (vocab->token(static_cast<TokenId>(i)) != tok)
        throw std::runtime_error("unsupported vocab layout in DTK1 file");
      continue;
    }
    vocab->add(tok);
  }
  if (r.u32() != static_cast<std::uint32_t>(Vocab::kBos) ||
      r.u32() != static_cast<std::uint32_t>(Vocab::kEos) ||
      r.u32() != static_cast<std::uint32_t>(Vocab::kUnk))
    throw std::runtime_error("unsupported special-token layout in DTK1 file");

  const int order = static_cast<int>(r.u32());
  SmoothingConfig smoothing;
  smoothing.lambdas.resize(static_cast<std::size_t>(order));
  for (double& l : smoothing.lambdas) l = r.f64();
  smoothing.add_k = r.f64();
  const std::uint64_t trained = r.u64();

  NgramLM lm(order, smoothing, vocab);
  for (int o = 1; o <= order; ++o) {
    auto& table = lm.mutable_tables()[static_cast<std::size_t>(o - 1)];
    const std::uint64_t n_ctx = r.u64();
    for (std::uint64_t c = 0; c < n_ctx; ++c) {
      std::vector<TokenId> ctx(static_cast<std::size_t>(o - 1));
      for (TokenId& id : ctx) id = static_cast<TokenId>(r.u32());
      NgramLM::ContextCounts cc;
      const std::uint32_t n_targets = r.u32();
      for (std::uint32_t t = 0; t < n_targets; ++t) {
        const TokenId tok = static_cast<TokenId>(r.u32());
        const std::uint64_t count = r.u64();
        cc.counts[tok] = count;
        cc.total += count;
      }
      table.emplace(std::move(ctx), std::move(cc));
    }
  }
  lm.set_trained_tokens(trained);
  return lm;
}

void save_lm(const NgramLM& lm, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  save_lm(lm, out);
  if (!out) throw std::runtime_error("write failed: " + path);
}

NgramLM load_lm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  return load_lm(in);
}

std::string lm_to_bytes(const NgramLM& lm) {
  std::ostringstream out(std::ios::binary);
  save_lm(lm, out);
  return out.str();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace detox
