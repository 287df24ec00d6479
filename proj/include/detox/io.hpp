#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "detox/ngram_lm.hpp"

namespace detox {

// Explicit little-endian primitives shared by the DTK1/DTKD formats.
class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}
  void magic(const char tag[4]);
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void str(const std::string& s);  // u32 length + bytes

 private:
  std::ostream& out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& in) : in_(in) {}
  void expect_magic(const char tag[4]);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str();

 private:
  std::istream& in_;
};

/// Serializes vocab + model as one versioned "DTK1" blob.
void save_lm(const NgramLM& lm, std::ostream& out);
void save_lm(const NgramLM& lm, const std::string& path);
NgramLM load_lm(std::istream& in);
NgramLM load_lm(const std::string& path);

/// DTK1 bytes of an LM; used both for artifact hashing and determinism checks.
std::string lm_to_bytes(const NgramLM& lm);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace detox
