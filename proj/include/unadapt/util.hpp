#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace unadapt {

using Vector = std::vector<double>;

// 64-bit FNV-1a. Stable across platforms and runs, unlike std::hash.
constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;

constexpr std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t fnv1a_u64(std::uint64_t value, std::uint64_t h = kFnvOffset);

// Derive an independent stream seed from a base seed and a list of tags.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t a = 0,
                          std::uint64_t b = 0);

std::string hex64(std::uint64_t v);

std::string trim(std::string_view s);
bool is_blank(std::string_view s);

std::string read_file(const std::filesystem::path& path);

// Write to a sibling temp file then rename over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

// Gaussian fill from a dedicated engine; used for seeded weight init.
void fill_normal(std::span<double> out, std::mt19937_64& rng, double stddev);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
bool all_finite(std::span<const double> a);

// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> v);

// Little-endian binary helpers for the checkpoint and cache formats.
class BinaryWriter {
 public:
  void bytes(std::string_view b) { buf_.append(b); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void str(std::string_view s);
  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

class BinaryReader {
 public:
  BinaryReader(std::string data, std::string context);
  std::string bytes(std::size_t n);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  std::string str();
  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n);
  std::string data_;
  std::string context_;
  std::size_t pos_ = 0;
};

}  // namespace unadapt
