#include "unadapt/util.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "unadapt/error.hpp"

namespace unadapt {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

std::uint64_t fnv1a_u64(std::uint64_t value, std::uint64_t h) {
  char raw[8];
  std::memcpy(raw, &value, 8);
  return fnv1a(std::string_view(raw, 8), h);
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t a,
                          std::uint64_t b) {
  std::uint64_t h = fnv1a_u64(base);
  h = fnv1a(tag, h);
  h = fnv1a_u64(a, h);
  return fnv1a_u64(b, h);
}

std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = kDigits[v & 0xf];
    v >>= 4;
  }
  return out;
}

std::string trim(std::string_view s) {
  auto first = std::find_if_not(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
  auto last = std::find_if_not(s.rbegin(), s.rend(), [](unsigned char c) { return std::isspace(c); });
  if (first == s.end()) return {};
  return std::string(first, last.base());
}

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw RuntimeFailure("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void fill_normal(std::span<double> out, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : out) v = dist(rng);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

void BinaryWriter::u32(std::uint32_t v) {
  char raw[4];
  std::memcpy(raw, &v, 4);
  buf_.append(raw, 4);
}

void BinaryWriter::u64(std::uint64_t v) {
  char raw[8];
  std::memcpy(raw, &v, 8);
  buf_.append(raw, 8);
}

void BinaryWriter::f32(float v) {
  char raw[4];
  std::memcpy(raw, &v, 4);
  buf_.append(raw, 4);
}

void BinaryWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.append(s);
}

BinaryReader::BinaryReader(std::string data, std::string context)
    : data_(std::move(data)), context_(std::move(context)) {}

void BinaryReader::need(std::size_t n) {
  if (data_.size() - pos_ < n)
    throw ParseError(context_ + ": truncated at byte " + std::to_string(pos_));
}

std::string BinaryReader::bytes(std::size_t n) {
  need(n);
  std::string out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::uint8_t BinaryReader::u8() {
  need(1);
  return static_cast<std::uint8_t>(data_[pos_++]);
}

std::uint32_t BinaryReader::u32() {
  need(4);
  std::uint32_t v;
  std::memcpy(&v, data_.data() + pos_, 4);
  pos_ += 4;
  return v;
}

std::uint64_t BinaryReader::u64() {
  need(8);
  std::uint64_t v;
  std::memcpy(&v, data_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

float BinaryReader::f32() {
  need(4);
  float v;
  std::memcpy(&v, data_.data() + pos_, 4);
  pos_ += 4;
  return v;
}

std::string BinaryReader::str() {
  std::uint32_t n = u32();
  return bytes(n);
}

}  // namespace unadapt
