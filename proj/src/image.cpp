#include "unadapt/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <regex>
#include <sstream>

#include "unadapt/error.hpp"
#include "unadapt/util.hpp"

namespace unadapt {

namespace {

Image load_npy(const std::filesystem::path& path) {
  std::string raw = read_file(path);
  const std::string ctx = path.string();
  if (raw.size() < 10 || raw.compare(0, 6, "\x93NUMPY") != 0) throw ParseError(ctx + ": not an npy file");
  const auto major = static_cast<unsigned char>(raw[6]);
  std::size_t header_len = 0;
  std::size_t offset = 0;
  if (major == 1) {
    header_len = static_cast<unsigned char>(raw[8]) | (static_cast<unsigned char>(raw[9]) << 8);
    offset = 10;
  } else {
    if (raw.size() < 12) throw ParseError(ctx + ": truncated npy header");
    std::uint32_t len;
    std::memcpy(&len, raw.data() + 8, 4);
    header_len = len;
    offset = 12;
  }
  if (raw.size() < offset + header_len) throw ParseError(ctx + ": truncated npy header");
  std::string header = raw.substr(offset, header_len);
  if (header.find("'descr': '<f4'") == std::string::npos) {
    throw ParseError(ctx + ": only little-endian float32 arrays are supported");
  }
  if (header.find("'fortran_order': False") == std::string::npos) {
    throw ParseError(ctx + ": fortran-ordered arrays are not supported");
  }
  std::smatch m;
  static const std::regex shape_re(R"('shape':\s*\(([^)]*)\))");
  if (!std::regex_search(header, m, shape_re)) throw ParseError(ctx + ": npy header has no shape");
  std::vector<std::size_t> dims;
  std::stringstream ss(m[1].str());
  for (std::string tok; std::getline(ss, tok, ',');) {
    tok = trim(tok);
    if (!tok.empty()) dims.push_back(std::stoul(tok));
  }
  if (dims.size() == 2) dims.insert(dims.begin(), 1);
  if (dims.size() != 3) throw ParseError(ctx + ": expected a 2-D or 3-D array");
  Image img(dims[0], dims[1], dims[2]);
  const std::size_t bytes = img.pixels.size() * sizeof(float);
  if (raw.size() - offset - header_len != bytes) throw ParseError(ctx + ": payload size mismatch");
  std::memcpy(img.pixels.data(), raw.data() + offset + header_len, bytes);
  return img;
}

Image load_pgm(const std::filesystem::path& path) {
  std::string raw = read_file(path);
  const std::string ctx = path.string();
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < raw.size()) {
      if (raw[pos] == '#') {
        while (pos < raw.size() && raw[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(raw[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    std::size_t start = pos;
    while (pos < raw.size() && !std::isspace(static_cast<unsigned char>(raw[pos]))) ++pos;
    if (start == pos) throw ParseError(ctx + ": truncated PGM header");
    return raw.substr(start, pos - start);
  };
  std::string magic = next_token();
  if (magic != "P5" && magic != "P2") throw ParseError(ctx + ": not a PGM file");
  std::size_t w = std::stoul(next_token());
  std::size_t h = std::stoul(next_token());
  unsigned long maxval = std::stoul(next_token());
  if (maxval == 0 || maxval > 65535) throw ParseError(ctx + ": bad PGM maxval");
  Image img(1, h, w);
  if (magic == "P2") {
    for (auto& p : img.pixels) p = static_cast<float>(std::stoul(next_token())) / maxval;
    return img;
  }
  ++pos;  // single whitespace after maxval
  const std::size_t bpp = maxval > 255 ? 2 : 1;
  if (raw.size() < pos + w * h * bpp) throw ParseError(ctx + ": truncated PGM payload");
  for (std::size_t i = 0; i < w * h; ++i) {
    unsigned v = bpp == 1 ? static_cast<unsigned char>(raw[pos + i])
                          : (static_cast<unsigned char>(raw[pos + 2 * i]) << 8) |
                                static_cast<unsigned char>(raw[pos + 2 * i + 1]);
    img.pixels[i] = static_cast<float>(v) / maxval;
  }
  return img;
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  if (ext == ".npy") return load_npy(path);
  if (ext == ".pgm") return load_pgm(path);
  throw DataError(path.string() + ": unsupported image format (use .npy or .pgm)");
}

void save_npy(const Image& image, const std::filesystem::path& path) {
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" +
                       std::to_string(image.channels) + ", " + std::to_string(image.height) +
                       ", " + std::to_string(image.width) + "), }";
  // Pad so the payload starts on a 64-byte boundary, header ends with '\n'.
  std::size_t total = 10 + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header.push_back('\n');
  std::string out = "\x93NUMPY";
  out.push_back('\x01');
  out.push_back('\x00');
  out.push_back(static_cast<char>(header.size() & 0xff));
  out.push_back(static_cast<char>(header.size() >> 8));
  out += header;
  out.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size() * sizeof(float));
  write_file_atomic(path, out);
}

Image resize_bilinear(const Image& src, std::size_t height, std::size_t width) {
  if (src.height == height && src.width == width) return src;
  Image dst(src.channels, height, width);
  const double sy = static_cast<double>(src.height) / height;
  const double sx = static_cast<double>(src.width) / width;
  for (std::size_t y = 0; y < height; ++y) {
    double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    auto y0 = static_cast<std::size_t>(fy);
    std::size_t y1 = std::min(y0 + 1, src.height - 1);
    double wy = fy - y0;
    for (std::size_t x = 0; x < width; ++x) {
      double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      auto x0 = static_cast<std::size_t>(fx);
      std::size_t x1 = std::min(x0 + 1, src.width - 1);
      double wx = fx - x0;
      for (std::size_t c = 0; c < src.channels; ++c) {
        double top = src.at(c, y0, x0) * (1 - wx) + src.at(c, y0, x1) * wx;
        double bot = src.at(c, y1, x0) * (1 - wx) + src.at(c, y1, x1) * wx;
        dst.at(c, y, x) = static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
  }
  return dst;
}

}  // namespace unadapt
