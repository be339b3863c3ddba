#include "mdseg/pgm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

namespace mdseg {

std::vector<std::uint8_t> encode_pgm(const GrayImage& image) {
  const std::string header =
      "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

GrayImage decode_pgm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    long value = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      value = value * 10 + (bytes[pos] - '0');
      if (value > 1 << 20) throw FormatError(std::string("PGM ") + what + " too large", start);
      ++pos;
    }
    if (pos == start) throw FormatError(std::string("PGM header: expected ") + what, start);
    return static_cast<int>(value);
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError("not a binary PGM (P5) file", 0);
  pos = 2;
  GrayImage img;
  img.width = read_int("width");
  img.height = read_int("height");
  const int maxval = read_int("maxval");
  if (img.width < 1 || img.height < 1) throw FormatError("PGM extents must be >= 1", pos);
  if (maxval < 1 || maxval > 255) throw FormatError("PGM maxval must be in [1, 255]", pos);
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("PGM header not terminated", pos);
  ++pos;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  if (bytes.size() - pos < n) throw FormatError("PGM raster truncated", bytes.size());
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  if (maxval != 255) {
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(std::lround(255.0 * std::min<int>(p, maxval) / maxval));
  }
  return img;
}

GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FilesystemError("cannot open image", path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_pgm(bytes);
}

void write_pgm(const std::string& path, const GrayImage& image) {
  const auto bytes = encode_pgm(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FilesystemError("cannot write image", path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FilesystemError("write failed", path);
}

GrayImage to_gray(const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(0) != 1) throw DimensionError("expected a (1, H, W) image");
  GrayImage g{image.dim(2), image.dim(1), std::vector<std::uint8_t>(image.size())};
  for (std::size_t i = 0; i < image.size(); ++i)
    g.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image[i], 0.0f, 1.0f) * 255.0f));
  return g;
}

Tensor<float> from_gray(const GrayImage& gray) {
  Tensor<float> t({1, gray.height, gray.width});
  for (std::size_t i = 0; i < gray.pixels.size(); ++i) t[i] = static_cast<float>(gray.pixels[i]) / 255.0f;
  return t;
}

GrayImage mask_to_gray(const Mask& mask) {
  GrayImage g{mask.width, mask.height, std::vector<std::uint8_t>(mask.size())};
  for (std::size_t i = 0; i < mask.size(); ++i) g.pixels[i] = mask.data[i] ? 255 : 0;
  return g;
}

Mask mask_from_gray(const GrayImage& gray) {
  Mask m(gray.height, gray.width);
  for (std::size_t i = 0; i < gray.pixels.size(); ++i) m.data[i] = gray.pixels[i] != 0;
  return m;
}

}  // namespace mdseg
