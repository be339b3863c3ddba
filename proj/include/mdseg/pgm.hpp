#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdseg/tensor.hpp"

namespace mdseg {

/// 8-bit grayscale raster as stored in a binary (P5) PGM file.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

/// Throws FilesystemError when the file cannot be opened and FormatError on a bad header
/// or truncated raster. maxval must be <= 255.
GrayImage read_pgm(const std::string& path);
void write_pgm(const std::string& path, const GrayImage& image);

std::vector<std::uint8_t> encode_pgm(const GrayImage& image);
GrayImage decode_pgm(const std::vector<std::uint8_t>& bytes);

/// [0,1] image (1, H, W) <-> 8-bit raster (round to nearest level).
GrayImage to_gray(const Tensor<float>& image);
Tensor<float> from_gray(const GrayImage& gray);

/// Binary mask <-> {0, 255} raster; any nonzero pixel reads back as foreground.
GrayImage mask_to_gray(const Mask& mask);
Mask mask_from_gray(const GrayImage& gray);

}  // namespace mdseg
