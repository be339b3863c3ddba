#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdseg/layers.hpp"

namespace mdseg {

struct GradCheckEntry {
  std::string name;  // "input", "weights" or "bias"
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

struct GradCheckReport {
  LayerSpec layer;
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct GradCheckOptions {
  double step = 1e-4;
  /// Spatial extent of the random input; 0 picks a size that suits the layer.
  int extent = 0;
  /// Tensors larger than this are checked on a seeded random subset of coordinates.
  std::size_t max_coordinates = 256;
};

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

/// Compares the analytical backward pass of `layer` against central finite differences
/// in double precision on a seeded random input, parameter set and upstream gradient.
GradCheckReport grad_check(const LayerSpec& layer, std::uint64_t seed, double tolerance,
                           const GradCheckOptions& options = {});

std::string describe(const GradCheckReport& report);

}  // namespace mdseg
