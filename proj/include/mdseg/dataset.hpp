#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdseg/tensor.hpp"

namespace mdseg {

enum class Split : std::uint8_t { Train = 0, Test = 1 };

std::string to_string(Split split);

/// One grayscale image in [0, 1] with shape (1, H, W), its binary structure mask and domain index.
struct ImageSample {
  Tensor<float> image;
  Mask mask;
  int domain = 0;
};

/// One split of a multi-domain dataset: samples[d] holds the N_d images of domain d.
struct Dataset {
  Split split = Split::Train;
  std::uint64_t seed = 0;
  std::vector<std::string> domain_names;
  std::vector<std::vector<ImageSample>> samples;

  int num_domains() const noexcept { return static_cast<int>(samples.size()); }
  std::size_t count(int domain) const { return samples.at(static_cast<std::size_t>(domain)).size(); }
  std::size_t total() const noexcept {
    std::size_t n = 0;
    for (const auto& s : samples) n += s.size();
    return n;
  }
  /// Single-domain view with the selected domain renumbered to 0.
  Dataset select_domain(int domain) const;
};

}  // namespace mdseg
