#pragma once

// Deterministic synthetic ultrasound-like phantoms. Each domain is a shape family
// rendered with distinct interior/exterior echogenicity, a blurred (fuzzy) border,
// multiplicative speckle and occasional acoustic-shadow wedges.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mdseg/dataset.hpp"

namespace mdseg {

using Rng = std::mt19937_64;

enum class ShapeFamily : std::uint8_t { EllipseRing = 0, ConvexBlob = 1, BilobedBlob = 2 };

std::string to_string(ShapeFamily family);
ShapeFamily parse_shape_family(const std::string& name);

struct ShadowParams {
  double factor_min = 0.35;
  double factor_max = 0.65;
  double half_width_min_deg = 4.0;
  double half_width_max_deg = 9.0;
  /// Maximum tilt of the wedge axis away from straight down.
  double max_tilt_deg = 25.0;

  friend bool operator==(const ShadowParams&, const ShadowParams&) = default;
};

struct DomainSpec {
  std::string name;
  ShapeFamily family = ShapeFamily::ConvexBlob;
  /// Characteristic radius as a fraction of the image extent.
  double size_min = 0.2;
  double size_max = 0.3;
  double eccentricity_min = 0.0;
  double eccentricity_max = 0.5;
  double interior_mean = 0.25;
  double exterior_mean = 0.55;
  double shadow_probability = 0.3;
  /// Variance of the unit-mean speckle multiplier.
  double speckle_strength = 0.06;
  /// Gaussian border blur in pixels at 64x64, scaled with resolution.
  double blur_sigma = 1.0;
  ShadowParams shadow;

  void validate() const;
  friend bool operator==(const DomainSpec&, const DomainSpec&) = default;
};

/// Sampled geometry of one structure. Radii and centre are in pixels.
struct ShapeParams {
  ShapeFamily family = ShapeFamily::ConvexBlob;
  double cx = 0, cy = 0;
  double radius = 0;       // semi-major axis (ellipse) or base radius (blob, lobes)
  double eccentricity = 0;
  double angle = 0;        // orientation in radians
  double harmonic2 = 0;    // convex blob: relative amplitude of cos(2 phi)
  double harmonic3 = 0;    // convex blob: relative amplitude of cos(3 phi + phase3)
  double phase3 = 0;
  double lobe_offset = 0;  // bilobed: distance of each lobe centre from (cx, cy)

  /// Continuous area of the shape in square pixels (unclipped; bilobed returns the lobe sum).
  double area() const;
  bool contains(double x, double y) const;
};

ShapeParams sample_shape(const DomainSpec& spec, int resolution, Rng& rng);

/// Pixel-centre rasterization reduced to its largest 4-connected component.
Mask rasterize(const ShapeParams& shape, int resolution);

/// Noise-free render: exterior/interior means, the bright ring for EllipseRing, border blur.
Tensor<float> render_clean(const ShapeParams& shape, const Mask& mask, const DomainSpec& spec, int resolution);

/// pixel <- clamp(pixel * n, 0, 1), n ~ Gamma(shape = 1/strength, scale = strength).
Tensor<float> apply_speckle(const Tensor<float>& image, Rng& rng, double strength);

struct ShadowWedge {
  double apex_x = 0, apex_y = 0;
  double direction = 0;   // radians, image coordinates (y down)
  double half_width = 0;  // radians
  double factor = 1.0;

  bool contains(int x, int y) const;
};

/// Attenuates a wedge hanging from a random apex on the top edge.
Tensor<float> apply_shadow(const Tensor<float>& image, Rng& rng, const ShadowParams& params,
                           ShadowWedge* wedge = nullptr);

/// One phantom; `domain` is copied into the sample. Pixels are quantized to 8-bit levels.
ImageSample generate_sample(const DomainSpec& spec, int resolution, Rng& rng, int domain = 0);

struct DomainConfig {
  DomainSpec spec;
  int n_train = 0;
  int n_test = 0;
  friend bool operator==(const DomainConfig&, const DomainConfig&) = default;
};

struct DatasetConfig {
  int resolution = 64;
  std::vector<DomainConfig> domains;

  void validate() const;

  /// ob_head (ellipse_ring), a2c (convex_blob), a4c (bilobed_blob); 500 train / 100 test each.
  static DatasetConfig default_config();
  /// default_config with only 20 training images in the third domain.
  static DatasetConfig scarce_config();
  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

/// Seed of sample `index` of `domain` in `split`; splits and domains draw from disjoint streams.
std::uint64_t sample_seed(std::uint64_t seed, Split split, int domain, int index);

Dataset generate_split(const DatasetConfig& config, std::uint64_t seed, Split split);

struct ManifestEntry {
  std::string image;
  std::string mask;
  int domain = 0;
  Split split = Split::Train;
};

struct Manifest {
  std::uint64_t seed = 0;
  int resolution = 0;
  std::vector<std::string> domain_names;
  std::vector<std::string> domain_families;
  std::vector<int> n_train, n_test;
  std::vector<ManifestEntry> entries;
};

/// Writes <out_dir>/<split>/<domain>/<index>_{image,mask}.pgm plus <out_dir>/manifest.json.
Manifest generate_dataset(const DatasetConfig& config, std::uint64_t seed, const std::string& out_dir);

Manifest read_manifest(const std::string& dataset_dir);
void write_manifest(const Manifest& manifest, const std::string& path);

/// Loads one split of a dataset written by generate_dataset.
Dataset load_dataset(const std::string& dataset_dir, Split split);

}  // namespace mdseg
