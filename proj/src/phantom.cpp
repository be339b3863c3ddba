#include "mdseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mdseg/parallel.hpp"
#include "mdseg/pgm.hpp"

namespace mdseg {

namespace {

constexpr double kPi = std::numbers::pi;
// Bilobed family: lobe semi-axis relative to the base radius, and lobe-centre offset.
constexpr double kLobeScale = 0.8;
constexpr double kLobeOffset = 0.6;
constexpr float kRingIntensity = 0.85f;

double uniform(Rng& rng, double lo, double hi) {
  return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
}

bool in_ellipse(double dx, double dy, double a, double b, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  const double u = c * dx + s * dy, v = -s * dx + c * dy;
  return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Tensor<float> gaussian_blur(const Tensor<float>& image, double sigma) {
  if (sigma <= 0.0) return image;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= sum;
  const int h = image.dim(1), w = image.dim(2);
  Tensor<float> tmp(image.shape()), out(image.shape());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * image.at(0, y, std::clamp(x + i, 0, w - 1));
      tmp.at(0, y, x) = static_cast<float>(acc);
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp.at(0, std::clamp(y + i, 0, h - 1), x);
      out.at(0, y, x) = static_cast<float>(acc);
    }
  return out;
}

Mask largest_component(const Mask& mask) {
  Mask labels(mask.height, mask.width);
  std::vector<int> stack;
  std::size_t best_area = 0;
  int best_label = 0, next = 0;
  std::vector<int> label_of(mask.size(), 0);
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask.data[start] || label_of[start]) continue;
    ++next;
    std::size_t area = 0;
    stack.assign(1, static_cast<int>(start));
    label_of[start] = next;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      ++area;
      const int y = p / mask.width, x = p % mask.width;
      const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (auto [ny, nx] : nb) {
        if (ny < 0 || nx < 0 || ny >= mask.height || nx >= mask.width) continue;
        const int q = ny * mask.width + nx;
        if (mask.data[q] && !label_of[q]) {
          label_of[q] = next;
          stack.push_back(q);
        }
      }
    }
    if (area > best_area) {
      best_area = area;
      best_label = next;
    }
  }
  for (std::size_t i = 0; i < mask.size(); ++i) labels.data[i] = label_of[i] == best_label && best_label != 0;
  return labels;
}

}  // namespace

std::string to_string(ShapeFamily family) {
  switch (family) {
    case ShapeFamily::EllipseRing: return "ellipse_ring";
    case ShapeFamily::ConvexBlob: return "convex_blob";
    case ShapeFamily::BilobedBlob: return "bilobed_blob";
  }
  return "?";
}

ShapeFamily parse_shape_family(const std::string& name) {
  if (name == "ellipse_ring") return ShapeFamily::EllipseRing;
  if (name == "convex_blob") return ShapeFamily::ConvexBlob;
  if (name == "bilobed_blob") return ShapeFamily::BilobedBlob;
  throw ConfigError("unknown shape family '" + name + "'");
}

void DomainSpec::validate() const {
  auto fail = [&](const std::string& field, const std::string& why) {
    throw ConfigError("domain '" + name + "': " + field + " " + why);
  };
  if (name.empty()) throw ConfigError("domain name must not be empty");
  if (!(size_min > 0.0 && size_min < size_max && size_max <= 0.5)) fail("size range", "must satisfy 0 < min < max <= 0.5");
  if (!(eccentricity_min >= 0.0 && eccentricity_min <= eccentricity_max && eccentricity_max < 1.0))
    fail("eccentricity range", "must satisfy 0 <= min <= max < 1");
  if (!(interior_mean >= 0.0 && interior_mean <= 1.0)) fail("interior_mean", "must be in [0, 1]");
  if (!(exterior_mean >= 0.0 && exterior_mean <= 1.0)) fail("exterior_mean", "must be in [0, 1]");
  if (std::abs(interior_mean - exterior_mean) < 0.15) fail("interior/exterior means", "must differ by >= 0.15");
  if (!(shadow_probability >= 0.0 && shadow_probability <= 1.0)) fail("shadow_probability", "must be in [0, 1]");
  if (!(speckle_strength >= 0.0)) fail("speckle_strength", "must be >= 0");
  if (!(blur_sigma >= 0.0)) fail("blur_sigma", "must be >= 0");
  if (!(shadow.factor_min > 0.0 && shadow.factor_min <= shadow.factor_max && shadow.factor_max <= 1.0))
    fail("shadow factor range", "must satisfy 0 < min <= max <= 1");
  if (!(shadow.half_width_min_deg > 0.0 && shadow.half_width_min_deg <= shadow.half_width_max_deg &&
        shadow.half_width_max_deg < 90.0))
    fail("shadow half-width range", "must satisfy 0 < min <= max < 90");
}

double ShapeParams::area() const {
  const double minor = std::sqrt(1.0 - eccentricity * eccentricity);
  switch (family) {
    case ShapeFamily::EllipseRing: return kPi * radius * radius * minor;
    case ShapeFamily::ConvexBlob:
      return kPi * radius * radius * (1.0 + 0.5 * (harmonic2 * harmonic2 + harmonic3 * harmonic3));
    case ShapeFamily::BilobedBlob: {
      const double a = kLobeScale * radius;
      return 2.0 * kPi * a * a * minor;
    }
  }
  return 0.0;
}

bool ShapeParams::contains(double x, double y) const {
  const double dx = x - cx, dy = y - cy;
  const double minor = std::sqrt(1.0 - eccentricity * eccentricity);
  switch (family) {
    case ShapeFamily::EllipseRing: return in_ellipse(dx, dy, radius, radius * minor, angle);
    case ShapeFamily::ConvexBlob: {
      const double phi = std::atan2(dy, dx);
      const double r = radius * (1.0 + harmonic2 * std::cos(2.0 * (phi - angle)) + harmonic3 * std::cos(3.0 * phi + phase3));
      return dx * dx + dy * dy <= r * r;
    }
    case ShapeFamily::BilobedBlob: {
      const double a = kLobeScale * radius, b = a * minor;
      const double ox = lobe_offset * std::cos(angle), oy = lobe_offset * std::sin(angle);
      return in_ellipse(dx - ox, dy - oy, a, b, angle) || in_ellipse(dx + ox, dy + oy, a, b, angle);
    }
  }
  return false;
}

ShapeParams sample_shape(const DomainSpec& spec, int resolution, Rng& rng) {
  ShapeParams s;
  s.family = spec.family;
  const double res = resolution;
  s.cx = res * uniform(rng, 0.38, 0.62);
  s.cy = res * uniform(rng, 0.38, 0.62);
  s.radius = res * uniform(rng, spec.size_min, spec.size_max);
  s.eccentricity = uniform(rng, spec.eccentricity_min, spec.eccentricity_max);
  s.angle = uniform(rng, 0.0, kPi);
  if (spec.family == ShapeFamily::ConvexBlob) {
    s.harmonic2 = 0.5 * s.eccentricity;
    s.harmonic3 = uniform(rng, 0.0, 0.06);
    s.phase3 = uniform(rng, 0.0, 2.0 * kPi);
  }
  if (spec.family == ShapeFamily::BilobedBlob) s.lobe_offset = kLobeOffset * s.radius;
  return s;
}

Mask rasterize(const ShapeParams& shape, int resolution) {
  Mask m(resolution, resolution);
  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x) m(y, x) = shape.contains(x + 0.5, y + 0.5);
  return largest_component(m);
}

Tensor<float> render_clean(const ShapeParams& shape, const Mask& mask, const DomainSpec& spec, int resolution) {
  Tensor<float> img({1, resolution, resolution}, static_cast<float>(spec.exterior_mean));
  const double minor = std::sqrt(1.0 - shape.eccentricity * shape.eccentricity);
  const double ring = std::max(1.5, 0.03 * resolution) / (shape.radius * minor);
  const double c = std::cos(shape.angle), s = std::sin(shape.angle);
  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x) {
      if (!mask(y, x)) continue;
      float v = static_cast<float>(spec.interior_mean);
      if (spec.family == ShapeFamily::EllipseRing) {
        const double dx = x + 0.5 - shape.cx, dy = y + 0.5 - shape.cy;
        const double u = (c * dx + s * dy) / shape.radius, w = (-s * dx + c * dy) / (shape.radius * minor);
        if (std::sqrt(u * u + w * w) >= 1.0 - ring) v = kRingIntensity;
      }
      img.at(0, y, x) = v;
    }
  return gaussian_blur(img, spec.blur_sigma * resolution / 64.0);
}

Tensor<float> apply_speckle(const Tensor<float>& image, Rng& rng, double strength) {
  if (strength <= 0.0) return image;
  std::gamma_distribution<double> gamma(1.0 / strength, strength);
  Tensor<float> out = image;
  for (auto& v : out.storage()) v = static_cast<float>(std::clamp(v * gamma(rng), 0.0, 1.0));
  return out;
}

bool ShadowWedge::contains(int x, int y) const {
  const double dx = x + 0.5 - apex_x, dy = y + 0.5 - apex_y;
  if (dx == 0.0 && dy == 0.0) return false;
  double diff = std::atan2(dy, dx) - direction;
  while (diff > kPi) diff -= 2.0 * kPi;
  while (diff < -kPi) diff += 2.0 * kPi;
  return std::abs(diff) <= half_width;
}

Tensor<float> apply_shadow(const Tensor<float>& image, Rng& rng, const ShadowParams& params, ShadowWedge* wedge) {
  const int h = image.dim(1), w = image.dim(2);
  ShadowWedge wg;
  wg.apex_x = uniform(rng, 0.0, w);
  wg.apex_y = 0.0;
  wg.direction = kPi / 2.0 + uniform(rng, -params.max_tilt_deg, params.max_tilt_deg) * kPi / 180.0;
  wg.half_width = uniform(rng, params.half_width_min_deg, params.half_width_max_deg) * kPi / 180.0;
  wg.factor = uniform(rng, params.factor_min, params.factor_max);
  if (wedge) *wedge = wg;
  if (wg.factor == 1.0) return image;
  Tensor<float> out = image;
  const auto f = static_cast<float>(wg.factor);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (wg.contains(x, y)) out.at(0, y, x) *= f;
  return out;
}

ImageSample generate_sample(const DomainSpec& spec, int resolution, Rng& rng, int domain) {
  if (resolution < 32) throw ConfigError("phantom resolution must be >= 32");
  const ShapeParams shape = sample_shape(spec, resolution, rng);
  ImageSample s;
  s.domain = domain;
  s.mask = rasterize(shape, resolution);
  s.image = apply_speckle(render_clean(shape, s.mask, spec, resolution), rng, spec.speckle_strength);
  if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < spec.shadow_probability)
    s.image = apply_shadow(s.image, rng, spec.shadow);
  for (auto& v : s.image.storage()) v = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;
  return s;
}

void DatasetConfig::validate() const {
  if (resolution < 32) throw ConfigError("data.resolution must be >= 32");
  if (domains.empty()) throw ConfigError("data.domains must list at least one domain");
  for (std::size_t i = 0; i < domains.size(); ++i) {
    const auto& d = domains[i];
    const std::string where = "data.domains." + std::to_string(i) + " ('" + d.spec.name + "')";
    try {
      d.spec.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
    if (d.n_train < 0 || d.n_test < 0) throw ConfigError(where + ": n_train and n_test must be >= 0");
    if (d.n_train + d.n_test < 1) throw ConfigError(where + ": needs at least one image");
  }
  for (std::size_t i = 0; i < domains.size(); ++i)
    for (std::size_t j = i + 1; j < domains.size(); ++j)
      if (domains[i].spec.name == domains[j].spec.name)
        throw ConfigError("duplicate domain name '" + domains[i].spec.name + "'");
}

DatasetConfig DatasetConfig::default_config() {
  DatasetConfig c;
  c.resolution = 64;
  DomainSpec ob;
  ob.name = "ob_head";
  ob.family = ShapeFamily::EllipseRing;
  ob.size_min = 0.22;
  ob.size_max = 0.34;
  ob.eccentricity_min = 0.2;
  ob.eccentricity_max = 0.7;
  ob.interior_mean = 0.32;
  ob.exterior_mean = 0.12;
  ob.shadow_probability = 0.25;

  DomainSpec a2c;
  a2c.name = "a2c";
  a2c.family = ShapeFamily::ConvexBlob;
  a2c.size_min = 0.16;
  a2c.size_max = 0.26;
  a2c.eccentricity_min = 0.1;
  a2c.eccentricity_max = 0.6;
  a2c.interior_mean = 0.15;
  a2c.exterior_mean = 0.5;
  a2c.shadow_probability = 0.3;

  DomainSpec a4c;
  a4c.name = "a4c";
  a4c.family = ShapeFamily::BilobedBlob;
  a4c.size_min = 0.14;
  a4c.size_max = 0.22;
  a4c.eccentricity_min = 0.0;
  a4c.eccentricity_max = 0.4;
  a4c.interior_mean = 0.12;
  a4c.exterior_mean = 0.45;
  a4c.shadow_probability = 0.3;

  c.domains = {{ob, 500, 100}, {a2c, 500, 100}, {a4c, 500, 100}};
  return c;
}

DatasetConfig DatasetConfig::scarce_config() {
  DatasetConfig c = default_config();
  c.domains[2].n_train = 20;
  return c;
}

std::uint64_t sample_seed(std::uint64_t seed, Split split, int domain, int index) {
  std::uint64_t h = splitmix(seed);
  h = splitmix(h ^ (0x51ed2701ULL * (static_cast<std::uint64_t>(split) + 1)));
  h = splitmix(h ^ (0x2545f491ULL * (static_cast<std::uint64_t>(domain) + 1)));
  return splitmix(h ^ static_cast<std::uint64_t>(index));
}

Dataset generate_split(const DatasetConfig& config, std::uint64_t seed, Split split) {
  config.validate();
  Dataset ds;
  ds.split = split;
  ds.seed = seed;
  for (std::size_t d = 0; d < config.domains.size(); ++d) {
    const auto& dc = config.domains[d];
    ds.domain_names.push_back(dc.spec.name);
    const int n = split == Split::Train ? dc.n_train : dc.n_test;
    std::vector<ImageSample> samples(static_cast<std::size_t>(n));
    parallel_for(samples.size(), [&](std::size_t i) {
      Rng rng(sample_seed(seed, split, static_cast<int>(d), static_cast<int>(i)));
      samples[i] = generate_sample(dc.spec, config.resolution, rng, static_cast<int>(d));
    });
    ds.samples.push_back(std::move(samples));
  }
  return ds;
}

}  // namespace mdseg
