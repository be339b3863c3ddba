#include "mdseg/refine.hpp"

#include <algorithm>
#include <cmath>

#include "mdseg/error.hpp"
#include "mdseg/layers.hpp"
#include "mdseg/metrics.hpp"
#include "mdseg/parallel.hpp"

namespace mdseg {

std::vector<Component> extract_components(const Mask& mask, std::size_t min_area) {
  const int h = mask.height, w = mask.width;
  std::vector<int> label(mask.size(), -1);
  std::vector<Component> out;
  std::vector<int> stack;
  for (int sy = 0; sy < h; ++sy)
    for (int sx = 0; sx < w; ++sx) {
      const int start = sy * w + sx;
      if (!mask.data[start] || label[start] >= 0) continue;
      Component c;
      c.mask = Mask(h, w);
      int x0 = sx, x1 = sx, y0 = sy, y1 = sy;
      stack.assign(1, start);
      label[start] = 1;
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        const int y = p / w, x = p % w;
        c.mask.data[p] = 1;
        ++c.area;
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
        const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
        for (const auto& n : nb) {
          if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
          const int q = n[0] * w + n[1];
          if (mask.data[q] && label[q] < 0) {
            label[q] = 1;
            stack.push_back(q);
          }
        }
      }
      c.bbox = {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
      if (c.area >= min_area) out.push_back(std::move(c));
    }
  std::stable_sort(out.begin(), out.end(), [](const Component& a, const Component& b) { return a.area > b.area; });
  return out;
}

BoundingBox bounding_box(const Mask& mask) {
  int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask(y, x)) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) throw DataError("bounding_box: mask has no foreground");
  return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

BoundingBox expand_bbox(const BoundingBox& box, double context_fraction, int image_width, int image_height) {
  if (box.width < 1 || box.height < 1) throw ConfigError("expand_bbox: box must be non-empty");
  if (context_fraction < 0.0) throw ConfigError("context fraction must be >= 0");
  const int dx = static_cast<int>(std::lround(context_fraction / 2.0 * box.width));
  const int dy = static_cast<int>(std::lround(context_fraction / 2.0 * box.height));
  const int x0 = std::max(0, box.x0 - dx), y0 = std::max(0, box.y0 - dy);
  const int x1 = std::min(image_width, box.x1() + dx), y1 = std::min(image_height, box.y1() + dy);
  return {x0, y0, x1 - x0, y1 - y0};
}

namespace {

void check_box(const BoundingBox& box, int w, int h) {
  if (box.width < 1 || box.height < 1 || box.x0 < 0 || box.y0 < 0 || box.x1() > w || box.y1() > h) {
    throw DimensionError("box (" + std::to_string(box.x0) + "," + std::to_string(box.y0) + "," +
                         std::to_string(box.width) + "," + std::to_string(box.height) + ") is outside a " +
                         std::to_string(h) + "x" + std::to_string(w) + " image");
  }
}

}  // namespace

Tensor<float> crop_resize(const Tensor<float>& image, const BoundingBox& box, int target) {
  if (image.rank() != 3) throw DimensionError("crop_resize expects (C, H, W)");
  const int c = image.shape()[0], h = image.shape()[1], w = image.shape()[2];
  check_box(box, w, h);
  Tensor<float> crop({c, box.height, box.width});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < box.height; ++y)
      for (int x = 0; x < box.width; ++x) crop.at(ch, y, x) = image.at(ch, box.y0 + y, box.x0 + x);
  return bilinear_resize(crop, target, target);
}

Tensor<float> project_back(const Tensor<float>& prob, const BoundingBox& box, int image_width, int image_height) {
  if (prob.rank() != 3) throw DimensionError("project_back expects (C, H, W)");
  check_box(box, image_width, image_height);
  const int c = prob.shape()[0];
  const Tensor<float> local = bilinear_resize(prob, box.height, box.width);
  if (box.x0 == 0 && box.y0 == 0 && box.width == image_width && box.height == image_height) return local;
  Tensor<float> out({c, image_height, image_width});
  auto bg = out.plane(0);
  std::fill(bg.begin(), bg.end(), 1.0f);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < box.height; ++y)
      for (int x = 0; x < box.width; ++x) out.at(ch, box.y0 + y, box.x0 + x) = local.at(ch, y, x);
  return out;
}

Mask argmax_mask(const Tensor<float>& prob, int foreground_class) {
  if (prob.rank() != 3) throw DimensionError("argmax_mask expects (C, H, W)");
  const int c = prob.shape()[0], h = prob.shape()[1], w = prob.shape()[2];
  if (foreground_class < 0 || foreground_class >= c) throw IndexError("foreground class out of range");
  Mask m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int best = 0;
      for (int k = 1; k < c; ++k)
        if (prob.at(k, y, x) > prob.at(best, y, x)) best = k;
      m(y, x) = best == foreground_class;
    }
  return m;
}

int foreground_class(const ModelParams& params, int domain) {
  if (domain < 0 || domain >= params.num_domains) {
    throw IndexError("domain " + std::to_string(domain) + " out of range for a model with " +
                     std::to_string(params.num_domains) + " domains");
  }
  return params.variant == Variant::ML ? domain + 1 : 1;
}

void RefineConfig::validate() const {
  if (context_fraction < 0.0) throw ConfigError("refine.context_fraction must be >= 0");
  if (refine_resolution < 0) throw ConfigError("refine.refine_resolution must be >= 0");
  if (!(stop_dice > 0.0 && stop_dice <= 1.0)) throw ConfigError("refine.stop_dice must be in (0, 1]");
  if (max_iterations < 1) throw ConfigError("refine.max_iterations must be >= 1");
  if (context_fraction > 1.0) throw ConfigError("refine.context_fraction must be <= 1");
  if (min_component_area < 0) throw ConfigError("refine.min_component_area must be >= 0");
}

std::size_t RefineConfig::component_area_floor(int image_width, int image_height) const {
  if (min_component_area > 0) return static_cast<std::size_t>(min_component_area);
  const double a = 0.001 * static_cast<double>(image_width) * image_height;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(a)));
}

namespace {

SegmentationResult run_on_box(const ModelParams& params, int domain, const Tensor<float>& image,
                              const BoundingBox& box, int resolution, const RefineConfig& config) {
  const int h = image.shape()[1], w = image.shape()[2];
  const Tensor<float> input = crop_resize(image, box, resolution);
  SegmentationResult r;
  r.prob_map = project_back(forward(params, domain, input), box, w, h);
  r.final_mask = argmax_mask(r.prob_map, foreground_class(params, domain));
  r.objects = extract_components(r.final_mask, config.component_area_floor(w, h));
  return r;
}

void check_image(const Tensor<float>& image) {
  if (image.rank() != 3 || image.shape()[0] != 1) {
    throw DimensionError("expected a (1, H, W) image, got " + Tensor<float>::shape_string(image.shape()));
  }
}

}  // namespace

SegmentationResult segment_once(const ModelParams& params, int domain, const Tensor<float>& image,
                                const RefineConfig& config) {
  config.validate();
  check_image(image);
  const BoundingBox whole{0, 0, image.shape()[2], image.shape()[1]};
  SegmentationResult r = run_on_box(params, domain, image, whole, params.working_resolution, config);
  r.iterations = 1;
  return r;
}

SegmentationResult refine_iterate(const ModelParams& base, const ModelParams& refiner, int domain,
                                  const Tensor<float>& image, const RefineConfig& config) {
  SegmentationResult current = segment_once(base, domain, image, config);
  const int res = config.refine_resolution > 0 ? config.refine_resolution : refiner.working_resolution;
  if (!accepts_resolution(refiner, res)) {
    throw ConfigError("refine resolution " + std::to_string(res) + " is not supported by the refinement model");
  }
  const int h = image.shape()[1], w = image.shape()[2];
  for (int it = 2; it <= config.max_iterations && !current.objects.empty(); ++it) {
    const BoundingBox box = expand_bbox(current.objects.front().bbox, config.context_fraction, w, h);
    SegmentationResult next = run_on_box(refiner, domain, image, box, res, config);
    if (next.objects.empty()) break;
    const double agreement = dice(next.final_mask, current.final_mask);
    next.iterations = it;
    next.dice_trace = std::move(current.dice_trace);
    next.dice_trace.push_back(agreement);
    current = std::move(next);
    if (agreement >= config.stop_dice) break;
  }
  return current;
}

SegmentationResult refine_iterate(const ModelParams& params, int domain, const Tensor<float>& image,
                                  const RefineConfig& config) {
  return refine_iterate(params, params, domain, image, config);
}

void CropSamplingConfig::validate() const {
  if (!(margin_low >= 0.0 && margin_low <= margin_high))
    throw ConfigError("crop margins must satisfy 0 <= margin_low <= margin_high");
  if (max_jitter < 0.0) throw ConfigError("crop jitter must be >= 0");
  if (resolution < 1) throw ConfigError("crop resolution must be >= 1");
}

std::vector<TrainingCrop> sample_training_crops(const Tensor<float>& image, const Mask& mask,
                                                const CropSamplingConfig& config, int count, Rng& rng) {
  config.validate();
  check_image(image);
  const int h = image.shape()[1], w = image.shape()[2];
  if (mask.height != h || mask.width != w) throw DimensionError("crop sampling: image and mask shapes differ");
  if (mask.empty_foreground()) throw DataError("crop sampling: ground-truth mask is empty");
  const BoundingBox tight = bounding_box(mask);
  std::uniform_real_distribution<double> margin(config.margin_low, config.margin_high);
  std::vector<TrainingCrop> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    const double m = config.margin_high > config.margin_low ? margin(rng) : config.margin_low;
    const int dx = static_cast<int>(std::lround(m / 2.0 * tight.width));
    const int dy = static_cast<int>(std::lround(m / 2.0 * tight.height));
    const int jx_max = static_cast<int>(std::floor(config.max_jitter * tight.width));
    const int jy_max = static_cast<int>(std::floor(config.max_jitter * tight.height));
    const int jx = jx_max > 0 ? std::uniform_int_distribution<int>(-jx_max, jx_max)(rng) : 0;
    const int jy = jy_max > 0 ? std::uniform_int_distribution<int>(-jy_max, jy_max)(rng) : 0;
    const int x0 = std::clamp(tight.x0 - dx + jx, 0, w - 1), y0 = std::clamp(tight.y0 - dy + jy, 0, h - 1);
    const int x1 = std::clamp(tight.x1() + dx + jx, x0 + 1, w), y1 = std::clamp(tight.y1() + dy + jy, y0 + 1, h);
    TrainingCrop crop;
    crop.box = {x0, y0, x1 - x0, y1 - y0};
    crop.image = crop_resize(image, crop.box, config.resolution);
    Mask local(crop.box.height, crop.box.width);
    for (int y = 0; y < crop.box.height; ++y)
      for (int x = 0; x < crop.box.width; ++x) local(y, x) = mask(crop.box.y0 + y, crop.box.x0 + x);
    crop.mask = nearest_resize(local, config.resolution, config.resolution);
    out.push_back(std::move(crop));
  }
  return out;
}

Dataset make_crop_dataset(const Dataset& source, const CropSamplingConfig& config, int crops_per_image,
                          std::uint64_t seed) {
  if (crops_per_image < 1) throw ConfigError("crops per image must be >= 1");
  Dataset out;
  out.split = source.split;
  out.seed = seed;
  out.domain_names = source.domain_names;
  out.samples.resize(source.samples.size());
  for (int d = 0; d < source.num_domains(); ++d) {
    const auto& in = source.samples[d];
    std::vector<std::vector<TrainingCrop>> crops(in.size());
    parallel_for(in.size(), [&](std::size_t i) {
      Rng rng(sample_seed(seed, source.split, d, static_cast<int>(i)));
      crops[i] = sample_training_crops(in[i].image, in[i].mask, config, crops_per_image, rng);
    });
    for (auto& group : crops)
      for (auto& c : group) out.samples[d].push_back({std::move(c.image), std::move(c.mask), d});
  }
  return out;
}

}  // namespace mdseg
