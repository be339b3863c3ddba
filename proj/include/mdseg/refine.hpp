#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mdseg/dataset.hpp"
#include "mdseg/model.hpp"
#include "mdseg/phantom.hpp"

namespace mdseg {

/// Half-open pixel box [x0, x0 + width) x [y0, y0 + height).
struct BoundingBox {
  int x0 = 0;
  int y0 = 0;
  int width = 0;
  int height = 0;

  int x1() const noexcept { return x0 + width; }
  int y1() const noexcept { return y0 + height; }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct Component {
  Mask mask;
  std::size_t area = 0;
  BoundingBox bbox;
};

/// 4-connected foreground components with area >= min_area, largest first
/// (ties broken by first pixel in row-major order).
std::vector<Component> extract_components(const Mask& mask, std::size_t min_area);

/// Tight box around the foreground. Throws DataError for an empty mask.
BoundingBox bounding_box(const Mask& mask);

/// Grows every side by round(fraction / 2 * extent) and clamps to the image.
BoundingBox expand_bbox(const BoundingBox& box, double context_fraction, int image_width, int image_height);

/// Crops `box` from a (C, H, W) image and resamples it to (C, target, target).
Tensor<float> crop_resize(const Tensor<float>& image, const BoundingBox& box, int target);

/// Resamples a (C, t, t) probability map onto `box` inside a (C, H, W) map whose
/// pixels outside the box are certain background.
Tensor<float> project_back(const Tensor<float>& prob, const BoundingBox& box, int image_width, int image_height);

/// Binary mask of pixels whose argmax class equals `foreground_class`.
Mask argmax_mask(const Tensor<float>& prob, int foreground_class);

/// Output class that marks the structure of `domain`: 1 for MD/SD, domain + 1 for ML.
int foreground_class(const ModelParams& params, int domain);

struct RefineConfig {
  double context_fraction = 0.2;
  int refine_resolution = 0;  // 0: the refinement model's working resolution
  double stop_dice = 0.995;
  int max_iterations = 5;
  int min_component_area = 0;  // pixels; 0: 0.1% of the image area

  void validate() const;
  std::size_t component_area_floor(int image_width, int image_height) const;
};

struct SegmentationResult {
  Mask final_mask;
  Tensor<float> prob_map;
  std::vector<Component> objects;
  int iterations = 0;
  std::vector<double> dice_trace;  // Dice between consecutive masks, one entry per refinement
};

/// Resample to the working resolution, run the model, resample back, take argmax.
SegmentationResult segment_once(const ModelParams& params, int domain, const Tensor<float>& image,
                                const RefineConfig& config = {});

/// Single pass with `base`, then repeated crop-and-resegment with `refiner` around the
/// largest detection until consecutive masks agree (Dice >= stop_dice) or the
/// iteration cap is reached. An empty refined detection keeps the previous result.
SegmentationResult refine_iterate(const ModelParams& base, const ModelParams& refiner, int domain,
                                  const Tensor<float>& image, const RefineConfig& config = {});
SegmentationResult refine_iterate(const ModelParams& params, int domain, const Tensor<float>& image,
                                  const RefineConfig& config = {});

struct CropSamplingConfig {
  double margin_low = 0.1;
  double margin_high = 0.5;
  double max_jitter = 0.1;  // fraction of the box extent
  int resolution = 64;

  void validate() const;
};

struct TrainingCrop {
  Tensor<float> image;
  Mask mask;
  BoundingBox box;
};

/// Crops around the ground-truth box with a random context margin and position jitter,
/// resampled to config.resolution. Throws DataError when the mask is empty.
std::vector<TrainingCrop> sample_training_crops(const Tensor<float>& image, const Mask& mask,
                                                const CropSamplingConfig& config, int count, Rng& rng);

/// `crops_per_image` crops of every sample; seeded per sample so the result does not
/// depend on the thread count.
Dataset make_crop_dataset(const Dataset& source, const CropSamplingConfig& config, int crops_per_image,
                          std::uint64_t seed);

}  // namespace mdseg
