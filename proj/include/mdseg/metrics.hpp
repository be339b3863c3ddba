#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mdseg/dataset.hpp"

namespace mdseg {

struct DetectionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  DetectionCounts& operator+=(const DetectionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const DetectionCounts&, const DetectionCounts&) = default;
};

/// Jaccard threshold at or above which a predicted object counts as a true positive.
inline constexpr double kDetectionJaccard = 0.5;

/// 2|A n B| / (|A| + |B|); 1 when both masks are empty.
double dice(const Mask& a, const Mask& b);
/// |A n B| / |A u B|; 1 when both masks are empty.
double jaccard(const Mask& a, const Mask& b);

/// Greedy one-to-one matching by descending Jaccard; a pair matches when J >= 0.5.
/// Unmatched predictions are false positives, unmatched ground-truth objects false negatives.
DetectionCounts match_detections(const std::vector<Mask>& predicted, const std::vector<Mask>& ground_truth);

/// Harmonic mean of precision and recall; 1 when there is nothing to detect and nothing
/// was detected, 0 when tp = 0 otherwise.
double f1(const DetectionCounts& counts);

/// (y, x) of every mask pixel with a 4-neighbour outside the mask or on the image edge.
std::vector<std::pair<int, int>> boundary_points(const Mask& mask);

/// Symmetric Hausdorff distance in pixels between the boundaries of `predicted` and
/// `ground_truth`. An empty prediction is scored as the whole image. Throws DataError
/// when the ground truth is empty and DimensionError when the shapes differ.
double hausdorff(const Mask& predicted, const Mask& ground_truth);

struct EvalRow {
  std::string domain;
  double f1 = 0.0;
  double dice_mean = 0.0;
  double hausdorff_mean_px = 0.0;
  std::size_t n = 0;
  DetectionCounts counts;
};

struct EvalReport {
  std::vector<EvalRow> rows;

  /// Aligned plain-text table: domain, n, F1, mean Dice, mean Hausdorff.
  std::string to_text(const std::string& title = {}) const;
  /// JSON array of {domain, f1, dice_mean, hausdorff_mean_px, n}.
  std::string to_json() const;
};

struct Prediction {
  Mask mask;
  std::vector<Mask> objects;
};

using Segmenter = std::function<Prediction(const ImageSample&)>;

/// Per domain: detection counts summed then F1; Dice and Hausdorff averaged over images.
/// Ground-truth objects are the 4-connected components of each ground-truth mask.
EvalReport evaluate_dataset(const Segmenter& segmenter, const Dataset& dataset);

}  // namespace mdseg
