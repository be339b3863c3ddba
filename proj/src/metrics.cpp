#include "mdseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "json.hpp"
#include "mdseg/parallel.hpp"
#include "mdseg/refine.hpp"

namespace mdseg {

namespace {

void require_same_shape(const Mask& a, const Mask& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw DimensionError(std::string(what) + ": mask shapes differ (" + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) +
                         ")");
  }
}

std::pair<std::size_t, std::size_t> overlap_counts(const Mask& a, const Mask& b) {
  std::size_t inter = 0, sum = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.data[i] != 0, y = b.data[i] != 0;
    inter += x && y;
    sum += static_cast<std::size_t>(x) + static_cast<std::size_t>(y);
  }
  return {inter, sum};
}

// Exact squared Euclidean distance transform (Felzenszwalb & Huttenlocher) of a point set.
void edt_1d(const std::vector<double>& f, std::vector<double>& d, int n) {
  std::vector<int> v(n);
  std::vector<double> z(n + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s;
    for (;;) {
      s = ((f[q] + static_cast<double>(q) * q) - (f[v[k]] + static_cast<double>(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
      if (s <= z[k] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    if (s <= z[k]) {  // k == 0: replace the only parabola
      v[0] = q;
      z[0] = -std::numeric_limits<double>::infinity();
      z[1] = std::numeric_limits<double>::infinity();
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

std::vector<double> squared_distance_to(const std::vector<std::pair<int, int>>& points, int h, int w) {
  constexpr double inf = 1e18;
  std::vector<double> grid(static_cast<std::size_t>(h) * w, inf);
  for (auto [y, x] : points) grid[static_cast<std::size_t>(y) * w + x] = 0.0;
  std::vector<double> f(std::max(h, w)), d(std::max(h, w));
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[y] = grid[static_cast<std::size_t>(y) * w + x];
    edt_1d(f, d, h);
    for (int y = 0; y < h; ++y) grid[static_cast<std::size_t>(y) * w + x] = d[y];
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) f[x] = grid[static_cast<std::size_t>(y) * w + x];
    edt_1d(f, d, w);
    for (int x = 0; x < w; ++x) grid[static_cast<std::size_t>(y) * w + x] = d[x];
  }
  return grid;
}

double directed(const std::vector<std::pair<int, int>>& from, const std::vector<double>& dist_to, int w) {
  double worst = 0.0;
  for (auto [y, x] : from) worst = std::max(worst, dist_to[static_cast<std::size_t>(y) * w + x]);
  return std::sqrt(worst);
}

}  // namespace

double dice(const Mask& a, const Mask& b) {
  require_same_shape(a, b, "dice");
  const auto [inter, sum] = overlap_counts(a, b);
  if (sum == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(sum);
}

double jaccard(const Mask& a, const Mask& b) {
  require_same_shape(a, b, "jaccard");
  const auto [inter, sum] = overlap_counts(a, b);
  const std::size_t uni = sum - inter;
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

DetectionCounts match_detections(const std::vector<Mask>& predicted, const std::vector<Mask>& ground_truth) {
  struct Pair {
    double j;
    std::size_t p, g;
  };
  std::vector<Pair> pairs;
  for (std::size_t p = 0; p < predicted.size(); ++p)
    for (std::size_t g = 0; g < ground_truth.size(); ++g) {
      const double j = jaccard(predicted[p], ground_truth[g]);
      if (j >= kDetectionJaccard) pairs.push_back({j, p, g});
    }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.j > b.j; });
  std::vector<bool> pred_used(predicted.size()), gt_used(ground_truth.size());
  DetectionCounts c;
  for (const auto& pr : pairs) {
    if (pred_used[pr.p] || gt_used[pr.g]) continue;
    pred_used[pr.p] = gt_used[pr.g] = true;
    ++c.tp;
  }
  c.fp = predicted.size() - c.tp;
  c.fn = ground_truth.size() - c.tp;
  return c;
}

double f1(const DetectionCounts& c) {
  if (c.tp + c.fp + c.fn == 0) return 1.0;
  if (c.tp == 0) return 0.0;
  const double precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  const double recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return 2.0 * precision * recall / (precision + recall);
}

std::vector<std::pair<int, int>> boundary_points(const Mask& mask) {
  std::vector<std::pair<int, int>> pts;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      if (!mask(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y == mask.height - 1 || x == mask.width - 1;
      if (edge || !mask(y - 1, x) || !mask(y + 1, x) || !mask(y, x - 1) || !mask(y, x + 1)) pts.emplace_back(y, x);
    }
  return pts;
}

double hausdorff(const Mask& predicted, const Mask& ground_truth) {
  require_same_shape(predicted, ground_truth, "hausdorff");
  const auto gt = boundary_points(ground_truth);
  if (gt.empty()) throw DataError("hausdorff: ground-truth mask is empty");
  const auto pred = predicted.empty_foreground() ? boundary_points(Mask(predicted.height, predicted.width, 1))
                                                 : boundary_points(predicted);
  const int h = predicted.height, w = predicted.width;
  const auto to_gt = squared_distance_to(gt, h, w);
  const auto to_pred = squared_distance_to(pred, h, w);
  return std::max(directed(pred, to_gt, w), directed(gt, to_pred, w));
}

std::string EvalReport::to_text(const std::string& title) const {
  std::string out;
  if (!title.empty()) out += title + "\n";
  char line[160];
  std::snprintf(line, sizeof line, "%-14s %6s %8s %10s %16s\n", "Domain", "n", "F1", "Dice", "Hausdorff (px)");
  out += line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-14s %6zu %8.3f %10.3f %16.2f\n", r.domain.c_str(), r.n, r.f1, r.dice_mean,
                  r.hausdorff_mean_px);
    out += line;
  }
  return out;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    arr.push_back({{"domain", r.domain},
                   {"f1", r.f1},
                   {"dice_mean", r.dice_mean},
                   {"hausdorff_mean_px", r.hausdorff_mean_px},
                   {"n", r.n}});
  }
  return arr.dump(2) + "\n";
}

EvalReport evaluate_dataset(const Segmenter& segmenter, const Dataset& dataset) {
  EvalReport report;
  for (int d = 0; d < dataset.num_domains(); ++d) {
    const auto& samples = dataset.samples[d];
    const std::string name = d < static_cast<int>(dataset.domain_names.size()) ? dataset.domain_names[d]
                                                                                 : "domain" + std::to_string(d);
    if (samples.empty()) throw ConfigError("cannot evaluate empty domain '" + name + "'");
    struct PerImage {
      DetectionCounts counts;
      double dice = 0.0, hausdorff = 0.0;
    };
    std::vector<PerImage> per(samples.size());
    parallel_for(samples.size(), [&](std::size_t i) {
      const Prediction p = segmenter(samples[i]);
      std::vector<Mask> gt_objects;
      for (auto& c : extract_components(samples[i].mask, 1)) gt_objects.push_back(std::move(c.mask));
      per[i].counts = match_detections(p.objects, gt_objects);
      per[i].dice = dice(p.mask, samples[i].mask);
      per[i].hausdorff = hausdorff(p.mask, samples[i].mask);
    });
    EvalRow row;
    row.domain = name;
    row.n = samples.size();
    double dsum = 0.0, hsum = 0.0;
    for (const auto& r : per) {
      row.counts += r.counts;
      dsum += r.dice;
      hsum += r.hausdorff;
    }
    row.f1 = f1(row.counts);
    row.dice_mean = dsum / static_cast<double>(samples.size());
    row.hausdorff_mean_px = hsum / static_cast<double>(samples.size());
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace mdseg
