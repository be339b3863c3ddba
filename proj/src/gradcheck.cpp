#include "mdseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

namespace mdseg {

namespace {

double objective(const LayerSpec& spec, const Tensor<double>& x, const Tensor<double>& w,
                 const std::vector<double>& b, const Tensor<double>& upstream) {
  const Tensor<double> y = layer_forward<double>(spec, x, w, b);
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += upstream[i] * y[i];
  return acc;
}

std::vector<std::size_t> pick_coordinates(std::size_t n, std::size_t limit, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (n <= limit) return idx;
  for (std::size_t i = 0; i < limit; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

int default_extent(const LayerSpec& spec) {
  switch (spec.kind) {
    case LayerKind::Conv: return std::max(spec.kernel_h, spec.kernel_w) + 2;
    case LayerKind::Deconv: return 3;
    case LayerKind::MaxPool: return spec.kernel_h + 2 * spec.stride;
    case LayerKind::Relu: return 5;
  }
  return 5;
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const LayerSpec& layer, std::uint64_t seed, double tolerance,
                           const GradCheckOptions& options) {
  layer.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  const int channels = layer.has_weights() ? layer.in_channels : 2;
  const int extent = options.extent > 0 ? options.extent : default_extent(layer);
  Tensor<double> x({channels, extent, extent});

  if (layer.kind == LayerKind::MaxPool) {
    // Distinct, well separated values so no window is within a step of a tie.
    std::vector<double> levels(x.size());
    for (std::size_t i = 0; i < levels.size(); ++i) levels[i] = -1.0 + 2.0 * static_cast<double>(i) / levels.size();
    std::shuffle(levels.begin(), levels.end(), rng);
    x.storage() = levels;
  } else if (layer.kind == LayerKind::Relu) {
    // Keep every input at least 0.1 away from the kink.
    std::uniform_real_distribution<double> mag(0.1, 1.0);
    for (auto& v : x.storage()) v = (unit(rng) < 0.0 ? -1.0 : 1.0) * mag(rng);
  } else {
    for (auto& v : x.storage()) v = unit(rng);
  }

  Tensor<double> w;
  std::vector<double> b;
  if (layer.has_weights()) {
    w = Tensor<double>(layer.weight_shape());
    for (auto& v : w.storage()) v = 0.5 * unit(rng);
    b.resize(layer.out_channels);
    for (auto& v : b) v = 0.5 * unit(rng);
  }

  std::vector<std::int32_t> argmax;
  const Tensor<double> y = layer_forward<double>(layer, x, w, b, &argmax);
  Tensor<double> upstream(y.shape());
  for (auto& v : upstream.storage()) v = unit(rng);
  const LayerGrads<double> analytic = layer_backward<double>(layer, x, w, argmax, upstream, true);

  GradCheckReport report;
  report.layer = layer;
  report.tolerance = tolerance;
  const double h = options.step;

  auto check = [&](const std::string& name, std::vector<double>& values, const std::vector<double>& grad) {
    GradCheckEntry entry{name, 0.0, 0};
    for (std::size_t i : pick_coordinates(values.size(), options.max_coordinates, rng)) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = objective(layer, x, w, b, upstream);
      values[i] = saved - h;
      const double down = objective(layer, x, w, b, upstream);
      values[i] = saved;
      entry.max_rel_error = std::max(entry.max_rel_error, relative_error(grad[i], (up - down) / (2.0 * h)));
      ++entry.coordinates;
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(entry);
  };

  check("input", x.storage(), analytic.input.storage());
  if (layer.has_weights()) {
    check("weights", w.storage(), analytic.weights.storage());
    check("bias", b, analytic.bias);
  }
  report.pass = report.max_rel_error <= tolerance;
  return report;
}

std::string describe(const GradCheckReport& report) {
  const LayerSpec& l = report.layer;
  char head[160];
  if (l.has_weights()) {
    std::snprintf(head, sizeof head, "%s %dx%d/%d pad %d (%d->%d)", to_string(l.kind).c_str(), l.kernel_h, l.kernel_w,
                  l.stride, l.padding, l.in_channels, l.out_channels);
  } else {
    std::snprintf(head, sizeof head, "%s %dx%d/%d", to_string(l.kind).c_str(), l.kernel_h, l.kernel_w, l.stride);
  }
  std::string out = head;
  for (const auto& e : report.entries) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "  %s=%.3e[%zu]", e.name.c_str(), e.max_rel_error, e.coordinates);
    out += buf;
  }
  char tail[64];
  std::snprintf(tail, sizeof tail, "  max=%.3e tol=%.1e %s", report.max_rel_error, report.tolerance,
                report.pass ? "PASS" : "FAIL");
  return out + tail;
}

}  // namespace mdseg
