#pragma once

// Fully convolutional segmentation networks with a shared trunk (domain-generic
// layers, W_s) and one or more heads (domain-specific layers, W_d), the
// multi-domain loss and its mini-batch SGD optimizer.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mdseg/dataset.hpp"
#include "mdseg/layers.hpp"

namespace mdseg {

/// ML: one multi-label head with D+1 classes. SD: one binary head trained on a single
/// domain. MD: shared trunk plus one binary head per domain.
enum class Variant : std::uint8_t { ML = 0, SD = 1, MD = 2 };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);

template <typename T>
struct Layer {
  LayerSpec spec;
  Tensor<T> weights;  // empty for relu / maxpool
  std::vector<T> bias;

  friend bool operator==(const Layer&, const Layer&) = default;
};

template <typename T>
using Stack = std::vector<Layer<T>>;

struct ArchPreset {
  std::string name;
  std::vector<LayerSpec> trunk;
  /// Head layers; the final layer's out_channels is replaced by the variant's class count.
  std::vector<LayerSpec> head;

  /// conv3x3(1->16) relu pool2 conv3x3(16->32) relu pool2 conv3x3(32->64) relu |
  /// conv3x3(64->32) relu deconv4x4/2(32->32) relu deconv4x4/2(32->16) relu conv1x1(16->C)
  static ArchPreset default_preset();
  /// A few hundred parameters; used for finite-difference checks of the whole loss.
  static ArchPreset tiny_preset();
  static ArchPreset by_name(const std::string& name);

  int downsampling_factor() const;
};

template <typename T>
struct ModelParamsT {
  Variant variant = Variant::MD;
  int num_domains = 1;
  int num_classes = 2;
  int working_resolution = 64;
  Stack<T> trunk;
  std::vector<Stack<T>> heads;

  /// Head used for `domain`; ML and SD always use head 0. Throws IndexError.
  int head_index(int domain) const;
  std::size_t parameter_count() const;

  template <typename U>
  ModelParamsT<U> cast() const {
    auto conv = [](const Stack<T>& s) {
      Stack<U> out;
      for (const auto& l : s) {
        out.push_back({l.spec, l.weights.empty() ? Tensor<U>() : l.weights.template cast<U>(),
                       std::vector<U>(l.bias.begin(), l.bias.end())});
      }
      return out;
    };
    ModelParamsT<U> m;
    m.variant = variant;
    m.num_domains = num_domains;
    m.num_classes = num_classes;
    m.working_resolution = working_resolution;
    m.trunk = conv(trunk);
    for (const auto& h : heads) m.heads.push_back(conv(h));
    return m;
  }

  friend bool operator==(const ModelParamsT&, const ModelParamsT&) = default;
};

using ModelParams = ModelParamsT<float>;

/// Seeded fan-in scaled uniform initialization, zero biases. Throws ConfigError when the
/// variant and domain count disagree or the preset does not map a working-resolution
/// input back to the same resolution.
ModelParams build_model(Variant variant, int num_domains, const ArchPreset& preset, std::uint64_t seed,
                        int working_resolution = 64);

/// Validates layer chaining and the working-resolution round trip.
void validate_model(const ModelParams& params);

/// True when a (1, res, res) input maps to a (C, res, res) output.
bool accepts_resolution(const ModelParams& params, int res);

template <typename T>
Tensor<T> forward_logits(const ModelParamsT<T>& params, int domain, const Tensor<T>& image);

/// Per-pixel class probabilities (C, H, W) for a (1, H, W) image.
template <typename T>
Tensor<T> forward(const ModelParamsT<T>& params, int domain, const Tensor<T>& image);

/// Images and label maps of one domain (domain = -1 for mixed ML batches).
struct Batch {
  std::vector<Tensor<float>> images;
  std::vector<Mask> labels;
  int domain = 0;
};

struct LossBreakdown {
  double total = 0.0;
  double fidelity = 0.0;
  double regularizer = 0.0;
};

/// fidelity = sum over batch pixels of -log p(y_x | x); regularizer =
/// lambda/2 * (|W_d|^2 + |W_s|^2) for the trunk and the batch's head; total = sum.
template <typename T>
LossBreakdown compute_loss(const ModelParamsT<T>& params, const Batch& batch, double lambda);

template <typename T>
struct Gradients {
  int head = 0;
  Stack<T> trunk;
  Stack<T> head_grads;
  LossBreakdown loss;
  std::vector<double> sample_fidelity;
};

/// Gradient of compute_loss with respect to the trunk and the batch's head.
template <typename T>
Gradients<T> compute_gradients(const ModelParamsT<T>& params, const Batch& batch, double lambda);

struct TrainConfig {
  double lambda = 1e-4;
  double learning_rate = 1e-6;
  double momentum = 0.9;
  int batch_size = 8;
  int epochs = 20;
  int working_resolution = 64;
  std::uint64_t rng_seed = 1;
  std::string domain_schedule = "round_robin";
  std::string preset = "default";

  void validate(int downsampling_factor = 4) const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Momentum buffers, shaped like the model parameters.
struct SgdState {
  Stack<float> trunk;
  std::vector<Stack<float>> heads;
  static SgdState zeros_like(const ModelParams& params);
};

struct LossRecord {
  LossBreakdown loss;
  int domain = 0;
  std::size_t images = 0;
  std::vector<double> sample_fidelity;
};

/// v <- momentum * v - lr * g, w <- w + v on the trunk and the batch's head only;
/// g includes the weight-decay term lambda * w. Throws TrainingError on a non-finite loss.
LossRecord sgd_step(ModelParams& params, SgdState& state, const Batch& batch, const TrainConfig& config,
                    std::size_t batch_index = 0);

struct EpochStats {
  int epoch = 0;
  /// Mean per-image fidelity (summed pixel cross-entropy) for each domain.
  std::vector<double> mean_fidelity;
  std::vector<std::size_t> images;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> epochs;
};

/// Returning false from the callback stops training after that epoch.
using EpochCallback = std::function<bool(const EpochStats&, const ModelParams&)>;

/// MD and SD batches are single-domain and visit domains round-robin; ML batches mix
/// domains with labels 0 (background) and d+1 (structure of domain d).
TrainResult train(ModelParams& params, const Dataset& dataset, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Label map for one sample under the model's variant.
Mask training_labels(Variant variant, const ImageSample& sample);

/// Sum of squared parameters of every layer in the model.
double squared_norm(const ModelParams& params);

}  // namespace mdseg
