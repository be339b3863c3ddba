#include "mdseg/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "mdseg/parallel.hpp"

namespace mdseg {

std::string to_string(Split split) { return split == Split::Train ? "train" : "test"; }

Dataset Dataset::select_domain(int domain) const {
  if (domain < 0 || domain >= num_domains()) {
    throw IndexError("domain " + std::to_string(domain) + " not in dataset with " + std::to_string(num_domains()) +
                     " domains");
  }
  Dataset out;
  out.split = split;
  out.seed = seed;
  out.domain_names = {domain_names.at(static_cast<std::size_t>(domain))};
  out.samples = {samples[static_cast<std::size_t>(domain)]};
  for (auto& s : out.samples[0]) s.domain = 0;
  return out;
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::ML: return "ml";
    case Variant::SD: return "sd";
    case Variant::MD: return "md";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  std::string s = name;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "ml" || s == "ml-fcn") return Variant::ML;
  if (s == "sd" || s == "sd-fcn") return Variant::SD;
  if (s == "md" || s == "md-fcn") return Variant::MD;
  throw ConfigError("unknown variant '" + name + "' (expected ml, sd or md)");
}

ArchPreset ArchPreset::default_preset() {
  ArchPreset p;
  p.name = "default";
  p.trunk = {LayerSpec::conv(1, 16, 3, 1, 1),  LayerSpec::relu(), LayerSpec::maxpool(2, 2),
             LayerSpec::conv(16, 32, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
             LayerSpec::conv(32, 64, 3, 1, 1), LayerSpec::relu()};
  p.head = {LayerSpec::conv(64, 32, 3, 1, 1),    LayerSpec::relu(), LayerSpec::deconv(32, 32, 4, 2, 1),
            LayerSpec::relu(),                   LayerSpec::deconv(32, 16, 4, 2, 1), LayerSpec::relu(),
            LayerSpec::conv(16, 2, 1, 1, 0)};
  return p;
}

ArchPreset ArchPreset::tiny_preset() {
  ArchPreset p;
  p.name = "tiny";
  p.trunk = {LayerSpec::conv(1, 2, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2)};
  p.head = {LayerSpec::conv(2, 3, 3, 1, 1), LayerSpec::relu(), LayerSpec::deconv(3, 2, 4, 2, 1), LayerSpec::relu(),
            LayerSpec::conv(2, 2, 1, 1, 0)};
  return p;
}

ArchPreset ArchPreset::by_name(const std::string& name) {
  if (name == "default") return default_preset();
  if (name == "tiny") return tiny_preset();
  throw ConfigError("unknown architecture preset '" + name + "'");
}

int ArchPreset::downsampling_factor() const {
  int f = 1;
  for (const auto& l : trunk)
    if (l.kind == LayerKind::MaxPool || (l.kind == LayerKind::Conv && l.stride > 1)) f *= l.stride;
  for (const auto& l : head)
    if (l.kind == LayerKind::MaxPool || (l.kind == LayerKind::Conv && l.stride > 1)) f *= l.stride;
  return f;
}

template <typename T>
int ModelParamsT<T>::head_index(int domain) const {
  if (variant != Variant::MD) return 0;
  if (domain < 0 || domain >= num_domains) {
    throw IndexError("domain " + std::to_string(domain) + " out of range for MD model with " +
                     std::to_string(num_domains) + " domains");
  }
  return domain;
}

template <typename T>
std::size_t ModelParamsT<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : trunk) n += l.weights.size() + l.bias.size();
  for (const auto& h : heads)
    for (const auto& l : h) n += l.weights.size() + l.bias.size();
  return n;
}

template struct ModelParamsT<float>;
template struct ModelParamsT<double>;

namespace {

Stack<float> init_stack(const std::vector<LayerSpec>& specs, std::mt19937_64& rng) {
  Stack<float> stack;
  for (const auto& spec : specs) {
    spec.validate();
    Layer<float> layer{spec, {}, {}};
    if (spec.has_weights()) {
      double fan_in = static_cast<double>(spec.in_channels) * spec.kernel_h * spec.kernel_w;
      if (spec.kind == LayerKind::Deconv) fan_in /= static_cast<double>(spec.stride) * spec.stride;
      const double bound = std::sqrt(6.0 / fan_in);
      std::uniform_real_distribution<double> dist(-bound, bound);
      layer.weights = Tensor<float>(spec.weight_shape());
      for (auto& v : layer.weights.storage()) v = static_cast<float>(dist(rng));
      layer.bias.assign(static_cast<std::size_t>(spec.out_channels), 0.0f);
    }
    stack.push_back(std::move(layer));
  }
  return stack;
}

// Walks (channels, extent) through a stack; returns the output pair.
std::pair<int, int> trace_geometry(const Stack<float>& stack, int channels, int extent, const char* where) {
  for (std::size_t i = 0; i < stack.size(); ++i) {
    const auto& spec = stack[i].spec;
    if (spec.has_weights()) {
      if (spec.in_channels != channels) {
        throw ConfigError(std::string(where) + " layer " + std::to_string(i) + " expects " +
                          std::to_string(spec.in_channels) + " input channels, previous layer produces " +
                          std::to_string(channels));
      }
      channels = spec.out_channels;
    }
    extent = spec.output_extent(extent);
  }
  return {channels, extent};
}

}  // namespace

void validate_model(const ModelParams& params) {
  if (params.num_domains < 1) throw ConfigError("num_domains must be >= 1");
  switch (params.variant) {
    case Variant::SD:
      if (params.num_domains != 1 || params.heads.size() != 1)
        throw ConfigError("SD model needs exactly one domain and one head");
      break;
    case Variant::ML:
      if (params.heads.size() != 1) throw ConfigError("ML model needs exactly one head");
      if (params.num_classes != params.num_domains + 1) throw ConfigError("ML head must have D+1 classes");
      break;
    case Variant::MD:
      if (params.heads.size() != static_cast<std::size_t>(params.num_domains))
        throw ConfigError("MD model needs one head per domain");
      break;
  }
  if (params.variant != Variant::ML && params.num_classes != 2) throw ConfigError("MD/SD heads are binary");
  const int res = params.working_resolution;
  if (res < 1) throw ConfigError("working_resolution must be >= 1");
  const auto [tc, te] = trace_geometry(params.trunk, 1, res, "trunk");
  for (const auto& head : params.heads) {
    const auto [hc, he] = trace_geometry(head, tc, te, "head");
    if (hc != params.num_classes) {
      throw ConfigError("head produces " + std::to_string(hc) + " channels, expected " +
                        std::to_string(params.num_classes));
    }
    if (he != res) {
      throw ConfigError("working resolution " + std::to_string(res) + " maps to output extent " +
                        std::to_string(he) + "; it must be divisible by the total downsampling factor");
    }
  }
}

bool accepts_resolution(const ModelParams& params, int res) {
  if (res < 1 || params.heads.empty()) return false;
  try {
    const auto [tc, te] = trace_geometry(params.trunk, 1, res, "trunk");
    return trace_geometry(params.heads.front(), tc, te, "head").second == res;
  } catch (const ConfigError&) {
    return false;
  }
}

ModelParams build_model(Variant variant, int num_domains, const ArchPreset& preset, std::uint64_t seed,
                        int working_resolution) {
  if (num_domains < 1) throw ConfigError("num_domains must be >= 1");
  if (variant == Variant::SD && num_domains != 1) throw ConfigError("SD variant is trained on exactly one domain");
  if (preset.head.empty() || !preset.head.back().has_weights())
    throw ConfigError("preset head must end in a weighted layer");
  const int factor = preset.downsampling_factor();
  if (working_resolution % factor != 0) {
    throw ConfigError("working_resolution " + std::to_string(working_resolution) +
                      " is not divisible by the downsampling factor " + std::to_string(factor));
  }

  ModelParams m;
  m.variant = variant;
  m.num_domains = num_domains;
  m.num_classes = variant == Variant::ML ? num_domains + 1 : 2;
  m.working_resolution = working_resolution;

  std::vector<LayerSpec> head = preset.head;
  head.back().out_channels = m.num_classes;

  std::mt19937_64 rng(seed);
  m.trunk = init_stack(preset.trunk, rng);
  const int heads = variant == Variant::MD ? num_domains : 1;
  for (int h = 0; h < heads; ++h) m.heads.push_back(init_stack(head, rng));
  validate_model(m);
  return m;
}

namespace {

template <typename T>
struct StackTrace {
  std::vector<Tensor<T>> inputs;
  std::vector<std::vector<std::int32_t>> argmax;
};

template <typename T>
Tensor<T> stack_forward(const Stack<T>& stack, Tensor<T> x, StackTrace<T>* trace) {
  if (trace) {
    trace->inputs.resize(stack.size());
    trace->argmax.resize(stack.size());
  }
  for (std::size_t i = 0; i < stack.size(); ++i) {
    const auto& l = stack[i];
    Tensor<T> y = layer_forward<T>(l.spec, x, l.weights, l.bias, trace ? &trace->argmax[i] : nullptr);
    if (trace) trace->inputs[i] = std::move(x);
    x = std::move(y);
  }
  return x;
}

template <typename T>
Tensor<T> stack_backward(const Stack<T>& stack, const StackTrace<T>& trace, Tensor<T> grad, Stack<T>& grads,
                         bool need_input_grad) {
  grads.resize(stack.size());
  for (std::size_t i = stack.size(); i-- > 0;) {
    const auto& l = stack[i];
    const bool want_input = need_input_grad || i > 0;
    LayerGrads<T> g = layer_backward<T>(l.spec, trace.inputs[i], l.weights, trace.argmax[i], grad, want_input);
    grads[i].spec = l.spec;
    grads[i].weights = std::move(g.weights);
    grads[i].bias = std::move(g.bias);
    grad = std::move(g.input);
  }
  return grad;
}

template <typename T>
void accumulate(Stack<T>& into, const Stack<T>& from) {
  if (into.empty()) {
    into = from;
    return;
  }
  for (std::size_t i = 0; i < into.size(); ++i) {
    auto& w = into[i].weights.storage();
    const auto& fw = from[i].weights.storage();
    for (std::size_t k = 0; k < w.size(); ++k) w[k] += fw[k];
    for (std::size_t k = 0; k < into[i].bias.size(); ++k) into[i].bias[k] += from[i].bias[k];
  }
}

template <typename T>
double stack_squared_norm(const Stack<T>& s) {
  double acc = 0.0;
  for (const auto& l : s) {
    for (T v : l.weights.storage()) acc += static_cast<double>(v) * v;
    for (T v : l.bias) acc += static_cast<double>(v) * v;
  }
  return acc;
}

template <typename T>
Stack<T> zero_grads(const Stack<T>& s) {
  Stack<T> out;
  for (const auto& l : s)
    out.push_back({l.spec, l.weights.empty() ? Tensor<T>() : Tensor<T>(l.weights.shape()),
                   std::vector<T>(l.bias.size(), T(0))});
  return out;
}

template <typename T>
void add_decay(Stack<T>& grads, const Stack<T>& params, double lambda) {
  if (lambda == 0.0) return;
  const T lam = static_cast<T>(lambda);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& g = grads[i].weights.storage();
    const auto& w = params[i].weights.storage();
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += lam * w[k];
    for (std::size_t k = 0; k < grads[i].bias.size(); ++k) grads[i].bias[k] += lam * params[i].bias[k];
  }
}

template <typename T>
void check_image(const ModelParamsT<T>& params, const Tensor<T>& image) {
  if (image.rank() != 3 || image.dim(0) != 1) {
    throw DimensionError("network input must have shape (1, H, W), got " + Tensor<T>::shape_string(image.shape()));
  }
  (void)params;
}

}  // namespace

template <typename T>
Tensor<T> forward_logits(const ModelParamsT<T>& params, int domain, const Tensor<T>& image) {
  const int head = params.head_index(domain);
  check_image(params, image);
  Tensor<T> features = stack_forward<T>(params.trunk, image, nullptr);
  return stack_forward<T>(params.heads[static_cast<std::size_t>(head)], std::move(features), nullptr);
}

template <typename T>
Tensor<T> forward(const ModelParamsT<T>& params, int domain, const Tensor<T>& image) {
  return softmax(forward_logits(params, domain, image));
}

template <typename T>
LossBreakdown compute_loss(const ModelParamsT<T>& params, const Batch& batch, double lambda) {
  const int head = params.head_index(batch.domain);
  if (batch.images.size() != batch.labels.size()) throw DimensionError("batch has unequal image and label counts");
  std::vector<double> fid(batch.images.size(), 0.0);
  parallel_for(batch.images.size(), [&](std::size_t i) {
    const Tensor<T> logits = forward_logits(params, batch.domain, batch.images[i].template cast<T>());
    fid[i] = static_cast<double>(softmax_cross_entropy(logits, batch.labels[i]).loss);
  });
  LossBreakdown r;
  for (double f : fid) r.fidelity += f;
  r.regularizer = 0.5 * lambda *
                  (stack_squared_norm(params.trunk) + stack_squared_norm(params.heads[static_cast<std::size_t>(head)]));
  r.total = r.fidelity + r.regularizer;
  return r;
}

template <typename T>
Gradients<T> compute_gradients(const ModelParamsT<T>& params, const Batch& batch, double lambda) {
  const int head = params.head_index(batch.domain);
  const auto& head_stack = params.heads[static_cast<std::size_t>(head)];
  if (batch.images.size() != batch.labels.size()) throw DimensionError("batch has unequal image and label counts");

  struct Partial {
    Stack<T> trunk, head;
    double fidelity = 0.0;
  };
  std::vector<Partial> partial(batch.images.size());
  parallel_for(batch.images.size(), [&](std::size_t i) {
    const Tensor<T> x = batch.images[i].template cast<T>();
    check_image(params, x);
    StackTrace<T> trunk_trace, head_trace;
    Tensor<T> features = stack_forward<T>(params.trunk, x, &trunk_trace);
    Tensor<T> logits = stack_forward<T>(head_stack, std::move(features), &head_trace);
    SoftmaxLoss<T> loss = softmax_cross_entropy(logits, batch.labels[i]);
    partial[i].fidelity = static_cast<double>(loss.loss);
    Tensor<T> g = stack_backward<T>(head_stack, head_trace, std::move(loss.grad_logits), partial[i].head, true);
    stack_backward<T>(params.trunk, trunk_trace, std::move(g), partial[i].trunk, false);
  });

  Gradients<T> out;
  out.head = head;
  out.trunk = zero_grads(params.trunk);
  out.head_grads = zero_grads(head_stack);
  for (auto& p : partial) {
    accumulate(out.trunk, p.trunk);
    accumulate(out.head_grads, p.head);
    out.loss.fidelity += p.fidelity;
    out.sample_fidelity.push_back(p.fidelity);
  }
  add_decay(out.trunk, params.trunk, lambda);
  add_decay(out.head_grads, head_stack, lambda);
  out.loss.regularizer = 0.5 * lambda * (stack_squared_norm(params.trunk) + stack_squared_norm(head_stack));
  out.loss.total = out.loss.fidelity + out.loss.regularizer;
  return out;
}

template Tensor<float> forward_logits(const ModelParamsT<float>&, int, const Tensor<float>&);
template Tensor<double> forward_logits(const ModelParamsT<double>&, int, const Tensor<double>&);
template Tensor<float> forward(const ModelParamsT<float>&, int, const Tensor<float>&);
template Tensor<double> forward(const ModelParamsT<double>&, int, const Tensor<double>&);
template LossBreakdown compute_loss(const ModelParamsT<float>&, const Batch&, double);
template LossBreakdown compute_loss(const ModelParamsT<double>&, const Batch&, double);
template Gradients<float> compute_gradients(const ModelParamsT<float>&, const Batch&, double);
template Gradients<double> compute_gradients(const ModelParamsT<double>&, const Batch&, double);

double squared_norm(const ModelParams& params) {
  double acc = stack_squared_norm(params.trunk);
  for (const auto& h : params.heads) acc += stack_squared_norm(h);
  return acc;
}

// ---------------------------------------------------------------------------

void TrainConfig::validate(int downsampling_factor) const {
  if (!(lambda >= 0.0)) throw ConfigError("train.lambda must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must be in [0, 1)");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (working_resolution < 1 || working_resolution % downsampling_factor != 0) {
    throw ConfigError("train.working_resolution must be a positive multiple of " +
                      std::to_string(downsampling_factor));
  }
  if (domain_schedule != "round_robin") throw ConfigError("train.domain_schedule must be \"round_robin\"");
}

SgdState SgdState::zeros_like(const ModelParams& params) {
  SgdState s;
  s.trunk = zero_grads(params.trunk);
  for (const auto& h : params.heads) s.heads.push_back(zero_grads(h));
  return s;
}

namespace {

void momentum_update(Stack<float>& params, Stack<float>& velocity, const Stack<float>& grads, float lr, float mu) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].weights.storage();
    auto& v = velocity[i].weights.storage();
    const auto& g = grads[i].weights.storage();
    for (std::size_t k = 0; k < w.size(); ++k) {
      v[k] = mu * v[k] - lr * g[k];
      w[k] += v[k];
    }
    auto& b = params[i].bias;
    auto& vb = velocity[i].bias;
    for (std::size_t k = 0; k < b.size(); ++k) {
      vb[k] = mu * vb[k] - lr * grads[i].bias[k];
      b[k] += vb[k];
    }
  }
}

}  // namespace

LossRecord sgd_step(ModelParams& params, SgdState& state, const Batch& batch, const TrainConfig& config,
                    std::size_t batch_index) {
  Gradients<float> g = compute_gradients(params, batch, config.lambda);
  if (!std::isfinite(g.loss.total)) throw TrainingError("non-finite loss", batch_index);
  const auto lr = static_cast<float>(config.learning_rate);
  const auto mu = static_cast<float>(config.momentum);
  momentum_update(params.trunk, state.trunk, g.trunk, lr, mu);
  momentum_update(params.heads[static_cast<std::size_t>(g.head)], state.heads[static_cast<std::size_t>(g.head)],
                  g.head_grads, lr, mu);
  return {g.loss, batch.domain, batch.images.size(), std::move(g.sample_fidelity)};
}

Mask training_labels(Variant variant, const ImageSample& sample) {
  Mask labels = sample.mask;
  const auto fg = static_cast<std::uint8_t>(variant == Variant::ML ? sample.domain + 1 : 1);
  for (auto& v : labels.data) v = v ? fg : 0;
  return labels;
}

TrainResult train(ModelParams& params, const Dataset& dataset, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  validate_model(params);
  config.validate(1);
  const int domains = dataset.num_domains();
  if (params.variant == Variant::SD) {
    if (domains != 1) throw ConfigError("SD training needs a single-domain dataset (select one domain first)");
  } else if (domains != params.num_domains) {
    throw ConfigError("dataset has " + std::to_string(domains) + " domains but the model expects " +
                      std::to_string(params.num_domains));
  }
  for (int d = 0; d < domains; ++d) {
    if (dataset.count(d) == 0) {
      throw ConfigError("domain " + std::to_string(d) + " (" +
                        (d < static_cast<int>(dataset.domain_names.size()) ? dataset.domain_names[d] : "?") +
                        ") has no training samples");
    }
  }

  // Resample everything to the working resolution once.
  const int res = params.working_resolution;
  std::vector<std::vector<Tensor<float>>> images(domains);
  std::vector<std::vector<Mask>> labels(domains);
  for (int d = 0; d < domains; ++d) {
    for (const auto& s : dataset.samples[d]) {
      images[d].push_back(bilinear_resize(s.image, res, res));
      ImageSample relabeled{{}, s.mask, d};
      labels[d].push_back(nearest_resize(training_labels(params.variant, relabeled), res, res));
    }
  }

  SgdState state = SgdState::zeros_like(params);
  std::mt19937_64 rng(config.rng_seed);
  TrainResult result;
  std::size_t batch_counter = 0;
  const auto B = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<Batch> batches;
    auto make_batch = [&](const std::vector<std::pair<int, std::size_t>>& items, int domain) {
      Batch b;
      b.domain = domain;
      for (auto [d, i] : items) {
        b.images.push_back(images[d][i]);
        b.labels.push_back(labels[d][i]);
      }
      return b;
    };

    std::vector<std::vector<std::pair<int, std::size_t>>> batch_items;
    std::vector<int> batch_domain;
    if (params.variant == Variant::ML) {
      std::vector<std::pair<int, std::size_t>> all;
      for (int d = 0; d < domains; ++d)
        for (std::size_t i = 0; i < images[d].size(); ++i) all.emplace_back(d, i);
      std::shuffle(all.begin(), all.end(), rng);
      for (std::size_t s = 0; s < all.size(); s += B) {
        batch_items.emplace_back(all.begin() + static_cast<std::ptrdiff_t>(s),
                                 all.begin() + static_cast<std::ptrdiff_t>(std::min(all.size(), s + B)));
        batch_domain.push_back(-1);
      }
    } else {
      // One round visits every domain once; an epoch lasts until the largest domain has
      // been seen once. Smaller domains are reshuffled and cycled.
      std::size_t rounds = 0;
      for (int d = 0; d < domains; ++d) rounds = std::max(rounds, (images[d].size() + B - 1) / B);
      std::vector<std::vector<std::size_t>> order(domains);
      std::vector<std::size_t> cursor(domains, 0);
      for (int d = 0; d < domains; ++d) {
        order[d].resize(images[d].size());
        std::iota(order[d].begin(), order[d].end(), 0);
        std::shuffle(order[d].begin(), order[d].end(), rng);
      }
      for (std::size_t r = 0; r < rounds; ++r)
        for (int d = 0; d < domains; ++d) {
          std::vector<std::pair<int, std::size_t>> chunk;
          const std::size_t take = std::min(B, order[d].size());
          while (chunk.size() < take) {
            if (cursor[d] == order[d].size()) {
              std::shuffle(order[d].begin(), order[d].end(), rng);
              cursor[d] = 0;
            }
            chunk.emplace_back(d, order[d][cursor[d]++]);
          }
          batch_items.push_back(std::move(chunk));
          batch_domain.push_back(d);
        }
    }

    std::vector<double> fid_sum(domains, 0.0);
    std::vector<std::size_t> fid_count(domains, 0);
    for (std::size_t b = 0; b < batch_items.size(); ++b) {
      const Batch batch = make_batch(batch_items[b], batch_domain[b]);
      const LossRecord rec = sgd_step(params, state, batch, config, batch_counter++);
      for (std::size_t k = 0; k < batch_items[b].size(); ++k) {
        const int d = batch_items[b][k].first;
        fid_sum[d] += rec.sample_fidelity[k];
        ++fid_count[d];
      }
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.images = fid_count;
    for (int d = 0; d < domains; ++d) stats.mean_fidelity.push_back(fid_sum[d] / static_cast<double>(fid_count[d]));
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.epochs.push_back(stats);
    if (on_epoch && !on_epoch(stats, params)) break;
  }
  return result;
}

}  // namespace mdseg
