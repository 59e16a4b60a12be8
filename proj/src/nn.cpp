#include "ar3d/nn.hpp"

#include <cmath>
#include <cstring>
#include <random>

#include "parallel.hpp"

namespace ar3d {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool has_params(const LayerSpec& layer) {
  return std::holds_alternative<Conv3dLayer>(layer) || std::holds_alternative<DenseLayer>(layer);
}

Tensor sample_slice(const Tensor& batch, std::size_t b) {
  Shape s(batch.shape().begin() + 1, batch.shape().end());
  const std::size_t n = shape_numel(s);
  std::vector<float> data(batch.data().begin() + b * n, batch.data().begin() + (b + 1) * n);
  return Tensor(std::move(s), std::move(data));
}

}  // namespace

std::string layer_name(const LayerSpec& layer) {
  return std::visit(overloaded{
                        [](const Conv3dLayer& c) { return "Conv3d(" + std::to_string(c.out_channels) + ")"; },
                        [](const MaxPool3dLayer&) { return std::string("MaxPool3d"); },
                        [](const FlattenLayer&) { return std::string("Flatten"); },
                        [](const DenseLayer& d) { return "Dense(" + std::to_string(d.units) + ")"; },
                        [](const DropoutLayer& d) { return "Dropout(" + std::to_string(d.p) + ")"; },
                    },
                    layer);
}

std::vector<Shape> ModelSpec::layer_shapes() const {
  if (input.channels == 0 || input.frames == 0 || input.height == 0 || input.width == 0) {
    throw Error("model input shape has a zero dimension: " + shape_str(input.as_shape()));
  }
  std::vector<Shape> shapes;
  Shape cur = input.as_shape();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string where = "layer " + std::to_string(i) + " (" + layer_name(layers[i]) + "): ";
    std::visit(overloaded{
                   [&](const Conv3dLayer& c) {
                     if (cur.size() != 4) throw Error(where + "expects [C,T,H,W] input, got " + shape_str(cur));
                     if (c.out_channels == 0) throw Error(where + "out_channels must be >= 1");
                     try {
                       c.geom.validate();
                     } catch (const Error& e) {
                       throw Error(where + e.what());
                     }
                     cur[0] = c.out_channels;
                   },
                   [&](const MaxPool3dLayer&) {
                     if (cur.size() != 4) throw Error(where + "expects [C,T,H,W] input, got " + shape_str(cur));
                     for (std::size_t a = 1; a < 4; ++a) {
                       if (cur[a] < 2) throw Error(where + "pooled axis too small in " + shape_str(cur));
                       cur[a] /= 2;
                     }
                   },
                   [&](const FlattenLayer&) { cur = Shape{shape_numel(cur)}; },
                   [&](const DenseLayer& d) {
                     if (cur.size() != 1) throw Error(where + "expects a flat input, got " + shape_str(cur));
                     if (d.units == 0) throw Error(where + "units must be >= 1");
                     cur = Shape{d.units};
                   },
                   [&](const DropoutLayer& d) {
                     if (!(d.p >= 0.0 && d.p < 1.0)) throw Error(where + "dropout p must lie in [0,1)");
                   },
               },
               layers[i]);
    shapes.push_back(cur);
  }
  return shapes;
}

void ModelSpec::validate() const {
  if (num_classes < 2) throw Error("model needs at least 2 classes");
  if (layers.empty()) throw Error("model has no layers");
  const auto* last = std::get_if<DenseLayer>(&layers.back());
  if (!last || last->units != num_classes) {
    throw Error("model must end in Dense(" + std::to_string(num_classes) + ")");
  }
  layer_shapes();
}

std::size_t ModelSpec::pool_stages() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += std::holds_alternative<MaxPool3dLayer>(l);
  return n;
}

ModelSpec build_preset(int model_id, const InputShape& input, std::size_t num_classes) {
  if (model_id < 1 || model_id > 4) {
    throw Error("unknown model preset " + std::to_string(model_id) + " (expected 1..4)");
  }
  ModelSpec spec;
  spec.input = input;
  spec.num_classes = num_classes;
  spec.preset = model_id;
  const std::size_t conv_layers = model_id == 1 ? 2 : 3;
  const std::size_t widths[] = {16, 32, 64};
  for (std::size_t i = 0; i < conv_layers; ++i) {
    spec.layers.emplace_back(Conv3dLayer{widths[i], ConvGeom{}, Activation::relu});
    spec.layers.emplace_back(MaxPool3dLayer{});
  }
  spec.layers.emplace_back(FlattenLayer{});
  spec.layers.emplace_back(DenseLayer{128, Activation::relu});
  if (model_id >= 3) spec.layers.emplace_back(DropoutLayer{0.5});
  spec.layers.emplace_back(DenseLayer{num_classes, Activation::none});

  const std::size_t minimum = std::size_t{1} << conv_layers;
  if (input.frames < minimum || input.height < minimum || input.width < minimum) {
    throw Error("model " + std::to_string(model_id) + " needs every T/H/W >= " +
                std::to_string(minimum) + " for its " + std::to_string(conv_layers) +
                " pooling stages, got " + shape_str(input.as_shape()));
  }
  spec.validate();
  return spec;
}

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.value.size();
  return n;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet z;
  z.tensors.reserve(tensors.size());
  for (const auto& t : tensors) z.tensors.push_back({t.name, Tensor(t.value.shape())});
  return z;
}

std::uint64_t ParamSet::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& t : tensors) {
    mix(t.name.data(), t.name.size());
    for (auto d : t.value.shape()) mix(&d, sizeof d);
    mix(t.value.data().data(), t.value.size() * sizeof(float));
  }
  return h;
}

std::vector<NamedTensor> param_layout(const ModelSpec& spec) {
  const auto shapes = spec.layer_shapes();
  std::vector<NamedTensor> out;
  Shape in = spec.input.as_shape();
  std::size_t convs = 0, denses = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (const auto* c = std::get_if<Conv3dLayer>(&spec.layers[i])) {
      const std::string prefix = "conv" + std::to_string(convs++) + ".";
      out.push_back({prefix + "weight", Tensor({c->out_channels, in[0], c->geom.kernel[0],
                                                c->geom.kernel[1], c->geom.kernel[2]})});
      out.push_back({prefix + "bias", Tensor({c->out_channels})});
    } else if (const auto* d = std::get_if<DenseLayer>(&spec.layers[i])) {
      const std::string prefix = "dense" + std::to_string(denses++) + ".";
      out.push_back({prefix + "weight", Tensor({d->units, in[0]})});
      out.push_back({prefix + "bias", Tensor({d->units})});
    }
    in = shapes[i];
  }
  return out;
}

void check_params(const ModelSpec& spec, const ParamSet& params) {
  const auto layout = param_layout(spec);
  if (layout.size() != params.tensors.size()) {
    throw Error("parameter set has " + std::to_string(params.tensors.size()) +
                " tensors, model expects " + std::to_string(layout.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& got = params.tensors[i];
    if (got.name != layout[i].name || got.value.shape() != layout[i].value.shape()) {
      throw Error("parameter " + got.name + " " + shape_str(got.value.shape()) + " does not match " +
                  layout[i].name + " " + shape_str(layout[i].value.shape()));
    }
    for (float v : got.value.data()) {
      if (!std::isfinite(v)) throw Error("parameter " + got.name + " holds a non-finite value");
    }
  }
}

ParamSet init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamSet params{param_layout(spec)};
  std::mt19937_64 rng(seed);
  std::size_t t = 0;
  for (const auto& layer : spec.layers) {
    if (!has_params(layer)) continue;
    auto& w = params.tensors[t].value;
    Activation act = Activation::none;
    if (const auto* c = std::get_if<Conv3dLayer>(&layer)) act = c->activation;
    if (const auto* d = std::get_if<DenseLayer>(&layer)) act = d->activation;
    const double fan_in = static_cast<double>(w.size() / w.dim(0));
    const double stddev = std::sqrt((act == Activation::relu ? 2.0 : 1.0) / fan_in);
    std::normal_distribution<double> normal(0.0, stddev);
    for (auto& v : w.data()) v = static_cast<float>(normal(rng));
    t += 2;  // bias stays zero
  }
  return params;
}

namespace {

struct LayerRefs {
  std::vector<int> param_index;  // first tensor index per layer, -1 if none
};

LayerRefs layer_refs(const ModelSpec& spec) {
  LayerRefs r;
  int next = 0;
  for (const auto& layer : spec.layers) {
    if (has_params(layer)) {
      r.param_index.push_back(next);
      next += 2;
    } else {
      r.param_index.push_back(-1);
    }
  }
  return r;
}

void check_batch(const ModelSpec& spec, const Tensor& batch) {
  const Shape want = spec.input.as_shape();
  if (batch.rank() != 5 || !std::equal(want.begin(), want.end(), batch.shape().begin() + 1)) {
    throw Error("batch shape " + shape_str(batch.shape()) + " does not match model input [B," +
                shape_str(want).substr(1));
  }
}

// Runs one sample through the network. cache may be null in eval mode.
Tensor forward_sample(const ModelSpec& spec, const ParamSet& params, const LayerRefs& refs,
                      Tensor x, Mode mode, std::uint64_t sample_seed, SampleCache* cache) {
  const std::size_t L = spec.layers.size();
  if (cache) {
    cache->inputs.resize(L);
    cache->pre_act.resize(L);
    cache->pools.resize(L);
    cache->masks.resize(L);
  }
  for (std::size_t i = 0; i < L; ++i) {
    if (cache) cache->inputs[i] = x;
    const auto& layer = spec.layers[i];
    const int pi = refs.param_index[i];
    if (const auto* c = std::get_if<Conv3dLayer>(&layer)) {
      Tensor z = conv3d_forward(x, params.tensors[pi].value, params.tensors[pi + 1].value, c->geom);
      if (c->activation == Activation::relu) {
        x = relu(z);
        if (cache) cache->pre_act[i] = std::move(z);
      } else {
        x = std::move(z);
      }
    } else if (std::holds_alternative<MaxPool3dLayer>(layer)) {
      auto r = maxpool3d_forward(x);
      x = std::move(r.output);
      if (cache) cache->pools[i] = std::move(r.index);
    } else if (std::holds_alternative<FlattenLayer>(layer)) {
      x = x.reshaped({x.size()});
    } else if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      Tensor z = dense_forward(x, params.tensors[pi].value, params.tensors[pi + 1].value);
      if (d->activation == Activation::relu) {
        x = relu(z);
        if (cache) cache->pre_act[i] = std::move(z);
      } else {
        x = std::move(z);
      }
    } else if (const auto* dr = std::get_if<DropoutLayer>(&layer)) {
      if (mode == Mode::train && dr->p > 0.0) {
        std::mt19937_64 rng(splitmix64(sample_seed ^ splitmix64(i)));
        const double keep = 1.0 - dr->p;
        const float scale = static_cast<float>(1.0 / keep);
        std::vector<std::uint8_t> mask(x.size());
        for (std::size_t j = 0; j < x.size(); ++j) {
          const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
          mask[j] = u < keep;
          x[j] = mask[j] ? x[j] * scale : 0.0f;
        }
        if (cache) cache->masks[i] = std::move(mask);
      }
    }
  }
  if (cache) cache->logits = x;
  return x;
}

}  // namespace

ForwardResult model_forward(const ModelSpec& spec, const ParamSet& params, const Tensor& batch,
                            Mode mode, std::uint64_t seed) {
  check_batch(spec, batch);
  check_params(spec, params);
  const auto refs = layer_refs(spec);
  const std::size_t B = batch.dim(0), K = spec.num_classes;
  ForwardResult r{Tensor({B, K}), {}};
  r.cache.samples.resize(B);
  r.cache.params_fingerprint = params.fingerprint();
  r.cache.layer_count = spec.layers.size();
  detail::parallel_for(B, [&](std::size_t b) {
    const auto sample_seed = splitmix64(seed + splitmix64(b));
    forward_sample(spec, params, refs, sample_slice(batch, b), mode, sample_seed, &r.cache.samples[b]);
  });
  for (std::size_t b = 0; b < B; ++b) {
    const auto& lg = r.cache.samples[b].logits;
    std::copy(lg.data().begin(), lg.data().end(), r.logits.data().begin() + b * K);
  }
  return r;
}

Tensor model_logits(const ModelSpec& spec, const ParamSet& params, const Tensor& batch) {
  check_batch(spec, batch);
  check_params(spec, params);
  const auto refs = layer_refs(spec);
  const std::size_t B = batch.dim(0), K = spec.num_classes;
  Tensor logits({B, K});
  detail::parallel_for(B, [&](std::size_t b) {
    const auto lg = forward_sample(spec, params, refs, sample_slice(batch, b), Mode::eval, 0, nullptr);
    std::copy(lg.data().begin(), lg.data().end(), logits.data().begin() + b * K);
  });
  return logits;
}

BackwardResult model_backward(const ModelSpec& spec, const ParamSet& params,
                              const ForwardCache& cache, const std::vector<std::size_t>& targets) {
  if (cache.layer_count != spec.layers.size() || cache.params_fingerprint != params.fingerprint()) {
    throw Error("stale forward cache: parameters or model changed since the forward pass");
  }
  const std::size_t B = cache.samples.size();
  if (targets.size() != B || B == 0) {
    throw Error("backward got " + std::to_string(targets.size()) + " targets for a batch of " +
                std::to_string(B));
  }
  const auto refs = layer_refs(spec);
  const std::size_t L = spec.layers.size();
  std::vector<ParamSet> per_sample(B);
  std::vector<double> losses(B);

  detail::parallel_for(B, [&](std::size_t b) {
    const auto& sc = cache.samples[b];
    auto xent = softmax_cross_entropy(sc.logits, targets[b]);
    losses[b] = xent.loss;
    Tensor grad = std::move(xent.grad_logits);
    const float inv_b = 1.0f / static_cast<float>(B);
    for (auto& v : grad.data()) v *= inv_b;

    ParamSet g = params.zeros_like();
    for (std::size_t i = L; i-- > 0;) {
      const auto& layer = spec.layers[i];
      const int pi = refs.param_index[i];
      if (const auto* c = std::get_if<Conv3dLayer>(&layer)) {
        if (c->activation == Activation::relu) grad = relu_backward(sc.pre_act[i], grad);
        auto cg = conv3d_backward(sc.inputs[i], params.tensors[pi].value, c->geom, grad);
        g.tensors[pi].value = std::move(cg.weights);
        g.tensors[pi + 1].value = std::move(cg.bias);
        if (i > 0) grad = std::move(cg.input);
      } else if (std::holds_alternative<MaxPool3dLayer>(layer)) {
        grad = maxpool3d_backward(sc.pools[i], grad);
      } else if (std::holds_alternative<FlattenLayer>(layer)) {
        grad = grad.reshaped(sc.inputs[i].shape());
      } else if (const auto* d = std::get_if<DenseLayer>(&layer)) {
        if (d->activation == Activation::relu) grad = relu_backward(sc.pre_act[i], grad);
        auto dg = dense_backward(sc.inputs[i], params.tensors[pi].value, grad);
        g.tensors[pi].value = std::move(dg.weights);
        g.tensors[pi + 1].value = std::move(dg.bias);
        grad = std::move(dg.input);
      } else if (const auto* dr = std::get_if<DropoutLayer>(&layer)) {
        const auto& mask = sc.masks[i];
        if (!mask.empty()) {
          if (mask.size() != grad.size()) throw Error("stale forward cache: dropout mask size");
          const float scale = static_cast<float>(1.0 / (1.0 - dr->p));
          for (std::size_t j = 0; j < grad.size(); ++j) grad[j] = mask[j] ? grad[j] * scale : 0.0f;
        }
      }
    }
    per_sample[b] = std::move(g);
  });

  BackwardResult r{0.0, params.zeros_like()};
  for (std::size_t t = 0; t < r.grads.tensors.size(); ++t) {
    auto& dst = r.grads.tensors[t].value;
    std::vector<double> acc(dst.size(), 0.0);
    for (std::size_t b = 0; b < B; ++b) {
      const auto src = per_sample[b].tensors[t].value.data();
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += src[j];
    }
    for (std::size_t j = 0; j < acc.size(); ++j) dst[j] = static_cast<float>(acc[j]);
  }
  for (double l : losses) r.loss += l;
  r.loss /= static_cast<double>(B);
  return r;
}

}  // namespace ar3d
