#include "ar3d/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ar3d {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

static void check_shape(const Shape& shape) {
  if (shape.empty()) throw Error("tensor shape must have at least one axis");
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == 0) {
      throw Error("tensor axis " + std::to_string(i) + " has zero extent in " + shape_str(shape));
    }
  }
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw Error("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                shape_str(shape_));
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  check_shape(shape);
  if (shape_numel(shape) != data_.size()) {
    throw Error("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

void ConvGeom::validate() const {
  static constexpr const char* names[] = {"kT", "kH", "kW"};
  for (std::size_t a = 0; a < 3; ++a) {
    if (kernel[a] == 0 || kernel[a] % 2 == 0) {
      throw Error(std::string("conv kernel extent ") + names[a] + "=" + std::to_string(kernel[a]) +
                  " must be odd and positive");
    }
  }
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(what);
}

// Valid output range [lo, hi) along one axis for kernel offset k with padding p.
struct Span1 {
  std::size_t lo, hi;
};

Span1 valid_range(std::size_t extent, std::size_t k, std::size_t pad) {
  // input index = out + k - pad must lie in [0, extent)
  std::size_t lo = k < pad ? pad - k : 0;
  std::size_t hi = extent + pad > k ? std::min(extent, extent + pad - k) : 0;
  if (hi < lo) hi = lo;
  return {lo, hi};
}

void check_conv_shapes(const Tensor& input, const Tensor& weights, const ConvGeom& geom) {
  geom.validate();
  require(input.rank() == 4, "conv3d input must be [Cin,T,H,W], got " + shape_str(input.shape()));
  require(weights.rank() == 5,
          "conv3d weights must be [Cout,Cin,kT,kH,kW], got " + shape_str(weights.shape()));
  require(weights.dim(1) == input.dim(0),
          "conv3d axis Cin mismatch: input has " + std::to_string(input.dim(0)) +
              " channels, weights expect " + std::to_string(weights.dim(1)));
  static constexpr const char* names[] = {"kT", "kH", "kW"};
  for (std::size_t a = 0; a < 3; ++a) {
    require(weights.dim(2 + a) == geom.kernel[a],
            std::string("conv3d axis ") + names[a] + " mismatch: weights have " +
                std::to_string(weights.dim(2 + a)) + ", geometry says " +
                std::to_string(geom.kernel[a]));
  }
}

}  // namespace

Tensor conv3d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias,
                      const ConvGeom& geom) {
  check_conv_shapes(input, weights, geom);
  const std::size_t cin = input.dim(0), T = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t cout = weights.dim(0);
  require(bias.rank() == 1 && bias.dim(0) == cout,
          "conv3d axis Cout mismatch: bias " + shape_str(bias.shape()) + " vs " +
              std::to_string(cout) + " filters");
  const auto [kT, kH, kW] = geom.kernel;
  const std::size_t pT = geom.pad(0), pH = geom.pad(1), pW = geom.pad(2);
  const std::size_t plane = H * W;

  Tensor out({cout, T, H, W});
  const float* in = input.data().data();
  const float* wt = weights.data().data();
  std::vector<double> acc(plane);

  for (std::size_t f = 0; f < cout; ++f) {
    for (std::size_t t = 0; t < T; ++t) {
      std::fill(acc.begin(), acc.end(), static_cast<double>(bias[f]));
      for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t dt = 0; dt < kT; ++dt) {
          if (t + dt < pT || t + dt - pT >= T) continue;
          const float* src_frame = in + (c * T + (t + dt - pT)) * plane;
          const float* wk = wt + (((f * cin + c) * kT + dt) * kH) * kW;
          for (std::size_t dh = 0; dh < kH; ++dh) {
            const auto hr = valid_range(H, dh, pH);
            for (std::size_t dw = 0; dw < kW; ++dw) {
              const double wv = wk[dh * kW + dw];
              const auto wr = valid_range(W, dw, pW);
              const std::size_t n = wr.hi - wr.lo;
              for (std::size_t h = hr.lo; h < hr.hi; ++h) {
                const float* src = src_frame + (h + dh - pH) * W + (wr.lo + dw - pW);
                double* dst = acc.data() + h * W + wr.lo;
                for (std::size_t i = 0; i < n; ++i) dst[i] += wv * src[i];
              }
            }
          }
        }
      }
      float* o = out.data().data() + (f * T + t) * plane;
      for (std::size_t i = 0; i < plane; ++i) o[i] = static_cast<float>(acc[i]);
    }
  }
  return out;
}

ConvGrads conv3d_backward(const Tensor& input, const Tensor& weights, const ConvGeom& geom,
                          const Tensor& grad_out) {
  check_conv_shapes(input, weights, geom);
  const std::size_t cin = input.dim(0), T = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t cout = weights.dim(0);
  const Shape expected{cout, T, H, W};
  if (grad_out.shape() != expected) {
    throw Error("conv3d grad_out shape " + shape_str(grad_out.shape()) +
                " does not match forward output " + shape_str(expected));
  }
  const auto [kT, kH, kW] = geom.kernel;
  const std::size_t pT = geom.pad(0), pH = geom.pad(1), pW = geom.pad(2);
  const std::size_t plane = H * W;
  const float* in = input.data().data();
  const float* wt = weights.data().data();
  const float* g = grad_out.data().data();

  ConvGrads grads{Tensor(input.shape()), Tensor(weights.shape()), Tensor({cout})};

  for (std::size_t f = 0; f < cout; ++f) {
    double s = 0.0;
    const float* gf = g + f * T * plane;
    for (std::size_t i = 0; i < T * plane; ++i) s += gf[i];
    grads.bias[f] = static_cast<float>(s);
  }

  // dL/dW[f,c,dt,dh,dw] = sum_{t,h,w} g[f,t,h,w] * in[c, t+dt-p, h+dh-p, w+dw-p]
  std::vector<double> partial(W);
  float* gw = grads.weights.data().data();
  for (std::size_t f = 0; f < cout; ++f) {
    for (std::size_t c = 0; c < cin; ++c) {
      for (std::size_t dt = 0; dt < kT; ++dt) {
        const auto tr = valid_range(T, dt, pT);
        for (std::size_t dh = 0; dh < kH; ++dh) {
          const auto hr = valid_range(H, dh, pH);
          for (std::size_t dw = 0; dw < kW; ++dw) {
            const auto wr = valid_range(W, dw, pW);
            const std::size_t n = wr.hi - wr.lo;
            std::fill(partial.begin(), partial.end(), 0.0);
            for (std::size_t t = tr.lo; t < tr.hi; ++t) {
              const float* src_frame = in + (c * T + (t + dt - pT)) * plane;
              const float* gt = g + (f * T + t) * plane;
              for (std::size_t h = hr.lo; h < hr.hi; ++h) {
                const float* src = src_frame + (h + dh - pH) * W + (wr.lo + dw - pW);
                const float* gr = gt + h * W + wr.lo;
                for (std::size_t i = 0; i < n; ++i) {
                  partial[i] += static_cast<double>(gr[i]) * src[i];
                }
              }
            }
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += partial[i];
            gw[(((f * cin + c) * kT + dt) * kH + dh) * kW + dw] = static_cast<float>(s);
          }
        }
      }
    }
  }

  // dL/din[c, ti, hi, wi] = sum over filters/offsets of g * W
  std::vector<double> acc(T * plane);
  for (std::size_t c = 0; c < cin; ++c) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t f = 0; f < cout; ++f) {
      for (std::size_t dt = 0; dt < kT; ++dt) {
        const auto tr = valid_range(T, dt, pT);
        const float* wk = wt + (((f * cin + c) * kT + dt) * kH) * kW;
        for (std::size_t dh = 0; dh < kH; ++dh) {
          const auto hr = valid_range(H, dh, pH);
          for (std::size_t dw = 0; dw < kW; ++dw) {
            const double wv = wk[dh * kW + dw];
            const auto wr = valid_range(W, dw, pW);
            const std::size_t n = wr.hi - wr.lo;
            for (std::size_t t = tr.lo; t < tr.hi; ++t) {
              double* dst_frame = acc.data() + (t + dt - pT) * plane;
              const float* gt = g + (f * T + t) * plane;
              for (std::size_t h = hr.lo; h < hr.hi; ++h) {
                double* dst = dst_frame + (h + dh - pH) * W + (wr.lo + dw - pW);
                const float* gr = gt + h * W + wr.lo;
                for (std::size_t i = 0; i < n; ++i) dst[i] += wv * gr[i];
              }
            }
          }
        }
      }
    }
    float* gi = grads.input.data().data() + c * T * plane;
    for (std::size_t i = 0; i < T * plane; ++i) gi[i] = static_cast<float>(acc[i]);
  }
  return grads;
}

PoolResult maxpool3d_forward(const Tensor& input) {
  require(input.rank() == 4, "maxpool3d input must be [C,T,H,W], got " + shape_str(input.shape()));
  static constexpr const char* names[] = {"T", "H", "W"};
  for (std::size_t a = 0; a < 3; ++a) {
    require(input.dim(1 + a) >= 2, std::string("maxpool3d axis ") + names[a] + " has extent " +
                                       std::to_string(input.dim(1 + a)) + " < 2");
  }
  const std::size_t C = input.dim(0), T = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t To = T / 2, Ho = H / 2, Wo = W / 2;
  PoolResult r{Tensor({C, To, Ho, Wo}), PoolIndex{input.shape(), {C, To, Ho, Wo}, {}}};
  r.index.argmax.resize(r.output.size());
  const float* in = input.data().data();
  std::size_t o = 0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 0; t < To; ++t)
      for (std::size_t h = 0; h < Ho; ++h)
        for (std::size_t w = 0; w < Wo; ++w, ++o) {
          std::size_t best = ((c * T + 2 * t) * H + 2 * h) * W + 2 * w;
          for (std::size_t dt = 0; dt < 2; ++dt)
            for (std::size_t dh = 0; dh < 2; ++dh)
              for (std::size_t dw = 0; dw < 2; ++dw) {
                const std::size_t idx = ((c * T + 2 * t + dt) * H + 2 * h + dh) * W + 2 * w + dw;
                if (in[idx] > in[best]) best = idx;
              }
          r.output[o] = in[best];
          r.index.argmax[o] = static_cast<std::uint32_t>(best);
        }
  return r;
}

Tensor maxpool3d_backward(const PoolIndex& index, const Tensor& grad_out) {
  if (grad_out.shape() != index.output_shape || index.argmax.size() != grad_out.size()) {
    throw Error("maxpool3d grad_out shape " + shape_str(grad_out.shape()) +
                " does not match index map " + shape_str(index.output_shape));
  }
  Tensor grad_in(index.input_shape);
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    const auto src = index.argmax[i];
    if (src >= grad_in.size()) throw Error("maxpool3d index map entry out of range");
    grad_in[src] += grad_out[i];
  }
  return grad_in;
}

Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  require(weights.rank() == 2, "dense weights must be [U,D], got " + shape_str(weights.shape()));
  const std::size_t U = weights.dim(0), D = weights.dim(1);
  require(input.size() == D, "dense input dim " + std::to_string(input.size()) +
                                 " does not match weights D=" + std::to_string(D));
  require(bias.size() == U,
          "dense bias dim " + std::to_string(bias.size()) + " does not match U=" + std::to_string(U));
  Tensor out({U});
  const float* x = input.data().data();
  for (std::size_t u = 0; u < U; ++u) {
    const float* row = weights.data().data() + u * D;
    double s = bias[u];
    for (std::size_t d = 0; d < D; ++d) s += static_cast<double>(row[d]) * x[d];
    out[u] = static_cast<float>(s);
  }
  return out;
}

DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out) {
  require(weights.rank() == 2, "dense weights must be [U,D], got " + shape_str(weights.shape()));
  const std::size_t U = weights.dim(0), D = weights.dim(1);
  require(input.size() == D, "dense input dim " + std::to_string(input.size()) +
                                 " does not match weights D=" + std::to_string(D));
  require(grad_out.size() == U, "dense grad_out dim " + std::to_string(grad_out.size()) +
                                    " does not match U=" + std::to_string(U));
  DenseGrads g{Tensor(input.shape()), Tensor(weights.shape()), Tensor({U})};
  std::vector<double> gi(D, 0.0);
  const float* x = input.data().data();
  for (std::size_t u = 0; u < U; ++u) {
    const double go = grad_out[u];
    g.bias[u] = grad_out[u];
    const float* row = weights.data().data() + u * D;
    float* gw = g.weights.data().data() + u * D;
    for (std::size_t d = 0; d < D; ++d) {
      gw[d] = static_cast<float>(go * x[d]);
      gi[d] += go * row[d];
    }
  }
  for (std::size_t d = 0; d < D; ++d) g.input[d] = static_cast<float>(gi[d]);
  return g;
}

Tensor relu(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0f ? input[i] : 0.0f;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  if (input.shape() != grad_out.shape()) {
    throw Error("relu grad_out shape " + shape_str(grad_out.shape()) + " does not match input " +
                shape_str(input.shape()));
  }
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0f ? grad_out[i] : 0.0f;
  return out;
}

std::vector<double> softmax(std::span<const float> logits) {
  if (logits.empty()) throw Error("softmax of empty logits");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(static_cast<double>(logits[k]) - m);
    z += p[k];
  }
  for (auto& v : p) v /= z;
  return p;
}

SoftmaxXent softmax_cross_entropy(const Tensor& logits, std::size_t target) {
  const std::size_t K = logits.size();
  if (target >= K) {
    throw Error("target class " + std::to_string(target) + " out of range for " +
                std::to_string(K) + " logits");
  }
  SoftmaxXent r;
  const auto z = logits.data();
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (float v : z) sum += std::exp(static_cast<double>(v) - m);
  r.loss = std::log(sum) - (static_cast<double>(z[target]) - m);
  r.probs = softmax(z);
  r.grad_logits = Tensor(logits.shape());
  for (std::size_t k = 0; k < K; ++k) {
    r.grad_logits[k] = static_cast<float>(r.probs[k] - (k == target ? 1.0 : 0.0));
  }
  return r;
}

}  // namespace ar3d
