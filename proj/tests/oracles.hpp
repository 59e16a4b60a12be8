// Test-only reference implementations. Nothing here calls into the optimized kernels.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "ar3d/tensor.hpp"

namespace oracle {

inline ar3d::Tensor random_tensor(const ar3d::Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                                  double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  ar3d::Tensor t(shape);
  for (auto& v : t.data()) v = static_cast<float>(u(rng));
  return t;
}

/// Seven nested loops over (f, t, h, w, c, dt, dh, dw) with explicit bounds checks.
inline std::vector<double> conv3d_bruteforce(const ar3d::Tensor& in, const ar3d::Tensor& wt,
                                             const ar3d::Tensor& bias) {
  const long C = in.dim(0), T = in.dim(1), H = in.dim(2), W = in.dim(3);
  const long F = wt.dim(0), kT = wt.dim(2), kH = wt.dim(3), kW = wt.dim(4);
  const long pT = (kT - 1) / 2, pH = (kH - 1) / 2, pW = (kW - 1) / 2;
  auto at_in = [&](long c, long t, long h, long w) -> double {
    if (t < 0 || t >= T || h < 0 || h >= H || w < 0 || w >= W) return 0.0;
    return in[((c * T + t) * H + h) * W + w];
  };
  std::vector<double> out(F * T * H * W);
  for (long f = 0; f < F; ++f)
    for (long t = 0; t < T; ++t)
      for (long h = 0; h < H; ++h)
        for (long w = 0; w < W; ++w) {
          double s = bias[f];
          for (long c = 0; c < C; ++c)
            for (long dt = 0; dt < kT; ++dt)
              for (long dh = 0; dh < kH; ++dh)
                for (long dw = 0; dw < kW; ++dw)
                  s += at_in(c, t + dt - pT, h + dh - pH, w + dw - pW) *
                       wt[(((f * C + c) * kT + dt) * kH + dh) * kW + dw];
          out[((f * T + t) * H + h) * W + w] = s;
        }
  return out;
}

/// Central differences of a scalar objective w.r.t. every element of `x`.
inline std::vector<double> finite_diff(ar3d::Tensor& x, const std::function<double()>& objective,
                                       double h = 1e-3) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float orig = x[i];
    x[i] = static_cast<float>(orig + h);
    const double fp = objective();
    x[i] = static_cast<float>(orig - h);
    const double fm = objective();
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Norm-wise relative error ||a-b|| / max(||a||, ||b||); 0 when both vanish.
inline double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom < 1e-12 ? std::sqrt(diff) : std::sqrt(diff) / denom;
}

inline std::vector<double> to_double(const ar3d::Tensor& t) {
  return {t.data().begin(), t.data().end()};
}

/// Sum of out[i] * cot[i] in double; turns a tensor-valued map into a scalar objective.
inline double contract(const ar3d::Tensor& out, const ar3d::Tensor& cot) {
  double s = 0;
  for (std::size_t i = 0; i < out.size(); ++i) s += static_cast<double>(out[i]) * cot[i];
  return s;
}

}  // namespace oracle
