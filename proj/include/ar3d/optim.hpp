#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ar3d/nn.hpp"

namespace ar3d {

enum class OptimizerKind { adam, nadam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& name);

struct OptimConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr0 = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double decay = 0.01;  // time-based decay constant k

  void validate() const;
  bool operator==(const OptimConfig&) const = default;
};

/// Moments live in double regardless of parameter precision.
struct OptimState {
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  bool operator==(const OptimState&) const = default;

  std::vector<std::uint8_t> serialize() const;
  static OptimState deserialize(std::span<const std::uint8_t> bytes);
};

/// Elementwise update of one parameter block for step number `step` (already incremented).
/// Works for float model parameters and double scalars alike.
template <class T>
void adaptive_update(std::span<T> theta, std::span<const T> grad, std::span<double> m,
                     std::span<double> v, std::int64_t step, const OptimConfig& cfg, double lr,
                     bool nesterov);

void adam_step(ParamSet& params, const ParamSet& grads, OptimState& state, const OptimConfig& cfg,
               double lr);
void nadam_step(ParamSet& params, const ParamSet& grads, OptimState& state, const OptimConfig& cfg,
                double lr);
/// Dispatches on cfg.kind.
void optimizer_step(ParamSet& params, const ParamSet& grads, OptimState& state,
                    const OptimConfig& cfg, double lr);

/// lr0 / (1 + k * epoch).
double decayed_lr(const OptimConfig& cfg, int epoch);

}  // namespace ar3d
