#include "ar3d/optim.hpp"

#include <cmath>
#include <cstring>

namespace ar3d {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "nadam"; }

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "nadam") return OptimizerKind::nadam;
  throw Error("unknown optimizer '" + name + "' (expected adam or nadam)");
}

void OptimConfig::validate() const {
  if (!(lr0 > 0.0)) throw Error("optimizer lr0 must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw Error("optimizer beta1 must lie in [0,1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw Error("optimizer beta2 must lie in (0,1)");
  if (!(eps > 0.0)) throw Error("optimizer eps must be > 0");
  if (!(decay >= 0.0)) throw Error("optimizer decay must be >= 0");
}

template <class T>
void adaptive_update(std::span<T> theta, std::span<const T> grad, std::span<double> m,
                     std::span<double> v, std::int64_t step, const OptimConfig& cfg, double lr,
                     bool nesterov) {
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double t = static_cast<double>(step);
  const double bc1 = 1.0 - std::pow(b1, t);
  const double bc1_next = 1.0 - std::pow(b1, t + 1.0);
  const double bc2 = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    m[i] = b1 * m[i] + (1.0 - b1) * g;
    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
    const double v_hat = v[i] / bc2;
    const double m_bar = nesterov ? b1 * m[i] / bc1_next + (1.0 - b1) * g / bc1 : m[i] / bc1;
    theta[i] = static_cast<T>(static_cast<double>(theta[i]) - lr * m_bar / (std::sqrt(v_hat) + cfg.eps));
  }
}

template void adaptive_update<float>(std::span<float>, std::span<const float>, std::span<double>,
                                     std::span<double>, std::int64_t, const OptimConfig&, double, bool);
template void adaptive_update<double>(std::span<double>, std::span<const double>, std::span<double>,
                                      std::span<double>, std::int64_t, const OptimConfig&, double, bool);

namespace {

void step_impl(ParamSet& params, const ParamSet& grads, OptimState& state, const OptimConfig& cfg,
               double lr, bool nesterov) {
  if (!(lr > 0.0)) throw Error("learning rate must be > 0");
  if (grads.tensors.size() != params.tensors.size()) {
    throw Error("gradient set has " + std::to_string(grads.tensors.size()) + " tensors, expected " +
                std::to_string(params.tensors.size()));
  }
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const auto& g = grads.tensors[i];
    if (g.value.shape() != params.tensors[i].value.shape()) {
      throw Error("gradient " + g.name + " shape " + shape_str(g.value.shape()) +
                  " does not match parameter " + shape_str(params.tensors[i].value.shape()));
    }
    for (std::size_t j = 0; j < g.value.size(); ++j) {
      if (!std::isfinite(g.value[j])) {
        throw Error("non-finite gradient in " + g.name + " at element " + std::to_string(j));
      }
    }
  }
  if (state.m.empty() && state.step == 0) {
    for (const auto& p : params.tensors) {
      state.m.emplace_back(p.value.size(), 0.0);
      state.v.emplace_back(p.value.size(), 0.0);
    }
  }
  if (state.m.size() != params.tensors.size() || state.v.size() != params.tensors.size()) {
    throw Error("optimizer state does not match parameter set");
  }
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    if (state.m[i].size() != params.tensors[i].value.size() ||
        state.v[i].size() != params.tensors[i].value.size()) {
      throw Error("optimizer moments do not match parameter " + params.tensors[i].name);
    }
  }
  ++state.step;
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    adaptive_update<float>(params.tensors[i].value.data(), grads.tensors[i].value.data(), state.m[i],
                           state.v[i], state.step, cfg, lr, nesterov);
  }
}

}  // namespace

void adam_step(ParamSet& params, const ParamSet& grads, OptimState& state, const OptimConfig& cfg,
               double lr) {
  step_impl(params, grads, state, cfg, lr, false);
}

void nadam_step(ParamSet& params, const ParamSet& grads, OptimState& state, const OptimConfig& cfg,
                double lr) {
  step_impl(params, grads, state, cfg, lr, true);
}

void optimizer_step(ParamSet& params, const ParamSet& grads, OptimState& state,
                    const OptimConfig& cfg, double lr) {
  step_impl(params, grads, state, cfg, lr, cfg.kind == OptimizerKind::nadam);
}

double decayed_lr(const OptimConfig& cfg, int epoch) {
  if (epoch < 0) throw Error("epoch must be >= 0");
  return cfg.lr0 / (1.0 + cfg.decay * static_cast<double>(epoch));
}

namespace {

template <class T>
void put(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <class T>
T get(std::span<const std::uint8_t> bytes, std::size_t& off) {
  if (off + sizeof(T) > bytes.size()) {
    throw Error("optimizer state truncated at byte " + std::to_string(off));
  }
  T value;
  std::memcpy(&value, bytes.data() + off, sizeof(T));
  off += sizeof(T);
  return value;
}

}  // namespace

std::vector<std::uint8_t> OptimState::serialize() const {
  std::vector<std::uint8_t> out;
  put<std::int64_t>(out, step);
  put<std::uint64_t>(out, m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    put<std::uint64_t>(out, m[i].size());
    for (double x : m[i]) put(out, x);
    for (double x : v[i]) put(out, x);
  }
  return out;
}

OptimState OptimState::deserialize(std::span<const std::uint8_t> bytes) {
  std::size_t off = 0;
  OptimState s;
  s.step = get<std::int64_t>(bytes, off);
  const auto blocks = get<std::uint64_t>(bytes, off);
  for (std::uint64_t b = 0; b < blocks; ++b) {
    const auto n = get<std::uint64_t>(bytes, off);
    if (n > (bytes.size() - off) / (2 * sizeof(double))) {
      throw Error("optimizer state truncated at byte " + std::to_string(off));
    }
    auto& mb = s.m.emplace_back(n);
    auto& vb = s.v.emplace_back(n);
    for (auto& x : mb) x = get<double>(bytes, off);
    for (auto& x : vb) x = get<double>(bytes, off);
  }
  if (off != bytes.size()) throw Error("optimizer state has trailing bytes");
  return s;
}

}  // namespace ar3d
