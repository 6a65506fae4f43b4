#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "repmil/error.hpp"
#include "repmil/model.hpp"

namespace repmil {

enum class Precision { wide, standard };

struct TrainConfig {
  double lr = 2e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 20;
  std::uint64_t seed = 2024;
  Precision precision = Precision::standard;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  }
};

template <typename T>
struct OptimizerState {
  ModelParams<T> m;
  ModelParams<T> v;
  std::uint64_t t = 0;

  static OptimizerState zeros(const ModelConfig& cfg) { return {ModelParams<T>::zeros(cfg), ModelParams<T>::zeros(cfg), 0}; }
};

// Adam with decoupled weight decay:
//   theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
template <typename T>
void adam_step(ModelParams<T>& params, const ModelParams<T>& grads, OptimizerState<T>& state, const TrainConfig& cfg) {
  auto ps = params.tensors();
  const auto gs = grads.tensors();
  auto ms = state.m.tensors();
  auto vs = state.v.tensors();
  if (ps.size() != gs.size() || ps.size() != ms.size() || ps.size() != vs.size())
    throw ShapeError("optimizer state does not mirror the parameters");
  ++state.t;
  const double b1t = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double b2t = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T lr = static_cast<T>(cfg.lr), wd = static_cast<T>(cfg.weight_decay), eps = static_cast<T>(cfg.eps);
  const T c1 = static_cast<T>(1.0 / b1t), c2 = static_cast<T>(1.0 / b2t);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& theta = ps[i].data;
    const auto& g = gs[i].data;
    auto& m = ms[i].data;
    auto& v = vs[i].data;
    if (theta.size() != g.size() || theta.size() != m.size() || theta.size() != v.size())
      throw ShapeError("shape mismatch in tensor '" + ps[i].name + "'");
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      const T update = (m[j] * c1) / (std::sqrt(v[j] * c2) + eps);
      theta[j] -= lr * (update + wd * theta[j]);
    }
  }
}

}  // namespace repmil
