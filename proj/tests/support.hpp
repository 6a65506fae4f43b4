#pragma once

// Shared helpers for the test suites: random tiny models and bags, and a
// finite-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "repmil/backward.hpp"
#include "repmil/model.hpp"
#include "repmil/rng.hpp"
#include "repmil/tensor.hpp"

namespace repmil::testing {

inline ModelConfig tiny_config(CounterRng& rng, std::size_t max_l = 12, std::size_t max_d = 8, std::size_t max_c = 3) {
  ModelConfig cfg;
  cfg.input_dim = 2 + rng.below(max_l - 1);
  cfg.hidden_dim = 2 * (1 + rng.below(max_d / 2));
  cfg.n_classes = 2 + rng.below(max_c - 1);
  cfg.lambda = 0.25 + rng.uniform();
  cfg.dropout = 0.0;
  return cfg;
}

// Every entry (weights, biases, LayerNorm affine) drawn N(0, scale^2).
inline void randomize(ModelParams<double>& p, CounterRng& rng, double scale = 0.7) {
  for (auto& t : p.tensors())
    for (auto& v : t.data) v = scale * rng.normal();
  for (auto& v : p.ln_scale) v = 1.0 + 0.3 * rng.normal();
}

inline Matrix<double> random_dense(std::size_t n, std::size_t l, CounterRng& rng, double zero_prob = 0.0) {
  Matrix<double> m(n, l);
  for (auto& v : m.data()) v = rng.bernoulli(zero_prob) ? 0.0 : rng.normal();
  return m;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t checked = 0;
};

// Relative error |a - f| / max(|a|, |f|, floor) with floor guarding the
// comparison of two values that are both numerically zero.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central differences over every parameter; `loss_at` must be a pure
// function of the parameters (fixed dropout stream, fixed data).
inline GradCheckResult check_gradients(ModelParams<double> params, const ModelParams<double>& analytic,
                                       const std::function<double(const ModelParams<double>&)>& loss_at,
                                       double eps = 1e-5) {
  GradCheckResult res;
  auto ts = params.tensors();
  const auto gs = analytic.tensors();
  for (std::size_t i = 0; i < ts.size(); ++i) {
    for (std::size_t j = 0; j < ts[i].data.size(); ++j) {
      const double orig = ts[i].data[j];
      ts[i].data[j] = orig + eps;
      const double up = loss_at(params);
      ts[i].data[j] = orig - eps;
      const double down = loss_at(params);
      ts[i].data[j] = orig;
      const double numeric = (up - down) / (2 * eps);
      const double err = rel_error(gs[i].data[j], numeric);
      ++res.checked;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_tensor = ts[i].name + "[" + std::to_string(j) + "]";
      }
    }
  }
  return res;
}

}  // namespace repmil::testing
