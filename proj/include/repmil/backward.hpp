#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "repmil/error.hpp"
#include "repmil/loss.hpp"
#include "repmil/model.hpp"

namespace repmil {

template <typename T>
struct BagExample {
  const SparseRows<T>* x = nullptr;
  std::size_t label = 0;
  std::span<const T> covariates;
  std::optional<std::size_t> location;
};

template <typename T>
struct GradientResult {
  LossBreakdown<T> loss;
  ModelParams<T> grads;
  BagOutput<T> output;
};

namespace detail {

// grad_W += g x^T and grad_b += g for a sparse x.
template <typename T>
void accumulate_outer(Linear<T>& grad, std::span<const T> g, const typename SparseRows<T>::RowView& x) {
  const std::size_t out = grad.out;
  for (std::size_t t = 0; t < x.index.size(); ++t) {
    T* col = grad.w.data() + static_cast<std::size_t>(x.index[t]) * out;
    const T v = x.value[t];
    for (std::size_t o = 0; o < out; ++o) col[o] += g[o] * v;
  }
  for (std::size_t o = 0; o < out; ++o) grad.b[o] += g[o];
}

template <typename T>
void accumulate_outer(Linear<T>& grad, std::span<const T> g, std::span<const T> x) {
  const std::size_t out = grad.out;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    if (v == T(0)) continue;
    T* col = grad.w.data() + i * out;
    for (std::size_t o = 0; o < out; ++o) col[o] += g[o] * v;
  }
  for (std::size_t o = 0; o < out; ++o) grad.b[o] += g[o];
}

// dx = W^T g for a dense layer.
template <typename T>
void backprop_input(const Linear<T>& layer, std::span<const T> g, std::span<T> dx) {
  for (std::size_t i = 0; i < layer.in; ++i) {
    const T* col = layer.w.data() + i * layer.out;
    T acc = 0;
    for (std::size_t o = 0; o < layer.out; ++o) acc += col[o] * g[o];
    dx[i] = acc;
  }
}

}  // namespace detail

// Exact gradient of the total loss for one bag. Pseudo-label selection is
// held fixed (no gradient flows through the top-k choice).
template <typename T>
GradientResult<T> compute_gradients(const BagExample<T>& ex, const ModelParams<T>& p, const ModelConfig& cfg,
                                    const LossConfig& lcfg, Mode mode, CounterRng* rng) {
  lcfg.validate();
  ForwardCache<T> fc;
  GradientResult<T> res;
  res.output = forward(*ex.x, p, cfg, mode, rng, ex.covariates, &fc);
  const auto& out = res.output;
  const std::size_t n = ex.x->rows(), C = cfg.n_classes, L = cfg.input_dim, D = cfg.hidden_dim,
                    H = cfg.spatial_dim(), P = cfg.covariate_dim;
  if (ex.label >= C) throw Error("bag label " + std::to_string(ex.label) + " out of range");

  // Losses.
  auto& loss = res.loss;
  loss.sample = cross_entropy_from_logits<T>(out.class_logits, ex.label);
  const auto inst = instance_loss(out, ex.label, lcfg);
  loss.instance = inst.value;
  loss.pseudo_labelled = inst.count;
  const bool loc_active = cfg.n_locations > 0 && ex.location.has_value() && lcfg.loc_weight > 0.0;
  if (loc_active) {
    if (*ex.location >= cfg.n_locations) throw Error("location label out of range");
    loss.location = cross_entropy_from_logits<T>(out.location_logits, *ex.location);
  }
  loss.total = total_loss(loss.sample, loss.instance, loss.location, lcfg);
  if (!std::isfinite(static_cast<double>(loss.total)))
    throw Error("non-finite loss (sample " + std::to_string(static_cast<double>(loss.sample)) + ", instance " +
                std::to_string(static_cast<double>(loss.instance)) + ")");

  ModelParams<T> g = ModelParams<T>::zeros(cfg);
  const T c1 = static_cast<T>(lcfg.c1), c2 = static_cast<T>(lcfg.c2());

  // Sample loss -> class logits. The probability floor makes the loss flat.
  std::vector<T> d_logits(C, T(0));
  const T nll = detail::log_sum_exp<T>(out.class_logits) - out.class_logits[ex.label];
  if (nll < static_cast<T>(-std::log(kProbFloor))) {
    for (std::size_t c = 0; c < C; ++c) d_logits[c] = c1 * (out.class_probs[c] - (c == ex.label ? T(1) : T(0)));
  }

  // Disease head (class c reads pooled row c).
  Matrix<T> d_pooled(C, L);
  for (std::size_t c = 0; c < C; ++c) {
    const T dc = d_logits[c];
    g.disease_head.b[c] += dc;
    const auto mc = out.pooled.row(c);
    for (std::size_t i = 0; i < L; ++i) {
      g.disease_head.at(c, i) += dc * mc[i];
      d_pooled(c, i) = dc * p.disease_head.at(c, i);
    }
    for (std::size_t q = 0; q < P; ++q) g.disease_head.at(c, L + q) += dc * fc.covariates[q];
  }

  // Location head on the mean pooled vector.
  if (loc_active) {
    std::vector<T> dt(cfg.n_locations);
    for (std::size_t l = 0; l < cfg.n_locations; ++l)
      dt[l] = static_cast<T>(lcfg.loc_weight) * (out.location_probs[l] - (l == *ex.location ? T(1) : T(0)));
    const T lse = detail::log_sum_exp<T>(out.location_logits);
    if (lse - out.location_logits[*ex.location] >= static_cast<T>(-std::log(kProbFloor))) std::fill(dt.begin(), dt.end(), T(0));
    detail::accumulate_outer(*g.location_head, std::span<const T>(dt), std::span<const T>(fc.location_input));
    std::vector<T> d_in(L + P);
    detail::backprop_input(*p.location_head, std::span<const T>(dt), std::span<T>(d_in));
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < L; ++i) d_pooled(c, i) += d_in[i] / static_cast<T>(C);
  }

  // Pooling -> attention weights -> fused scores (softmax Jacobian).
  Matrix<T> d_fused(C, n);
  for (std::size_t c = 0; c < C; ++c) {
    const auto dm = d_pooled.row(c);
    std::vector<T> dw(n);
    T dot = 0;
    for (std::size_t k = 0; k < n; ++k) {
      const auto row = fc.x.row(k);
      T acc = 0;
      for (std::size_t t = 0; t < row.index.size(); ++t) acc += dm[row.index[t]] * row.value[t];
      dw[k] = acc;
      dot += out.attention.weights(c, k) * acc;
    }
    for (std::size_t k = 0; k < n; ++k) d_fused(c, k) = out.attention.weights(c, k) * (dw[k] - dot);
  }

  // Gated branch.
  const T lambda = static_cast<T>(cfg.lambda);
  std::vector<T> dcol(C), dg(D), dza(D), dzb(D);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t c = 0; c < C; ++c) dcol[c] = d_fused(c, k);
    detail::accumulate_outer(g.attn_out, std::span<const T>(dcol), std::span<const T>(fc.gated.row(k)));
    detail::backprop_input(p.attn_out, std::span<const T>(dcol), std::span<T>(dg));
    const auto a = fc.gate_tanh.row(k), b = fc.gate_sigmoid.row(k);
    for (std::size_t d = 0; d < D; ++d) {
      T gd = dg[d];
      if (!fc.gated_mask_scale.empty()) gd *= fc.gated_mask_scale[k * D + d];
      dza[d] = gd * b[d] * (T(1) - a[d] * a[d]);
      dzb[d] = gd * a[d] * b[d] * (T(1) - b[d]);
    }
    const auto row = fc.x.row(k);
    detail::accumulate_outer(g.attn_a, std::span<const T>(dza), row);
    detail::accumulate_outer(g.attn_b, std::span<const T>(dzb), row);
  }

  // Spatial branch: W_s2 ReLU(LayerNorm(W_s1 x + b_s1)) + b_s2, scaled by lambda.
  if (lambda != T(0)) {
    std::vector<T> dr(H), dnhat(H), du(H);
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t c = 0; c < C; ++c) dcol[c] = lambda * d_fused(c, k);
      detail::accumulate_outer(g.spatial_2, std::span<const T>(dcol), std::span<const T>(fc.relu_out.row(k)));
      detail::backprop_input(p.spatial_2, std::span<const T>(dcol), std::span<T>(dr));
      T mean_dn = 0, mean_dn_n = 0;
      for (std::size_t h = 0; h < H; ++h) {
        const T dv = fc.ln_out(k, h) > T(0) ? dr[h] : T(0);
        g.ln_scale[h] += dv * fc.ln_normalized(k, h);
        g.ln_shift[h] += dv;
        dnhat[h] = dv * p.ln_scale[h];
        mean_dn += dnhat[h];
        mean_dn_n += dnhat[h] * fc.ln_normalized(k, h);
      }
      mean_dn /= static_cast<T>(H);
      mean_dn_n /= static_cast<T>(H);
      const T inv = fc.ln_inv_std[k];
      for (std::size_t h = 0; h < H; ++h) du[h] = inv * (dnhat[h] - mean_dn - fc.ln_normalized(k, h) * mean_dn_n);
      detail::accumulate_outer(g.spatial_1, std::span<const T>(du), fc.x.row(k));
    }
  }

  // Instance heads on the pseudo-labelled instances.
  if (inst.count > 0 && c2 != T(0)) {
    const T scale = c2 / static_cast<T>(inst.count);
    for (const auto& pl : inst.labels) {
      const T s[2] = {out.instance_logit(pl.branch, pl.instance, 0), out.instance_logit(pl.branch, pl.instance, 1)};
      T gs[2];
      smooth_top1_svm<T>(std::span<const T>(s, 2), pl.label, lcfg.tau, std::span<T>(gs, 2));
      gs[0] *= scale;
      gs[1] *= scale;
      detail::accumulate_outer(g.instance_heads[pl.branch], std::span<const T>(gs, 2), fc.x.row(pl.instance));
    }
  }

  res.grads = std::move(g);
  return res;
}

// Loss only (same dropout stream as compute_gradients for a copied rng).
template <typename T>
LossBreakdown<T> evaluate_loss(const BagExample<T>& ex, const ModelParams<T>& p, const ModelConfig& cfg,
                               const LossConfig& lcfg, Mode mode, CounterRng* rng) {
  const auto out = forward(*ex.x, p, cfg, mode, rng, ex.covariates);
  LossBreakdown<T> loss;
  loss.sample = cross_entropy_from_logits<T>(out.class_logits, ex.label);
  const auto inst = instance_loss(out, ex.label, lcfg);
  loss.instance = inst.value;
  loss.pseudo_labelled = inst.count;
  if (cfg.n_locations > 0 && ex.location && lcfg.loc_weight > 0.0)
    loss.location = cross_entropy_from_logits<T>(out.location_logits, *ex.location);
  loss.total = total_loss(loss.sample, loss.instance, loss.location, lcfg);
  return loss;
}

}  // namespace repmil
