#pragma once

// Straight-line reference forward pass over dense inputs. Written without
// any of the library's helpers so it can check them: every quantity is a
// plain loop over the logical weight layout.

#include <cmath>
#include <vector>

#include "repmil/model.hpp"

namespace repmil::testing {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

struct OracleOutput {
  Mat a1, a2, fused, weights, pooled;  // C x n, C x n, C x n, C x n, C x L
  Vec logits, probs;
  Vec location_probs;
  Mat instance_logits;  // C x 2n
};

inline Vec oracle_softmax(const Vec& z) {
  double m = z[0];
  for (double v : z) m = v > m ? v : m;
  double s = 0;
  Vec out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - m);
    s += out[i];
  }
  for (auto& v : out) v /= s;
  return out;
}

inline OracleOutput oracle_forward(const Mat& x, const ModelParams<double>& p, const ModelConfig& cfg, const Vec& cov = {}) {
  const std::size_t n = x.size(), L = cfg.input_dim, D = cfg.hidden_dim, H = D / 2, C = cfg.n_classes;
  OracleOutput o;
  o.a1.assign(C, Vec(n, 0.0));
  o.a2.assign(C, Vec(n, 0.0));
  for (std::size_t k = 0; k < n; ++k) {
    // gated attention
    Vec g(D);
    for (std::size_t d = 0; d < D; ++d) {
      double za = p.attn_a.b[d], zb = p.attn_b.b[d];
      for (std::size_t i = 0; i < L; ++i) {
        za += p.attn_a.at(d, i) * x[k][i];
        zb += p.attn_b.at(d, i) * x[k][i];
      }
      g[d] = std::tanh(za) * (1.0 / (1.0 + std::exp(-zb)));
    }
    for (std::size_t c = 0; c < C; ++c) {
      double s = p.attn_out.b[c];
      for (std::size_t d = 0; d < D; ++d) s += p.attn_out.at(c, d) * g[d];
      o.a1[c][k] = s;
    }
    // spatial attention
    Vec u(H);
    double mean = 0;
    for (std::size_t h = 0; h < H; ++h) {
      u[h] = p.spatial_1.b[h];
      for (std::size_t i = 0; i < L; ++i) u[h] += p.spatial_1.at(h, i) * x[k][i];
      mean += u[h];
    }
    mean /= static_cast<double>(H);
    double var = 0;
    for (double v : u) var += (v - mean) * (v - mean);
    var /= static_cast<double>(H);
    Vec r(H);
    for (std::size_t h = 0; h < H; ++h) {
      const double v = p.ln_scale[h] * (u[h] - mean) / std::sqrt(var + 1e-5) + p.ln_shift[h];
      r[h] = v > 0 ? v : 0;
    }
    for (std::size_t c = 0; c < C; ++c) {
      double s = p.spatial_2.b[c];
      for (std::size_t h = 0; h < H; ++h) s += p.spatial_2.at(c, h) * r[h];
      o.a2[c][k] = s;
    }
  }
  o.fused.assign(C, Vec(n));
  o.weights.assign(C, Vec(n));
  o.pooled.assign(C, Vec(L, 0.0));
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t k = 0; k < n; ++k) o.fused[c][k] = o.a1[c][k] + cfg.lambda * o.a2[c][k];
    o.weights[c] = oracle_softmax(o.fused[c]);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < L; ++i) o.pooled[c][i] += o.weights[c][k] * x[k][i];
  }
  o.logits.assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double s = p.disease_head.b[c];
    for (std::size_t i = 0; i < L; ++i) s += p.disease_head.at(c, i) * o.pooled[c][i];
    for (std::size_t q = 0; q < cov.size(); ++q) s += p.disease_head.at(c, L + q) * cov[q];
    o.logits[c] = s;
  }
  o.probs = oracle_softmax(o.logits);
  if (cfg.n_locations > 0) {
    Vec in(L + cov.size(), 0.0);
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t c = 0; c < C; ++c) in[i] += o.pooled[c][i];
      in[i] /= static_cast<double>(C);
    }
    for (std::size_t q = 0; q < cov.size(); ++q) in[L + q] = cov[q];
    Vec t(cfg.n_locations);
    for (std::size_t j = 0; j < cfg.n_locations; ++j) {
      t[j] = p.location_head->b[j];
      for (std::size_t i = 0; i < in.size(); ++i) t[j] += p.location_head->at(j, i) * in[i];
    }
    o.location_probs = oracle_softmax(t);
  }
  o.instance_logits.assign(C, Vec(2 * n));
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t j = 0; j < 2; ++j) {
        double s = p.instance_heads[c].b[j];
        for (std::size_t i = 0; i < L; ++i) s += p.instance_heads[c].at(j, i) * x[k][i];
        o.instance_logits[c][2 * k + j] = s;
      }
  return o;
}

inline Mat to_rows(const Matrix<double>& m) {
  Mat out(m.rows(), Vec(m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
  return out;
}

}  // namespace repmil::testing
