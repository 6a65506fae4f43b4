#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "repmil/error.hpp"
#include "repmil/rng.hpp"
#include "repmil/tensor.hpp"

namespace repmil {

struct ModelConfig {
  std::size_t input_dim = 1640;
  std::size_t hidden_dim = 256;
  std::size_t n_classes = 2;
  // 0 disables the location head.
  std::size_t n_locations = 0;
  double lambda = 0.5;
  double dropout = 0.1;
  std::size_t covariate_dim = 0;

  std::size_t spatial_dim() const noexcept { return hidden_dim / 2; }
  std::size_t head_input_dim() const noexcept { return input_dim + covariate_dim; }

  void validate() const {
    if (input_dim == 0) throw ConfigError("input_dim must be positive");
    if (hidden_dim == 0) throw ConfigError("hidden_dim must be positive");
    if (hidden_dim % 2 != 0) throw ConfigError("hidden_dim must be even for the spatial branch, got " + std::to_string(hidden_dim));
    if (n_classes < 2) throw ConfigError("n_classes must be >= 2");
    if (n_locations == 1) throw ConfigError("n_locations must be 0 (disabled) or >= 2");
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  }

  bool operator==(const ModelConfig&) const = default;
};

// Affine map y = W x + b with W logically out x in. Stored input-major
// (w[i * out + o]) so a sparse input row touches contiguous memory.
template <typename T>
struct Linear {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<T> w;
  std::vector<T> b;

  Linear() = default;
  Linear(std::size_t in_dim, std::size_t out_dim) : in(in_dim), out(out_dim), w(in_dim * out_dim, T(0)), b(out_dim, T(0)) {}

  T& at(std::size_t o, std::size_t i) noexcept { return w[i * out + o]; }
  const T& at(std::size_t o, std::size_t i) const noexcept { return w[i * out + o]; }

  // y = W x + b for a sparse x.
  void apply(const typename SparseRows<T>::RowView& x, std::span<T> y) const noexcept {
    std::copy(b.begin(), b.end(), y.begin());
    for (std::size_t t = 0; t < x.index.size(); ++t) {
      const T v = x.value[t];
      const T* col = w.data() + static_cast<std::size_t>(x.index[t]) * out;
      for (std::size_t o = 0; o < out; ++o) y[o] += col[o] * v;
    }
  }

  // y = W x + b for a dense x.
  void apply(std::span<const T> x, std::span<T> y) const noexcept {
    std::copy(b.begin(), b.end(), y.begin());
    for (std::size_t i = 0; i < in; ++i) {
      const T v = x[i];
      if (v == T(0)) continue;
      const T* col = w.data() + i * out;
      for (std::size_t o = 0; o < out; ++o) y[o] += col[o] * v;
    }
  }

  bool operator==(const Linear&) const = default;
};

// Named view over one parameter tensor. dims are logical (out, in) for
// weight matrices; `input_major` says the storage is the transpose.
template <typename T>
struct TensorRef {
  std::string name;
  std::vector<std::size_t> dims;
  std::span<T> data;
  bool input_major = false;
};

template <typename T>
struct ModelParams {
  Linear<T> attn_a;     // tanh branch, D x L
  Linear<T> attn_b;     // sigmoid gate, D x L
  Linear<T> attn_out;   // C x D
  Linear<T> spatial_1;  // (D/2) x L
  std::vector<T> ln_scale;
  std::vector<T> ln_shift;
  Linear<T> spatial_2;     // C x (D/2)
  Linear<T> disease_head;  // C x (L + P)
  std::optional<Linear<T>> location_head;
  std::vector<Linear<T>> instance_heads;  // per class, 2 x L

  static ModelParams zeros(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    const std::size_t L = cfg.input_dim, D = cfg.hidden_dim, H = cfg.spatial_dim(), C = cfg.n_classes;
    p.attn_a = Linear<T>(L, D);
    p.attn_b = Linear<T>(L, D);
    p.attn_out = Linear<T>(D, C);
    p.spatial_1 = Linear<T>(L, H);
    p.ln_scale.assign(H, T(0));
    p.ln_shift.assign(H, T(0));
    p.spatial_2 = Linear<T>(H, C);
    p.disease_head = Linear<T>(cfg.head_input_dim(), C);
    if (cfg.n_locations > 0) p.location_head = Linear<T>(cfg.head_input_dim(), cfg.n_locations);
    p.instance_heads.assign(C, Linear<T>(L, 2));
    return p;
  }

  // Xavier-normal weights, zero biases, identity LayerNorm.
  static ModelParams initialize(const ModelConfig& cfg, CounterRng rng) {
    ModelParams p = zeros(cfg);
    for (auto& t : p.tensors()) {
      const bool is_weight = t.dims.size() == 2;
      if (!is_weight) continue;
      const double stddev = std::sqrt(2.0 / static_cast<double>(t.dims[0] + t.dims[1]));
      for (auto& v : t.data) v = static_cast<T>(stddev * rng.normal());
    }
    std::fill(p.ln_scale.begin(), p.ln_scale.end(), T(1));
    return p;
  }

  std::vector<TensorRef<T>> tensors() {
    std::vector<TensorRef<T>> out;
    auto lin = [&](const std::string& name, Linear<T>& l) {
      out.push_back({name + ".weight", {l.out, l.in}, l.w, true});
      out.push_back({name + ".bias", {l.out}, l.b, false});
    };
    lin("attn_a", attn_a);
    lin("attn_b", attn_b);
    lin("attn_out", attn_out);
    lin("spatial_1", spatial_1);
    out.push_back({"spatial_1.ln_scale", {ln_scale.size()}, ln_scale, false});
    out.push_back({"spatial_1.ln_shift", {ln_shift.size()}, ln_shift, false});
    lin("spatial_2", spatial_2);
    lin("disease_head", disease_head);
    if (location_head) lin("location_head", *location_head);
    for (std::size_t c = 0; c < instance_heads.size(); ++c) lin("instance_head." + std::to_string(c), instance_heads[c]);
    return out;
  }

  std::vector<TensorRef<const T>> tensors() const {
    std::vector<TensorRef<const T>> out;
    for (auto& t : const_cast<ModelParams*>(this)->tensors())
      out.push_back({t.name, t.dims, std::span<const T>(t.data), t.input_major});
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors()) n += t.data.size();
    return n;
  }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    auto lin = [](const Linear<T>& l) {
      Linear<U> r(l.in, l.out);
      r.w.assign(l.w.begin(), l.w.end());
      r.b.assign(l.b.begin(), l.b.end());
      return r;
    };
    out.attn_a = lin(attn_a);
    out.attn_b = lin(attn_b);
    out.attn_out = lin(attn_out);
    out.spatial_1 = lin(spatial_1);
    out.ln_scale.assign(ln_scale.begin(), ln_scale.end());
    out.ln_shift.assign(ln_shift.begin(), ln_shift.end());
    out.spatial_2 = lin(spatial_2);
    out.disease_head = lin(disease_head);
    if (location_head) out.location_head = lin(*location_head);
    for (const auto& h : instance_heads) out.instance_heads.push_back(lin(h));
    return out;
  }

  void check_shapes(const ModelConfig& cfg) const {
    const ModelParams ref = zeros(cfg);
    auto mine = tensors();
    auto want = ref.tensors();
    if (mine.size() != want.size()) throw ShapeError("parameter tensor count does not match the model configuration");
    for (std::size_t i = 0; i < mine.size(); ++i)
      if (mine[i].name != want[i].name || mine[i].dims != want[i].dims)
        throw ShapeError("parameter '" + mine[i].name + "' does not match the model configuration");
  }

  bool operator==(const ModelParams&) const = default;
};

enum class Mode { train, eval };

template <typename T>
struct AttentionOutput {
  Matrix<T> a1;       // C x n, gated branch
  Matrix<T> a2;       // C x n, spatial branch
  Matrix<T> fused;    // C x n
  Matrix<T> weights;  // C x n, softmax over instances per class row
};

template <typename T>
struct BagOutput {
  AttentionOutput<T> attention;
  Matrix<T> pooled;  // C x L
  std::vector<T> class_logits;
  std::vector<T> class_probs;
  std::vector<T> location_logits;
  std::vector<T> location_probs;  // empty when the head is disabled
  Matrix<T> instance_logits;      // C x (2n): (c, 2k + j)

  T instance_logit(std::size_t c, std::size_t k, std::size_t j) const { return instance_logits(c, 2 * k + j); }
};

// Intermediate activations kept for the backward pass.
template <typename T>
struct ForwardCache {
  SparseRows<T> x;  // post-dropout input rows
  Matrix<T> gate_tanh, gate_sigmoid, gated;  // n x D; gated includes dropout
  std::vector<T> gated_mask_scale;           // n x D, 0 or 1/(1-p); empty in eval
  Matrix<T> ln_normalized, ln_out;           // n x H (ln_out before ReLU)
  std::vector<T> ln_inv_std;                 // n
  Matrix<T> relu_out;                        // n x H
  std::vector<T> covariates;
  std::vector<T> location_input;             // mean_c M_c followed by covariates
};

namespace detail {

template <typename T>
T sigmoid(T z) noexcept {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

template <typename T>
T log_sum_exp(std::span<const T> v) noexcept {
  const T m = *std::max_element(v.begin(), v.end());
  T s = 0;
  for (T x : v) s += std::exp(x - m);
  return m + std::log(s);
}

template <typename T>
std::vector<T> softmax(std::span<const T> v) {
  std::vector<T> out(v.size());
  const T m = *std::max_element(v.begin(), v.end());
  T s = 0;
  for (std::size_t i = 0; i < v.size(); ++i) s += (out[i] = std::exp(v[i] - m));
  for (auto& x : out) x /= s;
  return out;
}

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
void require_width(const SparseRows<T>& x, const ModelConfig& cfg) {
  if (x.cols() != cfg.input_dim)
    throw ShapeError("input width " + std::to_string(x.cols()) + " != model input_dim " + std::to_string(cfg.input_dim));
  if (x.rows() == 0) throw ShapeError("bag has no instances");
}

}  // namespace detail

// a = tanh(W_a x + b_a), b = sigmoid(W_b x + b_b), A1 = W_c (a * b) + b_c,
// per instance. The per-instance gated score of attention pooling is the same
// computation with a C-row output, so this one routine serves both.
template <typename T>
Matrix<T> gated_branch(const SparseRows<T>& x, const ModelParams<T>& p, const ModelConfig& cfg,
                       ForwardCache<T>* cache = nullptr, CounterRng* dropout_rng = nullptr) {
  detail::require_width(x, cfg);
  const std::size_t n = x.rows(), D = cfg.hidden_dim, C = cfg.n_classes;
  Matrix<T> a(n, D), b(n, D), g(n, D), a1(C, n);
  std::vector<T> mask;
  const T keep = T(1) - static_cast<T>(cfg.dropout);
  if (dropout_rng && cfg.dropout > 0.0) mask.resize(n * D);
  std::vector<T> out(C);
  for (std::size_t k = 0; k < n; ++k) {
    const auto row = x.row(k);
    auto ra = a.row(k), rb = b.row(k), rg = g.row(k);
    p.attn_a.apply(row, ra);
    p.attn_b.apply(row, rb);
    for (std::size_t d = 0; d < D; ++d) {
      ra[d] = std::tanh(ra[d]);
      rb[d] = detail::sigmoid(rb[d]);
      rg[d] = ra[d] * rb[d];
      if (!mask.empty()) {
        const T m = dropout_rng->bernoulli(cfg.dropout) ? T(0) : T(1) / keep;
        mask[k * D + d] = m;
        rg[d] *= m;
      }
    }
    p.attn_out.apply(std::span<const T>(rg), std::span<T>(out));
    for (std::size_t c = 0; c < C; ++c) a1(c, k) = out[c];
  }
  if (cache) {
    cache->gate_tanh = std::move(a);
    cache->gate_sigmoid = std::move(b);
    cache->gated = std::move(g);
    cache->gated_mask_scale = std::move(mask);
  }
  return a1;
}

// A2 = W_s2 ReLU(LayerNorm(W_s1 x + b_s1)) + b_s2, per instance.
template <typename T>
Matrix<T> spatial_branch(const SparseRows<T>& x, const ModelParams<T>& p, const ModelConfig& cfg,
                         ForwardCache<T>* cache = nullptr) {
  detail::require_width(x, cfg);
  if (cfg.hidden_dim % 2 != 0) throw ConfigError("hidden_dim must be even for the spatial branch");
  const std::size_t n = x.rows(), H = cfg.spatial_dim(), C = cfg.n_classes;
  Matrix<T> nhat(n, H), v(n, H), r(n, H), a2(C, n);
  std::vector<T> inv_std(n);
  std::vector<T> u(H), out(C);
  for (std::size_t k = 0; k < n; ++k) {
    p.spatial_1.apply(x.row(k), std::span<T>(u));
    T mean = 0;
    for (T e : u) mean += e;
    mean /= static_cast<T>(H);
    T var = 0;
    for (T e : u) var += (e - mean) * (e - mean);
    var /= static_cast<T>(H);
    const T inv = T(1) / std::sqrt(var + static_cast<T>(detail::kLayerNormEps));
    inv_std[k] = inv;
    for (std::size_t h = 0; h < H; ++h) {
      nhat(k, h) = (u[h] - mean) * inv;
      v(k, h) = p.ln_scale[h] * nhat(k, h) + p.ln_shift[h];
      r(k, h) = v(k, h) > T(0) ? v(k, h) : T(0);
    }
    p.spatial_2.apply(std::span<const T>(r.row(k)), std::span<T>(out));
    for (std::size_t c = 0; c < C; ++c) a2(c, k) = out[c];
  }
  if (cache) {
    cache->ln_normalized = std::move(nhat);
    cache->ln_out = std::move(v);
    cache->relu_out = std::move(r);
    cache->ln_inv_std = std::move(inv_std);
  }
  return a2;
}

// A = A1 + lambda * A2. lambda == 0 returns A1 untouched.
template <typename T>
Matrix<T> fuse_attention(const Matrix<T>& a1, const Matrix<T>& a2, double lambda) {
  if (a1.rows() != a2.rows() || a1.cols() != a2.cols()) throw ShapeError("attention branches differ in shape");
  if (lambda == 0.0) return a1;
  Matrix<T> a = a1;
  const T l = static_cast<T>(lambda);
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += l * a2.data()[i];
  return a;
}

// Row-wise softmax over instances. The normaliser is summed in sorted order
// so permuting the instances permutes the weights bit for bit.
template <typename T>
Matrix<T> normalize_attention(const Matrix<T>& scores) {
  Matrix<T> w(scores.rows(), scores.cols());
  std::vector<T> sorted;
  for (std::size_t c = 0; c < scores.rows(); ++c) {
    const auto row = scores.row(c);
    const T m = *std::max_element(row.begin(), row.end());
    auto out = w.row(c);
    for (std::size_t k = 0; k < row.size(); ++k) out[k] = std::exp(row[k] - m);
    sorted.assign(out.begin(), out.end());
    std::sort(sorted.begin(), sorted.end());
    T z = 0;
    for (T e : sorted) z += e;
    for (auto& e : out) e /= z;
  }
  return w;
}

// M_c = sum_k w[c, k] h_k.
template <typename T>
Matrix<T> pool(const Matrix<T>& weights, const SparseRows<T>& h) {
  if (weights.cols() != h.rows()) throw ShapeError("attention weights do not match instance count");
  Matrix<T> m(weights.rows(), h.cols());
  for (std::size_t c = 0; c < weights.rows(); ++c) {
    auto mc = m.row(c);
    for (std::size_t k = 0; k < h.rows(); ++k) {
      const T wk = weights(c, k);
      const auto row = h.row(k);
      for (std::size_t t = 0; t < row.index.size(); ++t) mc[row.index[t]] += wk * row.value[t];
    }
  }
  return m;
}

namespace detail {

template <typename T>
void require_covariates(std::span<const T> cov, const ModelConfig& cfg) {
  if (cov.size() != cfg.covariate_dim)
    throw ShapeError("expected " + std::to_string(cfg.covariate_dim) + " covariates, got " + std::to_string(cov.size()));
}

}  // namespace detail

// Multi-branch scoring: class c's logit reads only its own pooled vector.
template <typename T>
std::vector<T> disease_logits(const Matrix<T>& pooled, const ModelParams<T>& p, const ModelConfig& cfg,
                              std::span<const T> covariates = {}) {
  detail::require_covariates(covariates, cfg);
  if (pooled.rows() != cfg.n_classes || pooled.cols() != cfg.input_dim) throw ShapeError("pooled matrix has wrong shape");
  const auto& head = p.disease_head;
  const std::size_t C = cfg.n_classes, L = cfg.input_dim;
  std::vector<T> s(C);
  for (std::size_t c = 0; c < C; ++c) {
    T acc = head.b[c];
    const auto mc = pooled.row(c);
    for (std::size_t i = 0; i < L; ++i) acc += head.at(c, i) * mc[i];
    for (std::size_t q = 0; q < covariates.size(); ++q) acc += head.at(c, L + q) * covariates[q];
    s[c] = acc;
  }
  return s;
}

template <typename T>
std::vector<T> classify_disease(const Matrix<T>& pooled, const ModelParams<T>& p, const ModelConfig& cfg,
                                std::span<const T> covariates = {}) {
  const auto s = disease_logits(pooled, p, cfg, covariates);
  return detail::softmax<T>(s);
}

// Location head input: mean of the class-branch pooled vectors, then covariates.
template <typename T>
std::vector<T> location_input(const Matrix<T>& pooled, std::span<const T> covariates) {
  std::vector<T> in(pooled.cols() + covariates.size(), T(0));
  for (std::size_t c = 0; c < pooled.rows(); ++c)
    for (std::size_t i = 0; i < pooled.cols(); ++i) in[i] += pooled(c, i);
  for (std::size_t i = 0; i < pooled.cols(); ++i) in[i] /= static_cast<T>(pooled.rows());
  std::copy(covariates.begin(), covariates.end(), in.begin() + static_cast<std::ptrdiff_t>(pooled.cols()));
  return in;
}

template <typename T>
std::vector<T> location_logits(const Matrix<T>& pooled, const ModelParams<T>& p, const ModelConfig& cfg,
                               std::span<const T> covariates = {}) {
  if (cfg.n_locations == 0 || !p.location_head) throw ConfigError("location head is disabled (n_locations = 0)");
  detail::require_covariates(covariates, cfg);
  const auto in = location_input(pooled, covariates);
  std::vector<T> t(cfg.n_locations);
  p.location_head->apply(std::span<const T>(in), std::span<T>(t));
  return t;
}

template <typename T>
std::vector<T> classify_location(const Matrix<T>& pooled, const ModelParams<T>& p, const ModelConfig& cfg,
                                 std::span<const T> covariates = {}) {
  const auto t = location_logits(pooled, p, cfg, covariates);
  return detail::softmax<T>(t);
}

// Per class c, the class-c instance head maps each instance to two logits
// (negative, positive evidence). Result is C x 2n.
template <typename T>
Matrix<T> instance_logits(const SparseRows<T>& h, const ModelParams<T>& p, const ModelConfig& cfg) {
  const std::size_t n = h.rows(), C = cfg.n_classes;
  Matrix<T> out(C, 2 * n);
  T two[2];
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = 0; k < n; ++k) {
      p.instance_heads[c].apply(h.row(k), std::span<T>(two, 2));
      out(c, 2 * k) = two[0];
      out(c, 2 * k + 1) = two[1];
    }
  return out;
}

// Inverted dropout over stored input entries.
template <typename T>
SparseRows<T> dropout_rows(const SparseRows<T>& x, double p, CounterRng& rng) {
  if (p <= 0.0) return x;
  const T scale = T(1) / (T(1) - static_cast<T>(p));
  std::vector<T> vals(x.values().begin(), x.values().end());
  for (auto& v : vals) v = rng.bernoulli(p) ? T(0) : v * scale;
  return x.with_values(std::move(vals));
}

// Full bag forward pass. Train mode draws dropout masks from `rng` (input
// entries first, then gated hidden units); eval mode is deterministic.
template <typename T>
BagOutput<T> forward(const SparseRows<T>& x, const ModelParams<T>& p, const ModelConfig& cfg, Mode mode,
                     CounterRng* rng = nullptr, std::span<const T> covariates = {}, ForwardCache<T>* cache = nullptr) {
  detail::require_width(x, cfg);
  detail::require_covariates(covariates, cfg);
  if (mode == Mode::train && cfg.dropout > 0.0 && !rng) throw ConfigError("train-mode forward needs an rng for dropout");

  ForwardCache<T> local;
  ForwardCache<T>& fc = cache ? *cache : local;
  const bool drop = mode == Mode::train && cfg.dropout > 0.0;
  fc.x = drop ? dropout_rows(x, cfg.dropout, *rng) : x;
  fc.covariates.assign(covariates.begin(), covariates.end());

  BagOutput<T> out;
  out.attention.a1 = gated_branch(fc.x, p, cfg, &fc, drop ? rng : nullptr);
  out.attention.a2 = spatial_branch(fc.x, p, cfg, &fc);
  out.attention.fused = fuse_attention(out.attention.a1, out.attention.a2, cfg.lambda);
  out.attention.weights = normalize_attention(out.attention.fused);
  out.pooled = pool(out.attention.weights, fc.x);
  out.class_logits = disease_logits(out.pooled, p, cfg, covariates);
  out.class_probs = detail::softmax<T>(out.class_logits);
  if (cfg.n_locations > 0) {
    fc.location_input = location_input(out.pooled, covariates);
    out.location_logits = location_logits(out.pooled, p, cfg, covariates);
    out.location_probs = detail::softmax<T>(out.location_logits);
  }
  out.instance_logits = instance_logits(fc.x, p, cfg);
  return out;
}

}  // namespace repmil
