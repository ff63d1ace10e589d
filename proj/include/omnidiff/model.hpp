#pragma once

// Minimal pre-norm decoder transformer over the unified vocabulary.
//
// Per layer:  h = x + Wo * attn(QKNorm(Wq xn, Wk xn), Wv xn),  xn = rms(x)
//             x' = h + W2 gelu(W1 rms(h) + b1) + b2
// followed by a final RMS norm and an untied output projection.
//
// All parameters live in one flat vector; TensorSlot records where each
// named tensor sits, so optimizers, gradient checks and checkpoints work on
// the flat view while the forward pass maps column-major matrices over it.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <type_traits>
#include <vector>

#include "omnidiff/diffusion.hpp"
#include "omnidiff/errors.hpp"
#include "omnidiff/rng.hpp"
#include "omnidiff/sequence.hpp"

namespace omnidiff {

struct ModelConfig {
  int depth = 2;
  int width = 32;
  int heads = 4;
  int vocab_total = 0;
  int max_len = 32;
  int mlp_ratio = 4;
  /// Adds a learned vector scaled by the masked fraction of image tokens to
  /// every input embedding. Off by default.
  bool time_conditioning = false;

  int head_dim() const { return width / heads; }

  void validate() const {
    if (depth < 1) throw ArgumentError("model: depth must be >= 1");
    if (width < 1 || heads < 1) throw ArgumentError("model: width and heads must be >= 1");
    if (width % heads != 0) throw ArgumentError("model: width must be divisible by heads");
    if (vocab_total < 1) throw ArgumentError("model: vocab_total must be >= 1");
    if (max_len < 1) throw ArgumentError("model: max_len must be >= 1");
    if (mlp_ratio < 1) throw ArgumentError("model: mlp_ratio must be >= 1");
  }

  bool operator==(const ModelConfig&) const = default;
};

struct TensorSlot {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

class ParamLayout {
 public:
  struct Layer {
    TensorSlot norm1, wq, wk, wv, q_gain, k_gain, wo, norm2, w1, b1, w2, b2;
  };

  ParamLayout() = default;
  explicit ParamLayout(const ModelConfig& cfg) {
    cfg.validate();
    const int w = cfg.width;
    const int hidden = cfg.mlp_ratio * w;
    tok_emb = add("tok_emb", cfg.vocab_total, w);
    pos_emb = add("pos_emb", cfg.max_len, w);
    if (cfg.time_conditioning) time_emb = add("time_emb", 1, w);
    for (int l = 0; l < cfg.depth; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      Layer layer;
      layer.norm1 = add(p + "norm1", 1, w);
      layer.wq = add(p + "wq", w, w);
      layer.wk = add(p + "wk", w, w);
      layer.wv = add(p + "wv", w, w);
      layer.q_gain = add(p + "q_gain", 1, cfg.heads);
      layer.k_gain = add(p + "k_gain", 1, cfg.heads);
      layer.wo = add(p + "wo", w, w);
      layer.norm2 = add(p + "norm2", 1, w);
      layer.w1 = add(p + "w1", hidden, w);
      layer.b1 = add(p + "b1", 1, hidden);
      layer.w2 = add(p + "w2", w, hidden);
      layer.b2 = add(p + "b2", 1, w);
      layers.push_back(std::move(layer));
    }
    final_norm = add("final_norm", 1, w);
    w_out = add("w_out", cfg.vocab_total, w);
    b_out = add("b_out", 1, cfg.vocab_total);
  }

  const std::vector<TensorSlot>& slots() const { return slots_; }
  std::size_t total() const { return total_; }

  TensorSlot tok_emb, pos_emb, time_emb, final_norm, w_out, b_out;
  std::vector<Layer> layers;

 private:
  TensorSlot add(std::string name, int rows, int cols) {
    TensorSlot s{std::move(name), rows, cols, total_};
    total_ += s.size();
    slots_.push_back(s);
    return s;
  }

  std::vector<TensorSlot> slots_;
  std::size_t total_ = 0;
};

template <typename Scalar = double>
struct ModelParams {
  using MatrixMap = Eigen::Map<Matrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const Matrix<Scalar>>;

  ModelConfig config;
  ParamLayout layout;
  Vector<Scalar> data;

  ModelParams() = default;
  explicit ModelParams(const ModelConfig& cfg)
      : config(cfg), layout(cfg), data(Vector<Scalar>::Zero(static_cast<Eigen::Index>(layout.total()))) {}

  MatrixMap tensor(const TensorSlot& s) { return MatrixMap(data.data() + s.offset, s.rows, s.cols); }
  ConstMatrixMap tensor(const TensorSlot& s) const {
    return ConstMatrixMap(data.data() + s.offset, s.rows, s.cols);
  }

  std::size_t size() const { return static_cast<std::size_t>(data.size()); }

  /// Same layout, all zeros (gradient accumulator).
  ModelParams zeros_like() const {
    ModelParams g;
    g.config = config;
    g.layout = layout;
    g.data = Vector<Scalar>::Zero(data.size());
    return g;
  }

  bool all_finite() const { return data.allFinite(); }
};

/// Scaled random init: fan-in variance, residual output projections further
/// scaled by 1/sqrt(2 depth); norms start at 1, QK gains at head_dim^(1/4).
template <typename Scalar = double>
ModelParams<Scalar> init_params(const ModelConfig& cfg, Rng& rng) {
  ModelParams<Scalar> p(cfg);
  const auto& L = p.layout;
  auto fill_normal = [&](const TensorSlot& s, double stddev) {
    auto t = p.tensor(s);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Scalar>(stddev * rng.normal());
  };
  auto fill_const = [&](const TensorSlot& s, double v) { p.tensor(s).setConstant(static_cast<Scalar>(v)); };

  const double w = cfg.width;
  const double hidden = static_cast<double>(cfg.mlp_ratio) * cfg.width;
  const double residual = 1.0 / std::sqrt(2.0 * cfg.depth);
  const double gain = std::pow(static_cast<double>(cfg.head_dim()), 0.25);

  fill_normal(L.tok_emb, 1.0 / std::sqrt(w));
  fill_normal(L.pos_emb, 1.0 / std::sqrt(w));
  if (cfg.time_conditioning) fill_normal(L.time_emb, 1.0 / std::sqrt(w));
  for (const auto& layer : L.layers) {
    fill_const(layer.norm1, 1.0);
    fill_normal(layer.wq, 1.0 / std::sqrt(w));
    fill_normal(layer.wk, 1.0 / std::sqrt(w));
    fill_normal(layer.wv, 1.0 / std::sqrt(w));
    fill_const(layer.q_gain, gain);
    fill_const(layer.k_gain, gain);
    fill_normal(layer.wo, residual / std::sqrt(w));
    fill_const(layer.norm2, 1.0);
    fill_normal(layer.w1, 1.0 / std::sqrt(w));
    fill_const(layer.b1, 0.0);
    fill_normal(layer.w2, residual / std::sqrt(hidden));
    fill_const(layer.b2, 0.0);
  }
  fill_const(L.final_norm, 1.0);
  fill_normal(L.w_out, 1.0 / std::sqrt(w));
  fill_const(L.b_out, 0.0);
  return p;
}

// ---------------------------------------------------------------------------
// Building blocks

namespace nn {

inline constexpr double kRmsEps = 1e-5;
inline constexpr double kQkEps = 1e-10;

/// Row-wise RMS norm with gain; writes the per-row rms to `rms`.
template <typename Scalar>
Matrix<Scalar> rms_norm(const Matrix<Scalar>& x, const Eigen::Ref<const Matrix<Scalar>>& gain,
                        Vector<Scalar>& rms) {
  const Eigen::Index n = x.cols();
  rms.resize(x.rows());
  Matrix<Scalar> y(x.rows(), n);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    rms(i) = std::sqrt(x.row(i).squaredNorm() / static_cast<Scalar>(n) + static_cast<Scalar>(kRmsEps));
    y.row(i) = x.row(i).cwiseProduct(gain.row(0)) / rms(i);
  }
  return y;
}

/// Accumulates the gain gradient into dgain, returns dx.
template <typename Scalar>
Matrix<Scalar> rms_norm_backward(const Matrix<Scalar>& x, const Eigen::Ref<const Matrix<Scalar>>& gain,
                                 const Vector<Scalar>& rms, const Matrix<Scalar>& dy,
                                 Eigen::Map<Matrix<Scalar>> dgain) {
  const Scalar n = static_cast<Scalar>(x.cols());
  Matrix<Scalar> dx(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar r = rms(i);
    dgain.row(0) += dy.row(i).cwiseProduct(x.row(i)) / r;
    const auto u = dy.row(i).cwiseProduct(gain.row(0));
    const Scalar ux = u.dot(x.row(i));
    dx.row(i) = u / r - x.row(i) * (ux / (n * r * r * r));
  }
  return dx;
}

template <typename Scalar>
Scalar gelu(Scalar x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  const Scalar t = std::tanh(static_cast<Scalar>(c) * (x + static_cast<Scalar>(0.044715) * x * x * x));
  return static_cast<Scalar>(0.5) * x * (Scalar(1) + t);
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
  constexpr double c = 0.7978845608028654;
  const Scalar inner = static_cast<Scalar>(c) * (x + static_cast<Scalar>(0.044715) * x * x * x);
  const Scalar t = std::tanh(inner);
  const Scalar dinner = static_cast<Scalar>(c) * (Scalar(1) + static_cast<Scalar>(3 * 0.044715) * x * x);
  return static_cast<Scalar>(0.5) * (Scalar(1) + t) +
         static_cast<Scalar>(0.5) * x * (Scalar(1) - t * t) * dinner;
}

}  // namespace nn

template <typename Scalar>
struct AttentionResult {
  Matrix<Scalar> out;             // L x width, heads concatenated
  Matrix<Scalar> q_unit, k_unit;  // L2-normalized q, k per head (before gains)
  Matrix<Scalar> q_norm, k_norm;  // L x heads
  std::vector<Matrix<Scalar>> probs;  // per head, L x L, exact zeros where masked
};

/// Multi-head attention with QK-Norm: q and k are L2-normalized per head and
/// scaled by per-head gains before the dot product. Disallowed keys are
/// skipped outright; a query with no allowed key outputs zeros.
template <typename Scalar>
AttentionResult<Scalar> qk_norm_attention(const Matrix<Scalar>& q, const Matrix<Scalar>& k,
                                          const Matrix<Scalar>& v,
                                          const Eigen::Ref<const Matrix<Scalar>>& q_gain,
                                          const Eigen::Ref<const Matrix<Scalar>>& k_gain, int heads,
                                          const AttentionMask& mask) {
  using Acc = std::common_type_t<Scalar, double>;
  const int L = static_cast<int>(q.rows());
  const int width = static_cast<int>(q.cols());
  if (k.rows() != L || v.rows() != L || k.cols() != width || v.cols() != width) {
    throw ArgumentError("attention: q/k/v shape mismatch");
  }
  if (mask.size() != L) throw ArgumentError("attention: mask size differs from sequence length");
  if (heads < 1 || width % heads != 0) throw ArgumentError("attention: bad head count");
  const int d = width / heads;

  AttentionResult<Scalar> r;
  r.out = Matrix<Scalar>::Zero(L, width);
  r.q_unit.resize(L, width);
  r.k_unit.resize(L, width);
  r.q_norm.resize(L, heads);
  r.k_norm.resize(L, heads);
  r.probs.assign(heads, Matrix<Scalar>::Zero(L, L));

  for (int h = 0; h < heads; ++h) {
    for (int i = 0; i < L; ++i) {
      r.q_norm(i, h) = std::sqrt(q.row(i).segment(h * d, d).squaredNorm() + static_cast<Scalar>(nn::kQkEps));
      r.k_norm(i, h) = std::sqrt(k.row(i).segment(h * d, d).squaredNorm() + static_cast<Scalar>(nn::kQkEps));
      r.q_unit.row(i).segment(h * d, d) = q.row(i).segment(h * d, d) / r.q_norm(i, h);
      r.k_unit.row(i).segment(h * d, d) = k.row(i).segment(h * d, d) / r.k_norm(i, h);
    }
    const Scalar scale = q_gain(0, h) * k_gain(0, h);
    std::vector<Acc> scores(L);
    for (int i = 0; i < L; ++i) {
      Acc best = -std::numeric_limits<Acc>::infinity();
      bool any = false;
      for (int j = 0; j < L; ++j) {
        if (!mask(i, j)) continue;
        scores[j] = static_cast<Acc>(scale * r.q_unit.row(i).segment(h * d, d).dot(r.k_unit.row(j).segment(h * d, d)));
        best = std::max(best, scores[j]);
        any = true;
      }
      if (!any) continue;
      Acc total = 0;
      for (int j = 0; j < L; ++j) {
        if (!mask(i, j)) continue;
        scores[j] = std::exp(scores[j] - best);
        total += scores[j];
      }
      for (int j = 0; j < L; ++j) {
        if (!mask(i, j)) continue;
        const Scalar p = static_cast<Scalar>(scores[j] / total);
        r.probs[h](i, j) = p;
        r.out.row(i).segment(h * d, d) += p * v.row(j).segment(h * d, d);
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename Scalar>
struct LayerCache {
  Matrix<Scalar> x_in, xn1, q, k, v, attn, h, xn2, pre_act, act;
  Vector<Scalar> rms1, rms2;
  AttentionResult<Scalar> att;
};

template <typename Scalar>
struct ForwardCache {
  std::vector<int> ids;
  Scalar time_fraction = 0;
  std::vector<LayerCache<Scalar>> layers;
  Matrix<Scalar> x_final, xn_final;
  Vector<Scalar> rms_final;
  Matrix<Scalar> logits;  // L x vocab_total
};

/// Fraction of image positions holding [MASK]; the time-conditioning input.
inline double masked_fraction(const UnifiedSequence& seq, int mask_id) {
  int image = 0;
  int masked = 0;
  for (int i = 0; i < seq.size(); ++i) {
    if (seq.roles[i] != Role::image) continue;
    ++image;
    masked += seq.ids[i] == mask_id ? 1 : 0;
  }
  return image ? static_cast<double>(masked) / image : 0.0;
}

template <typename Scalar>
ForwardCache<Scalar> forward(const ModelParams<Scalar>& p, const std::vector<int>& ids,
                             const AttentionMask& mask, double time_fraction = 0.0) {
  const auto& cfg = p.config;
  const auto& L = p.layout;
  const int n = static_cast<int>(ids.size());
  if (n > cfg.max_len) {
    throw CapacityError("sequence length " + std::to_string(n) + " exceeds max_len " +
                        std::to_string(cfg.max_len));
  }
  if (mask.size() != n) throw ArgumentError("forward: mask size differs from sequence length");

  ForwardCache<Scalar> c;
  c.ids = ids;
  c.time_fraction = static_cast<Scalar>(time_fraction);
  Matrix<Scalar> x(n, cfg.width);
  const auto tok = p.tensor(L.tok_emb);
  const auto pos = p.tensor(L.pos_emb);
  for (int i = 0; i < n; ++i) {
    if (ids[i] < 0 || ids[i] >= cfg.vocab_total) {
      throw ArgumentError("forward: token id " + std::to_string(ids[i]) + " outside vocabulary");
    }
    x.row(i) = tok.row(ids[i]) + pos.row(i);
    if (cfg.time_conditioning) x.row(i) += c.time_fraction * p.tensor(L.time_emb).row(0);
  }

  c.layers.resize(cfg.depth);
  for (int l = 0; l < cfg.depth; ++l) {
    const auto& s = L.layers[l];
    auto& lc = c.layers[l];
    lc.x_in = x;
    lc.xn1 = nn::rms_norm<Scalar>(x, p.tensor(s.norm1), lc.rms1);
    lc.q = lc.xn1 * p.tensor(s.wq).transpose();
    lc.k = lc.xn1 * p.tensor(s.wk).transpose();
    lc.v = lc.xn1 * p.tensor(s.wv).transpose();
    lc.att = qk_norm_attention<Scalar>(lc.q, lc.k, lc.v, p.tensor(s.q_gain), p.tensor(s.k_gain),
                                       cfg.heads, mask);
    lc.attn = lc.att.out;
    lc.h = x + lc.attn * p.tensor(s.wo).transpose();
    lc.xn2 = nn::rms_norm<Scalar>(lc.h, p.tensor(s.norm2), lc.rms2);
    lc.pre_act = (lc.xn2 * p.tensor(s.w1).transpose()).rowwise() + p.tensor(s.b1).row(0);
    lc.act = lc.pre_act.unaryExpr([](Scalar z) { return nn::gelu(z); });
    x = lc.h + ((lc.act * p.tensor(s.w2).transpose()).rowwise() + p.tensor(s.b2).row(0));
  }
  c.x_final = x;
  c.xn_final = nn::rms_norm<Scalar>(x, p.tensor(L.final_norm), c.rms_final);
  c.logits = (c.xn_final * p.tensor(L.w_out).transpose()).rowwise() + p.tensor(L.b_out).row(0);
  // A row that may see nothing, itself included, carries no information.
  for (int i = 0; i < n; ++i) {
    if (!mask.allow.row(i).any()) c.logits.row(i).setZero();
  }
  return c;
}

/// Per-position logits, L x vocab_total.
template <typename Scalar>
Matrix<Scalar> forward_logits(const ModelParams<Scalar>& p, const UnifiedSequence& seq,
                              const AttentionMask& mask, int mask_id = -1) {
  const double frac = p.config.time_conditioning ? masked_fraction(seq, mask_id) : 0.0;
  return forward(p, seq.ids, mask, frac).logits;
}

/// Accumulates dLoss/dparams into grads given dLoss/dlogits.
template <typename Scalar>
void backward(const ModelParams<Scalar>& p, const ForwardCache<Scalar>& c, const AttentionMask& mask,
              const Matrix<Scalar>& dlogits, ModelParams<Scalar>& grads) {
  const auto& cfg = p.config;
  const auto& L = p.layout;
  const int n = static_cast<int>(c.ids.size());
  const int heads = cfg.heads;
  const int d = cfg.head_dim();

  Matrix<Scalar> live = dlogits;
  for (int i = 0; i < n; ++i) {
    if (!mask.allow.row(i).any()) live.row(i).setZero();
  }
  grads.tensor(L.w_out) += live.transpose() * c.xn_final;
  grads.tensor(L.b_out).row(0) += live.colwise().sum();
  Matrix<Scalar> dxn = live * p.tensor(L.w_out);
  Matrix<Scalar> dx = nn::rms_norm_backward<Scalar>(c.x_final, p.tensor(L.final_norm), c.rms_final, dxn,
                                                    grads.tensor(L.final_norm));

  for (int l = cfg.depth - 1; l >= 0; --l) {
    const auto& s = L.layers[l];
    const auto& lc = c.layers[l];

    // MLP branch.
    grads.tensor(s.w2) += dx.transpose() * lc.act;
    grads.tensor(s.b2).row(0) += dx.colwise().sum();
    Matrix<Scalar> dact = dx * p.tensor(s.w2);
    Matrix<Scalar> dpre = dact.cwiseProduct(lc.pre_act.unaryExpr([](Scalar z) { return nn::gelu_grad(z); }));
    grads.tensor(s.w1) += dpre.transpose() * lc.xn2;
    grads.tensor(s.b1).row(0) += dpre.colwise().sum();
    Matrix<Scalar> dxn2 = dpre * p.tensor(s.w1);
    Matrix<Scalar> dh = dx + nn::rms_norm_backward<Scalar>(lc.h, p.tensor(s.norm2), lc.rms2, dxn2,
                                                           grads.tensor(s.norm2));

    // Attention branch.
    grads.tensor(s.wo) += dh.transpose() * lc.attn;
    const Matrix<Scalar> dattn = dh * p.tensor(s.wo);
    Matrix<Scalar> dq = Matrix<Scalar>::Zero(n, cfg.width);
    Matrix<Scalar> dk = Matrix<Scalar>::Zero(n, cfg.width);
    Matrix<Scalar> dv = Matrix<Scalar>::Zero(n, cfg.width);
    const auto qg = p.tensor(s.q_gain);
    const auto kg = p.tensor(s.k_gain);
    auto dqg = grads.tensor(s.q_gain);
    auto dkg = grads.tensor(s.k_gain);
    for (int h = 0; h < heads; ++h) {
      const auto& P = lc.att.probs[h];
      const auto qu = lc.att.q_unit.middleCols(h * d, d);
      const auto ku = lc.att.k_unit.middleCols(h * d, d);
      const auto vh = lc.v.middleCols(h * d, d);
      const auto dO = dattn.middleCols(h * d, d);
      Matrix<Scalar> dS = Matrix<Scalar>::Zero(n, n);
      for (int i = 0; i < n; ++i) {
        Scalar weighted = 0;
        for (int j = 0; j < n; ++j) {
          if (!mask(i, j)) continue;
          const Scalar dp = dO.row(i).dot(vh.row(j));
          dS(i, j) = dp;
          weighted += P(i, j) * dp;
          dv.row(j).segment(h * d, d) += P(i, j) * dO.row(i);
        }
        for (int j = 0; j < n; ++j) {
          if (mask(i, j)) dS(i, j) = P(i, j) * (dS(i, j) - weighted);
        }
      }
      // S = (gq gk) qu ku^T
      const Scalar scale = qg(0, h) * kg(0, h);
      const Matrix<Scalar> raw = qu * ku.transpose();
      const Scalar dscale = dS.cwiseProduct(raw).sum();
      dqg(0, h) += dscale * kg(0, h);
      dkg(0, h) += dscale * qg(0, h);
      const Matrix<Scalar> dqu = scale * (dS * ku);
      const Matrix<Scalar> dku = scale * (dS.transpose() * qu);
      for (int i = 0; i < n; ++i) {
        const Scalar qn = lc.att.q_norm(i, h);
        const Scalar kn = lc.att.k_norm(i, h);
        dq.row(i).segment(h * d, d) = (dqu.row(i) - qu.row(i) * qu.row(i).dot(dqu.row(i))) / qn;
        dk.row(i).segment(h * d, d) = (dku.row(i) - ku.row(i) * ku.row(i).dot(dku.row(i))) / kn;
      }
    }
    grads.tensor(s.wq) += dq.transpose() * lc.xn1;
    grads.tensor(s.wk) += dk.transpose() * lc.xn1;
    grads.tensor(s.wv) += dv.transpose() * lc.xn1;
    const Matrix<Scalar> dxn1 = dq * p.tensor(s.wq) + dk * p.tensor(s.wk) + dv * p.tensor(s.wv);
    dx = dh + nn::rms_norm_backward<Scalar>(lc.x_in, p.tensor(s.norm1), lc.rms1, dxn1,
                                            grads.tensor(s.norm1));
  }

  auto dtok = grads.tensor(L.tok_emb);
  auto dpos = grads.tensor(L.pos_emb);
  for (int i = 0; i < n; ++i) {
    dtok.row(c.ids[i]) += dx.row(i);
    dpos.row(i) += dx.row(i);
  }
  if (cfg.time_conditioning) grads.tensor(L.time_emb).row(0) += c.time_fraction * dx.colwise().sum();
}

}  // namespace omnidiff
