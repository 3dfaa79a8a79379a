#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdnet/core_types.hpp"
#include "tdnet/tensor.hpp"

namespace tdnet {

/// Floor applied inside every logarithm.
inline constexpr double kLossLogEps = 1e-8;

/// Base weights and schedule position for the unsupervised terms.
struct LossWeights {
  double alpha = 10.0;
  double beta = 1.0;
  int64_t t = 0;
  int64_t t_max = 1;

  void validate() const {
    if (alpha < 0.0 || beta < 0.0)
      throw std::invalid_argument("loss weights alpha and beta must be >= 0");
    if (t_max < 1) throw std::invalid_argument("t_max must be >= 1");
    if (t < 0) throw std::invalid_argument("iteration t must be >= 0");
  }
};

struct LossBreakdown {
  double total = 0.0;
  double sup = 0.0;
  double uspc = 0.0;
  double mpcc = 0.0;
  double alpha_t = 0.0;
  double beta_t = 0.0;
};

struct ConsistencyOptions {
  bool uncertainty_weighting = true;
  AffinityNorm affinity_norm = AffinityNorm::L1;
};

namespace loss_detail {

template <typename T>
T clamped_log(T x) {
  return std::log(std::max(x, static_cast<T>(kLossLogEps)));
}

template <typename T>
void check_same_shape(const std::vector<ProbMapT<T>>& probs) {
  if (probs.empty()) throw std::invalid_argument("need at least one probability map");
  for (const auto& p : probs) {
    if (p.probs.rank() != 4)
      throw std::invalid_argument("probability maps must be (C,D,H,W)");
    if (!p.probs.same_shape(probs.front().probs))
      throw std::invalid_argument("probability maps must share one shape, got " +
                                  shape_str(p.probs.shape()) + " vs " +
                                  shape_str(probs.front().probs.shape()));
  }
}

template <typename T>
TensorT<T>& grad_slot(std::vector<TensorT<T>>* grads, size_t n, const TensorT<T>& like) {
  TensorT<T>& g = grads->at(n);
  if (g.numel() == 0) g = TensorT<T>(like.shape());
  if (!g.same_shape(like))
    throw std::invalid_argument("gradient buffer shape mismatch");
  return g;
}

/// gz += scale * p (gp - <p, gp>) per voxel: pullback of d/dp through softmax.
template <typename T>
void softmax_chain_add(const TensorT<T>& p, const TensorT<T>& gp, double scale, TensorT<T>& gz) {
  const int64_t c_n = p.dim(0), vox = p.numel() / c_n;
  const T* pd = p.data();
  const T* gd = gp.data();
  T* out = gz.data();
  const T s = static_cast<T>(scale);
  for (int64_t i = 0; i < vox; ++i) {
    T dot = T(0);
    for (int64_t c = 0; c < c_n; ++c) dot += pd[c * vox + i] * gd[c * vox + i];
    for (int64_t c = 0; c < c_n; ++c) {
      const int64_t k = c * vox + i;
      out[k] += s * pd[k] * (gd[k] - dot);
    }
  }
}

}  // namespace loss_detail

/// Cross-entropy over labeled voxels only, averaged over branches and the
/// labeled set. Empty scribbles contribute a defined 0. When `grad_logits`
/// is given, d(loss)/d(branch logits) scaled by `grad_scale` is accumulated
/// into it (empty slots are allocated on demand).
template <typename T>
double partial_cross_entropy(const std::vector<ProbMapT<T>>& probs, const ScribbleAnnotation& s,
                             std::vector<TensorT<T>>* grad_logits = nullptr,
                             double grad_scale = 1.0) {
  using loss_detail::clamped_log;
  loss_detail::check_same_shape(probs);
  const int64_t n_br = static_cast<int64_t>(probs.size());
  const TensorT<T>& p0 = probs.front().probs;
  const int64_t c_n = p0.dim(0), vox = p0.numel() / c_n;
  if (s.labels.numel() != vox)
    throw std::invalid_argument("scribble grid does not match probability map");
  if (c_n != s.num_classes)
    throw std::invalid_argument("probability map channels do not match scribble classes");
  if (grad_logits && grad_logits->size() != probs.size())
    throw std::invalid_argument("expected one gradient buffer per branch");

  int64_t labeled = 0;
  for (int64_t i = 0; i < vox; ++i)
    if (s.labels[i] != kIgnoreLabel) ++labeled;
  if (labeled == 0) return 0.0;

  const double inv = 1.0 / (static_cast<double>(n_br) * static_cast<double>(labeled));
  const T eps = static_cast<T>(kLossLogEps);
  double loss = 0.0;
  TensorT<T> gp;
  for (size_t n = 0; n < probs.size(); ++n) {
    const T* pd = probs[n].probs.data();
    if (grad_logits) {
      gp = TensorT<T>(p0.shape());
      for (int64_t i = 0; i < vox; ++i) {
        const uint8_t l = s.labels[i];
        if (l == kIgnoreLabel) continue;
        const int64_t k = static_cast<int64_t>(l) * vox + i;
        loss -= inv * static_cast<double>(clamped_log(pd[k]));
        if (pd[k] >= eps) gp[k] = static_cast<T>(-inv) / pd[k];
      }
      loss_detail::softmax_chain_add(probs[n].probs, gp,
                                     grad_scale,
                                     loss_detail::grad_slot(grad_logits, n, p0));
    } else {
      for (int64_t i = 0; i < vox; ++i) {
        const uint8_t l = s.labels[i];
        if (l == kIgnoreLabel) continue;
        loss -= inv * static_cast<double>(clamped_log(pd[static_cast<int64_t>(l) * vox + i]));
      }
    }
  }
  return loss;
}

/// Arithmetic mean of the branch probability maps. The result is used as a
/// constant training target: no gradient flows through it.
template <typename T>
ProbMapT<T> mix_soft_pseudo_label(const std::vector<ProbMapT<T>>& probs) {
  loss_detail::check_same_shape(probs);
  const TensorT<T>& p0 = probs.front().probs;
  ProbMapT<T> out;
  out.probs = TensorT<T>(p0.shape());
  const T inv = T(1) / static_cast<T>(probs.size());
  for (const auto& p : probs) {
    const T* src = p.probs.data();
    T* dst = out.probs.data();
    for (int64_t i = 0; i < p0.numel(); ++i) dst[i] += src[i];
  }
  for (int64_t i = 0; i < p0.numel(); ++i) out.probs[i] *= inv;
  return out;
}

/// Per-voxel confidence w_i = exp(sum_c q log q) = exp(-entropy), in [1/C, 1].
/// Uses the 0 log 0 = 0 convention; natural logarithm.
template <typename T>
UncertaintyWeightsT<T> uncertainty_weights(const ProbMapT<T>& pbar) {
  if (pbar.probs.rank() != 4)
    throw std::invalid_argument("probability map must be (C,D,H,W)");
  const int64_t c_n = pbar.probs.dim(0), vox = pbar.probs.numel() / c_n;
  UncertaintyWeightsT<T> out;
  out.weights = TensorT<T>({pbar.probs.dim(1), pbar.probs.dim(2), pbar.probs.dim(3)});
  const T* pd = pbar.probs.data();
  for (int64_t i = 0; i < vox; ++i) {
    double neg_entropy = 0.0;
    for (int64_t c = 0; c < c_n; ++c) {
      const double q = static_cast<double>(pd[c * vox + i]);
      if (q > 0.0) neg_entropy += q * std::log(q);
    }
    out.weights[i] = static_cast<T>(std::exp(neg_entropy));
  }
  return out;
}

/// Uncertainty-weighted KL consistency of every branch against the soft
/// pseudo label: (1/N) sum_n [sum_i w_i KL(P_n,i || pbar_i)] / [sum_i w_i].
/// `pbar` and `w` are gradient-stopped targets.
template <typename T>
double uspc_loss(const std::vector<ProbMapT<T>>& probs, const ProbMapT<T>& pbar,
                 const UncertaintyWeightsT<T>& w,
                 std::vector<TensorT<T>>* grad_logits = nullptr, double grad_scale = 1.0) {
  using loss_detail::clamped_log;
  loss_detail::check_same_shape(probs);
  const TensorT<T>& p0 = probs.front().probs;
  if (!pbar.probs.same_shape(p0))
    throw std::invalid_argument("pseudo label shape does not match branch outputs");
  const int64_t c_n = p0.dim(0), vox = p0.numel() / c_n;
  if (w.weights.numel() != vox)
    throw std::invalid_argument("weight map does not match probability map grid");
  if (grad_logits && grad_logits->size() != probs.size())
    throw std::invalid_argument("expected one gradient buffer per branch");

  double w_sum = 0.0;
  for (int64_t i = 0; i < vox; ++i) w_sum += static_cast<double>(w.weights[i]);
  if (!(w_sum > 0.0)) throw std::invalid_argument("uncertainty weights must sum to > 0");

  const double inv_n = 1.0 / static_cast<double>(probs.size());
  const T eps = static_cast<T>(kLossLogEps);
  const T* qd = pbar.probs.data();
  double loss = 0.0;
  TensorT<T> gp;
  for (size_t n = 0; n < probs.size(); ++n) {
    const T* pd = probs[n].probs.data();
    if (grad_logits) gp = TensorT<T>(p0.shape());
    double acc = 0.0;
    for (int64_t i = 0; i < vox; ++i) {
      const double wi = static_cast<double>(w.weights[i]);
      for (int64_t c = 0; c < c_n; ++c) {
        const int64_t k = c * vox + i;
        const T log_ratio = clamped_log(pd[k]) - clamped_log(qd[k]);
        acc += wi * static_cast<double>(pd[k]) * static_cast<double>(log_ratio);
        if (grad_logits) {
          T dp = log_ratio;
          if (pd[k] >= eps) dp += T(1);
          gp[k] = static_cast<T>(wi * inv_n / w_sum) * dp;
        }
      }
    }
    loss += inv_n * acc / w_sum;
    if (grad_logits)
      loss_detail::softmax_chain_add(probs[n].probs, gp, grad_scale,
                                     loss_detail::grad_slot(grad_logits, n, p0));
  }
  return loss;
}

/// Mean over one spatial axis, flattened to (C, remaining locations).
/// Axial collapses depth, sagittal collapses width, coronal collapses height.
template <typename T>
TensorT<T> project_probabilities(const ProbMapT<T>& p, View view) {
  if (p.probs.rank() != 4)
    throw std::invalid_argument("probability map must be (C,D,H,W)");
  const int64_t c_n = p.probs.dim(0), d = p.probs.dim(1), h = p.probs.dim(2), w = p.probs.dim(3);
  const T* pd = p.probs.data();
  int64_t cols = 0;
  switch (view) {
    case View::Axial: cols = h * w; break;
    case View::Sagittal: cols = d * h; break;
    case View::Coronal: cols = d * w; break;
  }
  TensorT<T> m({c_n, cols});
  for (int64_t c = 0; c < c_n; ++c) {
    const T* src = pd + c * d * h * w;
    T* dst = m.data() + c * cols;
    switch (view) {
      case View::Axial: {
        const T inv = T(1) / static_cast<T>(d);
        for (int64_t z = 0; z < d; ++z)
          for (int64_t i = 0; i < h * w; ++i) dst[i] += src[z * h * w + i];
        for (int64_t i = 0; i < cols; ++i) dst[i] *= inv;
        break;
      }
      case View::Sagittal: {
        const T inv = T(1) / static_cast<T>(w);
        for (int64_t z = 0; z < d; ++z)
          for (int64_t y = 0; y < h; ++y) {
            T sum = T(0);
            const T* row = src + (z * h + y) * w;
            for (int64_t x = 0; x < w; ++x) sum += row[x];
            dst[z * h + y] = sum * inv;
          }
        break;
      }
      case View::Coronal: {
        const T inv = T(1) / static_cast<T>(h);
        for (int64_t z = 0; z < d; ++z)
          for (int64_t y = 0; y < h; ++y) {
            const T* row = src + (z * h + y) * w;
            for (int64_t x = 0; x < w; ++x) dst[z * w + x] += row[x];
          }
        for (int64_t i = 0; i < cols; ++i) dst[i] *= inv;
        break;
      }
    }
  }
  return m;
}

namespace loss_detail {

/// Adjoint of project_probabilities: scatters a (C, cols) gradient back to
/// the (C,D,H,W) grid, dividing by the collapsed axis length.
template <typename T>
void project_adjoint_add(const TensorT<T>& gm, View view, TensorT<T>& gp) {
  const int64_t c_n = gp.dim(0), d = gp.dim(1), h = gp.dim(2), w = gp.dim(3);
  const int64_t cols = gm.dim(1);
  for (int64_t c = 0; c < c_n; ++c) {
    const T* src = gm.data() + c * cols;
    T* dst = gp.data() + c * d * h * w;
    switch (view) {
      case View::Axial: {
        const T inv = T(1) / static_cast<T>(d);
        for (int64_t z = 0; z < d; ++z)
          for (int64_t i = 0; i < h * w; ++i) dst[z * h * w + i] += src[i] * inv;
        break;
      }
      case View::Sagittal: {
        const T inv = T(1) / static_cast<T>(w);
        for (int64_t z = 0; z < d; ++z)
          for (int64_t y = 0; y < h; ++y) {
            const T g = src[z * h + y] * inv;
            T* row = dst + (z * h + y) * w;
            for (int64_t x = 0; x < w; ++x) row[x] += g;
          }
        break;
      }
      case View::Coronal: {
        const T inv = T(1) / static_cast<T>(h);
        for (int64_t z = 0; z < d; ++z)
          for (int64_t y = 0; y < h; ++y) {
            T* row = dst + (z * h + y) * w;
            for (int64_t x = 0; x < w; ++x) row[x] += src[z * w + x] * inv;
          }
        break;
      }
    }
  }
}

}  // namespace loss_detail

/// Normalized co-activation matrix Q of one projected view: Q' = m m^T,
/// Q = Q' / ||Q'|| with the L1 norm (sum of entries) by default, so Q is a
/// distribution over class pairs. Frobenius normalization is kept as an
/// ablation option.
template <typename T>
ClassAffinityT<T> class_affinity(const TensorT<T>& m,
                                 AffinityNorm norm = AffinityNorm::L1) {
  if (m.rank() != 2) throw std::invalid_argument("projected matrix must be (C, locations)");
  const int64_t c_n = m.dim(0), cols = m.dim(1);
  ClassAffinityT<T> out;
  out.normalization = norm;
  out.entries = TensorT<T>({c_n, c_n});
  gemm(Trans::No, Trans::Yes, c_n, c_n, cols, T(1), m.data(), cols, m.data(), cols, T(0),
       out.entries.data(), c_n);
  double denom = 0.0;
  if (norm == AffinityNorm::L1) {
    for (int64_t i = 0; i < out.entries.numel(); ++i)
      denom += static_cast<double>(out.entries[i]);
  } else {
    for (int64_t i = 0; i < out.entries.numel(); ++i) {
      const double q = static_cast<double>(out.entries[i]);
      denom += q * q;
    }
    denom = std::sqrt(denom);
  }
  // A non-finite denom means poisoned activations, not a zero matrix; let the
  // NaN reach the caller's finite-loss check instead of mislabeling it here.
  if (std::isfinite(denom) && !(denom > 0.0))
    throw std::invalid_argument("degenerate class affinity: projected matrix is all zero");
  const T inv = static_cast<T>(1.0 / denom);
  for (int64_t i = 0; i < out.entries.numel(); ++i) out.entries[i] *= inv;
  return out;
}

/// Multi-view class-affinity consistency: mean KL of each decoder's affinity
/// matrix against the decoder average, over the three anatomical views.
/// The averaged matrix is a gradient-stopped target. Defined as 0 for N=1.
template <typename T>
double mpcc_loss(const std::vector<ProbMapT<T>>& probs,
                 AffinityNorm norm = AffinityNorm::L1,
                 std::vector<TensorT<T>>* grad_logits = nullptr, double grad_scale = 1.0) {
  using loss_detail::clamped_log;
  loss_detail::check_same_shape(probs);
  const size_t n_br = probs.size();
  if (grad_logits && grad_logits->size() != n_br)
    throw std::invalid_argument("expected one gradient buffer per branch");
  if (n_br == 1) return 0.0;

  const TensorT<T>& p0 = probs.front().probs;
  const int64_t c_n = p0.dim(0);
  const T eps = static_cast<T>(kLossLogEps);
  const double inv_terms = 1.0 / (3.0 * static_cast<double>(n_br));

  std::vector<TensorT<T>> gp;
  if (grad_logits) gp.assign(n_br, TensorT<T>(p0.shape()));

  double loss = 0.0;
  for (View view : kAllViews) {
    std::vector<TensorT<T>> m(n_br);
    std::vector<ClassAffinityT<T>> q(n_br);
    TensorT<T> qbar({c_n, c_n});
    for (size_t n = 0; n < n_br; ++n) {
      m[n] = project_probabilities(probs[n], view);
      q[n] = class_affinity(m[n], norm);
      q[n].view = view;
      for (int64_t i = 0; i < qbar.numel(); ++i) qbar[i] += q[n].entries[i];
    }
    const T inv_n = T(1) / static_cast<T>(n_br);
    for (int64_t i = 0; i < qbar.numel(); ++i) qbar[i] *= inv_n;

    for (size_t n = 0; n < n_br; ++n) {
      const TensorT<T>& qn = q[n].entries;
      double kl = 0.0;
      for (int64_t i = 0; i < qn.numel(); ++i)
        kl += static_cast<double>(qn[i]) *
              static_cast<double>(clamped_log(qn[i]) - clamped_log(qbar[i]));
      loss += inv_terms * kl;

      if (grad_logits) {
        // dKL/dQ, then back through the normalization, the symmetric
        // product, and the projection.
        TensorT<T> gq({c_n, c_n});
        for (int64_t i = 0; i < gq.numel(); ++i) {
          T g = clamped_log(qn[i]) - clamped_log(qbar[i]);
          if (qn[i] >= eps) g += T(1);
          gq[i] = static_cast<T>(inv_terms) * g;
        }
        double dot = 0.0;
        for (int64_t i = 0; i < gq.numel(); ++i)
          dot += static_cast<double>(gq[i]) * static_cast<double>(qn[i]);
        // Recompute the normalizer of Q' = m m^T.
        TensorT<T> qraw({c_n, c_n});
        gemm(Trans::No, Trans::Yes, c_n, c_n, m[n].dim(1), T(1), m[n].data(), m[n].dim(1),
             m[n].data(), m[n].dim(1), T(0), qraw.data(), c_n);
        double denom = 0.0;
        if (norm == AffinityNorm::L1) {
          for (int64_t i = 0; i < qraw.numel(); ++i) denom += static_cast<double>(qraw[i]);
        } else {
          for (int64_t i = 0; i < qraw.numel(); ++i)
            denom += static_cast<double>(qraw[i]) * static_cast<double>(qraw[i]);
          denom = std::sqrt(denom);
        }
        TensorT<T> gqraw({c_n, c_n});
        if (norm == AffinityNorm::L1) {
          for (int64_t i = 0; i < gqraw.numel(); ++i)
            gqraw[i] = static_cast<T>((static_cast<double>(gq[i]) - dot) / denom);
        } else {
          for (int64_t i = 0; i < gqraw.numel(); ++i)
            gqraw[i] = static_cast<T>(
                (static_cast<double>(gq[i]) - dot * static_cast<double>(qn[i])) / denom);
        }
        // d(m m^T)/dm pullback: gm = (G + G^T) m; G is symmetric up to the
        // KL asymmetry, so form the sum explicitly.
        TensorT<T> gsym({c_n, c_n});
        for (int64_t r = 0; r < c_n; ++r)
          for (int64_t cc = 0; cc < c_n; ++cc)
            gsym[r * c_n + cc] = gqraw[r * c_n + cc] + gqraw[cc * c_n + r];
        const int64_t cols = m[n].dim(1);
        TensorT<T> gm({c_n, cols});
        gemm(Trans::No, Trans::No, c_n, cols, c_n, T(1), gsym.data(), c_n, m[n].data(), cols,
             T(0), gm.data(), cols);
        loss_detail::project_adjoint_add(gm, view, gp[n]);
      }
    }
  }

  if (grad_logits)
    for (size_t n = 0; n < n_br; ++n)
      loss_detail::softmax_chain_add(probs[n].probs, gp[n], grad_scale,
                                     loss_detail::grad_slot(grad_logits, n, p0));
  return loss;
}

/// Exponential warm-up base * exp(-5 (1 - t/t_max)^2); t beyond t_max clamps.
inline double rampup_weight(double base, int64_t t, int64_t t_max) {
  if (t_max < 1) throw std::invalid_argument("t_max must be >= 1");
  const double frac = std::min(std::max(static_cast<double>(t), 0.0),
                               static_cast<double>(t_max)) /
                      static_cast<double>(t_max);
  const double r = 1.0 - frac;
  return base * std::exp(-5.0 * r * r);
}

/// L = L_sup + alpha_t * L_USPC + beta_t * L_MPCC. Terms whose effective
/// weight is exactly zero are skipped and reported as 0; with one decoder
/// both consistency terms are identically zero.
template <typename T>
LossBreakdown total_loss(const std::vector<ProbMapT<T>>& probs, const ScribbleAnnotation& s,
                         const LossWeights& lw, const ConsistencyOptions& opts = {},
                         std::vector<TensorT<T>>* grad_logits = nullptr) {
  lw.validate();
  LossBreakdown out;
  out.alpha_t = rampup_weight(lw.alpha, lw.t, lw.t_max);
  out.beta_t = rampup_weight(lw.beta, lw.t, lw.t_max);
  out.sup = partial_cross_entropy(probs, s, grad_logits);
  const bool multi = probs.size() > 1;
  if (out.alpha_t > 0.0 && multi) {
    const ProbMapT<T> pbar = mix_soft_pseudo_label(probs);
    UncertaintyWeightsT<T> w;
    if (opts.uncertainty_weighting) {
      w = uncertainty_weights(pbar);
    } else {
      w.weights = TensorT<T>::full(
          {pbar.probs.dim(1), pbar.probs.dim(2), pbar.probs.dim(3)}, T(1));
    }
    out.uspc = uspc_loss(probs, pbar, w, grad_logits, out.alpha_t);
  }
  if (out.beta_t > 0.0 && multi)
    out.mpcc = mpcc_loss(probs, opts.affinity_norm, grad_logits, out.beta_t);
  out.total = out.sup + out.alpha_t * out.uspc + out.beta_t * out.mpcc;
  return out;
}

}  // namespace tdnet
