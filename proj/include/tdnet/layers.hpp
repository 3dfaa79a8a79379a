#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "tdnet/rng.hpp"
#include "tdnet/tensor.hpp"

namespace tdnet::nn {

/// Scratch buffers reused across conv calls. One workspace per thread.
template <typename T>
struct Workspace {
  std::vector<T> cols;

  T* cols_buffer(int64_t n) {
    if (static_cast<int64_t>(cols.size()) < n) cols.resize(static_cast<size_t>(n));
    return cols.data();
  }
};

// ---------------------------------------------------------------------------
// im2col / col2im, stride 1, cubic kernel, zero padding = dilation*(k-1)/2
// keeps spatial shape. cols is (Cin*k^3) x (D*H*W), row-major.

template <typename T>
void im2col(const TensorT<T>& x, int k, int dilation, T* cols) {
  const int64_t cin = x.dim(0), d_n = x.dim(1), h_n = x.dim(2), w_n = x.dim(3);
  const int64_t vox = d_n * h_n * w_n;
  const int pad = dilation * (k - 1) / 2;
  const T* src = x.data();
  int64_t row = 0;
  for (int64_t c = 0; c < cin; ++c) {
    const T* plane = src + c * vox;
    for (int kd = 0; kd < k; ++kd)
      for (int kh = 0; kh < k; ++kh)
        for (int kw = 0; kw < k; ++kw, ++row) {
          T* dst = cols + row * vox;
          const int64_t off_w = static_cast<int64_t>(kw) * dilation - pad;
          const int64_t w_lo = std::max<int64_t>(0, -off_w);
          const int64_t w_hi = std::min<int64_t>(w_n, w_n - off_w);
          for (int64_t od = 0; od < d_n; ++od) {
            const int64_t id = od + static_cast<int64_t>(kd) * dilation - pad;
            T* drow = dst + od * h_n * w_n;
            if (id < 0 || id >= d_n) {
              std::fill(drow, drow + h_n * w_n, T(0));
              continue;
            }
            for (int64_t oh = 0; oh < h_n; ++oh, drow += w_n) {
              const int64_t ih = oh + static_cast<int64_t>(kh) * dilation - pad;
              if (ih < 0 || ih >= h_n) {
                std::fill(drow, drow + w_n, T(0));
                continue;
              }
              const T* srow = plane + (id * h_n + ih) * w_n + off_w;
              if (w_lo > 0) std::fill(drow, drow + w_lo, T(0));
              if (w_hi > w_lo) std::copy(srow + w_lo, srow + w_hi, drow + w_lo);
              if (w_hi < w_n) std::fill(drow + std::max(w_hi, w_lo), drow + w_n, T(0));
            }
          }
        }
  }
}

template <typename T>
void col2im(const T* cols, int k, int dilation, TensorT<T>& gx) {
  const int64_t cin = gx.dim(0), d_n = gx.dim(1), h_n = gx.dim(2), w_n = gx.dim(3);
  const int64_t vox = d_n * h_n * w_n;
  const int pad = dilation * (k - 1) / 2;
  T* dst_base = gx.data();
  int64_t row = 0;
  for (int64_t c = 0; c < cin; ++c) {
    T* plane = dst_base + c * vox;
    for (int kd = 0; kd < k; ++kd)
      for (int kh = 0; kh < k; ++kh)
        for (int kw = 0; kw < k; ++kw, ++row) {
          const T* src = cols + row * vox;
          const int64_t off_w = static_cast<int64_t>(kw) * dilation - pad;
          const int64_t w_lo = std::max<int64_t>(0, -off_w);
          const int64_t w_hi = std::min<int64_t>(w_n, w_n - off_w);
          if (w_hi <= w_lo) continue;
          for (int64_t od = 0; od < d_n; ++od) {
            const int64_t id = od + static_cast<int64_t>(kd) * dilation - pad;
            if (id < 0 || id >= d_n) continue;
            for (int64_t oh = 0; oh < h_n; ++oh) {
              const int64_t ih = oh + static_cast<int64_t>(kh) * dilation - pad;
              if (ih < 0 || ih >= h_n) continue;
              const T* srow = src + (od * h_n + oh) * w_n;
              T* drow = plane + (id * h_n + ih) * w_n + off_w;
              for (int64_t ow = w_lo; ow < w_hi; ++ow) drow[ow] += srow[ow];
            }
          }
        }
  }
}

// ---------------------------------------------------------------------------
// Convolution. Weight layout (Cout, Cin, k, k, k), bias (Cout).

template <typename T>
TensorT<T> conv3d_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                          int dilation, Workspace<T>& ws) {
  const int64_t cin = x.dim(0), vox = x.numel() / cin;
  const int64_t cout = w.dim(0);
  const int k = static_cast<int>(w.dim(2));
  if (w.dim(1) != cin) throw std::invalid_argument("conv weight/input channel mismatch");
  TensorT<T> y({cout, x.dim(1), x.dim(2), x.dim(3)});
  const T* feed = x.data();
  int64_t kk = cin;
  if (k > 1) {
    kk = cin * k * k * k;
    T* cols = ws.cols_buffer(kk * vox);
    im2col(x, k, dilation, cols);
    feed = cols;
  }
  gemm(Trans::No, Trans::No, cout, vox, kk, T(1), w.data(), kk, feed, vox, T(0), y.data(), vox);
  for (int64_t c = 0; c < cout; ++c) {
    T* row = y.data() + c * vox;
    const T bias = b[c];
    for (int64_t v = 0; v < vox; ++v) row[v] += bias;
  }
  return y;
}

/// Accumulates gw/gb and returns the input gradient.
template <typename T>
TensorT<T> conv3d_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& gy,
                           int dilation, TensorT<T>& gw, TensorT<T>& gb, Workspace<T>& ws) {
  const int64_t cin = x.dim(0), vox = x.numel() / cin;
  const int64_t cout = w.dim(0);
  const int k = static_cast<int>(w.dim(2));
  const int64_t kk = k > 1 ? cin * k * k * k : cin;

  for (int64_t c = 0; c < cout; ++c) {
    const T* row = gy.data() + c * vox;
    T acc = T(0);
    for (int64_t v = 0; v < vox; ++v) acc += row[v];
    gb[c] += acc;
  }

  TensorT<T> gx({cin, x.dim(1), x.dim(2), x.dim(3)});
  if (k > 1) {
    T* cols = ws.cols_buffer(kk * vox);
    im2col(x, k, dilation, cols);
    // gw += gy * cols^T
    gemm(Trans::No, Trans::Yes, cout, kk, vox, T(1), gy.data(), vox, cols, vox, T(1), gw.data(),
         kk);
    // gcols = w^T * gy, written over the cols buffer
    std::vector<T> gcols(static_cast<size_t>(kk * vox));
    gemm(Trans::Yes, Trans::No, kk, vox, cout, T(1), w.data(), kk, gy.data(), vox, T(0),
         gcols.data(), vox);
    col2im(gcols.data(), k, dilation, gx);
  } else {
    gemm(Trans::No, Trans::Yes, cout, kk, vox, T(1), gy.data(), vox, x.data(), vox, T(1),
         gw.data(), kk);
    gemm(Trans::Yes, Trans::No, kk, vox, cout, T(1), w.data(), kk, gy.data(), vox, T(0),
         gx.data(), vox);
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Instance normalization over the spatial extent of each channel.

inline constexpr double kInstNormEps = 1e-5;

template <typename T>
struct InstNormCache {
  TensorT<T> xhat;
  std::vector<T> invstd;
};

template <typename T>
TensorT<T> instnorm_forward(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                            InstNormCache<T>* cache) {
  const int64_t c_n = x.dim(0), vox = x.numel() / c_n;
  TensorT<T> y(x.shape());
  if (cache) {
    cache->xhat = TensorT<T>(x.shape());
    cache->invstd.assign(static_cast<size_t>(c_n), T(0));
  }
  for (int64_t c = 0; c < c_n; ++c) {
    const T* in = x.data() + c * vox;
    T* out = y.data() + c * vox;
    double mean = 0.0, sq = 0.0;
    for (int64_t v = 0; v < vox; ++v) {
      mean += in[v];
      sq += static_cast<double>(in[v]) * in[v];
    }
    mean /= static_cast<double>(vox);
    const double var = std::max(0.0, sq / static_cast<double>(vox) - mean * mean);
    const T invstd = static_cast<T>(1.0 / std::sqrt(var + kInstNormEps));
    const T mu = static_cast<T>(mean), g = gamma[c], bb = beta[c];
    T* xh = cache ? cache->xhat.data() + c * vox : nullptr;
    for (int64_t v = 0; v < vox; ++v) {
      const T h = (in[v] - mu) * invstd;
      if (xh) xh[v] = h;
      out[v] = g * h + bb;
    }
    if (cache) cache->invstd[static_cast<size_t>(c)] = invstd;
  }
  return y;
}

template <typename T>
TensorT<T> instnorm_backward(const InstNormCache<T>& cache, const TensorT<T>& gamma,
                             const TensorT<T>& gy, TensorT<T>& ggamma, TensorT<T>& gbeta) {
  const int64_t c_n = gy.dim(0), vox = gy.numel() / c_n;
  TensorT<T> gx(gy.shape());
  for (int64_t c = 0; c < c_n; ++c) {
    const T* g = gy.data() + c * vox;
    const T* xh = cache.xhat.data() + c * vox;
    double sum_g = 0.0, sum_gx = 0.0;
    for (int64_t v = 0; v < vox; ++v) {
      sum_g += g[v];
      sum_gx += static_cast<double>(g[v]) * xh[v];
    }
    ggamma[c] += static_cast<T>(sum_gx);
    gbeta[c] += static_cast<T>(sum_g);
    const T mean_g = static_cast<T>(sum_g / static_cast<double>(vox));
    const T mean_gx = static_cast<T>(sum_gx / static_cast<double>(vox));
    const T scale = gamma[c] * cache.invstd[static_cast<size_t>(c)];
    T* out = gx.data() + c * vox;
    for (int64_t v = 0; v < vox; ++v) out[v] = scale * (g[v] - mean_g - xh[v] * mean_gx);
  }
  return gx;
}

// ---------------------------------------------------------------------------
// ReLU. Backward masks on the forward output.

template <typename T>
TensorT<T> relu_forward(const TensorT<T>& x) {
  TensorT<T> y(x.shape());
  // std::max keeps NaN, so bad numerics surface in the loss instead of
  // being silently zeroed.
  for (int64_t i = 0; i < x.numel(); ++i) y[i] = std::max(x[i], T(0));
  return y;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& y, const TensorT<T>& gy) {
  TensorT<T> gx(gy.shape());
  for (int64_t i = 0; i < gy.numel(); ++i) gx[i] = y[i] > T(0) ? gy[i] : T(0);
  return gx;
}

// ---------------------------------------------------------------------------
// 2x max pooling; spatial dims must be even. Ties keep the first scanned
// voxel so pooling stays deterministic.

template <typename T>
TensorT<T> maxpool2_forward(const TensorT<T>& x, std::vector<int64_t>& idx) {
  const int64_t c_n = x.dim(0), d_n = x.dim(1), h_n = x.dim(2), w_n = x.dim(3);
  if (d_n % 2 || h_n % 2 || w_n % 2)
    throw std::invalid_argument("maxpool2 requires even spatial dims");
  TensorT<T> y({c_n, d_n / 2, h_n / 2, w_n / 2});
  idx.assign(static_cast<size_t>(y.numel()), 0);
  int64_t o = 0;
  for (int64_t c = 0; c < c_n; ++c)
    for (int64_t od = 0; od < d_n / 2; ++od)
      for (int64_t oh = 0; oh < h_n / 2; ++oh)
        for (int64_t ow = 0; ow < w_n / 2; ++ow, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          int64_t best_i = 0;
          for (int64_t kd = 0; kd < 2; ++kd)
            for (int64_t kh = 0; kh < 2; ++kh)
              for (int64_t kw = 0; kw < 2; ++kw) {
                const int64_t i =
                    ((c * d_n + od * 2 + kd) * h_n + oh * 2 + kh) * w_n + ow * 2 + kw;
                if (x[i] > best) {
                  best = x[i];
                  best_i = i;
                }
              }
          y[o] = best;
          idx[static_cast<size_t>(o)] = best_i;
        }
  return y;
}

template <typename T>
TensorT<T> maxpool2_backward(const TensorT<T>& gy, const std::vector<int64_t>& idx,
                             const std::vector<int64_t>& in_shape) {
  TensorT<T> gx(in_shape);
  for (int64_t o = 0; o < gy.numel(); ++o) gx[idx[static_cast<size_t>(o)]] += gy[o];
  return gx;
}

// ---------------------------------------------------------------------------
// Trilinear 2x upsampling, half-voxel aligned, replicated borders.
// Implemented as three separable axis-doubling passes; the backward pass is
// the exact adjoint so the pair is a transposed linear map.

struct AxisTap {
  int64_t i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

inline std::vector<AxisTap> upsample2_taps(int64_t n) {
  std::vector<AxisTap> taps(static_cast<size_t>(2 * n));
  for (int64_t o = 0; o < 2 * n; ++o) {
    const double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    const double fl = std::floor(src);
    const double f = src - fl;
    const int64_t i0 = std::clamp<int64_t>(static_cast<int64_t>(fl), 0, n - 1);
    const int64_t i1 = std::clamp<int64_t>(static_cast<int64_t>(fl) + 1, 0, n - 1);
    taps[static_cast<size_t>(o)] = {i0, i1, f};
  }
  return taps;
}

template <typename T>
TensorT<T> upsample2_axis(const TensorT<T>& x, int axis) {
  const auto& s = x.shape();
  const int64_t n = s[static_cast<size_t>(axis)];
  int64_t outer = 1, inner = 1;
  for (int a = 0; a < axis; ++a) outer *= s[static_cast<size_t>(a)];
  for (size_t a = static_cast<size_t>(axis) + 1; a < s.size(); ++a) inner *= s[a];
  std::vector<int64_t> out_shape = s;
  out_shape[static_cast<size_t>(axis)] = 2 * n;
  TensorT<T> y(out_shape);
  const auto taps = upsample2_taps(n);
  for (int64_t u = 0; u < outer; ++u)
    for (int64_t o = 0; o < 2 * n; ++o) {
      const auto& t = taps[static_cast<size_t>(o)];
      const T w1 = static_cast<T>(t.w1), w0 = static_cast<T>(1.0 - t.w1);
      const T* a = x.data() + (u * n + t.i0) * inner;
      const T* b = x.data() + (u * n + t.i1) * inner;
      T* dst = y.data() + (u * 2 * n + o) * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] = w0 * a[i] + w1 * b[i];
    }
  return y;
}

template <typename T>
TensorT<T> upsample2_axis_adjoint(const TensorT<T>& gy, int axis) {
  const auto& s = gy.shape();
  const int64_t n2 = s[static_cast<size_t>(axis)];
  const int64_t n = n2 / 2;
  int64_t outer = 1, inner = 1;
  for (int a = 0; a < axis; ++a) outer *= s[static_cast<size_t>(a)];
  for (size_t a = static_cast<size_t>(axis) + 1; a < s.size(); ++a) inner *= s[a];
  std::vector<int64_t> in_shape = s;
  in_shape[static_cast<size_t>(axis)] = n;
  TensorT<T> gx(in_shape);
  const auto taps = upsample2_taps(n);
  for (int64_t u = 0; u < outer; ++u)
    for (int64_t o = 0; o < n2; ++o) {
      const auto& t = taps[static_cast<size_t>(o)];
      const T w1 = static_cast<T>(t.w1), w0 = static_cast<T>(1.0 - t.w1);
      const T* src = gy.data() + (u * n2 + o) * inner;
      T* a = gx.data() + (u * n + t.i0) * inner;
      T* b = gx.data() + (u * n + t.i1) * inner;
      for (int64_t i = 0; i < inner; ++i) {
        a[i] += w0 * src[i];
        b[i] += w1 * src[i];
      }
    }
  return gx;
}

template <typename T>
TensorT<T> upsample2_forward(const TensorT<T>& x) {
  TensorT<T> y = upsample2_axis(x, 1);
  y = upsample2_axis(y, 2);
  return upsample2_axis(y, 3);
}

template <typename T>
TensorT<T> upsample2_backward(const TensorT<T>& gy) {
  TensorT<T> gx = upsample2_axis_adjoint(gy, 3);
  gx = upsample2_axis_adjoint(gx, 2);
  return upsample2_axis_adjoint(gx, 1);
}

// ---------------------------------------------------------------------------
// Channel dropout with inverted scaling. The zeroed fraction r is drawn
// uniformly from [lo, hi) once per call; survivors are scaled by 1/(1-r).

struct DropoutMask {
  std::vector<uint8_t> keep;
  double rate = 0.0;
  double scale = 1.0;

  bool identity() const { return rate == 0.0; }
};

inline DropoutMask draw_dropout_mask(int64_t channels, double lo, double hi, Rng& rng) {
  if (lo < 0.0 || hi >= 1.0 || hi < lo)
    throw std::invalid_argument("dropout rate range must lie within [0,1)");
  DropoutMask m;
  m.rate = lo == hi ? lo : rng.uniform(lo, hi);
  m.scale = 1.0 / (1.0 - m.rate);
  m.keep.assign(static_cast<size_t>(channels), 1);
  if (m.rate > 0.0)
    for (auto& k : m.keep) k = rng.uniform() >= m.rate ? 1 : 0;
  return m;
}

template <typename T>
TensorT<T> dropout_apply(const TensorT<T>& x, const DropoutMask& m) {
  if (m.identity()) return x;
  const int64_t c_n = x.dim(0), vox = x.numel() / c_n;
  TensorT<T> y(x.shape());
  const T scale = static_cast<T>(m.scale);
  for (int64_t c = 0; c < c_n; ++c) {
    const T* in = x.data() + c * vox;
    T* out = y.data() + c * vox;
    if (m.keep[static_cast<size_t>(c)])
      for (int64_t v = 0; v < vox; ++v) out[v] = in[v] * scale;
    // dropped channels stay zero
  }
  return y;
}

// dropout is linear in x, so the backward map equals the forward map
template <typename T>
TensorT<T> dropout_backward(const TensorT<T>& gy, const DropoutMask& m) {
  return dropout_apply(gy, m);
}

// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> softmax_channels(const TensorT<T>& logits) {
  const int64_t c_n = logits.dim(0), vox = logits.numel() / c_n;
  TensorT<T> p(logits.shape());
  const T* in = logits.data();
  T* out = p.data();
  for (int64_t v = 0; v < vox; ++v) {
    T mx = in[v];
    for (int64_t c = 1; c < c_n; ++c) mx = std::max(mx, in[c * vox + v]);
    T sum = T(0);
    for (int64_t c = 0; c < c_n; ++c) {
      const T e = std::exp(in[c * vox + v] - mx);
      out[c * vox + v] = e;
      sum += e;
    }
    const T inv = T(1) / sum;
    for (int64_t c = 0; c < c_n; ++c) out[c * vox + v] *= inv;
  }
  return p;
}

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
  TensorT<T> y({a.dim(0) + b.dim(0), a.dim(1), a.dim(2), a.dim(3)});
  std::copy(a.data(), a.data() + a.numel(), y.data());
  std::copy(b.data(), b.data() + b.numel(), y.data() + a.numel());
  return y;
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> split_channels(const TensorT<T>& g, int64_t c_first) {
  TensorT<T> a({c_first, g.dim(1), g.dim(2), g.dim(3)});
  TensorT<T> b({g.dim(0) - c_first, g.dim(1), g.dim(2), g.dim(3)});
  std::copy(g.data(), g.data() + a.numel(), a.data());
  std::copy(g.data() + a.numel(), g.data() + g.numel(), b.data());
  return {std::move(a), std::move(b)};
}

}  // namespace tdnet::nn
