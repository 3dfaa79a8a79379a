#include <cmath>
#include <vector>

#include "doctest.h"
#include "support/testutil.hpp"
#include "tdnet/layers.hpp"
#include "tdnet/rng.hpp"
#include "tdnet/tensor.hpp"

using namespace tdnet;
using namespace tdnet::nn;
using tdnet::TensorT;

namespace {

TensorT<double> random_tensor(const std::vector<int64_t>& shape, Rng& rng, double scale = 1.0) {
  TensorT<double> t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, scale);
  return t;
}

// Direct convolution with zero padding = dilation*(k-1)/2: the definition,
// written without im2col.
TensorT<double> naive_conv3d(const TensorT<double>& x, const TensorT<double>& w,
                             const TensorT<double>& b, int dilation) {
  const int64_t cin = x.dim(0), d = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t cout = w.dim(0);
  const int k = static_cast<int>(w.dim(2));
  const int64_t pad = static_cast<int64_t>(dilation) * (k - 1) / 2;
  TensorT<double> y({cout, d, h, wd});
  for (int64_t co = 0; co < cout; ++co)
    for (int64_t z = 0; z < d; ++z)
      for (int64_t yy = 0; yy < h; ++yy)
        for (int64_t xx = 0; xx < wd; ++xx) {
          double acc = b[co];
          for (int64_t ci = 0; ci < cin; ++ci)
            for (int kd = 0; kd < k; ++kd)
              for (int kh = 0; kh < k; ++kh)
                for (int kw = 0; kw < k; ++kw) {
                  const int64_t iz = z + kd * dilation - pad;
                  const int64_t iy = yy + kh * dilation - pad;
                  const int64_t ix = xx + kw * dilation - pad;
                  if (iz < 0 || iz >= d || iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                  acc += x.at4(ci, iz, iy, ix) *
                         w[((co * cin + ci) * k * k + kd * k + kh) * k + kw];
                }
          y.at4(co, z, yy, xx) = acc;
        }
  return y;
}

double weighted_sum(const TensorT<double>& y, const TensorT<double>& r) {
  double s = 0.0;
  for (int64_t i = 0; i < y.numel(); ++i) s += y[i] * r[i];
  return s;
}

}  // namespace

TEST_CASE("conv3d forward matches direct convolution") {
  Rng rng(51);
  Workspace<double> ws;
  for (int dilation : {1, 2, 3}) {
    const TensorT<double> x = random_tensor({2, 4, 5, 3}, rng);
    const TensorT<double> w = random_tensor({3, 2, 3, 3, 3}, rng);
    const TensorT<double> b = random_tensor({3}, rng);
    const TensorT<double> got = conv3d_forward(x, w, b, dilation, ws);
    const TensorT<double> want = naive_conv3d(x, w, b, dilation);
    REQUIRE(got.same_shape(want));
    for (int64_t i = 0; i < got.numel(); ++i)
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }

  SUBCASE("pointwise kernels skip im2col but agree") {
    const TensorT<double> x = random_tensor({3, 2, 3, 4}, rng);
    const TensorT<double> w = random_tensor({2, 3, 1, 1, 1}, rng);
    const TensorT<double> b = random_tensor({2}, rng);
    const TensorT<double> got = conv3d_forward(x, w, b, 1, ws);
    const TensorT<double> want = naive_conv3d(x, w, b, 1);
    for (int64_t i = 0; i < got.numel(); ++i)
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv3d backward matches finite differences") {
  Rng rng(52);
  Workspace<double> ws;
  for (int dilation : {1, 2}) {
    TensorT<double> x = random_tensor({2, 3, 3, 3}, rng);
    TensorT<double> w = random_tensor({2, 2, 3, 3, 3}, rng, 0.5);
    TensorT<double> b = random_tensor({2}, rng);
    const TensorT<double> r = random_tensor({2, 3, 3, 3}, rng);

    TensorT<double> gw(w.shape()), gb(b.shape());
    const TensorT<double> gx = conv3d_backward(x, w, r, dilation, gw, gb, ws);

    auto loss = [&] { return weighted_sum(conv3d_forward(x, w, b, dilation, ws), r); };
    CHECK(testutil::fd_tensor_max_rel_error(x, loss, gx) < 1e-7);
    CHECK(testutil::fd_tensor_max_rel_error(w, loss, gw) < 1e-6);
    CHECK(testutil::fd_tensor_max_rel_error(b, loss, gb) < 1e-7);
  }

  SUBCASE("gradients accumulate across calls") {
    TensorT<double> x = random_tensor({1, 2, 2, 2}, rng);
    TensorT<double> w = random_tensor({1, 1, 3, 3, 3}, rng);
    const TensorT<double> gy = random_tensor({1, 2, 2, 2}, rng);
    TensorT<double> gw(w.shape()), gb({1});
    conv3d_backward(x, w, gy, 1, gw, gb, ws);
    const TensorT<double> once = gw;
    conv3d_backward(x, w, gy, 1, gw, gb, ws);
    for (int64_t i = 0; i < gw.numel(); ++i)
      CHECK(gw[i] == doctest::Approx(2.0 * once[i]).epsilon(1e-12));
  }
}

TEST_CASE("im2col and col2im are adjoint") {
  Rng rng(53);
  const int k = 3, dilation = 2;
  const TensorT<double> x = random_tensor({2, 3, 4, 3}, rng);
  const int64_t rows = 2 * k * k * k, vox = 3 * 4 * 3;
  std::vector<double> cols(static_cast<size_t>(rows * vox));
  im2col(x, k, dilation, cols.data());

  std::vector<double> y(cols.size());
  Rng rng2(54);
  for (auto& v : y) v = rng2.normal();

  double lhs = 0.0;
  for (size_t i = 0; i < cols.size(); ++i) lhs += cols[i] * y[i];

  TensorT<double> back({2, 3, 4, 3});
  col2im(y.data(), k, dilation, back);
  double rhs = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) rhs += x[i] * back[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("instance norm normalizes and matches finite differences") {
  Rng rng(55);
  TensorT<double> x = random_tensor({3, 2, 3, 2}, rng, 2.0);
  TensorT<double> gamma = TensorT<double>::full({3}, 1.0);
  TensorT<double> beta({3});

  InstNormCache<double> cache;
  const TensorT<double> y = instnorm_forward(x, gamma, beta, &cache);
  const int64_t vox = 12;
  for (int64_t c = 0; c < 3; ++c) {
    double mean = 0.0, sq = 0.0;
    for (int64_t v = 0; v < vox; ++v) {
      mean += y[c * vox + v];
      sq += y[c * vox + v] * y[c * vox + v];
    }
    mean /= vox;
    CHECK(std::abs(mean) < 1e-12);
    CHECK(sq / vox - mean * mean == doctest::Approx(1.0).epsilon(1e-4));
  }

  gamma[0] = 1.5;
  gamma[1] = 0.5;
  gamma[2] = -0.3;
  beta[0] = 0.2;
  beta[1] = -1.0;
  beta[2] = 0.7;
  const TensorT<double> r = random_tensor({3, 2, 3, 2}, rng);

  InstNormCache<double> cache2;
  instnorm_forward(x, gamma, beta, &cache2);
  TensorT<double> ggamma({3}), gbeta({3});
  const TensorT<double> gx = instnorm_backward(cache2, gamma, r, ggamma, gbeta);

  auto loss = [&] {
    return weighted_sum(instnorm_forward<double>(x, gamma, beta, nullptr), r);
  };
  CHECK(testutil::fd_tensor_max_rel_error(x, loss, gx) < 1e-6);
  CHECK(testutil::fd_tensor_max_rel_error(gamma, loss, ggamma) < 1e-7);
  CHECK(testutil::fd_tensor_max_rel_error(beta, loss, gbeta) < 1e-7);
}

TEST_CASE("relu forward and backward") {
  TensorT<double> x({1, 1, 1, 4});
  x[0] = -2.0;
  x[1] = -0.5;
  x[2] = 0.5;
  x[3] = 3.0;
  const TensorT<double> y = relu_forward(x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 0.5);
  CHECK(y[3] == 3.0);

  Rng rng(56);
  // keep inputs away from the kink so finite differences are valid
  TensorT<double> xr({2, 2, 2, 2});
  for (int64_t i = 0; i < xr.numel(); ++i) {
    const double v = rng.normal();
    xr[i] = v + (v >= 0.0 ? 0.5 : -0.5);
  }
  const TensorT<double> r = random_tensor({2, 2, 2, 2}, rng);
  const TensorT<double> yr = relu_forward(xr);
  const TensorT<double> gx = relu_backward(yr, r);
  auto loss = [&] { return weighted_sum(relu_forward(xr), r); };
  CHECK(testutil::fd_tensor_max_rel_error(xr, loss, gx) < 1e-9);
}

TEST_CASE("max pooling halves dims and routes gradients") {
  TensorT<double> x({1, 2, 2, 2});
  for (int64_t i = 0; i < 8; ++i) x[i] = static_cast<double>(i);
  std::vector<int64_t> idx;
  const TensorT<double> y = maxpool2_forward(x, idx);
  REQUIRE(y.numel() == 1);
  CHECK(y[0] == 7.0);
  CHECK(idx[0] == 7);

  Rng rng(57);
  TensorT<double> xr = random_tensor({2, 4, 2, 4}, rng);
  std::vector<int64_t> idx2;
  const TensorT<double> yr = maxpool2_forward(xr, idx2);
  CHECK(yr.dim(1) == 2);
  CHECK(yr.dim(2) == 1);
  CHECK(yr.dim(3) == 2);
  const TensorT<double> r = random_tensor(yr.shape(), rng);
  const TensorT<double> gx = maxpool2_backward(r, idx2, xr.shape());
  auto loss = [&] {
    std::vector<int64_t> scratch;
    return weighted_sum(maxpool2_forward(xr, scratch), r);
  };
  CHECK(testutil::fd_tensor_max_rel_error(xr, loss, gx) < 1e-9);

  SUBCASE("odd extents are rejected") {
    TensorT<double> odd({1, 3, 2, 2});
    std::vector<int64_t> scratch;
    CHECK_THROWS_AS((void)maxpool2_forward(odd, scratch), std::invalid_argument);
  }
}

TEST_CASE("trilinear upsampling doubles extents, is exact on constants") {
  TensorT<double> c = TensorT<double>::full({1, 2, 2, 2}, 3.25);
  const TensorT<double> up = upsample2_forward(c);
  REQUIRE(up.dim(1) == 4);
  REQUIRE(up.dim(2) == 4);
  REQUIRE(up.dim(3) == 4);
  for (int64_t i = 0; i < up.numel(); ++i) CHECK(up[i] == doctest::Approx(3.25).epsilon(1e-12));

  SUBCASE("1d taps: aligned-corners-free midpoint weighting") {
    TensorT<double> x({1, 1, 1, 2});
    x[0] = 1.0;
    x[1] = 3.0;
    const TensorT<double> y = upsample2_forward(x);
    // source coords for outputs 0..3 along the last axis: -0.25,0.25,0.75,1.25
    CHECK(y[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(y[1] == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(y[2] == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(y[3] == doctest::Approx(3.0).epsilon(1e-12));
  }

  SUBCASE("backward is the exact adjoint") {
    Rng rng(58);
    const TensorT<double> x = random_tensor({2, 2, 4, 2}, rng);
    const TensorT<double> y = upsample2_forward(x);
    const TensorT<double> gy = random_tensor(y.shape(), rng);
    const TensorT<double> gx = upsample2_backward(gy);
    double lhs = 0.0, rhs = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) lhs += y[i] * gy[i];
    for (int64_t i = 0; i < x.numel(); ++i) rhs += x[i] * gx[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }

  SUBCASE("gradient matches finite differences") {
    Rng rng(59);
    TensorT<double> x = random_tensor({1, 2, 2, 2}, rng);
    const TensorT<double> r = random_tensor({1, 4, 4, 4}, rng);
    const TensorT<double> gx = upsample2_backward(r);
    auto loss = [&] { return weighted_sum(upsample2_forward(x), r); };
    CHECK(testutil::fd_tensor_max_rel_error(x, loss, gx) < 1e-8);
  }
}

TEST_CASE("channel dropout") {
  Rng rng(60);

  SUBCASE("zero-width range at zero is the identity") {
    const DropoutMask m = draw_dropout_mask(8, 0.0, 0.0, rng);
    CHECK(m.identity());
    TensorT<double> x = random_tensor({8, 2, 2, 2}, rng);
    const TensorT<double> y = dropout_apply(x, m);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
  }

  SUBCASE("survivors are rescaled, dropped channels zeroed") {
    Rng fixed(61);
    const DropoutMask m = draw_dropout_mask(64, 0.5, 0.5, fixed);
    CHECK(m.rate == 0.5);
    CHECK(m.scale == doctest::Approx(2.0));
    TensorT<double> x = TensorT<double>::full({64, 1, 1, 2}, 1.0);
    const TensorT<double> y = dropout_apply(x, m);
    int dropped = 0;
    for (int64_t c = 0; c < 64; ++c) {
      if (m.keep[static_cast<size_t>(c)]) {
        CHECK(y[c * 2] == doctest::Approx(2.0));
      } else {
        CHECK(y[c * 2] == 0.0);
        ++dropped;
      }
    }
    CHECK(dropped > 10);
    CHECK(dropped < 54);
  }

  SUBCASE("expectation is preserved over many draws") {
    Rng draws(62);
    double acc = 0.0;
    const int trials = 4000;
    for (int t = 0; t < trials; ++t) {
      const DropoutMask m = draw_dropout_mask(1, 0.0, 0.5, draws);
      TensorT<double> x = TensorT<double>::full({1, 1, 1, 1}, 1.0);
      acc += dropout_apply(x, m)[0];
    }
    CHECK(acc / trials == doctest::Approx(1.0).epsilon(0.05));
  }

  SUBCASE("backward equals forward reweighting") {
    Rng fixed(63);
    const DropoutMask m = draw_dropout_mask(6, 0.3, 0.5, fixed);
    const TensorT<double> g = random_tensor({6, 2, 1, 1}, rng);
    const TensorT<double> a = dropout_apply(g, m);
    const TensorT<double> b = dropout_backward(g, m);
    for (int64_t i = 0; i < g.numel(); ++i) CHECK(a[i] == b[i]);
  }

  SUBCASE("invalid ranges are rejected") {
    CHECK_THROWS_AS((void)draw_dropout_mask(4, -0.1, 0.5, rng), std::invalid_argument);
    CHECK_THROWS_AS((void)draw_dropout_mask(4, 0.0, 1.0, rng), std::invalid_argument);
    CHECK_THROWS_AS((void)draw_dropout_mask(4, 0.6, 0.5, rng), std::invalid_argument);
  }
}

TEST_CASE("softmax over channels") {
  Rng rng(64);
  TensorT<double> z = random_tensor({3, 2, 2, 2}, rng, 3.0);
  const TensorT<double> p = softmax_channels(z);
  const int64_t vox = 8;
  for (int64_t i = 0; i < vox; ++i) {
    double sum = 0.0;
    for (int64_t c = 0; c < 3; ++c) {
      const double e = std::exp(z[c * vox + i]);
      double den = 0.0;
      for (int64_t k = 0; k < 3; ++k) den += std::exp(z[k * vox + i]);
      CHECK(p[c * vox + i] == doctest::Approx(e / den).epsilon(1e-12));
      sum += p[c * vox + i];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("large logits stay finite") {
    TensorT<double> big({2, 1, 1, 1});
    big[0] = 800.0;
    big[1] = -800.0;
    const TensorT<double> q = softmax_channels(big);
    CHECK(q[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::isfinite(q[1]));
  }
}

TEST_CASE("concat and split are inverse") {
  Rng rng(65);
  const TensorT<double> a = random_tensor({2, 2, 3, 2}, rng);
  const TensorT<double> b = random_tensor({3, 2, 3, 2}, rng);
  const TensorT<double> cat = concat_channels(a, b);
  REQUIRE(cat.dim(0) == 5);
  auto [a2, b2] = split_channels(cat, 2);
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a2[i] == a[i]);
  for (int64_t i = 0; i < b.numel(); ++i) CHECK(b2[i] == b[i]);
}
