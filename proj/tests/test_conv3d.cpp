#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "stnl/conv3d.hpp"
#include "stnl/rng.hpp"

using namespace stnl;

namespace {

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace

TEST(Conv3d, IdentityKernel) {
  Rng rng(1);
  const Tensor<float> x = uniform_tensor<float>({2, 1, 3, 4, 4}, rng);
  auto p = make_conv3d<float>(1, 1, 1, 1, 1);
  p.weight[0] = 1.0f;
  const Tensor<float> y = conv3d_forward(x, p);
  EXPECT_TRUE(bitwise_equal(y, x));
}

TEST(Conv3d, ZeroWeightsGiveBias) {
  Rng rng(2);
  const Tensor<float> x = uniform_tensor<float>({1, 2, 3, 3, 3}, rng);
  auto p = make_conv3d<float>(2, 2, 2, 2, 2);
  p.bias[0] = 1.5f;
  p.bias[1] = -0.25f;
  const Tensor<float> y = conv3d_forward(x, p);
  for (std::size_t co = 0; co < 2; ++co)
    for (std::size_t i = 0; i < y.numel() / 2; ++i)
      EXPECT_EQ(y[co * (y.numel() / 2) + i], p.bias[co]);
}

TEST(Conv3d, MatchesNestedLoopOracle) {
  Rng rng(3);
  const Tensor<float> x = uniform_tensor<float>({1, 2, 4, 5, 5}, rng);
  auto p = make_conv3d<float>(3, 2, 2, 3, 3);
  p.weight = uniform_tensor<float>(p.weight.shape(), rng);
  p.bias = uniform_tensor<float>(p.bias.shape(), rng);
  const Tensor<float> y = conv3d_forward(x, p);
  const Tensor<float> ref = oracle::conv3d(x, p.weight, p.bias, true, p.stride, p.padding);
  EXPECT_LT(max_abs_diff(y, ref), 1e-6);
}

TEST(Conv3d, StridePaddingMatchOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor<double> x = uniform_tensor<double>({2, 2, 5, 6, 7}, rng);
    auto p = make_conv3d<double>(2, 2, 1 + rng.uniform_int(3), 1 + rng.uniform_int(3),
                                 1 + rng.uniform_int(3),
                                 {1 + rng.uniform_int(2), 1 + rng.uniform_int(2), 1 + rng.uniform_int(2)},
                                 {rng.uniform_int(2), rng.uniform_int(2), rng.uniform_int(2)});
    p.weight = uniform_tensor<double>(p.weight.shape(), rng);
    p.bias = uniform_tensor<double>(p.bias.shape(), rng);
    const Tensor<double> y = conv3d_forward(x, p);
    const Tensor<double> ref = oracle::conv3d(x, p.weight, p.bias, true, p.stride, p.padding);
    EXPECT_LT(max_abs_diff(y, ref), 1e-12);
  }
}

TEST(Conv3d, OutputExtentFormula) {
  auto p = make_conv3d<float>(1, 1, 3, 3, 3, {2, 2, 2}, {1, 1, 1});
  const Tensor<float> x({1, 1, 5, 8, 9});
  const Tensor<float> y = conv3d_forward(x, p);
  // out = floor((in + 2*pad - kernel)/stride) + 1
  EXPECT_EQ(y.shape(), (Shape{1, 1, 3, 4, 5}));
}

TEST(Conv3d, ChannelMismatchThrows) {
  auto p = make_conv3d<float>(1, 2, 1, 1, 1);
  EXPECT_THROW(conv3d_forward(Tensor<float>({1, 3, 2, 2, 2}), p), std::invalid_argument);
}

TEST(Conv3d, NonPositiveOutputExtentThrows) {
  auto p = make_conv3d<float>(1, 1, 5, 1, 1);
  EXPECT_THROW(conv3d_forward(Tensor<float>({1, 1, 3, 2, 2}), p), std::invalid_argument);
}

TEST(Conv3d, SingleWindowIsDotProductPlusBias) {
  Rng rng(5);
  const Tensor<double> x = uniform_tensor<double>({1, 3, 2, 3, 3}, rng);
  auto p = make_conv3d<double>(1, 3, 2, 3, 3);
  p.weight = uniform_tensor<double>(p.weight.shape(), rng);
  p.bias[0] = 0.75;
  const Tensor<double> y = conv3d_forward(x, p);
  ASSERT_EQ(y.numel(), 1u);
  double dot = p.bias[0];
  for (std::size_t i = 0; i < x.numel(); ++i) dot += x[i] * p.weight[i];
  EXPECT_EQ(y[0], dot);
}

TEST(Conv3dBackward, ZeroGradGivesZero) {
  Rng rng(6);
  const Tensor<double> x = uniform_tensor<double>({1, 2, 3, 3, 3}, rng);
  auto p = make_conv3d<double>(2, 2, 2, 2, 2);
  p.weight = uniform_tensor<double>(p.weight.shape(), rng);
  const Tensor<double> gout(conv3d_forward(x, p).shape());
  const Conv3dGrads<double> g = conv3d_backward(gout, x, p);
  EXPECT_EQ(sum_all(g.grad_x), 0.0);
  EXPECT_EQ(sum_all(g.grad_weight), 0.0);
  EXPECT_EQ(sum_all(g.grad_bias), 0.0);
}

TEST(Conv3dBackward, BiasGradIsSumOfOutputGrad) {
  Rng rng(7);
  const Tensor<double> x = uniform_tensor<double>({2, 2, 3, 4, 4}, rng);
  auto p = make_conv3d<double>(3, 2, 2, 2, 2, {1, 2, 1}, {1, 0, 1});
  p.weight = uniform_tensor<double>(p.weight.shape(), rng);
  const Tensor<double> gout = uniform_tensor<double>(conv3d_forward(x, p).shape(), rng);
  const Conv3dGrads<double> g = conv3d_backward(gout, x, p);
  const std::size_t per_ch = gout.numel() / (2 * 3);
  for (std::size_t co = 0; co < 3; ++co) {
    double expected = 0;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < per_ch; ++i) expected += gout[(b * 3 + co) * per_ch + i];
    EXPECT_NEAR(g.grad_bias[co], expected, 1e-12);
  }
}

TEST(Conv3dBackward, GradShapeMismatchThrows) {
  auto p = make_conv3d<float>(1, 1, 1, 1, 1);
  const Tensor<float> x({1, 1, 2, 2, 2});
  EXPECT_THROW(conv3d_backward(Tensor<float>({1, 1, 2, 2, 3}), x, p), std::invalid_argument);
}

TEST(SeparableConv3d, IdentityKernels) {
  Rng rng(8);
  const Tensor<float> x = uniform_tensor<float>({1, 1, 3, 4, 4}, rng);
  auto temporal = make_conv3d<float>(1, 1, 1, 1, 1);
  auto spatial = make_conv3d<float>(1, 1, 1, 1, 1);
  temporal.weight[0] = 1.0f;
  spatial.weight[0] = 1.0f;
  EXPECT_TRUE(bitwise_equal(separable_conv3d_forward(x, temporal, spatial), x));
}

TEST(SeparableConv3d, RankOneKernelMatchesFullConv) {
  Rng rng(9);
  // w[r,p,q] = a[r] * b[p,q], one channel everywhere, no bias
  const std::size_t R = 3, P = 3, Q = 3;
  const Tensor<double> a = uniform_tensor<double>({R}, rng);
  const Tensor<double> b = uniform_tensor<double>({P, Q}, rng);
  auto full = make_conv3d<double>(1, 1, R, P, Q, {1, 1, 1}, {1, 1, 1});
  full.has_bias = false;
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t q = 0; q < Q; ++q) full.weight(0, 0, r, p, q) = a[r] * b(p, q);

  auto temporal = make_conv3d<double>(1, 1, R, 1, 1, {1, 1, 1}, {1, 0, 0});
  temporal.has_bias = false;
  for (std::size_t r = 0; r < R; ++r) temporal.weight(0, 0, r, 0, 0) = a[r];
  auto spatial = make_conv3d<double>(1, 1, 1, P, Q, {1, 1, 1}, {0, 1, 1});
  spatial.has_bias = false;
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t q = 0; q < Q; ++q) spatial.weight(0, 0, 0, p, q) = b(p, q);

  const Tensor<double> x = uniform_tensor<double>({1, 1, 4, 5, 5}, rng);
  const Tensor<double> sep = separable_conv3d_forward(x, temporal, spatial);
  const Tensor<double> ref = conv3d_forward(x, full);
  EXPECT_LT(max_abs_diff(sep, ref), 1e-6);
}

TEST(SeparableConv3d, NonSeparableKernelDiffers) {
  Rng rng(10);
  auto full = make_conv3d<double>(1, 1, 3, 3, 3, {1, 1, 1}, {1, 1, 1});
  full.has_bias = false;
  full.weight = uniform_tensor<double>(full.weight.shape(), rng);
  auto temporal = make_conv3d<double>(1, 1, 3, 1, 1, {1, 1, 1}, {1, 0, 0});
  temporal.has_bias = false;
  temporal.weight = uniform_tensor<double>(temporal.weight.shape(), rng);
  auto spatial = make_conv3d<double>(1, 1, 1, 3, 3, {1, 1, 1}, {0, 1, 1});
  spatial.has_bias = false;
  spatial.weight = uniform_tensor<double>(spatial.weight.shape(), rng);

  const Tensor<double> x = uniform_tensor<double>({1, 1, 4, 5, 5}, rng);
  EXPECT_GT(max_abs_diff(separable_conv3d_forward(x, temporal, spatial), conv3d_forward(x, full)),
            1e-3);
}

TEST(SeparableConv3d, RejectsNonSeparableShapes) {
  auto bad_temporal = make_conv3d<float>(1, 1, 3, 2, 1);
  auto spatial = make_conv3d<float>(1, 1, 1, 3, 3);
  const Tensor<float> x({1, 1, 4, 5, 5});
  EXPECT_THROW(separable_conv3d_forward(x, bad_temporal, spatial), std::invalid_argument);
  auto temporal = make_conv3d<float>(1, 1, 3, 1, 1);
  auto bad_spatial = make_conv3d<float>(1, 1, 2, 3, 3);
  EXPECT_THROW(separable_conv3d_forward(x, temporal, bad_spatial), std::invalid_argument);
}

TEST(Inflate, TEqualsOneIsExactCopy) {
  Rng rng(11);
  const Tensor<float> w2d = uniform_tensor<float>({2, 3, 3, 3}, rng);
  const Tensor<float> w3d = inflate_2d_to_3d(w2d, 1);
  EXPECT_EQ(w3d.shape(), (Shape{2, 3, 1, 3, 3}));
  for (std::size_t i = 0; i < w2d.numel(); ++i) EXPECT_EQ(w3d[i], w2d[i]);
}

TEST(Inflate, EachPlaneIsWeightOverT) {
  Rng rng(12);
  const Tensor<double> w2d = uniform_tensor<double>({1, 2, 2, 2}, rng);
  const Tensor<double> w3d = inflate_2d_to_3d(w2d, 3);
  EXPECT_EQ(w3d.shape(), (Shape{1, 2, 3, 2, 2}));
  for (std::size_t ic = 0; ic < 2; ++ic)
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t i = 0; i < 4; ++i)
        EXPECT_DOUBLE_EQ(w3d[(ic * 3 + r) * 4 + i], w2d[ic * 4 + i] / 3.0);
}

TEST(Inflate, RejectsBadInput) {
  EXPECT_THROW(inflate_2d_to_3d(Tensor<float>({2, 3, 3}), 2), std::invalid_argument);
  EXPECT_THROW(inflate_2d_to_3d(Tensor<float>({1, 1, 3, 3}), 0), std::invalid_argument);
}

// Inflated convolution over a temporally replicated input equals the plain 2D
// convolution of the frame at every valid temporal output position.
TEST(Inflate, TemporallyConstantInputEquivalence) {
  Rng rng(13);
  for (const long t : {1L, 2L, 3L, 5L}) {
    const std::size_t ci = 2, co = 3, kh = 3, kw = 3, H = 6, W = 7;
    const Tensor<float> w2d = uniform_tensor<float>({co, ci, kh, kw}, rng);
    const Tensor<float> frame = uniform_tensor<float>({ci, H, W}, rng);

    const std::size_t T = static_cast<std::size_t>(t) + 2;  // a few valid positions
    Tensor<float> x({1, ci, T, H, W});
    for (std::size_t c = 0; c < ci; ++c)
      for (std::size_t tt = 0; tt < T; ++tt)
        for (std::size_t i = 0; i < H * W; ++i)
          x.data()[(c * T + tt) * H * W + i] = frame.data()[c * H * W + i];

    Conv3dParams<float> p;
    p.weight = inflate_2d_to_3d(w2d, t);
    p.bias = Tensor<float>({co});
    p.has_bias = false;
    p.stride = {1, 1, 1};
    p.padding = {0, 1, 1};
    const Tensor<float> y = conv3d_forward(x, p);

    const Tensor<float> ref = oracle::conv2d(frame, w2d, 1);
    const std::size_t To = y.dim(2);
    for (std::size_t c = 0; c < co; ++c)
      for (std::size_t to = 0; to < To; ++to)
        for (std::size_t i = 0; i < H * W; ++i) {
          EXPECT_NEAR(y.data()[(c * To + to) * H * W + i], ref.data()[c * H * W + i], 1e-5)
              << "t=" << t << " c=" << c << " to=" << to;
        }
  }
}

TEST(Pool3d, GlobalAvgOfConstant) {
  const Tensor<float> x = Tensor<float>::full({2, 3, 2, 4, 4}, 1.75f);
  const Tensor<float> y = pool3d(x, PoolKind::Avg, {2, 4, 4}, {2, 4, 4});
  EXPECT_EQ(y.shape(), (Shape{2, 3, 1, 1, 1}));
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_FLOAT_EQ(y[i], 1.75f);
}

TEST(Pool3d, MaxOfKnownBlock) {
  Tensor<float> x({1, 1, 2, 2, 2});
  for (std::size_t i = 0; i < 8; ++i) x[i] = static_cast<float>(i) - 3.0f;
  const Tensor<float> y = pool3d(x, PoolKind::Max, {2, 2, 2}, {2, 2, 2});
  ASSERT_EQ(y.numel(), 1u);
  EXPECT_FLOAT_EQ(y[0], 4.0f);
}

TEST(Pool3d, MatchesWindowLoopOracle) {
  Rng rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor<double> x = uniform_tensor<double>({2, 2, 4, 5, 5}, rng);
    const std::array<std::size_t, 3> kernel{1 + rng.uniform_int(2), 2, 2};
    const std::array<std::size_t, 3> stride{1, 1 + rng.uniform_int(2), 2};
    const std::array<std::size_t, 3> padding{0, rng.uniform_int(2), 1};
    for (const PoolKind kind : {PoolKind::Max, PoolKind::Avg}) {
      const Tensor<double> y = pool3d(x, kind, kernel, stride, padding);
      const std::size_t To = y.dim(2), Ho = y.dim(3), Wo = y.dim(4);
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t c = 0; c < 2; ++c)
          for (std::size_t to = 0; to < To; ++to)
            for (std::size_t ho = 0; ho < Ho; ++ho)
              for (std::size_t wo = 0; wo < Wo; ++wo) {
                double mx = -1e300, sum = 0;
                for (std::size_t r = 0; r < kernel[0]; ++r)
                  for (std::size_t p = 0; p < kernel[1]; ++p)
                    for (std::size_t q = 0; q < kernel[2]; ++q) {
                      const long ti = static_cast<long>(to * stride[0] + r) - static_cast<long>(padding[0]);
                      const long hi = static_cast<long>(ho * stride[1] + p) - static_cast<long>(padding[1]);
                      const long wi = static_cast<long>(wo * stride[2] + q) - static_cast<long>(padding[2]);
                      double v = 0;
                      if (ti >= 0 && ti < 4 && hi >= 0 && hi < 5 && wi >= 0 && wi < 5)
                        v = x(b, c, static_cast<std::size_t>(ti), static_cast<std::size_t>(hi),
                              static_cast<std::size_t>(wi));
                      mx = std::max(mx, v);
                      sum += v;
                    }
                const double expected =
                    kind == PoolKind::Max ? mx : sum / static_cast<double>(kernel[0] * kernel[1] * kernel[2]);
                EXPECT_NEAR(y(b, c, to, ho, wo), expected, 1e-12);
              }
    }
  }
}

TEST(Pool3d, NonPositiveExtentThrows) {
  EXPECT_THROW(pool3d(Tensor<float>({1, 1, 2, 2, 2}), PoolKind::Max, {3, 2, 2}, {1, 1, 1}),
               std::invalid_argument);
}
