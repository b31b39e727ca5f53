#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "stnl/gradcheck.hpp"
#include "stnl/nonlocal.hpp"
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

template <typename T>
NonLocalParams<T> random_params(std::size_t channels, Rng& rng, bool random_bn) {
  NonLocalParams<T> p = make_nonlocal<T>(channels, rng);
  if (random_bn) {
    p.wz_bn.gamma = uniform_tensor<T>({channels}, rng, T(0.5), T(1.5));
    p.wz_bn.beta = uniform_tensor<T>({channels}, rng);
  }
  return p;
}

template <typename T>
Tensor<T> oracle_forward(const Tensor<T>& x, NonLocalParams<T>& p, bool train_stats) {
  return oracle::nonlocal_block<T>(x, p.theta.weight, p.theta.bias, p.phi.weight, p.phi.bias,
                                   p.g.weight, p.g.bias, p.wz.weight, p.wz_bn.gamma, p.wz_bn.beta,
                                   p.wz_bn.eps, train_stats, p.wz_bn.running_mean,
                                   p.wz_bn.running_var);
}

}  // namespace

TEST(NonLocal, IdentityAtInitBitExact) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t c = 2 * (1 + rng.uniform_int(4));
    std::size_t b = 1 + rng.uniform_int(2), t = 1 + rng.uniform_int(3), h = 1 + rng.uniform_int(3),
                w = 1 + rng.uniform_int(3);
    if (b * t * h * w < 2) b = 2;  // train-mode BatchNorm needs two samples
    NonLocalParams<float> p = make_nonlocal<float>(c, rng);  // gamma = 0 by construction
    const Tensor<float> x = uniform_tensor<float>({b, c, t, h, w}, rng, -5.0f, 5.0f);
    const Tensor<float> y = nonlocal_forward(x, p, Mode::Train);
    EXPECT_TRUE(bitwise_equal(y, x)) << "trial " << trial;
    const Tensor<float> y_eval = nonlocal_forward(x, p, Mode::Eval);
    EXPECT_TRUE(bitwise_equal(y_eval, x)) << "trial " << trial;
  }
}

TEST(NonLocal, SinglePositionAttentionIsOne) {
  Rng rng(2);
  NonLocalParams<double> p = random_params<double>(4, rng, true);
  const Tensor<double> x = uniform_tensor<double>({2, 4, 1, 1, 1}, rng);
  const Tensor<double> a = attention_map(x, p);
  EXPECT_EQ(a.shape(), (Shape{2, 1, 1}));
  EXPECT_DOUBLE_EQ(a[0], 1.0);
  EXPECT_DOUBLE_EQ(a[1], 1.0);
  // z = x + BN(wz * g(x)) with the 1x1 attention collapsing to g itself
  const Tensor<double> z = nonlocal_forward(x, p, Mode::Train);
  const Tensor<double> ref = oracle_forward(x, p, true);
  EXPECT_LT(max_abs_diff(z, ref), 1e-12);
}

TEST(NonLocal, MatchesPositionLoopOracle) {
  Rng rng(3);
  const Tensor<float> x = uniform_tensor<float>({1, 4, 2, 3, 3}, rng);
  NonLocalParams<float> p = random_params<float>(4, rng, true);
  const Tensor<float> z = nonlocal_forward(x, p, Mode::Train);
  NonLocalParams<float> p2 = p;
  const Tensor<float> ref = oracle_forward(x, p2, true);
  EXPECT_LT(max_abs_diff(z, ref), 1e-5);
}

TEST(NonLocal, OracleEquivalenceAcrossShapesF64) {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t c = 2 * (1 + rng.uniform_int(3));
    std::size_t b = 1 + rng.uniform_int(2);
    const std::size_t t = 1 + rng.uniform_int(3), h = 1 + rng.uniform_int(3),
                      w = 1 + rng.uniform_int(3);
    if (t * h * w > 32) continue;
    if (b * t * h * w < 2) b = 2;
    const Tensor<double> x = uniform_tensor<double>({b, c, t, h, w}, rng);
    NonLocalParams<double> p = random_params<double>(c, rng, true);
    const Tensor<double> z = nonlocal_forward(x, p, Mode::Train);
    NonLocalParams<double> p2 = p;
    const Tensor<double> ref = oracle_forward(x, p2, true);
    EXPECT_LT(max_abs_diff(z, ref), 1e-10) << "trial " << trial;
  }
}

TEST(NonLocal, EvalModeUsesRunningStats) {
  Rng rng(5);
  const Tensor<double> x = uniform_tensor<double>({1, 4, 2, 2, 2}, rng);
  NonLocalParams<double> p = random_params<double>(4, rng, true);
  p.wz_bn.running_mean = uniform_tensor<double>({4}, rng);
  p.wz_bn.running_var = uniform_tensor<double>({4}, rng, 0.5, 2.0);
  NonLocalParams<double> p2 = p;
  const Tensor<double> z = nonlocal_forward(x, p, Mode::Eval);
  const Tensor<double> ref = oracle_forward(x, p2, false);
  EXPECT_LT(max_abs_diff(z, ref), 1e-12);
}

TEST(NonLocal, RejectsOddChannels) {
  Rng rng(6);
  EXPECT_THROW(make_nonlocal<float>(5, rng), std::invalid_argument);
  NonLocalParams<float> p = make_nonlocal<float>(4, rng);
  EXPECT_THROW(nonlocal_forward(Tensor<float>({1, 6, 2, 2, 2}), p, Mode::Train),
               std::invalid_argument);
}

TEST(AttentionMap, RowsSumToOne) {
  Rng rng(7);
  const Tensor<float> x = uniform_tensor<float>({2, 4, 2, 2, 2}, rng);
  NonLocalParams<float> p = random_params<float>(4, rng, true);
  const Tensor<float> a = attention_map(x, p);
  const std::size_t n = 8;
  ASSERT_EQ(a.shape(), (Shape{2, n, n}));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < n; ++i) {
      float sum = 0;
      for (std::size_t j = 0; j < n; ++j) {
        sum += a(b, i, j);
        EXPECT_GE(a(b, i, j), 0.0f);
      }
      EXPECT_NEAR(sum, 1.0f, 1e-6f);
    }
}

TEST(AttentionMap, ZeroEmbeddingsGiveUniform) {
  Rng rng(8);
  NonLocalParams<float> p = make_nonlocal<float>(4, rng);
  fill(p.theta.weight, 0.0f);
  fill(p.theta.bias, 0.0f);
  fill(p.phi.weight, 0.0f);
  fill(p.phi.bias, 0.0f);
  const Tensor<float> x = uniform_tensor<float>({1, 4, 2, 2, 1}, rng);
  const Tensor<float> a = attention_map(x, p);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_FLOAT_EQ(a[i], 0.25f);
}

TEST(AttentionMap, RecomposesForwardPreResidual) {
  Rng rng(9);
  const std::size_t b = 2, c = 6, t = 2, h = 2, w = 2, n = t * h * w, e = c / 2;
  const Tensor<double> x = uniform_tensor<double>({b, c, t, h, w}, rng);
  NonLocalParams<double> p = random_params<double>(c, rng, true);
  const Tensor<double> a = attention_map(x, p);

  NonLocalCache<double> cache;
  nonlocal_forward(x, p, Mode::Train, &cache);

  // y_i = sum_j A_ij g_j must reproduce the cached pre-residual tensor.
  for (std::size_t bb = 0; bb < b; ++bb)
    for (std::size_t ee = 0; ee < e; ++ee)
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0;
        for (std::size_t j = 0; j < n; ++j)
          acc += a(bb, i, j) * cache.g_f.data()[(bb * e + ee) * n + j];
        EXPECT_NEAR(acc, cache.y.data()[(bb * e + ee) * n + i], 1e-6);
      }
}

TEST(NonLocal, PermutationEquivarianceOfAttentionCore) {
  Rng rng(10);
  const std::size_t c = 4, t = 2, h = 2, w = 2, n = t * h * w, e = c / 2;
  const Tensor<double> x = uniform_tensor<double>({1, c, t, h, w}, rng);
  NonLocalParams<double> p = random_params<double>(c, rng, true);

  // Random permutation of the n positions.
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = 0; i < n; ++i) std::swap(perm[i], perm[i + rng.uniform_int(n - i)]);

  Tensor<double> xp(x.shape());
  for (std::size_t cc = 0; cc < c; ++cc)
    for (std::size_t i = 0; i < n; ++i) xp.data()[cc * n + perm[i]] = x.data()[cc * n + i];

  NonLocalCache<double> cache, cache_p;
  nonlocal_forward(x, p, Mode::Train, &cache);
  nonlocal_forward(xp, p, Mode::Train, &cache_p);
  for (std::size_t ee = 0; ee < e; ++ee)
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_NEAR(cache_p.y.data()[ee * n + perm[i]], cache.y.data()[ee * n + i], 1e-10);
    }
}

TEST(NonLocalBackward, ZeroGradGivesZeroGrads) {
  Rng rng(11);
  const Tensor<double> x = uniform_tensor<double>({1, 4, 2, 2, 2}, rng);
  NonLocalParams<double> p = random_params<double>(4, rng, true);
  NonLocalCache<double> cache;
  nonlocal_forward(x, p, Mode::Train, &cache);
  p.zero_grads();
  const Tensor<double> gx = nonlocal_backward(Tensor<double>(x.shape()), x, p, cache);
  EXPECT_EQ(sum_all(gx), 0.0);
  EXPECT_EQ(sum_all(p.theta.weight_grad), 0.0);
  EXPECT_EQ(sum_all(p.wz.weight_grad), 0.0);
  EXPECT_EQ(sum_all(p.wz_bn.gamma_grad), 0.0);
}

TEST(NonLocalBackward, AllZeroParamsPassGradThroughResidual) {
  Rng rng(12);
  const Tensor<double> x = uniform_tensor<double>({1, 4, 2, 2, 2}, rng);
  NonLocalParams<double> p = make_nonlocal<double>(4, rng);
  fill(p.theta.weight, 0.0);
  fill(p.phi.weight, 0.0);
  fill(p.g.weight, 0.0);
  fill(p.wz.weight, 0.0);
  NonLocalCache<double> cache;
  nonlocal_forward(x, p, Mode::Train, &cache);
  p.zero_grads();
  const Tensor<double> gout = uniform_tensor<double>(x.shape(), rng);
  const Tensor<double> gx = nonlocal_backward(gout, x, p, cache);
  // g(x) is zero everywhere, gamma is zero: only the residual path carries
  // gradient back to x.
  EXPECT_TRUE(bitwise_equal(gx, gout));
}

TEST(NonLocalBackward, MatchesFiniteDifferences) {
  Rng rng(13);
  Tensor<double> x = uniform_tensor<double>({1, 4, 2, 2, 2}, rng);
  NonLocalParams<double> p = random_params<double>(4, rng, true);
  const Tensor<double> w = uniform_tensor<double>(x.shape(), rng);

  NonLocalCache<double> cache;
  nonlocal_forward(x, p, Mode::Train, &cache);
  p.zero_grads();
  const Tensor<double> gx = nonlocal_backward(w, x, p, cache);

  auto eval = [&]() {
    NonLocalParams<double> q = p;
    const Tensor<double> z = nonlocal_forward(x, q, Mode::Train);
    double acc = 0;
    for (std::size_t i = 0; i < z.numel(); ++i) acc += z[i] * w[i];
    return acc;
  };
  FdStats st;
  fd_check_buffer(eval, x.data(), x.numel(), gx.data(), 1e-5, st);
  fd_check_buffer(eval, p.theta.weight.data(), p.theta.weight.numel(), p.theta.weight_grad.data(),
                  1e-5, st);
  fd_check_buffer(eval, p.phi.weight.data(), p.phi.weight.numel(), p.phi.weight_grad.data(), 1e-5, st);
  fd_check_buffer(eval, p.g.weight.data(), p.g.weight.numel(), p.g.weight_grad.data(), 1e-5, st);
  fd_check_buffer(eval, p.wz.weight.data(), p.wz.weight.numel(), p.wz.weight_grad.data(), 1e-5, st);
  fd_check_buffer(eval, p.wz_bn.gamma.data(), 4, p.wz_bn.gamma_grad.data(), 1e-5, st);
  fd_check_buffer(eval, p.wz_bn.beta.data(), 4, p.wz_bn.beta_grad.data(), 1e-5, st);
  EXPECT_LT(st.max_rel_err, 1e-4);
  EXPECT_GT(st.checked, 0);
}
