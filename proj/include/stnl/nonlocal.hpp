#pragma once

#include <cstddef>
#include <stdexcept>
#include <utility>

#include "stnl/conv3d.hpp"
#include "stnl/layers.hpp"
#include "stnl/tensor.hpp"

namespace stnl {

/// Spacetime attention block over inputs [B, C, T, H, W]. theta/phi/g embed
/// the C channels into a C/2 bottleneck through 1x1x1 convolutions; wz projects
/// back to C and is followed by a BatchNorm whose scale starts at zero, so a
/// freshly initialized block is an exact identity map.
template <typename T>
struct NonLocalParams {
  Conv3dParams<T> theta;
  Conv3dParams<T> phi;
  Conv3dParams<T> g;
  Conv3dParams<T> wz;
  BatchNormParams<T> wz_bn;

  std::size_t channels() const { return theta.in_channels(); }
  std::size_t bottleneck() const { return theta.out_channels(); }

  void zero_grads() {
    theta.zero_grads();
    phi.zero_grads();
    g.zero_grads();
    wz.zero_grads();
    wz_bn.zero_grads();
  }
};

template <typename T>
NonLocalParams<T> make_nonlocal(std::size_t channels, Rng& rng, T bn_momentum = T(0.1),
                                T bn_eps = T(1e-5)) {
  if (channels < 2 || channels % 2 != 0) {
    throw std::invalid_argument("make_nonlocal: channel count must be even and >= 2, got " +
                                std::to_string(channels));
  }
  const std::size_t e = channels / 2;
  NonLocalParams<T> p;
  p.theta = make_conv3d<T>(e, channels, 1, 1, 1);
  p.phi = make_conv3d<T>(e, channels, 1, 1, 1);
  p.g = make_conv3d<T>(e, channels, 1, 1, 1);
  p.wz = make_conv3d<T>(channels, e, 1, 1, 1, {1, 1, 1}, {0, 0, 0}, /*has_bias=*/false);
  p.wz_bn = make_batchnorm<T>(channels, bn_momentum, bn_eps);
  fill(p.wz_bn.gamma, T(0));  // identity at initialization

  const T std_embed = std::sqrt(T(2) / static_cast<T>(channels));
  const T std_proj = std::sqrt(T(2) / static_cast<T>(e));
  for (std::size_t i = 0; i < p.theta.weight.numel(); ++i) p.theta.weight[i] = static_cast<T>(rng.gauss()) * std_embed;
  for (std::size_t i = 0; i < p.phi.weight.numel(); ++i) p.phi.weight[i] = static_cast<T>(rng.gauss()) * std_embed;
  for (std::size_t i = 0; i < p.g.weight.numel(); ++i) p.g.weight[i] = static_cast<T>(rng.gauss()) * std_embed;
  for (std::size_t i = 0; i < p.wz.weight.numel(); ++i) p.wz.weight[i] = static_cast<T>(rng.gauss()) * std_proj;
  return p;
}

template <typename T>
struct NonLocalCache {
  Tensor<T> theta_f;    // [B, E, T, H, W]
  Tensor<T> phi_f;
  Tensor<T> g_f;
  Tensor<T> attention;  // [B, N, N], row-stochastic
  Tensor<T> y;          // [B, E, T, H, W], attention-weighted sum
  BatchNormCache<T> bn;
};

namespace detail {

template <typename T>
void check_nonlocal(const Tensor<T>& x, const NonLocalParams<T>& p) {
  if (x.rank() != 5) {
    throw std::invalid_argument("nonlocal: expected input [B,C,T,H,W], got " +
                                shape_string(x.shape()));
  }
  const std::size_t c = x.dim(1);
  if (c % 2 != 0) {
    throw std::invalid_argument("nonlocal: channel count must be even, got " + std::to_string(c));
  }
  if (p.channels() != c || p.phi.in_channels() != c || p.g.in_channels() != c ||
      p.wz.out_channels() != c || p.bottleneck() != c / 2 ||
      p.phi.out_channels() != c / 2 || p.g.out_channels() != c / 2 ||
      p.wz.in_channels() != c / 2) {
    throw std::invalid_argument("nonlocal: parameter channel counts do not match input " +
                                shape_string(x.shape()));
  }
}

// Contiguous [C, N] view of one sample of a [B, C, T, H, W] tensor.
template <typename T>
Tensor<T> sample_matrix(const Tensor<T>& t, std::size_t b) {
  const std::size_t c = t.dim(1);
  const std::size_t n = t.dim(2) * t.dim(3) * t.dim(4);
  Tensor<T> m({c, n});
  std::copy(t.data() + b * c * n, t.data() + (b + 1) * c * n, m.data());
  return m;
}

template <typename T>
void store_sample(Tensor<T>& t, std::size_t b, const Tensor<T>& m) {
  std::copy(m.data(), m.data() + m.numel(), t.data() + b * m.numel());
}

}  // namespace detail

/// z = x + BN(wz * y), where per sample y_i = sum_j A_ij g(x)_j and
/// A = softmax over rows of theta(x)^T phi(x).
template <typename T>
Tensor<T> nonlocal_forward(const Tensor<T>& x, NonLocalParams<T>& p, Mode mode,
                           NonLocalCache<T>* cache = nullptr) {
  detail::check_nonlocal(x, p);
  const std::size_t B = x.dim(0);
  const std::size_t E = p.bottleneck();
  const std::size_t N = x.dim(2) * x.dim(3) * x.dim(4);

  Tensor<T> theta_f = conv3d_forward(x, p.theta);
  Tensor<T> phi_f = conv3d_forward(x, p.phi);
  Tensor<T> g_f = conv3d_forward(x, p.g);

  Tensor<T> attention({B, N, N});
  Tensor<T> y({B, E, x.dim(2), x.dim(3), x.dim(4)});
  for (std::size_t b = 0; b < B; ++b) {
    const Tensor<T> tm = detail::sample_matrix(theta_f, b);
    const Tensor<T> pm = detail::sample_matrix(phi_f, b);
    const Tensor<T> gm = detail::sample_matrix(g_f, b);
    const Tensor<T> a = softmax_rows(matmul(transpose(tm), pm));
    detail::store_sample(attention, b, a);
    detail::store_sample(y, b, matmul(gm, transpose(a)));
  }

  Tensor<T> z0 = conv3d_forward(y, p.wz);
  BatchNormCache<T> bn_cache;
  Tensor<T> u = batchnorm_forward(z0, p.wz_bn, mode, &bn_cache);
  Tensor<T> z = add(x, u);

  if (cache) {
    cache->theta_f = std::move(theta_f);
    cache->phi_f = std::move(phi_f);
    cache->g_f = std::move(g_f);
    cache->attention = std::move(attention);
    cache->y = std::move(y);
    cache->bn = std::move(bn_cache);
  }
  return z;
}

/// The row-stochastic attention matrix [B, N, N] used by nonlocal_forward.
template <typename T>
Tensor<T> attention_map(const Tensor<T>& x, const NonLocalParams<T>& p) {
  detail::check_nonlocal(x, p);
  const std::size_t B = x.dim(0);
  const std::size_t N = x.dim(2) * x.dim(3) * x.dim(4);
  const Tensor<T> theta_f = conv3d_forward(x, p.theta);
  const Tensor<T> phi_f = conv3d_forward(x, p.phi);
  Tensor<T> attention({B, N, N});
  for (std::size_t b = 0; b < B; ++b) {
    const Tensor<T> tm = detail::sample_matrix(theta_f, b);
    const Tensor<T> pm = detail::sample_matrix(phi_f, b);
    detail::store_sample(attention, b, softmax_rows(matmul(transpose(tm), pm)));
  }
  return attention;
}

/// Backward through residual, BatchNorm, wz, the attention-weighted sum, the
/// row softmax, and the three embeddings. Parameter gradients accumulate into
/// the grad slots of `p`; the return value is grad wrt x.
template <typename T>
Tensor<T> nonlocal_backward(const Tensor<T>& grad_out, const Tensor<T>& x, NonLocalParams<T>& p,
                            NonLocalCache<T>& cache) {
  detail::check_nonlocal(x, p);
  check_same_shape(grad_out, x, "nonlocal_backward");
  const std::size_t B = x.dim(0);
  const std::size_t N = x.dim(2) * x.dim(3) * x.dim(4);

  p.theta.ensure_grads();
  p.phi.ensure_grads();
  p.g.ensure_grads();
  p.wz.ensure_grads();

  // Residual: z = x + u.
  Tensor<T> grad_x = grad_out;

  Tensor<T> grad_z0 = batchnorm_backward(grad_out, cache.bn, p.wz_bn);
  Conv3dGrads<T> wz_g = conv3d_backward(grad_z0, cache.y, p.wz);
  add_inplace(p.wz.weight_grad, wz_g.grad_weight);
  if (p.wz.has_bias) add_inplace(p.wz.bias_grad, wz_g.grad_bias);
  const Tensor<T>& grad_y = wz_g.grad_x;  // [B, E, T, H, W]

  Tensor<T> grad_theta_f(cache.theta_f.shape());
  Tensor<T> grad_phi_f(cache.phi_f.shape());
  Tensor<T> grad_g_f(cache.g_f.shape());

  for (std::size_t b = 0; b < B; ++b) {
    const Tensor<T> dy = detail::sample_matrix(grad_y, b);       // [E, N]
    const Tensor<T> tm = detail::sample_matrix(cache.theta_f, b);
    const Tensor<T> pm = detail::sample_matrix(cache.phi_f, b);
    const Tensor<T> gm = detail::sample_matrix(cache.g_f, b);
    Tensor<T> a({N, N});
    std::copy(cache.attention.data() + b * N * N, cache.attention.data() + (b + 1) * N * N, a.data());

    // y = g A^T
    const Tensor<T> dg = matmul(dy, a);                 // [E, N]
    const Tensor<T> da = matmul(transpose(dy), gm);     // [N, N]

    // Row softmax: dS_ij = A_ij (dA_ij - sum_k dA_ik A_ik)
    Tensor<T> ds({N, N});
    for (std::size_t i = 0; i < N; ++i) {
      const T* arow = a.data() + i * N;
      const T* darow = da.data() + i * N;
      T dot = T(0);
      for (std::size_t j = 0; j < N; ++j) dot += darow[j] * arow[j];
      T* dsrow = ds.data() + i * N;
      for (std::size_t j = 0; j < N; ++j) dsrow[j] = arow[j] * (darow[j] - dot);
    }

    // S = theta^T phi
    detail::store_sample(grad_theta_f, b, matmul(pm, transpose(ds)));
    detail::store_sample(grad_phi_f, b, matmul(tm, ds));
    detail::store_sample(grad_g_f, b, dg);
  }

  const Conv3dGrads<T> tg = conv3d_backward(grad_theta_f, x, p.theta);
  const Conv3dGrads<T> pg = conv3d_backward(grad_phi_f, x, p.phi);
  const Conv3dGrads<T> gg = conv3d_backward(grad_g_f, x, p.g);
  add_inplace(p.theta.weight_grad, tg.grad_weight);
  add_inplace(p.theta.bias_grad, tg.grad_bias);
  add_inplace(p.phi.weight_grad, pg.grad_weight);
  add_inplace(p.phi.bias_grad, pg.grad_bias);
  add_inplace(p.g.weight_grad, gg.grad_weight);
  add_inplace(p.g.bias_grad, gg.grad_bias);

  add_inplace(grad_x, tg.grad_x);
  add_inplace(grad_x, pg.grad_x);
  add_inplace(grad_x, gg.grad_x);
  return grad_x;
}

}  // namespace stnl
