#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>

#include "stnl/rng.hpp"
#include "stnl/tensor.hpp"

namespace stnl {

enum class Mode { Train, Eval };

/// Per-channel batch normalization state for inputs shaped [B, C, ...].
/// Train mode normalizes by batch statistics and folds them into the running
/// estimates; eval mode normalizes by the running estimates alone. Variance is
/// the biased estimator in both roles.
template <typename T>
struct BatchNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  Tensor<T> gamma_grad;
  Tensor<T> beta_grad;

  std::size_t channels() const { return gamma.dim(0); }

  void ensure_grads() {
    if (!gamma_grad.same_shape(gamma)) gamma_grad = Tensor<T>(gamma.shape());
    if (!beta_grad.same_shape(beta)) beta_grad = Tensor<T>(beta.shape());
  }
  void zero_grads() {
    ensure_grads();
    fill(gamma_grad, T(0));
    fill(beta_grad, T(0));
  }
};

template <typename T>
BatchNormParams<T> make_batchnorm(std::size_t channels, T momentum = T(0.1), T eps = T(1e-5)) {
  BatchNormParams<T> p;
  p.gamma = Tensor<T>::full({channels}, T(1));
  p.beta = Tensor<T>({channels});
  p.running_mean = Tensor<T>({channels});
  p.running_var = Tensor<T>::full({channels}, T(1));
  p.momentum = momentum;
  p.eps = eps;
  return p;
}

/// Values the backward pass needs from the matching forward call.
template <typename T>
struct BatchNormCache {
  Tensor<T> x_hat;     // normalized input, before gamma/beta
  Tensor<T> inv_std;   // per channel, 1/sqrt(var + eps) actually used
  Mode mode = Mode::Train;
};

namespace detail {

template <typename T>
void check_bn_shapes(const Tensor<T>& x, const BatchNormParams<T>& p) {
  if (x.rank() < 2) {
    throw std::invalid_argument("batchnorm: expected input [B,C,...], got " + shape_string(x.shape()));
  }
  if (x.dim(1) != p.channels()) {
    throw std::invalid_argument("batchnorm: channel count " + std::to_string(x.dim(1)) +
                                " does not match parameters (" + std::to_string(p.channels()) + ")");
  }
}

// x viewed as [B, C, S]: returns B, C, S with S the flattened trailing volume.
template <typename T>
std::array<std::size_t, 3> bn_dims(const Tensor<T>& x) {
  std::size_t s = 1;
  for (std::size_t i = 2; i < x.rank(); ++i) s *= x.dim(i);
  return {x.dim(0), x.dim(1), s};
}

}  // namespace detail

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, BatchNormParams<T>& p, Mode mode,
                            BatchNormCache<T>* cache = nullptr) {
  detail::check_bn_shapes(x, p);
  const auto [B, C, S] = detail::bn_dims(x);
  const std::size_t M = B * S;
  if (mode == Mode::Train && M < 2) {
    throw std::invalid_argument("batchnorm: train mode needs at least 2 samples per channel, got " +
                                std::to_string(M));
  }

  Tensor<T> out(x.shape());
  Tensor<T> x_hat(x.shape());
  Tensor<T> inv_std({C});

  for (std::size_t c = 0; c < C; ++c) {
    T mean, var;
    if (mode == Mode::Train) {
      T sum = T(0);
      for (std::size_t b = 0; b < B; ++b) {
        const T* xc = x.data() + (b * C + c) * S;
        for (std::size_t s = 0; s < S; ++s) sum += xc[s];
      }
      mean = sum / static_cast<T>(M);
      T sq = T(0);
      for (std::size_t b = 0; b < B; ++b) {
        const T* xc = x.data() + (b * C + c) * S;
        for (std::size_t s = 0; s < S; ++s) {
          const T d = xc[s] - mean;
          sq += d * d;
        }
      }
      var = sq / static_cast<T>(M);
      p.running_mean[c] = (T(1) - p.momentum) * p.running_mean[c] + p.momentum * mean;
      p.running_var[c] = (T(1) - p.momentum) * p.running_var[c] + p.momentum * var;
    } else {
      mean = p.running_mean[c];
      var = p.running_var[c];
    }
    const T istd = T(1) / std::sqrt(var + p.eps);
    inv_std[c] = istd;
    const T g = p.gamma[c], be = p.beta[c];
    for (std::size_t b = 0; b < B; ++b) {
      const T* xc = x.data() + (b * C + c) * S;
      T* hc = x_hat.data() + (b * C + c) * S;
      T* oc = out.data() + (b * C + c) * S;
      for (std::size_t s = 0; s < S; ++s) {
        hc[s] = (xc[s] - mean) * istd;
        oc[s] = g * hc[s] + be;
      }
    }
  }

  if (cache) {
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return out;
}

/// Adjoint of batchnorm_forward. In train mode the batch statistics are part
/// of the computation graph; in eval mode the transform is a fixed per-channel
/// affine map.
template <typename T>
Tensor<T> batchnorm_backward(const Tensor<T>& grad_out, const BatchNormCache<T>& cache,
                             BatchNormParams<T>& p) {
  check_same_shape(grad_out, cache.x_hat, "batchnorm_backward");
  const auto [B, C, S] = detail::bn_dims(grad_out);
  const T M = static_cast<T>(B * S);

  p.ensure_grads();
  Tensor<T> gx(grad_out.shape());

  for (std::size_t c = 0; c < C; ++c) {
    T dgamma = T(0), dbeta = T(0);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t base = (b * C + c) * S;
      for (std::size_t s = 0; s < S; ++s) {
        dgamma += grad_out[base + s] * cache.x_hat[base + s];
        dbeta += grad_out[base + s];
      }
    }
    p.gamma_grad[c] += dgamma;
    p.beta_grad[c] += dbeta;

    const T istd = cache.inv_std[c];
    const T g = p.gamma[c];
    if (cache.mode == Mode::Eval) {
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t base = (b * C + c) * S;
        for (std::size_t s = 0; s < S; ++s) gx[base + s] = grad_out[base + s] * g * istd;
      }
    } else {
      // dx = (gamma*istd/M) * (M*dy - sum(dy) - x_hat * sum(dy*x_hat))
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t base = (b * C + c) * S;
        for (std::size_t s = 0; s < S; ++s) {
          gx[base + s] = g * istd / M *
                         (M * grad_out[base + s] - dbeta - cache.x_hat[base + s] * dgamma);
        }
      }
    }
  }
  return gx;
}

/// Fully connected layer: weight [D_out, D_in], bias [D_out].
template <typename T>
struct LinearParams {
  Tensor<T> weight;
  Tensor<T> bias;

  Tensor<T> weight_grad;
  Tensor<T> bias_grad;

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }

  void ensure_grads() {
    if (!weight_grad.same_shape(weight)) weight_grad = Tensor<T>(weight.shape());
    if (!bias_grad.same_shape(bias)) bias_grad = Tensor<T>(bias.shape());
  }
  void zero_grads() {
    ensure_grads();
    fill(weight_grad, T(0));
    fill(bias_grad, T(0));
  }
};

template <typename T>
LinearParams<T> make_linear(std::size_t d_out, std::size_t d_in) {
  LinearParams<T> p;
  p.weight = Tensor<T>({d_out, d_in});
  p.bias = Tensor<T>({d_out});
  return p;
}

/// y = x W^T + b for x [B, D_in].
template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const LinearParams<T>& p) {
  if (x.rank() != 2 || x.dim(1) != p.in_features()) {
    throw std::invalid_argument("linear: input " + shape_string(x.shape()) +
                                " does not match weight " + shape_string(p.weight.shape()));
  }
  const std::size_t B = x.dim(0), Din = p.in_features(), Dout = p.out_features();
  Tensor<T> out({B, Dout});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t o = 0; o < Dout; ++o) {
      T acc = p.bias[o];
      const T* xr = x.data() + b * Din;
      const T* wr = p.weight.data() + o * Din;
      for (std::size_t i = 0; i < Din; ++i) acc += xr[i] * wr[i];
      out(b, o) = acc;
    }
  }
  return out;
}

template <typename T>
struct LinearGrads {
  Tensor<T> grad_x;
  Tensor<T> grad_weight;
  Tensor<T> grad_bias;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& grad_out, const Tensor<T>& x,
                               const LinearParams<T>& p) {
  const std::size_t B = x.dim(0), Din = p.in_features(), Dout = p.out_features();
  if (grad_out.rank() != 2 || grad_out.dim(0) != B || grad_out.dim(1) != Dout) {
    throw std::invalid_argument("linear_backward: grad shape " + shape_string(grad_out.shape()) +
                                " does not match output [" + std::to_string(B) + ", " +
                                std::to_string(Dout) + "]");
  }
  LinearGrads<T> g;
  g.grad_x = Tensor<T>({B, Din});
  g.grad_weight = Tensor<T>(p.weight.shape());
  g.grad_bias = Tensor<T>(p.bias.shape());
  for (std::size_t b = 0; b < B; ++b) {
    const T* gr = grad_out.data() + b * Dout;
    const T* xr = x.data() + b * Din;
    T* gxr = g.grad_x.data() + b * Din;
    for (std::size_t o = 0; o < Dout; ++o) {
      const T go = gr[o];
      g.grad_bias[o] += go;
      const T* wr = p.weight.data() + o * Din;
      T* gwr = g.grad_weight.data() + o * Din;
      for (std::size_t i = 0; i < Din; ++i) {
        gxr[i] += go * wr[i];
        gwr[i] += go * xr[i];
      }
    }
  }
  return g;
}

/// Inverted dropout. Train mode zeroes each element with probability `rate`
/// and scales survivors by 1/(1-rate); eval mode is the identity. The returned
/// mask already carries the survivor scaling, so backward is grad * mask.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> dropout(const Tensor<T>& x, double rate, Rng& rng, Mode mode) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::Eval || rate == 0.0) {
    return {x, Tensor<T>::full(x.shape(), T(1))};
  }
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> mask(x.shape());
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const bool keep = rng.uniform() >= rate;
    mask[i] = keep ? keep_scale : T(0);
    out[i] = x[i] * mask[i];
  }
  return {std::move(out), std::move(mask)};
}

}  // namespace stnl
