#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>

#include "stnl/tensor.hpp"

namespace stnl {

/// Learnable state of one 3D convolution: weight [C_out, C_in, R, P, Q]
/// (R temporal, P x Q spatial), optional bias [C_out], and matching gradient
/// slots. Stride and zero padding are ordered (t, h, w).
template <typename T>
struct Conv3dParams {
  Tensor<T> weight;
  Tensor<T> bias;
  bool has_bias = true;
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> padding{0, 0, 0};

  Tensor<T> weight_grad;
  Tensor<T> bias_grad;

  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t in_channels() const { return weight.dim(1); }

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
Conv3dParams<T> make_conv3d(std::size_t c_out, std::size_t c_in, std::size_t kt, std::size_t kh,
                            std::size_t kw, std::array<std::size_t, 3> stride = {1, 1, 1},
                            std::array<std::size_t, 3> padding = {0, 0, 0}, bool has_bias = true) {
  if (kt < 1 || kh < 1 || kw < 1) throw std::invalid_argument("make_conv3d: kernel extents must be >= 1");
  if (stride[0] < 1 || stride[1] < 1 || stride[2] < 1)
    throw std::invalid_argument("make_conv3d: strides must be >= 1");
  Conv3dParams<T> p;
  p.weight = Tensor<T>({c_out, c_in, kt, kh, kw});
  p.bias = Tensor<T>({c_out});
  p.has_bias = has_bias;
  p.stride = stride;
  p.padding = padding;
  return p;
}

inline std::size_t conv_out_extent(std::size_t in, std::size_t pad, std::size_t kernel,
                                   std::size_t stride, const char* axis) {
  const std::size_t padded = in + 2 * pad;
  if (padded < kernel) {
    throw std::invalid_argument(std::string("conv3d: non-positive output extent on ") + axis +
                                " axis (input " + std::to_string(in) + ", pad " + std::to_string(pad) +
                                ", kernel " + std::to_string(kernel) + ")");
  }
  return (padded - kernel) / stride + 1;
}

/// out[b,co,to,ho,wo] = bias[co]
///   + sum_{ci,r,p,q} w[co,ci,r,p,q] * x[b,ci, to*st-pt+r, ho*sh-ph+p, wo*sw-pw+q]
/// with x read as zero outside its bounds.
template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Conv3dParams<T>& p) {
  if (x.rank() != 5) {
    throw std::invalid_argument("conv3d: expected input [B,C,T,H,W], got " + shape_string(x.shape()));
  }
  if (x.dim(1) != p.in_channels()) {
    throw std::invalid_argument("conv3d: input channels " + std::to_string(x.dim(1)) +
                                " do not match weight " + shape_string(p.weight.shape()));
  }
  const std::size_t B = x.dim(0), Ci = x.dim(1), Ti = x.dim(2), Hi = x.dim(3), Wi = x.dim(4);
  const std::size_t Co = p.out_channels();
  const std::size_t KT = p.weight.dim(2), KH = p.weight.dim(3), KW = p.weight.dim(4);
  const auto [st, sh, sw] = p.stride;
  const auto [pt, ph, pw] = p.padding;
  const std::size_t To = conv_out_extent(Ti, pt, KT, st, "temporal");
  const std::size_t Ho = conv_out_extent(Hi, ph, KH, sh, "height");
  const std::size_t Wo = conv_out_extent(Wi, pw, KW, sw, "width");

  Tensor<T> out({B, Co, To, Ho, Wo});
  const T* xp = x.data();
  const T* wp = p.weight.data();
  T* op = out.data();

  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t co = 0; co < Co; ++co) {
      const T bias = p.has_bias ? p.bias[co] : T(0);
      for (std::size_t to = 0; to < To; ++to) {
        for (std::size_t ho = 0; ho < Ho; ++ho) {
          for (std::size_t wo = 0; wo < Wo; ++wo) {
            T acc = bias;
            for (std::size_t ci = 0; ci < Ci; ++ci) {
              const T* xc = xp + ((b * Ci + ci) * Ti) * Hi * Wi;
              const T* wc = wp + ((co * Ci + ci) * KT) * KH * KW;
              for (std::size_t r = 0; r < KT; ++r) {
                const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(to * st + r) -
                                          static_cast<std::ptrdiff_t>(pt);
                if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(Ti)) continue;
                for (std::size_t pp = 0; pp < KH; ++pp) {
                  const std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(ho * sh + pp) -
                                            static_cast<std::ptrdiff_t>(ph);
                  if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(Hi)) continue;
                  const T* xrow = xc + (static_cast<std::size_t>(ti) * Hi +
                                        static_cast<std::size_t>(hi)) * Wi;
                  const T* wrow = wc + (r * KH + pp) * KW;
                  for (std::size_t q = 0; q < KW; ++q) {
                    const std::ptrdiff_t wi = static_cast<std::ptrdiff_t>(wo * sw + q) -
                                              static_cast<std::ptrdiff_t>(pw);
                    if (wi < 0 || wi >= static_cast<std::ptrdiff_t>(Wi)) continue;
                    acc += wrow[q] * xrow[wi];
                  }
                }
              }
            }
            op[(((b * Co + co) * To + to) * Ho + ho) * Wo + wo] = acc;
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
struct Conv3dGrads {
  Tensor<T> grad_x;
  Tensor<T> grad_weight;
  Tensor<T> grad_bias;
};

/// Vector-Jacobian products of conv3d_forward for input, weight, and bias.
template <typename T>
Conv3dGrads<T> conv3d_backward(const Tensor<T>& grad_out, const Tensor<T>& x,
                               const Conv3dParams<T>& p) {
  const std::size_t B = x.dim(0), Ci = x.dim(1), Ti = x.dim(2), Hi = x.dim(3), Wi = x.dim(4);
  const std::size_t Co = p.out_channels();
  const std::size_t KT = p.weight.dim(2), KH = p.weight.dim(3), KW = p.weight.dim(4);
  const auto [st, sh, sw] = p.stride;
  const auto [pt, ph, pw] = p.padding;
  const std::size_t To = conv_out_extent(Ti, pt, KT, st, "temporal");
  const std::size_t Ho = conv_out_extent(Hi, ph, KH, sh, "height");
  const std::size_t Wo = conv_out_extent(Wi, pw, KW, sw, "width");
  const Shape expected{B, Co, To, Ho, Wo};
  if (grad_out.shape() != expected) {
    throw std::invalid_argument("conv3d_backward: grad shape " + shape_string(grad_out.shape()) +
                                " does not match forward output " + shape_string(expected));
  }

  Conv3dGrads<T> g;
  g.grad_x = Tensor<T>(x.shape());
  g.grad_weight = Tensor<T>(p.weight.shape());
  g.grad_bias = Tensor<T>(p.bias.shape());

  const T* xp = x.data();
  const T* wp = p.weight.data();
  const T* gp = grad_out.data();
  T* gxp = g.grad_x.data();
  T* gwp = g.grad_weight.data();

  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t co = 0; co < Co; ++co) {
      for (std::size_t to = 0; to < To; ++to) {
        for (std::size_t ho = 0; ho < Ho; ++ho) {
          for (std::size_t wo = 0; wo < Wo; ++wo) {
            const T go = gp[(((b * Co + co) * To + to) * Ho + ho) * Wo + wo];
            if (p.has_bias) g.grad_bias[co] += go;
            for (std::size_t ci = 0; ci < Ci; ++ci) {
              const std::size_t xbase = (b * Ci + ci) * Ti * Hi * Wi;
              const std::size_t wbase = (co * Ci + ci) * KT * KH * KW;
              for (std::size_t r = 0; r < KT; ++r) {
                const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(to * st + r) -
                                          static_cast<std::ptrdiff_t>(pt);
                if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(Ti)) continue;
                for (std::size_t pp = 0; pp < KH; ++pp) {
                  const std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(ho * sh + pp) -
                                            static_cast<std::ptrdiff_t>(ph);
                  if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(Hi)) continue;
                  for (std::size_t q = 0; q < KW; ++q) {
                    const std::ptrdiff_t wi = static_cast<std::ptrdiff_t>(wo * sw + q) -
                                              static_cast<std::ptrdiff_t>(pw);
                    if (wi < 0 || wi >= static_cast<std::ptrdiff_t>(Wi)) continue;
                    const std::size_t xi = xbase + (static_cast<std::size_t>(ti) * Hi +
                                                    static_cast<std::size_t>(hi)) * Wi +
                                           static_cast<std::size_t>(wi);
                    const std::size_t widx = wbase + (r * KH + pp) * KW + q;
                    gwp[widx] += go * xp[xi];
                    gxp[xi] += go * wp[widx];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
  return g;
}

namespace detail {

template <typename T>
void check_separable_pair(const Conv3dParams<T>& temporal, const Conv3dParams<T>& spatial) {
  if (temporal.weight.dim(3) != 1 || temporal.weight.dim(4) != 1) {
    throw std::invalid_argument("separable_conv3d: temporal kernel must be Rx1x1, got " +
                                shape_string(temporal.weight.shape()));
  }
  if (spatial.weight.dim(2) != 1) {
    throw std::invalid_argument("separable_conv3d: spatial kernel must be 1xPxQ, got " +
                                shape_string(spatial.weight.shape()));
  }
  if (temporal.out_channels() != spatial.in_channels()) {
    throw std::invalid_argument("separable_conv3d: channel mismatch between stages (" +
                                std::to_string(temporal.out_channels()) + " vs " +
                                std::to_string(spatial.in_channels()) + ")");
  }
}

}  // namespace detail

/// Temporal Rx1x1 convolution followed by a spatial 1xPxQ convolution. The two
/// stages carry independent parameter sets.
template <typename T>
Tensor<T> separable_conv3d_forward(const Tensor<T>& x, const Conv3dParams<T>& temporal,
                                   const Conv3dParams<T>& spatial) {
  detail::check_separable_pair(temporal, spatial);
  return conv3d_forward(conv3d_forward(x, temporal), spatial);
}

template <typename T>
struct SeparableConv3dGrads {
  Tensor<T> grad_x;
  Conv3dGrads<T> temporal;
  Conv3dGrads<T> spatial;
};

template <typename T>
SeparableConv3dGrads<T> separable_conv3d_backward(const Tensor<T>& grad_out, const Tensor<T>& x,
                                                  const Conv3dParams<T>& temporal,
                                                  const Conv3dParams<T>& spatial) {
  detail::check_separable_pair(temporal, spatial);
  const Tensor<T> mid = conv3d_forward(x, temporal);
  SeparableConv3dGrads<T> g;
  g.spatial = conv3d_backward(grad_out, mid, spatial);
  g.temporal = conv3d_backward(g.spatial.grad_x, x, temporal);
  g.grad_x = std::move(g.temporal.grad_x);
  g.temporal.grad_x = Tensor<T>();
  return g;
}

/// Replicates a 2D kernel [C_out, C_in, P, Q] across t temporal planes, each
/// plane rescaled by 1/t, yielding [C_out, C_in, t, P, Q].
template <typename T>
Tensor<T> inflate_2d_to_3d(const Tensor<T>& weight2d, long t) {
  if (weight2d.rank() != 4) {
    throw std::invalid_argument("inflate_2d_to_3d: expected [C_out,C_in,P,Q], got " +
                                shape_string(weight2d.shape()));
  }
  if (t < 1) throw std::invalid_argument("inflate_2d_to_3d: t must be >= 1, got " + std::to_string(t));
  const std::size_t co = weight2d.dim(0), ci = weight2d.dim(1), kh = weight2d.dim(2),
                    kw = weight2d.dim(3);
  const std::size_t tt = static_cast<std::size_t>(t);
  Tensor<T> out({co, ci, tt, kh, kw});
  const T inv = T(1) / static_cast<T>(t);
  const std::size_t plane = kh * kw;
  for (std::size_t oc = 0; oc < co * ci; ++oc) {
    const T* src = weight2d.data() + oc * plane;
    for (std::size_t r = 0; r < tt; ++r) {
      T* dst = out.data() + (oc * tt + r) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * inv;
    }
  }
  return out;
}

enum class PoolKind { Max, Avg };

/// Window pooling with zero padding. Average pooling divides by the full
/// window volume, padded cells included.
template <typename T>
Tensor<T> pool3d(const Tensor<T>& x, PoolKind kind, std::array<std::size_t, 3> kernel,
                 std::array<std::size_t, 3> stride, std::array<std::size_t, 3> padding = {0, 0, 0}) {
  if (x.rank() != 5) {
    throw std::invalid_argument("pool3d: expected input [B,C,T,H,W], got " + shape_string(x.shape()));
  }
  const std::size_t B = x.dim(0), C = x.dim(1), Ti = x.dim(2), Hi = x.dim(3), Wi = x.dim(4);
  const auto [kt, kh, kw] = kernel;
  const auto [st, sh, sw] = stride;
  const auto [pt, ph, pw] = padding;
  const std::size_t To = conv_out_extent(Ti, pt, kt, st, "temporal");
  const std::size_t Ho = conv_out_extent(Hi, ph, kh, sh, "height");
  const std::size_t Wo = conv_out_extent(Wi, pw, kw, sw, "width");
  const T window = static_cast<T>(kt * kh * kw);

  Tensor<T> out({B, C, To, Ho, Wo});
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* xc = x.data() + bc * Ti * Hi * Wi;
    T* oc = out.data() + bc * To * Ho * Wo;
    for (std::size_t to = 0; to < To; ++to)
      for (std::size_t ho = 0; ho < Ho; ++ho)
        for (std::size_t wo = 0; wo < Wo; ++wo) {
          T acc = kind == PoolKind::Max ? -std::numeric_limits<T>::infinity() : T(0);
          for (std::size_t r = 0; r < kt; ++r) {
            const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(to * st + r) -
                                      static_cast<std::ptrdiff_t>(pt);
            for (std::size_t pp = 0; pp < kh; ++pp) {
              const std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(ho * sh + pp) -
                                        static_cast<std::ptrdiff_t>(ph);
              for (std::size_t q = 0; q < kw; ++q) {
                const std::ptrdiff_t wi = static_cast<std::ptrdiff_t>(wo * sw + q) -
                                          static_cast<std::ptrdiff_t>(pw);
                const bool inside = ti >= 0 && ti < static_cast<std::ptrdiff_t>(Ti) && hi >= 0 &&
                                    hi < static_cast<std::ptrdiff_t>(Hi) && wi >= 0 &&
                                    wi < static_cast<std::ptrdiff_t>(Wi);
                const T v = inside ? xc[(static_cast<std::size_t>(ti) * Hi +
                                         static_cast<std::size_t>(hi)) * Wi +
                                        static_cast<std::size_t>(wi)]
                                   : T(0);
                if (kind == PoolKind::Max) {
                  if (v > acc) acc = v;
                } else {
                  acc += v;
                }
              }
            }
          }
          oc[(to * Ho + ho) * Wo + wo] = kind == PoolKind::Avg ? acc / window : acc;
        }
  }
  return out;
}

/// Adjoint of pool3d. Max pooling routes each output gradient to the first
/// maximal cell in scan order (ties toward the lowest index); gradients never
/// flow into padding.
template <typename T>
Tensor<T> pool3d_backward(const Tensor<T>& grad_out, const Tensor<T>& x, PoolKind kind,
                          std::array<std::size_t, 3> kernel, std::array<std::size_t, 3> stride,
                          std::array<std::size_t, 3> padding = {0, 0, 0}) {
  const std::size_t B = x.dim(0), C = x.dim(1), Ti = x.dim(2), Hi = x.dim(3), Wi = x.dim(4);
  const auto [kt, kh, kw] = kernel;
  const auto [st, sh, sw] = stride;
  const auto [pt, ph, pw] = padding;
  const std::size_t To = conv_out_extent(Ti, pt, kt, st, "temporal");
  const std::size_t Ho = conv_out_extent(Hi, ph, kh, sh, "height");
  const std::size_t Wo = conv_out_extent(Wi, pw, kw, sw, "width");
  const Shape expected{B, C, To, Ho, Wo};
  if (grad_out.shape() != expected) {
    throw std::invalid_argument("pool3d_backward: grad shape " + shape_string(grad_out.shape()) +
                                " does not match forward output " + shape_string(expected));
  }
  const T window = static_cast<T>(kt * kh * kw);

  Tensor<T> gx(x.shape());
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* xc = x.data() + bc * Ti * Hi * Wi;
    T* gc = gx.data() + bc * Ti * Hi * Wi;
    const T* go = grad_out.data() + bc * To * Ho * Wo;
    for (std::size_t to = 0; to < To; ++to)
      for (std::size_t ho = 0; ho < Ho; ++ho)
        for (std::size_t wo = 0; wo < Wo; ++wo) {
          const T g = go[(to * Ho + ho) * Wo + wo];
          T best = -std::numeric_limits<T>::infinity();
          std::ptrdiff_t best_idx = -1;
          for (std::size_t r = 0; r < kt; ++r) {
            const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(to * st + r) -
                                      static_cast<std::ptrdiff_t>(pt);
            for (std::size_t pp = 0; pp < kh; ++pp) {
              const std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(ho * sh + pp) -
                                        static_cast<std::ptrdiff_t>(ph);
              for (std::size_t q = 0; q < kw; ++q) {
                const std::ptrdiff_t wi = static_cast<std::ptrdiff_t>(wo * sw + q) -
                                          static_cast<std::ptrdiff_t>(pw);
                const bool inside = ti >= 0 && ti < static_cast<std::ptrdiff_t>(Ti) && hi >= 0 &&
                                    hi < static_cast<std::ptrdiff_t>(Hi) && wi >= 0 &&
                                    wi < static_cast<std::ptrdiff_t>(Wi);
                if (kind == PoolKind::Avg) {
                  if (inside) {
                    gc[(static_cast<std::size_t>(ti) * Hi + static_cast<std::size_t>(hi)) * Wi +
                       static_cast<std::size_t>(wi)] += g / window;
                  }
                } else {
                  const T v = inside ? xc[(static_cast<std::size_t>(ti) * Hi +
                                           static_cast<std::size_t>(hi)) * Wi +
                                          static_cast<std::size_t>(wi)]
                                     : T(0);
                  if (v > best) {
                    best = v;
                    best_idx = inside ? static_cast<std::ptrdiff_t>(
                                            (static_cast<std::size_t>(ti) * Hi +
                                             static_cast<std::size_t>(hi)) * Wi +
                                            static_cast<std::size_t>(wi))
                                      : -1;
                  }
                }
              }
            }
          }
          if (kind == PoolKind::Max && best_idx >= 0) gc[best_idx] += g;
        }
  }
  return gx;
}

}  // namespace stnl
