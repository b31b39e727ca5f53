#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stnl/conv3d.hpp"
#include "stnl/layers.hpp"
#include "stnl/nonlocal.hpp"
#include "stnl/tensor.hpp"

namespace stnl {

struct StageConfig {
  std::size_t n_blocks = 2;
  std::size_t channels = 16;
  std::size_t temporal_kernel = 3;
  std::size_t spatial_kernel = 3;
  std::size_t spatial_stride = 2;
  std::vector<std::size_t> nonlocal_after;  // 0-based block indices
};

struct ModelConfig {
  std::size_t in_channels = 3;
  std::size_t stem_channels = 8;
  std::size_t stem_temporal_kernel = 3;
  std::size_t stem_spatial_kernel = 7;
  std::size_t stem_spatial_stride = 2;
  std::vector<StageConfig> stages;
  std::size_t embedding_dim = 32;
  std::size_t n_identities = 8;
  double leaky_relu_alpha = 0.1;
  double dropout_rate = 0.5;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;
};

/// Two stages of two separable residual blocks at 16/32 channels, one
/// attention block in each stage, on top of an 8-channel separable stem.
inline ModelConfig default_model_config() {
  ModelConfig cfg;
  cfg.stages = {
      {2, 16, 3, 3, 2, {0}},
      {2, 32, 3, 3, 2, {0}},
  };
  return cfg;
}

inline void validate_model_config(const ModelConfig& cfg) {
  if (cfg.in_channels < 1) throw std::invalid_argument("model: in_channels must be >= 1");
  if (cfg.stem_channels < 1) throw std::invalid_argument("model: stem_channels must be >= 1");
  if (cfg.embedding_dim < 1) throw std::invalid_argument("model: embedding_dim must be >= 1");
  if (cfg.n_identities < 2) throw std::invalid_argument("model: n_identities must be >= 2");
  if (cfg.stages.empty()) throw std::invalid_argument("model: at least one stage required");
  if (!(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0))
    throw std::invalid_argument("model: dropout_rate must be in [0,1)");
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const StageConfig& st = cfg.stages[i];
    if (st.n_blocks < 1) throw std::invalid_argument("model: stage " + std::to_string(i) + " has no blocks");
    if (st.channels < 1 || st.temporal_kernel < 1 || st.spatial_kernel < 1 || st.spatial_stride < 1)
      throw std::invalid_argument("model: stage " + std::to_string(i) + " has a non-positive extent");
    for (std::size_t idx : st.nonlocal_after) {
      if (idx >= st.n_blocks) {
        throw std::invalid_argument("model: stage " + std::to_string(i) + " nonlocal index " +
                                    std::to_string(idx) + " out of range (blocks: " +
                                    std::to_string(st.n_blocks) + ")");
      }
    }
    if (!st.nonlocal_after.empty() && st.channels % 2 != 0) {
      throw std::invalid_argument("model: stage " + std::to_string(i) +
                                  " needs an even channel count for its non-local block");
    }
  }
}

// ---- layer wrappers with activation caches ------------------------------------

namespace detail {

inline void require_cache(bool have, const char* what) {
  if (!have) throw std::logic_error(std::string(what) + ": backward before forward");
}

template <typename T>
T he_std(std::size_t fan_in) {
  return std::sqrt(T(2) / static_cast<T>(fan_in));
}

}  // namespace detail

template <typename T>
struct Conv3dLayer {
  Conv3dParams<T> p;
  Tensor<T> cached_x;
  bool have_cache = false;

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (mode == Mode::Train) {
      cached_x = x;
      have_cache = true;
    }
    return conv3d_forward(x, p);
  }
  Tensor<T> backward(const Tensor<T>& grad_out) {
    detail::require_cache(have_cache, "conv3d");
    Conv3dGrads<T> g = conv3d_backward(grad_out, cached_x, p);
    p.ensure_grads();
    add_inplace(p.weight_grad, g.grad_weight);
    if (p.has_bias) add_inplace(p.bias_grad, g.grad_bias);
    return std::move(g.grad_x);
  }
};

template <typename T>
struct BatchNormLayer {
  BatchNormParams<T> p;
  BatchNormCache<T> cache;
  bool have_cache = false;

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (mode == Mode::Train) {
      have_cache = true;
      return batchnorm_forward(x, p, mode, &cache);
    }
    return batchnorm_forward(x, p, mode);
  }
  Tensor<T> backward(const Tensor<T>& grad_out) {
    detail::require_cache(have_cache, "batchnorm");
    return batchnorm_backward(grad_out, cache, p);
  }
};

template <typename T>
struct LeakyReluLayer {
  T alpha = T(0.1);
  Tensor<T> cached_x;
  bool have_cache = false;

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (mode == Mode::Train) {
      cached_x = x;
      have_cache = true;
    }
    return leaky_relu(x, alpha);
  }
  Tensor<T> backward(const Tensor<T>& grad_out) {
    detail::require_cache(have_cache, "leaky_relu");
    return leaky_relu_backward(grad_out, cached_x, alpha);
  }
};

template <typename T>
struct LinearLayer {
  LinearParams<T> p;
  Tensor<T> cached_x;
  bool have_cache = false;

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (mode == Mode::Train) {
      cached_x = x;
      have_cache = true;
    }
    return linear_forward(x, p);
  }
  Tensor<T> backward(const Tensor<T>& grad_out) {
    detail::require_cache(have_cache, "linear");
    LinearGrads<T> g = linear_backward(grad_out, cached_x, p);
    p.ensure_grads();
    add_inplace(p.weight_grad, g.grad_weight);
    add_inplace(p.bias_grad, g.grad_bias);
    return std::move(g.grad_x);
  }
};

template <typename T>
struct DropoutLayer {
  double rate = 0.5;
  Tensor<T> mask;
  bool have_cache = false;

  Tensor<T> forward(const Tensor<T>& x, Rng& rng, Mode mode) {
    auto [out, m] = dropout(x, rate, rng, mode);
    if (mode == Mode::Train) {
      mask = std::move(m);
      have_cache = true;
    }
    return std::move(out);
  }
  Tensor<T> backward(const Tensor<T>& grad_out) {
    detail::require_cache(have_cache, "dropout");
    return mul(grad_out, mask);
  }
};

template <typename T>
struct GlobalAvgPoolLayer {
  Tensor<T> cached_x;
  bool have_cache = false;

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (mode == Mode::Train) {
      cached_x = x;
      have_cache = true;
    }
    const Tensor<T> pooled = pool3d(x, PoolKind::Avg, {x.dim(2), x.dim(3), x.dim(4)},
                                    {x.dim(2), x.dim(3), x.dim(4)});
    return reshape(pooled, {x.dim(0), x.dim(1)});
  }
  Tensor<T> backward(const Tensor<T>& grad_out) {
    detail::require_cache(have_cache, "global_avg_pool");
    const Tensor<T> g5 = reshape(grad_out, {grad_out.dim(0), grad_out.dim(1), 1, 1, 1});
    return pool3d_backward(g5, cached_x, PoolKind::Avg,
                           {cached_x.dim(2), cached_x.dim(3), cached_x.dim(4)},
                           {cached_x.dim(2), cached_x.dim(3), cached_x.dim(4)});
  }
};

template <typename T>
struct NonLocalLayer {
  NonLocalParams<T> p;
  NonLocalCache<T> cache;
  Tensor<T> cached_x;
  bool have_cache = false;

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (mode == Mode::Train) {
      cached_x = x;
      have_cache = true;
      return nonlocal_forward(x, p, mode, &cache);
    }
    return nonlocal_forward(x, p, mode);
  }
  Tensor<T> backward(const Tensor<T>& grad_out) {
    detail::require_cache(have_cache, "nonlocal");
    return nonlocal_backward(grad_out, cached_x, p, cache);
  }
};

/// Temporal-then-spatial separable residual block with BatchNorm after each
/// convolution and a projected shortcut when shape changes.
template <typename T>
struct ResidualBlock3d {
  Conv3dLayer<T> conv_t;
  BatchNormLayer<T> bn1;
  LeakyReluLayer<T> act1;
  Conv3dLayer<T> conv_s;
  BatchNormLayer<T> bn2;
  bool has_projection = false;
  Conv3dLayer<T> proj;
  BatchNormLayer<T> proj_bn;
  LeakyReluLayer<T> act_out;

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    Tensor<T> m = act1.forward(bn1.forward(conv_t.forward(x, mode), mode), mode);
    m = bn2.forward(conv_s.forward(m, mode), mode);
    Tensor<T> shortcut = has_projection ? proj_bn.forward(proj.forward(x, mode), mode) : x;
    return act_out.forward(add(m, shortcut), mode);
  }
  Tensor<T> backward(const Tensor<T>& grad_out) {
    const Tensor<T> g = act_out.backward(grad_out);
    Tensor<T> gm = conv_t.backward(bn1.backward(act1.backward(
        conv_s.backward(bn2.backward(g)))));
    if (has_projection) {
      add_inplace(gm, proj.backward(proj_bn.backward(g)));
    } else {
      add_inplace(gm, g);
    }
    return gm;
  }
};

/// Reference to one trainable tensor inside a model, with its gradient slot.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

/// Track encoder: separable stem, residual stages with interleaved non-local
/// blocks, global average pooling, and a bottleneck head producing both the
/// retrieval embedding and the identity logits.
template <typename T>
class TrackEncoder {
 public:
  struct Output {
    Tensor<T> features;  // [B, embedding_dim]
    Tensor<T> logits;    // [B, n_identities]
  };

  static TrackEncoder build(const ModelConfig& cfg, Rng rng) {
    validate_model_config(cfg);
    TrackEncoder enc;
    enc.cfg_ = cfg;
    const T alpha = static_cast<T>(cfg.leaky_relu_alpha);
    const T bn_m = static_cast<T>(cfg.bn_momentum);
    const T bn_e = static_cast<T>(cfg.bn_epsilon);

    auto init_conv = [&rng](Conv3dParams<T>& p) {
      const std::size_t fan_in = p.in_channels() * p.weight.dim(2) * p.weight.dim(3) * p.weight.dim(4);
      const T std = detail::he_std<T>(fan_in);
      for (std::size_t i = 0; i < p.weight.numel(); ++i)
        p.weight[i] = static_cast<T>(rng.gauss()) * std;
    };
    auto init_linear = [&rng](LinearParams<T>& p) {
      const T std = detail::he_std<T>(p.in_features());
      for (std::size_t i = 0; i < p.weight.numel(); ++i)
        p.weight[i] = static_cast<T>(rng.gauss()) * std;
    };

    const std::size_t tk = cfg.stem_temporal_kernel;
    const std::size_t sk = cfg.stem_spatial_kernel;
    enc.stem_conv_t_.p = make_conv3d<T>(cfg.stem_channels, cfg.in_channels, tk, 1, 1, {1, 1, 1},
                                        {tk / 2, 0, 0}, /*has_bias=*/false);
    enc.stem_bn_t_.p = make_batchnorm<T>(cfg.stem_channels, bn_m, bn_e);
    enc.stem_act_t_.alpha = alpha;
    enc.stem_conv_s_.p = make_conv3d<T>(cfg.stem_channels, cfg.stem_channels, 1, sk, sk,
                                        {1, cfg.stem_spatial_stride, cfg.stem_spatial_stride},
                                        {0, sk / 2, sk / 2}, /*has_bias=*/false);
    enc.stem_bn_s_.p = make_batchnorm<T>(cfg.stem_channels, bn_m, bn_e);
    enc.stem_act_s_.alpha = alpha;
    init_conv(enc.stem_conv_t_.p);
    init_conv(enc.stem_conv_s_.p);

    std::size_t in_ch = cfg.stem_channels;
    for (const StageConfig& st : cfg.stages) {
      Stage stage;
      for (std::size_t b = 0; b < st.n_blocks; ++b) {
        ResidualBlock3d<T> block;
        const std::size_t stride = b == 0 ? st.spatial_stride : 1;
        const std::size_t block_in = b == 0 ? in_ch : st.channels;
        block.conv_t.p = make_conv3d<T>(st.channels, block_in, st.temporal_kernel, 1, 1, {1, 1, 1},
                                        {st.temporal_kernel / 2, 0, 0}, false);
        block.bn1.p = make_batchnorm<T>(st.channels, bn_m, bn_e);
        block.act1.alpha = alpha;
        block.conv_s.p = make_conv3d<T>(st.channels, st.channels, 1, st.spatial_kernel,
                                        st.spatial_kernel, {1, stride, stride},
                                        {0, st.spatial_kernel / 2, st.spatial_kernel / 2}, false);
        block.bn2.p = make_batchnorm<T>(st.channels, bn_m, bn_e);
        block.act_out.alpha = alpha;
        block.has_projection = stride != 1 || block_in != st.channels;
        if (block.has_projection) {
          block.proj.p = make_conv3d<T>(st.channels, block_in, 1, 1, 1, {1, stride, stride},
                                        {0, 0, 0}, false);
          block.proj_bn.p = make_batchnorm<T>(st.channels, bn_m, bn_e);
        }
        init_conv(block.conv_t.p);
        init_conv(block.conv_s.p);
        if (block.has_projection) init_conv(block.proj.p);
        stage.blocks.push_back(std::move(block));

        const bool wants_nl = std::find(st.nonlocal_after.begin(), st.nonlocal_after.end(), b) !=
                              st.nonlocal_after.end();
        if (wants_nl) {
          NonLocalLayer<T> nl;
          nl.p = make_nonlocal<T>(st.channels, rng, bn_m, bn_e);
          stage.nonlocal.emplace_back(stage.blocks.size() - 1, std::move(nl));
        }
      }
      in_ch = st.channels;
      enc.stages_.push_back(std::move(stage));
    }

    enc.head_fc_.p = make_linear<T>(cfg.embedding_dim, in_ch);
    init_linear(enc.head_fc_.p);
    enc.head_bn_.p = make_batchnorm<T>(cfg.embedding_dim, bn_m, bn_e);
    enc.head_act_.alpha = alpha;
    enc.head_dropout_.rate = cfg.dropout_rate;
    enc.classifier_.p = make_linear<T>(cfg.n_identities, cfg.embedding_dim);
    init_linear(enc.classifier_.p);  // classifier bias stays zero

    enc.dropout_rng_ = Rng(rng.next_u64());
    return enc;
  }

  Output forward(const Tensor<T>& tracks) {
    if (tracks.rank() != 5 || tracks.dim(1) != cfg_.in_channels) {
      throw std::invalid_argument("encoder: expected tracks [B," +
                                  std::to_string(cfg_.in_channels) + ",T,H,W], got " +
                                  shape_string(tracks.shape()));
    }
    const Mode mode = mode_;
    Tensor<T> h = stem_act_t_.forward(stem_bn_t_.forward(stem_conv_t_.forward(tracks, mode), mode), mode);
    h = stem_act_s_.forward(stem_bn_s_.forward(stem_conv_s_.forward(h, mode), mode), mode);

    for (Stage& stage : stages_) {
      for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
        h = stage.blocks[b].forward(h, mode);
        if (nonlocal_enabled_) {
          for (auto& [after, nl] : stage.nonlocal) {
            if (after == b) h = nl.forward(h, mode);
          }
        }
      }
    }

    h = pool_.forward(h, mode);
    h = head_act_.forward(head_bn_.forward(head_fc_.forward(h, mode), mode), mode);
    Output out;
    out.features = h;
    h = head_dropout_.forward(h, dropout_rng_, mode);
    out.logits = classifier_.forward(h, mode);
    if (mode == Mode::Train) have_forward_ = true;
    return out;
  }

  /// Accumulates parameter gradients for the most recent train-mode forward.
  /// grad_features taps the embedding (pre-dropout), grad_logits the
  /// classifier output; either may be all zeros.
  void backward(const Tensor<T>& grad_features, const Tensor<T>& grad_logits) {
    detail::require_cache(have_forward_, "encoder");
    Tensor<T> g = head_dropout_.backward(classifier_.backward(grad_logits));
    add_inplace(g, grad_features);
    g = head_fc_.backward(head_bn_.backward(head_act_.backward(g)));
    g = pool_.backward(g);

    for (std::size_t s = stages_.size(); s-- > 0;) {
      Stage& stage = stages_[s];
      for (std::size_t b = stage.blocks.size(); b-- > 0;) {
        if (nonlocal_enabled_) {
          for (std::size_t n = stage.nonlocal.size(); n-- > 0;) {
            if (stage.nonlocal[n].first == b) g = stage.nonlocal[n].second.backward(g);
          }
        }
        g = stage.blocks[b].backward(g);
      }
    }

    g = stem_conv_s_.backward(stem_bn_s_.backward(stem_act_s_.backward(g)));
    stem_conv_t_.backward(stem_bn_t_.backward(stem_act_t_.backward(g)));
  }

  void set_mode(Mode m) { mode_ = m; }
  Mode mode() const { return mode_; }
  void set_nonlocal_enabled(bool on) { nonlocal_enabled_ = on; }
  const ModelConfig& config() const { return cfg_; }

  /// Trainable parameters in a fixed, documented order.
  template <typename F>
  void visit_params(F&& f) {
    auto conv = [&f](const std::string& prefix, Conv3dLayer<T>& layer) {
      layer.p.ensure_grads();
      f(ParamRef<T>{prefix + ".weight", &layer.p.weight, &layer.p.weight_grad});
      if (layer.p.has_bias) f(ParamRef<T>{prefix + ".bias", &layer.p.bias, &layer.p.bias_grad});
    };
    auto bn = [&f](const std::string& prefix, BatchNormLayer<T>& layer) {
      layer.p.ensure_grads();
      f(ParamRef<T>{prefix + ".gamma", &layer.p.gamma, &layer.p.gamma_grad});
      f(ParamRef<T>{prefix + ".beta", &layer.p.beta, &layer.p.beta_grad});
    };
    auto lin = [&f](const std::string& prefix, LinearLayer<T>& layer) {
      layer.p.ensure_grads();
      f(ParamRef<T>{prefix + ".weight", &layer.p.weight, &layer.p.weight_grad});
      f(ParamRef<T>{prefix + ".bias", &layer.p.bias, &layer.p.bias_grad});
    };
    auto raw_conv = [&f](const std::string& prefix, Conv3dParams<T>& p) {
      p.ensure_grads();
      f(ParamRef<T>{prefix + ".weight", &p.weight, &p.weight_grad});
      if (p.has_bias) f(ParamRef<T>{prefix + ".bias", &p.bias, &p.bias_grad});
    };

    conv("stem.conv_t", stem_conv_t_);
    bn("stem.bn_t", stem_bn_t_);
    conv("stem.conv_s", stem_conv_s_);
    bn("stem.bn_s", stem_bn_s_);
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      Stage& stage = stages_[s];
      const std::string sp = "stage" + std::to_string(s);
      for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
        ResidualBlock3d<T>& blk = stage.blocks[b];
        const std::string bp = sp + ".block" + std::to_string(b);
        conv(bp + ".conv_t", blk.conv_t);
        bn(bp + ".bn1", blk.bn1);
        conv(bp + ".conv_s", blk.conv_s);
        bn(bp + ".bn2", blk.bn2);
        if (blk.has_projection) {
          conv(bp + ".proj", blk.proj);
          bn(bp + ".proj_bn", blk.proj_bn);
        }
      }
      for (auto& [after, nl] : stage.nonlocal) {
        const std::string np = sp + ".nl" + std::to_string(after);
        raw_conv(np + ".theta", nl.p.theta);
        raw_conv(np + ".phi", nl.p.phi);
        raw_conv(np + ".g", nl.p.g);
        raw_conv(np + ".wz", nl.p.wz);
        nl.p.wz_bn.ensure_grads();
        f(ParamRef<T>{np + ".wz_bn.gamma", &nl.p.wz_bn.gamma, &nl.p.wz_bn.gamma_grad});
        f(ParamRef<T>{np + ".wz_bn.beta", &nl.p.wz_bn.beta, &nl.p.wz_bn.beta_grad});
      }
    }
    lin("head.fc", head_fc_);
    bn("head.bn", head_bn_);
    lin("head.classifier", classifier_);
  }

  /// All persistent tensors: trainable parameters plus BatchNorm running
  /// statistics. This is the checkpoint payload.
  template <typename F>
  void visit_state(F&& f) {
    visit_params([&f](const ParamRef<T>& p) { f(p.name, p.value); });
    auto running = [&f](const std::string& prefix, BatchNormParams<T>& p) {
      f(prefix + ".running_mean", &p.running_mean);
      f(prefix + ".running_var", &p.running_var);
    };
    running("stem.bn_t", stem_bn_t_.p);
    running("stem.bn_s", stem_bn_s_.p);
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      Stage& stage = stages_[s];
      const std::string sp = "stage" + std::to_string(s);
      for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
        const std::string bp = sp + ".block" + std::to_string(b);
        running(bp + ".bn1", stage.blocks[b].bn1.p);
        running(bp + ".bn2", stage.blocks[b].bn2.p);
        if (stage.blocks[b].has_projection) running(bp + ".proj_bn", stage.blocks[b].proj_bn.p);
      }
      for (auto& [after, nl] : stage.nonlocal) {
        running(sp + ".nl" + std::to_string(after) + ".wz_bn", nl.p.wz_bn);
      }
    }
    running("head.bn", head_bn_.p);
  }

  void zero_grads() {
    visit_params([](const ParamRef<T>& p) { fill(*p.grad, T(0)); });
  }

  std::size_t param_count() {
    std::size_t n = 0;
    visit_params([&n](const ParamRef<T>& p) { n += p.value->numel(); });
    return n;
  }

  std::size_t nonlocal_block_count() const {
    std::size_t n = 0;
    for (const Stage& s : stages_) n += s.nonlocal.size();
    return n;
  }

  /// Attention maps of every non-local block for the given tracks, in stage
  /// order, one [B, N, N] tensor per block. Runs in eval mode.
  std::vector<std::pair<std::string, Tensor<T>>> attention_maps(const Tensor<T>& tracks) {
    const Mode saved = mode_;
    mode_ = Mode::Eval;
    std::vector<std::pair<std::string, Tensor<T>>> maps;
    Tensor<T> h = stem_act_t_.forward(stem_bn_t_.forward(stem_conv_t_.forward(tracks, mode_), mode_), mode_);
    h = stem_act_s_.forward(stem_bn_s_.forward(stem_conv_s_.forward(h, mode_), mode_), mode_);
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      Stage& stage = stages_[s];
      for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
        h = stage.blocks[b].forward(h, mode_);
        if (nonlocal_enabled_) {
          for (auto& [after, nl] : stage.nonlocal) {
            if (after == b) {
              maps.emplace_back("stage" + std::to_string(s) + ".nl" + std::to_string(after),
                                attention_map(h, nl.p));
              h = nl.forward(h, mode_);
            }
          }
        }
      }
    }
    mode_ = saved;
    return maps;
  }

 private:
  struct Stage {
    std::vector<ResidualBlock3d<T>> blocks;
    std::vector<std::pair<std::size_t, NonLocalLayer<T>>> nonlocal;  // (block index, layer)
  };

  ModelConfig cfg_;
  Conv3dLayer<T> stem_conv_t_;
  BatchNormLayer<T> stem_bn_t_;
  LeakyReluLayer<T> stem_act_t_;
  Conv3dLayer<T> stem_conv_s_;
  BatchNormLayer<T> stem_bn_s_;
  LeakyReluLayer<T> stem_act_s_;
  std::vector<Stage> stages_;
  GlobalAvgPoolLayer<T> pool_;
  LinearLayer<T> head_fc_;
  BatchNormLayer<T> head_bn_;
  LeakyReluLayer<T> head_act_;
  DropoutLayer<T> head_dropout_;
  LinearLayer<T> classifier_;
  Rng dropout_rng_{0};
  Mode mode_ = Mode::Train;
  bool nonlocal_enabled_ = true;
  bool have_forward_ = false;
};

template <typename T>
std::vector<ParamRef<T>> collect_params(TrackEncoder<T>& enc) {
  std::vector<ParamRef<T>> out;
  enc.visit_params([&out](const ParamRef<T>& p) { out.push_back(p); });
  return out;
}

/// Eval-mode embeddings for a stack of tracks [n, C, T, H, W]; rows are
/// independent of batch composition. An empty stack yields a [0, d] result.
template <typename T>
Tensor<T> extract_features(TrackEncoder<T>& enc, const Tensor<T>& tracks) {
  if (tracks.rank() != 5) {
    throw std::invalid_argument("extract_features: expected [n,C,T,H,W], got " +
                                shape_string(tracks.shape()));
  }
  if (tracks.dim(0) == 0) {
    return Tensor<T>({0, enc.config().embedding_dim});
  }
  const Mode saved = enc.mode();
  enc.set_mode(Mode::Eval);
  Tensor<T> features = enc.forward(tracks).features;
  enc.set_mode(saved);
  return features;
}

}  // namespace stnl
