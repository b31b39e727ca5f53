#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "stnl/model.hpp"
#include "stnl/tensor.hpp"

namespace stnl {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
};

/// Adam with coupled L2 weight decay: the decay term joins the gradient
/// before the moment updates.
template <typename T>
class Adam {
 public:
  Adam(std::vector<ParamRef<T>> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const ParamRef<T>& p : params_) {
      if (!p.value->same_shape(*p.grad)) {
        throw std::invalid_argument("adam: gradient shape " + shape_string(p.grad->shape()) +
                                    " does not match parameter " + p.name + " " +
                                    shape_string(p.value->shape()));
      }
      m_.emplace_back(p.value->shape());
      v_.emplace_back(p.value->shape());
    }
  }

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  long step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  void step() {
    ++t_;
    const T b1 = static_cast<T>(cfg_.beta1);
    const T b2 = static_cast<T>(cfg_.beta2);
    const T lr = static_cast<T>(cfg_.lr);
    const T eps = static_cast<T>(cfg_.eps);
    const T wd = static_cast<T>(cfg_.weight_decay);
    const T bc1 = T(1) - static_cast<T>(std::pow(cfg_.beta1, static_cast<double>(t_)));
    const T bc2 = T(1) - static_cast<T>(std::pow(cfg_.beta2, static_cast<double>(t_)));

    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<T>& w = *params_[i].value;
      const Tensor<T>& grad = *params_[i].grad;
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (std::size_t j = 0; j < w.numel(); ++j) {
        const T g = grad[j] + wd * w[j];
        m[j] = b1 * m[j] + (T(1) - b1) * g;
        v[j] = b2 * v[j] + (T(1) - b2) * g * g;
        const T m_hat = m[j] / bc1;
        const T v_hat = v[j] / bc2;
        w[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
      }
    }
  }

  /// Moment tensors by parameter, for checkpointing.
  template <typename F>
  void visit_state(F&& f) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      f("optim.m." + params_[i].name, &m_[i]);
      f("optim.v." + params_[i].name, &v_[i]);
    }
  }

  long* step_counter() { return &t_; }

 private:
  std::vector<ParamRef<T>> params_;
  std::vector<Tensor<T>> m_, v_;
  AdamConfig cfg_;
  long t_ = 0;
};

/// Constant learning rate until decay_start_epoch, then exponential decay
/// toward lr0 * decay_rate over the remaining epochs.
struct Schedule {
  double lr0 = 3e-4;
  long decay_start_epoch = 150;
  long total_epochs = 300;
  double decay_rate = 0.001;
};

inline double lr_at(long epoch, const Schedule& s) {
  if (epoch < 0 || epoch >= s.total_epochs) {
    throw std::invalid_argument("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                                std::to_string(s.total_epochs) + ")");
  }
  if (epoch < s.decay_start_epoch) return s.lr0;
  const double span = static_cast<double>(s.total_epochs - s.decay_start_epoch);
  const double frac = static_cast<double>(epoch - s.decay_start_epoch) / span;
  return s.lr0 * std::pow(s.decay_rate, frac);
}

}  // namespace stnl
