#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "stnl/losses.hpp"
#include "stnl/model.hpp"
#include "stnl/nonlocal.hpp"
#include "stnl/tensor.hpp"
#include "stnl/textio.hpp"

namespace stnl {

struct FdStats {
  double max_rel_err = 0.0;
  long checked = 0;
  long skipped = 0;

  void merge(const FdStats& o) {
    max_rel_err = std::max(max_rel_err, o.max_rel_err);
    checked += o.checked;
    skipped += o.skipped;
  }
};

/// Central finite differences over one coordinate buffer, compared against the
/// caller's analytic gradient. Each coordinate is probed at steps h and h/2;
/// coordinates where the two estimates disagree sit on a kink (hinge, max, or
/// activation corner) and are skipped rather than scored, since subgradients
/// are not comparable there.
template <typename F>
void fd_check_buffer(F&& eval, double* buf, std::size_t n, const double* analytic, double step,
                     FdStats& stats) {
  for (std::size_t i = 0; i < n; ++i) {
    const double saved = buf[i];

    buf[i] = saved + step;
    const double f_plus = eval();
    buf[i] = saved - step;
    const double f_minus = eval();
    const double n1 = (f_plus - f_minus) / (2.0 * step);

    buf[i] = saved + 0.5 * step;
    const double f_plus_h = eval();
    buf[i] = saved - 0.5 * step;
    const double f_minus_h = eval();
    const double n2 = (f_plus_h - f_minus_h) / step;

    buf[i] = saved;

    const double agree = std::abs(n1 - n2) / std::max({std::abs(n1), std::abs(n2), 1e-2});
    if (agree > 1e-5) {
      ++stats.skipped;
      continue;
    }
    double rel = std::abs(analytic[i] - n1) /
                 std::max({std::abs(analytic[i]), std::abs(n1), 1e-2});
    if (!std::isfinite(rel)) rel = std::numeric_limits<double>::infinity();
    stats.max_rel_err = std::max(stats.max_rel_err, rel);
    ++stats.checked;
  }
}

struct GradCheckEntry {
  std::string op;
  int cases = 0;
  FdStats stats;
  bool pass = false;
};

struct GradCheckReport {
  double tolerance = 1e-4;
  double step = 1e-5;
  std::uint64_t seed = 0;
  std::vector<GradCheckEntry> entries;

  bool all_pass() const {
    for (const auto& e : entries)
      if (!e.pass) return false;
    return !entries.empty();
  }
};

namespace gradcheck_detail {

// Weighted sum reduces a tensor-valued op to the scalar the FD probe needs.
inline double weighted_sum(const Tensor<double>& t, const Tensor<double>& w) {
  double acc = 0.0;
  for (std::size_t i = 0; i < t.numel(); ++i) acc += t[i] * w[i];
  return acc;
}

inline FdStats check_conv3d(Rng& rng, double step) {
  const std::size_t b = 1 + rng.uniform_int(2);
  const std::size_t ci = 1 + rng.uniform_int(2), co = 1 + rng.uniform_int(2);
  const std::size_t ti = 2 + rng.uniform_int(3), hi = 2 + rng.uniform_int(4), wi = 2 + rng.uniform_int(4);
  const std::size_t kt = 1 + rng.uniform_int(std::min<std::size_t>(2, ti - 1) + 1);
  const std::size_t kh = 1 + rng.uniform_int(std::min<std::size_t>(2, hi - 1) + 1);
  const std::size_t kw = 1 + rng.uniform_int(std::min<std::size_t>(2, wi - 1) + 1);
  auto p = make_conv3d<double>(co, ci, kt, kh, kw,
                               {1, 1 + rng.uniform_int(2), 1 + rng.uniform_int(2)},
                               {rng.uniform_int(2), rng.uniform_int(2), rng.uniform_int(2)});
  Tensor<double> x = uniform_tensor<double>({b, ci, ti, hi, wi}, rng);
  p.weight = uniform_tensor<double>(p.weight.shape(), rng);
  p.bias = uniform_tensor<double>(p.bias.shape(), rng);
  const Tensor<double> w = uniform_tensor<double>(conv3d_forward(x, p).shape(), rng);

  const Conv3dGrads<double> g = conv3d_backward(w, x, p);
  auto eval = [&]() { return weighted_sum(conv3d_forward(x, p), w); };
  FdStats st;
  fd_check_buffer(eval, x.data(), x.numel(), g.grad_x.data(), step, st);
  fd_check_buffer(eval, p.weight.data(), p.weight.numel(), g.grad_weight.data(), step, st);
  fd_check_buffer(eval, p.bias.data(), p.bias.numel(), g.grad_bias.data(), step, st);
  return st;
}

inline FdStats check_separable(Rng& rng, double step) {
  const std::size_t b = 1 + rng.uniform_int(2);
  const std::size_t ci = 1 + rng.uniform_int(2), cm = 1 + rng.uniform_int(2), co = 1 + rng.uniform_int(2);
  const std::size_t ti = 3, hi = 4, wi = 4;
  auto temporal = make_conv3d<double>(cm, ci, 3, 1, 1, {1, 1, 1}, {1, 0, 0});
  auto spatial = make_conv3d<double>(co, cm, 1, 3, 3, {1, 1, 1}, {0, 1, 1});
  Tensor<double> x = uniform_tensor<double>({b, ci, ti, hi, wi}, rng);
  temporal.weight = uniform_tensor<double>(temporal.weight.shape(), rng);
  temporal.bias = uniform_tensor<double>(temporal.bias.shape(), rng);
  spatial.weight = uniform_tensor<double>(spatial.weight.shape(), rng);
  spatial.bias = uniform_tensor<double>(spatial.bias.shape(), rng);
  const Tensor<double> w =
      uniform_tensor<double>(separable_conv3d_forward(x, temporal, spatial).shape(), rng);

  const SeparableConv3dGrads<double> g = separable_conv3d_backward(w, x, temporal, spatial);
  auto eval = [&]() { return weighted_sum(separable_conv3d_forward(x, temporal, spatial), w); };
  FdStats st;
  fd_check_buffer(eval, x.data(), x.numel(), g.grad_x.data(), step, st);
  fd_check_buffer(eval, temporal.weight.data(), temporal.weight.numel(), g.temporal.grad_weight.data(), step, st);
  fd_check_buffer(eval, temporal.bias.data(), temporal.bias.numel(), g.temporal.grad_bias.data(), step, st);
  fd_check_buffer(eval, spatial.weight.data(), spatial.weight.numel(), g.spatial.grad_weight.data(), step, st);
  fd_check_buffer(eval, spatial.bias.data(), spatial.bias.numel(), g.spatial.grad_bias.data(), step, st);
  return st;
}

inline FdStats check_pool(PoolKind kind, Rng& rng, double step) {
  const std::size_t b = 1 + rng.uniform_int(2), c = 1 + rng.uniform_int(2);
  const std::size_t ti = 2 + rng.uniform_int(3), hi = 3 + rng.uniform_int(3), wi = 3 + rng.uniform_int(3);
  const std::array<std::size_t, 3> kernel{1 + rng.uniform_int(2), 2, 2};
  const std::array<std::size_t, 3> stride{1, 1 + rng.uniform_int(2), 1 + rng.uniform_int(2)};
  const std::array<std::size_t, 3> padding{0, rng.uniform_int(2), 0};
  Tensor<double> x = uniform_tensor<double>({b, c, ti, hi, wi}, rng);
  const Tensor<double> w = uniform_tensor<double>(pool3d(x, kind, kernel, stride, padding).shape(), rng);

  const Tensor<double> gx = pool3d_backward(w, x, kind, kernel, stride, padding);
  auto eval = [&]() { return weighted_sum(pool3d(x, kind, kernel, stride, padding), w); };
  FdStats st;
  fd_check_buffer(eval, x.data(), x.numel(), gx.data(), step, st);
  return st;
}

inline FdStats check_batchnorm(Rng& rng, double step) {
  const std::size_t b = 2 + rng.uniform_int(2), c = 1 + rng.uniform_int(3), s = 1 + rng.uniform_int(4);
  Tensor<double> x = uniform_tensor<double>({b, c, s}, rng);
  auto p = make_batchnorm<double>(c);
  p.gamma = uniform_tensor<double>({c}, rng, 0.5, 1.5);
  p.beta = uniform_tensor<double>({c}, rng);
  const Tensor<double> w = uniform_tensor<double>(x.shape(), rng);

  BatchNormCache<double> cache;
  batchnorm_forward(x, p, Mode::Train, &cache);
  p.zero_grads();
  const Tensor<double> gx = batchnorm_backward(w, cache, p);
  const Tensor<double> ggamma = p.gamma_grad;
  const Tensor<double> gbeta = p.beta_grad;

  auto eval = [&]() {
    BatchNormParams<double> q = p;  // running stats mutate; loss value does not depend on them
    return weighted_sum(batchnorm_forward(x, q, Mode::Train), w);
  };
  FdStats st;
  fd_check_buffer(eval, x.data(), x.numel(), gx.data(), step, st);
  fd_check_buffer(eval, p.gamma.data(), p.gamma.numel(), ggamma.data(), step, st);
  fd_check_buffer(eval, p.beta.data(), p.beta.numel(), gbeta.data(), step, st);
  return st;
}

inline FdStats check_linear(Rng& rng, double step) {
  const std::size_t b = 1 + rng.uniform_int(4), din = 1 + rng.uniform_int(5), dout = 1 + rng.uniform_int(4);
  Tensor<double> x = uniform_tensor<double>({b, din}, rng);
  auto p = make_linear<double>(dout, din);
  p.weight = uniform_tensor<double>(p.weight.shape(), rng);
  p.bias = uniform_tensor<double>(p.bias.shape(), rng);
  const Tensor<double> w = uniform_tensor<double>({b, dout}, rng);

  const LinearGrads<double> g = linear_backward(w, x, p);
  auto eval = [&]() { return weighted_sum(linear_forward(x, p), w); };
  FdStats st;
  fd_check_buffer(eval, x.data(), x.numel(), g.grad_x.data(), step, st);
  fd_check_buffer(eval, p.weight.data(), p.weight.numel(), g.grad_weight.data(), step, st);
  fd_check_buffer(eval, p.bias.data(), p.bias.numel(), g.grad_bias.data(), step, st);
  return st;
}

inline FdStats check_dropout(Rng& rng, double step) {
  const std::size_t n = 16 + rng.uniform_int(16);
  const std::uint64_t mask_seed = rng.next_u64();
  Tensor<double> x = uniform_tensor<double>({n}, rng);
  const Tensor<double> w = uniform_tensor<double>({n}, rng);

  Rng mask_rng(mask_seed);
  const auto [out, mask] = dropout(x, 0.5, mask_rng, Mode::Train);
  const Tensor<double> gx = mul(w, mask);
  auto eval = [&]() {
    Rng r(mask_seed);  // same mask on every probe
    return weighted_sum(dropout(x, 0.5, r, Mode::Train).first, w);
  };
  FdStats st;
  fd_check_buffer(eval, x.data(), x.numel(), gx.data(), step, st);
  return st;
}

inline FdStats check_nonlocal(Rng& rng, double step) {
  const std::size_t b = 1 + rng.uniform_int(2), c = 4;
  const std::size_t t = 1 + rng.uniform_int(2), h = 2, w = 2;
  Rng init_rng(rng.next_u64());
  NonLocalParams<double> p = make_nonlocal<double>(c, init_rng);
  // Random scale/shift so the BatchNorm path carries signal.
  p.wz_bn.gamma = uniform_tensor<double>({c}, rng, 0.5, 1.5);
  p.wz_bn.beta = uniform_tensor<double>({c}, rng);
  Tensor<double> x = uniform_tensor<double>({b, c, t, h, w}, rng);
  const Tensor<double> wv = uniform_tensor<double>(x.shape(), rng);

  NonLocalCache<double> cache;
  nonlocal_forward(x, p, Mode::Train, &cache);
  p.zero_grads();
  const Tensor<double> gx = nonlocal_backward(wv, x, p, cache);

  auto eval = [&]() {
    NonLocalParams<double> q = p;
    return weighted_sum(nonlocal_forward(x, q, Mode::Train), wv);
  };
  FdStats st;
  fd_check_buffer(eval, x.data(), x.numel(), gx.data(), step, st);
  fd_check_buffer(eval, p.theta.weight.data(), p.theta.weight.numel(), p.theta.weight_grad.data(), step, st);
  fd_check_buffer(eval, p.theta.bias.data(), p.theta.bias.numel(), p.theta.bias_grad.data(), step, st);
  fd_check_buffer(eval, p.phi.weight.data(), p.phi.weight.numel(), p.phi.weight_grad.data(), step, st);
  fd_check_buffer(eval, p.phi.bias.data(), p.phi.bias.numel(), p.phi.bias_grad.data(), step, st);
  fd_check_buffer(eval, p.g.weight.data(), p.g.weight.numel(), p.g.weight_grad.data(), step, st);
  fd_check_buffer(eval, p.g.bias.data(), p.g.bias.numel(), p.g.bias_grad.data(), step, st);
  fd_check_buffer(eval, p.wz.weight.data(), p.wz.weight.numel(), p.wz.weight_grad.data(), step, st);
  fd_check_buffer(eval, p.wz_bn.gamma.data(), p.wz_bn.gamma.numel(), p.wz_bn.gamma_grad.data(), step, st);
  fd_check_buffer(eval, p.wz_bn.beta.data(), p.wz_bn.beta.numel(), p.wz_bn.beta_grad.data(), step, st);
  return st;
}

inline FdStats check_triplet(Rng& rng, double step) {
  const std::size_t p = 2 + rng.uniform_int(2), k = 2 + rng.uniform_int(2), d = 3 + rng.uniform_int(3);
  Batch<double> batch;
  batch.features = uniform_tensor<double>({p * k, d}, rng);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < k; ++j) batch.labels.push_back(static_cast<int>(i));
  LossConfig cfg;
  cfg.margin = 0.3;

  const TripletResult<double> res = triplet_batch_hard(batch, cfg);
  auto eval = [&]() { return static_cast<double>(triplet_batch_hard(batch, cfg).loss); };
  FdStats st;
  fd_check_buffer(eval, batch.features.data(), batch.features.numel(), res.grad_features.data(),
                  step, st);
  return st;
}

inline FdStats check_label_smoothed_ce(Rng& rng, double step) {
  const std::size_t b = 2 + rng.uniform_int(4), n = 3 + rng.uniform_int(4);
  Batch<double> batch;
  Tensor<double> logits = uniform_tensor<double>({b, n}, rng, -2.0, 2.0);
  std::vector<int> labels;
  for (std::size_t i = 0; i < b; ++i) labels.push_back(static_cast<int>(rng.uniform_int(n)));
  LossConfig cfg;
  cfg.epsilon = 0.1;

  const CrossEntropyResult<double> res = label_smoothed_ce(logits, labels, cfg);
  auto eval = [&]() { return static_cast<double>(label_smoothed_ce(logits, labels, cfg).loss); };
  FdStats st;
  fd_check_buffer(eval, logits.data(), logits.numel(), res.grad_logits.data(), step, st);
  return st;
}

inline FdStats check_model(Rng& rng, double step) {
  ModelConfig cfg;
  cfg.in_channels = 2;
  cfg.stem_channels = 4;
  cfg.stem_temporal_kernel = 3;
  cfg.stem_spatial_kernel = 3;
  cfg.stem_spatial_stride = 1;
  cfg.stages = {{1, 4, 3, 3, 2, {0}}};
  cfg.embedding_dim = 6;
  cfg.n_identities = 3;
  cfg.dropout_rate = 0.0;  // keep the probe deterministic

  Rng build_rng(rng.next_u64());
  TrackEncoder<double> enc = TrackEncoder<double>::build(cfg, build_rng);
  enc.set_mode(Mode::Train);

  const Tensor<double> tracks = uniform_tensor<double>({4, 2, 2, 4, 4}, rng);
  const std::vector<int> labels{0, 0, 1, 1};
  LossConfig loss_cfg;
  loss_cfg.n_classes = cfg.n_identities;

  auto loss_of = [&]() {
    auto out = enc.forward(tracks);
    Batch<double> batch{std::move(out.features), labels, std::move(out.logits)};
    return static_cast<double>(total_loss(batch, loss_cfg).loss);
  };

  auto out = enc.forward(tracks);
  Batch<double> batch{out.features, labels, out.logits};
  const TotalLossResult<double> l = total_loss(batch, loss_cfg);
  enc.zero_grads();
  enc.backward(l.grad_features, l.grad_logits);

  std::vector<ParamRef<double>> params = collect_params(enc);
  FdStats st;
  for (int probe = 0; probe < 10; ++probe) {
    const std::size_t pi = rng.uniform_int(params.size());
    const std::size_t j = rng.uniform_int(params[pi].value->numel());
    fd_check_buffer(loss_of, params[pi].value->data() + j, 1, params[pi].grad->data() + j, step, st);
  }
  return st;
}

}  // namespace gradcheck_detail

inline std::vector<std::string> gradcheck_op_names() {
  return {"conv3d",  "separable_conv3d", "pool3d_max", "pool3d_avg",        "batchnorm", "linear",
          "dropout", "nonlocal",         "triplet",    "label_smoothed_ce", "model"};
}

/// Finite-difference verification of every backward pass on randomized small
/// shapes. Deterministic for a given seed.
inline GradCheckReport gradcheck_suite(double tolerance, std::uint64_t seed,
                                       const std::vector<std::string>& ops = gradcheck_op_names(),
                                       int cases_per_op = 20, double step = 1e-5) {
  using namespace gradcheck_detail;
  GradCheckReport report;
  report.tolerance = tolerance;
  report.step = step;
  report.seed = seed;

  const std::vector<std::string> known = gradcheck_op_names();
  for (const std::string& op : ops) {
    if (std::find(known.begin(), known.end(), op) == known.end()) {
      throw std::invalid_argument("gradcheck: unknown op \"" + op + "\"");
    }
  }

  Rng master(seed);
  for (const std::string& op : known) {
    Rng op_rng = master.fork();  // per-op stream is stable however ops are filtered
    if (std::find(ops.begin(), ops.end(), op) == ops.end()) continue;
    GradCheckEntry entry;
    entry.op = op;
    entry.cases = cases_per_op;
    for (int c = 0; c < cases_per_op; ++c) {
      Rng case_rng = op_rng.fork();
      FdStats st;
      if (op == "conv3d") st = check_conv3d(case_rng, step);
      else if (op == "separable_conv3d") st = check_separable(case_rng, step);
      else if (op == "pool3d_max") st = check_pool(PoolKind::Max, case_rng, step);
      else if (op == "pool3d_avg") st = check_pool(PoolKind::Avg, case_rng, step);
      else if (op == "batchnorm") st = check_batchnorm(case_rng, step);
      else if (op == "linear") st = check_linear(case_rng, step);
      else if (op == "dropout") st = check_dropout(case_rng, step);
      else if (op == "nonlocal") st = check_nonlocal(case_rng, step);
      else if (op == "triplet") st = check_triplet(case_rng, step);
      else if (op == "label_smoothed_ce") st = check_label_smoothed_ce(case_rng, step);
      else if (op == "model") st = check_model(case_rng, step);
      entry.stats.merge(st);
    }
    entry.pass = entry.stats.max_rel_err < tolerance && entry.stats.checked > 0;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

inline std::string format_gradcheck_report(const GradCheckReport& report) {
  std::string out = "op,cases,checked,skipped,max_rel_err,status\n";
  for (const GradCheckEntry& e : report.entries) {
    out += e.op + "," + std::to_string(e.cases) + "," + std::to_string(e.stats.checked) + "," +
           std::to_string(e.stats.skipped) + "," + format_g9(e.stats.max_rel_err) + "," +
           (e.pass ? "pass" : "FAIL") + "\n";
  }
  out += std::string("result,") + (report.all_pass() ? "pass" : "FAIL") + ",tolerance," +
         format_g9(report.tolerance) + ",seed," + std::to_string(report.seed) + "\n";
  return out;
}

}  // namespace stnl
