#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "stnl/losses.hpp"
#include "stnl/model.hpp"
#include "stnl/optim.hpp"
#include "stnl/sampler.hpp"
#include "stnl/textio.hpp"

namespace stnl {

struct TrainHistoryRow {
  long step = 0;
  long epoch = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_triplet = 0.0;
  double loss_ce = 0.0;
};

template <typename T>
struct TrainResult {
  TrackEncoder<T> encoder;
  std::vector<TrainHistoryRow> history;
};

inline std::string history_to_csv(const std::vector<TrainHistoryRow>& rows) {
  std::string out = "step,epoch,lr,loss_total,loss_triplet,loss_ce\n";
  for (const TrainHistoryRow& r : rows) {
    out += std::to_string(r.step) + "," + std::to_string(r.epoch) + "," + format_g9(r.lr) + "," +
           format_g9(r.loss_total) + "," + format_g9(r.loss_triplet) + "," + format_g9(r.loss_ce) +
           "\n";
  }
  return out;
}

/// sample -> forward -> loss -> backward -> Adam, `steps` times. One epoch is
/// one pass over all identities in P-sized groups; the epoch index feeds the
/// learning-rate schedule and is clamped to its final epoch if training runs
/// longer. Deterministic given the incoming generator state.
template <typename T>
TrainResult<T> train(const TrackDataset<T>& ds, const ModelConfig& model_cfg,
                     const SamplerConfig& sampler_cfg, const Schedule& schedule,
                     const LossConfig& loss_cfg, const AdamConfig& adam_cfg, long steps, Rng& rng) {
  validate_sampler_config(sampler_cfg);
  if (steps < 0) throw std::invalid_argument("train: steps must be >= 0");

  Rng build_rng = rng.fork();
  Rng sample_rng = rng.fork();

  TrainResult<T> res;
  res.encoder = TrackEncoder<T>::build(model_cfg, build_rng);
  res.encoder.set_mode(Mode::Train);

  LossConfig loss = loss_cfg;
  loss.n_classes = model_cfg.n_identities;

  Adam<T> adam(collect_params(res.encoder), adam_cfg);

  const long epoch_len = static_cast<long>(
      (ds.n_identities() + sampler_cfg.p - 1) / sampler_cfg.p);

  for (long step = 0; step < steps; ++step) {
    const long epoch = std::min(step / epoch_len, schedule.total_epochs - 1);
    const double lr = lr_at(epoch, schedule);

    TrackBatch<T> tb = sample_batch(ds, sampler_cfg, sample_rng);
    typename TrackEncoder<T>::Output out = res.encoder.forward(tb.tracks);

    Batch<T> batch;
    batch.features = std::move(out.features);
    batch.labels = tb.labels;
    batch.logits = std::move(out.logits);
    TotalLossResult<T> l = total_loss(batch, loss);

    res.encoder.zero_grads();
    res.encoder.backward(l.grad_features, l.grad_logits);
    adam.set_lr(lr);
    adam.step();

    res.history.push_back({step, epoch, lr, static_cast<double>(l.loss),
                           static_cast<double>(l.loss_triplet), static_cast<double>(l.loss_ce)});
  }
  res.encoder.set_mode(Mode::Eval);
  return res;
}

}  // namespace stnl
