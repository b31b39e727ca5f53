#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "stnl/tensor.hpp"

namespace stnl {

/// A P*K metric-learning batch: feature rows, one identity label per row, and
/// optionally the classifier logits for the same rows.
template <typename T>
struct Batch {
  Tensor<T> features;          // [P*K, d]
  std::vector<int> labels;     // identity per row
  std::optional<Tensor<T>> logits;  // [P*K, n_classes]
};

enum class TripletReduction { Mean, Sum };

struct LossConfig {
  double margin = 0.3;
  double epsilon = 0.1;
  std::size_t n_classes = 0;
  TripletReduction triplet_reduction = TripletReduction::Mean;
};

/// Checks the P-identities-times-K-rows structure. Returns {P, K}.
template <typename T>
std::pair<std::size_t, std::size_t> check_pk_batch(const Batch<T>& batch) {
  const std::size_t b = batch.features.dim(0);
  if (batch.labels.size() != b) {
    throw std::invalid_argument("batch: " + std::to_string(batch.labels.size()) + " labels for " +
                                std::to_string(b) + " feature rows");
  }
  std::map<int, std::size_t> counts;
  for (int id : batch.labels) ++counts[id];
  const std::size_t p = counts.size();
  if (p < 2) throw std::invalid_argument("batch: need at least 2 identities, got " + std::to_string(p));
  const std::size_t k = counts.begin()->second;
  for (const auto& [id, c] : counts) {
    if (c != k) {
      throw std::invalid_argument("batch: identity " + std::to_string(id) + " appears " +
                                  std::to_string(c) + " times, expected " + std::to_string(k));
    }
  }
  if (k < 2) throw std::invalid_argument("batch: need at least 2 rows per identity, got " + std::to_string(k));
  return {p, k};
}

/// Non-squared Euclidean distances between all row pairs. The diagonal is
/// exactly zero and the matrix is exactly symmetric.
template <typename T>
Tensor<T> pairwise_distances(const Tensor<T>& f) {
  if (f.rank() != 2) {
    throw std::invalid_argument("pairwise_distances: expected [B,d], got " + shape_string(f.shape()));
  }
  const std::size_t b = f.dim(0), d = f.dim(1);
  Tensor<T> dist({b, b});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = i + 1; j < b; ++j) {
      T sq = T(0);
      const T* fi = f.data() + i * d;
      const T* fj = f.data() + j * d;
      for (std::size_t k = 0; k < d; ++k) {
        const T diff = fi[k] - fj[k];
        sq += diff * diff;
      }
      const T v = std::sqrt(sq);
      dist(i, j) = v;
      dist(j, i) = v;
    }
  }
  return dist;
}

template <typename T>
struct TripletResult {
  T loss;
  Tensor<T> grad_features;
  Tensor<T> distances;  // the [B,B] matrix the selection used
};

/// Batch-hard triplet loss. Per anchor, a hinge on margin plus the farthest
/// same-identity distance minus the nearest different-identity distance. The
/// anchor itself is excluded from its positive set; selection ties break
/// toward the lowest row index, and the hinge subgradient at exactly zero is
/// zero.
template <typename T>
TripletResult<T> triplet_batch_hard(const Batch<T>& batch, const LossConfig& cfg) {
  check_pk_batch(batch);
  if (cfg.margin < 0) throw std::invalid_argument("triplet: margin must be >= 0");
  const std::size_t b = batch.features.dim(0), d = batch.features.dim(1);
  const T margin = static_cast<T>(cfg.margin);

  TripletResult<T> res;
  res.distances = pairwise_distances(batch.features);
  res.grad_features = Tensor<T>({b, d});
  const Tensor<T>& dist = res.distances;

  T total = T(0);
  const T reduction = cfg.triplet_reduction == TripletReduction::Mean ? T(1) / static_cast<T>(b) : T(1);

  for (std::size_t a = 0; a < b; ++a) {
    std::ptrdiff_t hardest_pos = -1, hardest_neg = -1;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == a) continue;
      if (batch.labels[j] == batch.labels[a]) {
        if (hardest_pos < 0 || dist(a, j) > dist(a, static_cast<std::size_t>(hardest_pos)))
          hardest_pos = static_cast<std::ptrdiff_t>(j);
      } else {
        if (hardest_neg < 0 || dist(a, j) < dist(a, static_cast<std::size_t>(hardest_neg)))
          hardest_neg = static_cast<std::ptrdiff_t>(j);
      }
    }
    const std::size_t p = static_cast<std::size_t>(hardest_pos);
    const std::size_t n = static_cast<std::size_t>(hardest_neg);
    const T hinge = margin + dist(a, p) - dist(a, n);
    if (hinge <= T(0)) continue;
    total += hinge;

    // d D(a,j) / d f_a = (f_a - f_j) / D(a,j); zero subgradient at D = 0.
    const T* fa = batch.features.data() + a * d;
    const T* fp = batch.features.data() + p * d;
    const T* fn = batch.features.data() + n * d;
    T* ga = res.grad_features.data() + a * d;
    T* gp = res.grad_features.data() + p * d;
    T* gn = res.grad_features.data() + n * d;
    if (dist(a, p) > T(0)) {
      const T inv = reduction / dist(a, p);
      for (std::size_t k = 0; k < d; ++k) {
        const T diff = (fa[k] - fp[k]) * inv;
        ga[k] += diff;
        gp[k] -= diff;
      }
    }
    if (dist(a, n) > T(0)) {
      const T inv = reduction / dist(a, n);
      for (std::size_t k = 0; k < d; ++k) {
        const T diff = (fa[k] - fn[k]) * inv;
        ga[k] -= diff;
        gn[k] += diff;
      }
    }
  }
  res.loss = cfg.triplet_reduction == TripletReduction::Mean ? total / static_cast<T>(b) : total;
  return res;
}

template <typename T>
struct CrossEntropyResult {
  T loss;
  Tensor<T> grad_logits;
};

/// Softmax cross-entropy with label smoothing: the one-hot target is mixed
/// with a uniform distribution of weight epsilon. epsilon = 0 recovers the
/// plain cross-entropy exactly. Probabilities come from a max-shifted
/// log-softmax, so large logits stay finite.
template <typename T>
CrossEntropyResult<T> label_smoothed_ce(const Tensor<T>& logits, const std::vector<int>& labels,
                                        const LossConfig& cfg) {
  if (logits.rank() != 2) {
    throw std::invalid_argument("label_smoothed_ce: expected [B,N] logits, got " +
                                shape_string(logits.shape()));
  }
  const std::size_t b = logits.dim(0), n = logits.dim(1);
  if (labels.size() != b) {
    throw std::invalid_argument("label_smoothed_ce: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(b) + " logit rows");
  }
  if (!(cfg.epsilon >= 0.0 && cfg.epsilon < 1.0)) {
    throw std::invalid_argument("label_smoothed_ce: epsilon must be in [0,1)");
  }
  const T eps = static_cast<T>(cfg.epsilon);

  CrossEntropyResult<T> res;
  res.grad_logits = Tensor<T>({b, n});
  T total = T(0);

  std::vector<T> q(n);
  for (std::size_t i = 0; i < b; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= n) {
      throw std::invalid_argument("label_smoothed_ce: label " + std::to_string(label) +
                                  " out of range [0, " + std::to_string(n) + ")");
    }
    const T* row = logits.data() + i * n;
    T mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    T denom = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      q[j] = std::exp(row[j] - mx);
      denom += q[j];
    }
    for (std::size_t j = 0; j < n; ++j) q[j] /= denom;

    const std::size_t y = static_cast<std::size_t>(label);
    const T smoothed = (T(1) - eps) * q[y] + eps / static_cast<T>(n);
    total += -std::log(smoothed);

    // dL/dl_k = -(1/B) (1-eps) q_y (delta_ky - q_k) / smoothed
    const T coef = -(T(1) - eps) * q[y] / (smoothed * static_cast<T>(b));
    T* grow = res.grad_logits.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) grow[j] = coef * ((j == y ? T(1) : T(0)) - q[j]);
  }
  res.loss = total / static_cast<T>(b);
  return res;
}

template <typename T>
struct TotalLossResult {
  T loss;
  T loss_triplet;
  T loss_ce;
  Tensor<T> grad_features;
  Tensor<T> grad_logits;
};

/// Unweighted sum of the smoothed cross-entropy and the batch-hard triplet
/// loss; gradients flow to features and logits independently.
template <typename T>
TotalLossResult<T> total_loss(const Batch<T>& batch, const LossConfig& cfg) {
  if (!batch.logits) {
    throw std::invalid_argument("total_loss: batch carries no logits");
  }
  TotalLossResult<T> res;
  TripletResult<T> trip = triplet_batch_hard(batch, cfg);
  CrossEntropyResult<T> ce = label_smoothed_ce(*batch.logits, batch.labels, cfg);
  res.loss_triplet = trip.loss;
  res.loss_ce = ce.loss;
  res.loss = ce.loss + trip.loss;
  res.grad_features = std::move(trip.grad_features);
  res.grad_logits = std::move(ce.grad_logits);
  return res;
}

}  // namespace stnl
