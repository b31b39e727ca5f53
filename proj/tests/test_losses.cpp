#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "stnl/gradcheck.hpp"
#include "stnl/losses.hpp"
#include "stnl/rng.hpp"

using namespace stnl;

namespace {

Batch<double> random_pk_batch(std::size_t p, std::size_t k, std::size_t d, Rng& rng) {
  Batch<double> batch;
  batch.features = uniform_tensor<double>({p * k, d}, rng);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < k; ++j) batch.labels.push_back(static_cast<int>(i));
  return batch;
}

}  // namespace

TEST(PairwiseDistances, IdenticalRowsGiveZeroMatrix) {
  Tensor<double> f({3, 4});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) f(i, j) = 0.5 * static_cast<double>(j);
  const Tensor<double> d = pairwise_distances(f);
  for (std::size_t i = 0; i < d.numel(); ++i) EXPECT_EQ(d[i], 0.0);
}

TEST(PairwiseDistances, ThreeFourFiveTriangle) {
  Tensor<double> f({2, 2}, {0.0, 0.0, 3.0, 4.0});
  const Tensor<double> d = pairwise_distances(f);
  EXPECT_DOUBLE_EQ(d(0, 1), 5.0);
  EXPECT_DOUBLE_EQ(d(1, 0), 5.0);
  EXPECT_EQ(d(0, 0), 0.0);
}

TEST(PairwiseDistances, MatchesPerPairLoop) {
  Rng rng(1);
  const Tensor<double> f = uniform_tensor<double>({6, 8}, rng);
  const Tensor<double> d = pairwise_distances(f);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      double sq = 0;
      for (std::size_t l = 0; l < 8; ++l) sq += (f(i, l) - f(j, l)) * (f(i, l) - f(j, l));
      EXPECT_NEAR(d(i, j), std::sqrt(sq), 1e-6);
      EXPECT_EQ(d(i, j), d(j, i));
    }
}

TEST(Triplet, AllFeaturesIdentical) {
  Batch<double> batch;
  batch.features = Tensor<double>::full({4, 3}, 0.7);
  batch.labels = {0, 0, 1, 1};
  LossConfig cfg;
  cfg.margin = 0.3;
  const TripletResult<double> res = triplet_batch_hard(batch, cfg);
  EXPECT_DOUBLE_EQ(res.loss, 0.3);  // hardest pos = hardest neg = 0 everywhere
  EXPECT_EQ(sum_all(res.grad_features), 0.0);
}

TEST(Triplet, InactiveHingeGivesZero) {
  // Within-identity distance 0, cross-identity distance m + 1.
  LossConfig cfg;
  cfg.margin = 0.3;
  Batch<double> batch;
  batch.features = Tensor<double>({4, 1}, {0.0, 0.0, 1.3, 1.3});
  batch.labels = {0, 0, 1, 1};
  const TripletResult<double> res = triplet_batch_hard(batch, cfg);
  EXPECT_EQ(res.loss, 0.0);
  EXPECT_EQ(sum_all(res.grad_features), 0.0);
}

TEST(Triplet, MatchesEnumerationOracleExactly) {
  Rng rng(2);
  LossConfig cfg;
  cfg.margin = 0.3;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t p = 2 + rng.uniform_int(3), k = 2 + rng.uniform_int(3),
                      d = 1 + rng.uniform_int(6);
    Batch<double> batch = random_pk_batch(p, k, d, rng);
    const TripletResult<double> res = triplet_batch_hard(batch, cfg);
    const double ref = oracle::triplet_loss(batch.features, batch.labels, 0.3, true);
    EXPECT_EQ(res.loss, ref) << "p=" << p << " k=" << k << " d=" << d;
  }
}

TEST(Triplet, SumReductionMatchesOracle) {
  Rng rng(3);
  LossConfig cfg;
  cfg.margin = 0.2;
  cfg.triplet_reduction = TripletReduction::Sum;
  Batch<double> batch = random_pk_batch(3, 3, 4, rng);
  const TripletResult<double> res = triplet_batch_hard(batch, cfg);
  EXPECT_EQ(res.loss, oracle::triplet_loss(batch.features, batch.labels, 0.2, false));
}

TEST(Triplet, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  LossConfig cfg;
  cfg.margin = 0.3;
  Batch<double> batch = random_pk_batch(3, 3, 4, rng);
  const TripletResult<double> res = triplet_batch_hard(batch, cfg);
  auto eval = [&]() { return triplet_batch_hard(batch, cfg).loss; };
  FdStats st;
  fd_check_buffer(eval, batch.features.data(), batch.features.numel(), res.grad_features.data(),
                  1e-5, st);
  EXPECT_LT(st.max_rel_err, 1e-4);
  EXPECT_GT(st.checked, 0);
}

TEST(Triplet, InvariantUnderWithinIdentityPermutation) {
  Rng rng(5);
  LossConfig cfg;
  Batch<double> batch = random_pk_batch(3, 3, 4, rng);
  const double base = triplet_batch_hard(batch, cfg).loss;

  // Swap two rows of identity 0 (rows 0..2). The summation order over anchors
  // changes, so equality is up to roundoff, not bitwise.
  Batch<double> swapped = batch;
  for (std::size_t l = 0; l < 4; ++l) std::swap(swapped.features(0, l), swapped.features(2, l));
  EXPECT_NEAR(triplet_batch_hard(swapped, cfg).loss, base, 1e-12);
}

TEST(Triplet, RejectsBatchInvariantViolations) {
  LossConfig cfg;
  Batch<double> uneven;
  uneven.features = Tensor<double>({5, 2});
  uneven.labels = {0, 0, 1, 1, 1};
  EXPECT_THROW(triplet_batch_hard(uneven, cfg), std::invalid_argument);

  Batch<double> single_id;
  single_id.features = Tensor<double>({4, 2});
  single_id.labels = {3, 3, 3, 3};
  EXPECT_THROW(triplet_batch_hard(single_id, cfg), std::invalid_argument);

  Batch<double> k1;
  k1.features = Tensor<double>({2, 2});
  k1.labels = {0, 1};
  EXPECT_THROW(triplet_batch_hard(k1, cfg), std::invalid_argument);
}

TEST(LabelSmoothedCe, ConfidentCorrectLogitsApproachZeroLoss) {
  LossConfig cfg;
  cfg.epsilon = 0.0;
  Tensor<double> logits({2, 3});
  logits(0, 0) = 50.0;
  logits(1, 2) = 50.0;
  const auto res = label_smoothed_ce(logits, {0, 2}, cfg);
  EXPECT_NEAR(res.loss, 0.0, 1e-12);
}

TEST(LabelSmoothedCe, UniformLogitsGiveLogNForAnyEpsilon) {
  const Tensor<double> logits({3, 7});
  for (const double eps : {0.0, 0.05, 0.1, 0.5}) {
    LossConfig cfg;
    cfg.epsilon = eps;
    const auto res = label_smoothed_ce(logits, {0, 3, 6}, cfg);
    EXPECT_NEAR(res.loss, std::log(7.0), 1e-12) << "eps=" << eps;
  }
}

TEST(LabelSmoothedCe, MatchesFormulaOracle) {
  Rng rng(6);
  LossConfig cfg;
  cfg.epsilon = 0.1;
  const Tensor<double> logits = uniform_tensor<double>({4, 5}, rng, -2.0, 2.0);
  const std::vector<int> labels{1, 0, 4, 2};
  const auto res = label_smoothed_ce(logits, labels, cfg);
  EXPECT_NEAR(res.loss, oracle::label_smoothed_ce(logits, labels, 0.1), 1e-12);
}

TEST(LabelSmoothedCe, EpsilonZeroReducesToPlainCrossEntropy) {
  Rng rng(7);
  LossConfig cfg;
  cfg.epsilon = 0.0;
  const Tensor<double> logits = uniform_tensor<double>({6, 4}, rng, -3.0, 3.0);
  const std::vector<int> labels{0, 1, 2, 3, 1, 2};
  const auto res = label_smoothed_ce(logits, labels, cfg);

  // Plain cross-entropy: -mean log softmax(true).
  double expected = 0;
  for (std::size_t i = 0; i < 6; ++i) {
    double mx = logits(i, 0);
    for (std::size_t j = 1; j < 4; ++j) mx = std::max(mx, logits(i, j));
    double denom = 0;
    for (std::size_t j = 0; j < 4; ++j) denom += std::exp(logits(i, j) - mx);
    expected += -(logits(i, static_cast<std::size_t>(labels[i])) - mx - std::log(denom));
  }
  expected /= 6.0;
  EXPECT_NEAR(res.loss, expected, 1e-12);
}

TEST(LabelSmoothedCe, ShiftInvariance) {
  Rng rng(8);
  LossConfig cfg;
  cfg.epsilon = 0.1;
  const Tensor<double> logits = uniform_tensor<double>({4, 5}, rng);
  const std::vector<int> labels{0, 1, 2, 3};
  const double base = label_smoothed_ce(logits, labels, cfg).loss;
  Tensor<double> shifted = logits;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) shifted(i, j) += 137.25;
  EXPECT_NEAR(label_smoothed_ce(shifted, labels, cfg).loss, base, 1e-10);
}

TEST(LabelSmoothedCe, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  LossConfig cfg;
  cfg.epsilon = 0.1;
  Tensor<double> logits = uniform_tensor<double>({4, 5}, rng, -2.0, 2.0);
  const std::vector<int> labels{3, 1, 0, 2};
  const auto res = label_smoothed_ce(logits, labels, cfg);
  auto eval = [&]() { return label_smoothed_ce(logits, labels, cfg).loss; };
  FdStats st;
  fd_check_buffer(eval, logits.data(), logits.numel(), res.grad_logits.data(), 1e-5, st);
  EXPECT_LT(st.max_rel_err, 1e-4);
}

TEST(LabelSmoothedCe, RejectsOutOfRangeLabel) {
  LossConfig cfg;
  const Tensor<double> logits({2, 3});
  EXPECT_THROW(label_smoothed_ce(logits, {0, 3}, cfg), std::invalid_argument);
  EXPECT_THROW(label_smoothed_ce(logits, {-1, 0}, cfg), std::invalid_argument);
}

TEST(TotalLoss, EqualsSumOfComponents) {
  Rng rng(10);
  LossConfig cfg;
  cfg.margin = 0.3;
  cfg.epsilon = 0.1;
  Batch<double> batch = random_pk_batch(3, 2, 4, rng);
  batch.logits = uniform_tensor<double>({6, 3}, rng);
  const auto total = total_loss(batch, cfg);
  const auto trip = triplet_batch_hard(batch, cfg);
  const auto ce = label_smoothed_ce(*batch.logits, batch.labels, cfg);
  EXPECT_EQ(total.loss, ce.loss + trip.loss);
  EXPECT_EQ(total.loss_triplet, trip.loss);
  EXPECT_EQ(total.loss_ce, ce.loss);
  EXPECT_TRUE(bitwise_equal(total.grad_features, trip.grad_features));
  EXPECT_TRUE(bitwise_equal(total.grad_logits, ce.grad_logits));
}

TEST(TotalLoss, NearZeroAtOptimum) {
  // Triplet inactive (wide identity separation), cross-entropy at its
  // epsilon = 0 optimum.
  LossConfig cfg;
  cfg.margin = 0.3;
  cfg.epsilon = 0.0;
  Batch<double> batch;
  batch.features = Tensor<double>({4, 1}, {0.0, 0.0, 10.0, 10.0});
  batch.labels = {0, 0, 1, 1};
  Tensor<double> logits({4, 2});
  for (std::size_t i = 0; i < 4; ++i) logits(i, static_cast<std::size_t>(batch.labels[i])) = 60.0;
  batch.logits = logits;
  const auto total = total_loss(batch, cfg);
  EXPECT_NEAR(total.loss, 0.0, 1e-12);
}

TEST(TotalLoss, RequiresLogits) {
  Rng rng(11);
  LossConfig cfg;
  Batch<double> batch = random_pk_batch(2, 2, 3, rng);
  EXPECT_THROW(total_loss(batch, cfg), std::invalid_argument);
}

TEST(TotalLoss, MatchesComponentOraclesOnRandomBatch) {
  Rng rng(12);
  LossConfig cfg;
  cfg.margin = 0.3;
  cfg.epsilon = 0.1;
  Batch<double> batch = random_pk_batch(4, 2, 5, rng);
  batch.logits = uniform_tensor<double>({8, 4}, rng);
  const auto total = total_loss(batch, cfg);
  const double ref = oracle::triplet_loss(batch.features, batch.labels, 0.3, true) +
                     oracle::label_smoothed_ce(*batch.logits, batch.labels, 0.1);
  EXPECT_NEAR(total.loss, ref, 1e-12);
}
