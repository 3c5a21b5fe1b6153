// Copyright 2026 The melgen Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "melgen/multiscale/tiers.hpp"
#include "melgen/runtime/sampling.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

namespace melgen {
namespace {

using testing::random_grid;

// Grids are frames x channels; the figures quote channels x frames.
std::pair<int, int> as_figure(std::pair<int, int> frames_channels) {
  return {frames_channels.second, frames_channels.first};
}

TEST(Split, TimeRows) {
  Matrix x(4, 2);
  x << 0, 1, 10, 11, 20, 21, 30, 31;
  auto [even, odd] = split(x, Axis::Time);
  Matrix e(2, 2), o(2, 2);
  e << 0, 1, 20, 21;
  o << 10, 11, 30, 31;
  EXPECT_EQ(even, e);
  EXPECT_EQ(odd, o);
  EXPECT_EQ(interleave(even, odd, Axis::Time), x);
}

TEST(Split, FrequencyColumns) {
  Matrix x(2, 2);
  x << 1, 2, 3, 4;
  auto [even, odd] = split(x, Axis::Frequency);
  EXPECT_EQ(even, x.col(0));
  EXPECT_EQ(odd, x.col(1));
}

TEST(Split, RoundTripsBitExact) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const int t = 2 * (1 + static_cast<int>(rng() % 20)), m = 2 * (1 + static_cast<int>(rng() % 20));
    const Matrix x = random_grid(t, m, rng, 10.0);
    for (Axis a : {Axis::Time, Axis::Frequency}) {
      auto [even, odd] = split(x, a);
      ASSERT_EQ(interleave(even, odd, a), x);
      const Matrix p = random_grid(t / 2, m, rng), q = random_grid(t / 2, m, rng);
      auto [p2, q2] = split(interleave(p, q, Axis::Time), Axis::Time);
      ASSERT_EQ(p2, p);
      ASSERT_EQ(q2, q);
    }
  }
}

TEST(Split, DoublingLawAndErrors) {
  const Matrix a = Matrix::Ones(3, 5);
  EXPECT_EQ(interleave(a, a, Axis::Time).rows(), 6);
  EXPECT_EQ(interleave(a, a, Axis::Frequency).cols(), 10);
  EXPECT_THROW(split(Matrix::Ones(3, 2), Axis::Time), std::invalid_argument);
  EXPECT_THROW(split(Matrix::Ones(2, 3), Axis::Frequency), std::invalid_argument);
  EXPECT_THROW(interleave(Matrix::Ones(2, 2), Matrix::Ones(2, 3), Axis::Time), std::invalid_argument);
  EXPECT_THROW(parse_axis("diagonal"), std::invalid_argument);
  EXPECT_EQ(parse_axis("freq"), Axis::Frequency);
  EXPECT_EQ(parse_axis("time"), Axis::Time);
}

TEST(Schedule, SixTiersOnTheFigureGrid) {
  const AxisSchedule s = default_schedule(6, 200, 256);
  ASSERT_EQ(s.size(), 5u);
  EXPECT_EQ(s[0], Axis::Frequency);
  EXPECT_EQ(s[1], Axis::Time);
  EXPECT_EQ(s[4], Axis::Frequency);
  const std::vector<std::pair<int, int>> expect{{32, 50}, {32, 50}, {64, 50}, {64, 100}, {128, 100}, {128, 200}};
  for (int g = 1; g <= 6; ++g) EXPECT_EQ(as_figure(tier_shape(s, g, 200, 256)), expect[static_cast<std::size_t>(g - 1)]) << g;
  std::mt19937_64 rng(2);
  const TierSet t = decompose(random_grid(200, 256, rng), s);
  EXPECT_EQ(t.tiers[0].cols(), 32);
  EXPECT_EQ(t.tiers[0].rows(), 50);
  const Matrix low = recombine(t.tiers, s, 3);
  EXPECT_EQ(low.cols(), 64);
  EXPECT_EQ(low.rows(), 100);
}

TEST(Schedule, SingleTierAndErrors) {
  EXPECT_TRUE(default_schedule(1, 7, 9).empty());
  EXPECT_THROW(default_schedule(0, 8, 8), std::invalid_argument);
  EXPECT_THROW(default_schedule(4, 8, 6), std::invalid_argument);  // 6 -> 3 cannot split again
  EXPECT_EQ(time_splits(default_schedule(5, 8, 8)), 2);
  EXPECT_THROW(tier_shape(default_schedule(3, 8, 8), 4, 8, 8), std::out_of_range);
}

TEST(Decompose, PartitionsEveryElementOnce) {
  const int t = 16, m = 8;
  Matrix x(t, m);
  for (int k = 0; k < t * m; ++k) x(k / m, k % m) = k;
  const AxisSchedule s = default_schedule(5, t, m);
  const TierSet d = decompose(x, s);
  std::vector<double> seen;
  for (const Matrix& tier : d.tiers) seen.insert(seen.end(), tier.data(), tier.data() + tier.size());
  ASSERT_EQ(seen.size(), static_cast<std::size_t>(t * m));
  std::sort(seen.begin(), seen.end());
  for (int k = 0; k < t * m; ++k) EXPECT_EQ(seen[static_cast<std::size_t>(k)], k);
  EXPECT_EQ(recombine(d), x);
  EXPECT_THROW(decompose(Matrix::Zero(5, 8), default_schedule(4, 8, 8)), std::invalid_argument);
}

TEST(Decompose, TierContextAndExamples) {
  std::mt19937_64 rng(3);
  const Matrix x = random_grid(8, 8, rng);
  const AxisSchedule s = default_schedule(3, 8, 8);
  const TierSet d = decompose(x, s);
  EXPECT_THROW(tier_context(d, 1), std::invalid_argument);
  EXPECT_EQ(tier_context(d, 3).rows(), d.tiers[2].rows());
  EXPECT_EQ(tier_context(d, 3).cols(), d.tiers[2].cols());
  const TierExample first = tier_example(d, 1, Eigen::RowVectorXd::Ones(2), {1, 2});
  EXPECT_EQ(first.text.size(), 2u);
  EXPECT_EQ(first.context.size(), 0);
  const TierExample upper = tier_example(d, 2, Eigen::RowVectorXd::Ones(2), {1, 2});
  EXPECT_TRUE(upper.text.empty());
  EXPECT_EQ(upper.condition.size(), 0);
  EXPECT_EQ(upper.context, d.tiers[0]);
}

NetworkConfig tier_config(int g, int channels) {
  NetworkConfig c;
  c.layers = 2;
  c.hidden = 5;
  c.mixtures = 2;
  if (g == 1) {
    c.use_centralized = true;
    c.mel_channels = channels;
  } else {
    c.feature_layers = 1;
  }
  return c;
}

TEST(MultiscaleLikelihood, EqualsDirectSumOverTiers) {
  std::mt19937_64 rng(4);
  const Matrix x = random_grid(6, 8, rng);
  const AxisSchedule s = default_schedule(2, 6, 8);
  Network n1 = Network::create(tier_config(1, 4), 5);
  Network n2 = Network::create(tier_config(2, 4), 6);
  const TierSet d = decompose(x, s);
  double direct = 0.0;
  for (int g = 1; g <= 2; ++g) {
    TierExample e;
    e.x = d.tiers[static_cast<std::size_t>(g - 1)];
    if (g == 2) e.context = d.tiers[0];
    const GmmParamGrid p = (g == 1 ? n1 : n2).network_forward(e);
    for (Eigen::Index i = 0; i < e.x.rows(); ++i)
      for (Eigen::Index j = 0; j < e.x.cols(); ++j) direct += gmm_log_density(e.x(i, j), element(p, p.row(i, j)));
  }
  EXPECT_NEAR(multiscale_log_likelihood({&n1, &n2}, x, s), direct, 1e-9 * std::abs(direct));
  EXPECT_THROW(multiscale_log_likelihood({&n1}, x, s), std::invalid_argument);
}

TEST(MultiscaleSample, ShapeAndDeterminism) {
  const AxisSchedule s = default_schedule(3, 8, 8);
  Network n1 = Network::create(tier_config(1, tier_shape(s, 1, 8, 8).second), 7);
  Network n2 = Network::create(tier_config(2, 0), 8);
  Network n3 = Network::create(tier_config(3, 0), 9);
  SampleOptions opt;
  opt.temperature = 0.0;
  std::mt19937_64 a(42), b(42);
  const Matrix x = multiscale_sample({&n1, &n2, &n3}, s, 8, 8, Eigen::RowVectorXd(0), {}, opt, a);
  const Matrix y = multiscale_sample({&n1, &n2, &n3}, s, 8, 8, Eigen::RowVectorXd(0), {}, opt, b);
  EXPECT_EQ(x.rows(), 8);
  EXPECT_EQ(x.cols(), 8);
  EXPECT_TRUE(x.allFinite());
  EXPECT_EQ(x, y);
}

TEST(MultiscaleSample, SingleTierIsPlainSampling) {
  Network n1 = Network::create(tier_config(1, 3), 10);
  SampleOptions opt;
  opt.temperature = 0.7;
  std::mt19937_64 a(5), b(5);
  const Matrix x = multiscale_sample({&n1}, {}, 4, 3, Eigen::RowVectorXd(0), {}, opt, a);
  const SampleResult r = sample_tier(n1, 4, 3, Matrix(), Eigen::RowVectorXd(0), {}, opt, b);
  EXPECT_EQ(x, r.x);
}

TEST(MultiscaleSample, FullPrimeIsReproduced) {
  std::mt19937_64 rng(11);
  const AxisSchedule s = default_schedule(2, 4, 6);
  Network n1 = Network::create(tier_config(1, 3), 12);
  Network n2 = Network::create(tier_config(2, 0), 13);
  SampleOptions opt;
  opt.prime = random_grid(4, 6, rng);
  const Matrix x = multiscale_sample({&n1, &n2}, s, 4, 6, Eigen::RowVectorXd(0), {}, opt, rng);
  EXPECT_EQ(x, opt.prime);
}

TEST(MultiscaleSample, Errors) {
  const AxisSchedule s = default_schedule(2, 4, 6);
  Network n1 = Network::create(tier_config(1, 3), 12);
  Network plain = Network::create(tier_config(1, 3), 13);
  SampleOptions opt;
  std::mt19937_64 rng(1);
  EXPECT_THROW(multiscale_sample({&n1}, s, 4, 6, Eigen::RowVectorXd(0), {}, opt, rng), std::invalid_argument);
  EXPECT_THROW(multiscale_sample({&n1, &plain}, s, 4, 6, Eigen::RowVectorXd(0), {}, opt, rng), std::invalid_argument);
  EXPECT_THROW(multiscale_sample({&n1, &n1}, default_schedule(2, 4, 6), 4, 5, Eigen::RowVectorXd(0), {}, opt, rng),
               std::invalid_argument);
}

}  // namespace
}  // namespace melgen
