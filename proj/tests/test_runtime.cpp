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

#include "melgen/audio/mel.hpp"
#include "melgen/runtime/checkpoint.hpp"
#include "melgen/runtime/corpus.hpp"
#include "melgen/runtime/sampling.hpp"
#include "melgen/runtime/train.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

namespace melgen {
namespace {

using testing::random_grid;

std::filesystem::path scratch(const std::string& name) {
  const char* root = std::getenv("MELGEN_OUT");
  const auto dir = std::filesystem::path(root ? root : std::filesystem::temp_directory_path().string()) / "runtime" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

TierExample example_of(Matrix x) {
  TierExample e;
  e.x = std::move(x);
  return e;
}

NetworkConfig tiny(int channels) {
  NetworkConfig c;
  c.layers = 2;
  c.hidden = 4;
  c.mixtures = 2;
  c.use_centralized = true;
  c.mel_channels = channels;
  return c;
}

std::vector<TierExample> toy_corpus(int count, int frames, int channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TierExample> out;
  for (int k = 0; k < count; ++k) out.push_back(example_of(random_grid(frames, channels, rng)));
  return out;
}

TrainConfig fast_train(std::int64_t steps) {
  TrainConfig t;
  t.learning_rate = 1e-3;
  t.steps = steps;
  t.seed = 5;
  return t;
}

// ---- optimizer -----------------------------------------------------------

TEST(RmsProp, TwoStepsMatchHandComputation) {
  ParameterSet ps;
  ps.add("w", 1, 1);
  ps[0].value(0, 0) = 1.0;
  RmsPropState st;
  RmsPropConfig cfg;
  cfg.learning_rate = 0.1;
  double s = 0.0, v = 0.0, w = 1.0;
  for (double g : {0.5, -2.0}) {
    ps[0].grad = Matrix::Constant(1, 1, g);
    rmsprop_step(ps, st, cfg);
    s = 0.9 * s + 0.1 * g * g;
    v = 0.9 * v + 0.1 * g / std::sqrt(s + 1e-8);
    w -= v;
    EXPECT_NEAR(ps[0].value(0, 0), w, 1e-15);
  }
}

TEST(GradClip, RescalesOnlyAboveTheLimit) {
  ParameterSet ps;
  ps.add("a", 1, 2);
  ps.add("b", 1, 1);
  ps[0].grad = (Matrix(1, 2) << 3.0, 0.0).finished();
  ps[1].grad = Matrix::Constant(1, 1, 4.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 10.0), 5.0);
  EXPECT_DOUBLE_EQ(ps[1].grad(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(global_grad_norm(ps), 1.0, 1e-15);
  EXPECT_NEAR(ps[1].grad(0, 0), 0.8, 1e-15);
  ps[1].grad(0, 0) = 1e6;
  clip_grad_norm(ps, std::numeric_limits<double>::infinity());
  EXPECT_EQ(ps[1].grad(0, 0), 1e6);
}

TEST(GradClip, InfiniteLimitMatchesAnUntriggeredClip) {
  const auto corpus = toy_corpus(3, 4, 3, 1);
  Network a = Network::create(tiny(3), 2), b = Network::create(tiny(3), 2);
  TrainConfig inf = fast_train(6), big = fast_train(6);
  inf.grad_clip_norm = std::numeric_limits<double>::infinity();
  big.grad_clip_norm = 1e300;
  TrainerState sa = initial_trainer_state(inf), sb = initial_trainer_state(big);
  train_tier(a, corpus, inf, sa, 6);
  train_tier(b, corpus, big, sb, 6);
  for (std::size_t k = 0; k < a.parameters().size(); ++k) EXPECT_EQ(a.parameters().all()[k].value, b.parameters().all()[k].value);
}

// ---- training loop -------------------------------------------------------

TEST(Train, ZeroStepsLeaveTheInitialization) {
  const auto corpus = toy_corpus(2, 4, 3, 3);
  Network net = Network::create(tiny(3), 4);
  const auto before = snapshot(net.parameters());
  TrainerState st = initial_trainer_state(fast_train(0));
  const TrainReport r = train_tier(net, corpus, fast_train(0), st, 0);
  EXPECT_EQ(r.steps_run, 0);
  for (std::size_t k = 0; k < before.size(); ++k) EXPECT_EQ(net.parameters().all()[k].value, before[k].value);
}

TEST(Train, FirstLossFiniteAcrossSeeds) {
  const auto corpus = toy_corpus(2, 6, 4, 5);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Network net = Network::create(tiny(4), seed);
    TrainConfig cfg = fast_train(1);
    TrainerState st = initial_trainer_state(cfg);
    const TrainReport r = train_tier(net, corpus, cfg, st, 1);
    EXPECT_FALSE(r.halted);
    EXPECT_TRUE(std::isfinite(r.first_nll));
  }
}

TEST(Train, LossDecreasesOnAFixedExample) {
  const auto corpus = toy_corpus(1, 6, 4, 6);
  Network net = Network::create(tiny(4), 7);
  const double before = net.nll(corpus[0]);
  TrainConfig cfg = fast_train(150);
  TrainerState st = initial_trainer_state(cfg);
  train_tier(net, corpus, cfg, st, 150);
  EXPECT_LT(net.nll(corpus[0]), before - 0.1);
}

TEST(Train, NonFiniteLossHaltsWithoutTouchingParameters) {
  const auto corpus = toy_corpus(2, 4, 3, 7);
  Network net = Network::create(tiny(3), 8);
  net.parameters().all()[0].value(0, 0) = std::numeric_limits<double>::quiet_NaN();
  const auto before = snapshot(net.parameters());
  TrainConfig cfg = fast_train(3);
  TrainerState st = initial_trainer_state(cfg);
  const TrainReport r = train_tier(net, corpus, cfg, st, 3);
  EXPECT_TRUE(r.halted);
  EXPECT_EQ(r.steps_run, 0);
  EXPECT_NE(r.halt_reason.find("step 1"), std::string::npos);
  for (std::size_t k = 1; k < before.size(); ++k) EXPECT_EQ(net.parameters().all()[k].value, before[k].value);
}

TEST(Train, ConfigAndCorpusErrors) {
  Network net = Network::create(tiny(3), 8);
  TrainConfig cfg = fast_train(1);
  TrainerState st = initial_trainer_state(cfg);
  EXPECT_THROW(train_tier(net, {}, cfg, st, 1), std::invalid_argument);
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = fast_train(1);
  cfg.momentum = 1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = fast_train(1);
  cfg.grad_clip_norm = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Train, MixedShapeBatchesWeightByElements) {
  Network net = Network::create(tiny(3), 9);
  std::mt19937_64 rng(1);
  const std::vector<TierExample> batch{example_of(random_grid(2, 3, rng)), example_of(random_grid(6, 3, rng))};
  LossFn fn = [&net](Tape& t, std::span<const TierExample> b, std::mt19937_64&) { return net.loss(t, b); };
  Tape tape(false);
  const double mixed = batch_loss(tape, batch, fn, rng).value()(0, 0);
  EXPECT_NEAR(mixed, (2 * net.nll(batch[0]) + 6 * net.nll(batch[1])) / 8.0, 1e-12);
}

TEST(TrainLog, AppendsTabSeparatedRows) {
  const auto dir = scratch("log");
  const auto path = dir / "tier1.log.tsv";
  {
    TrainLog log(path);
    const auto corpus = toy_corpus(2, 4, 3, 10);
    Network net = Network::create(tiny(3), 11);
    TrainConfig cfg = fast_train(3);
    TrainerState st = initial_trainer_state(cfg);
    train_tier(net, corpus, cfg, st, 3, &log);
    EXPECT_EQ(log.rows().size(), 3u);
  }
  TrainLog again(path);
  again.append({4, 0.5, 1.0, 2.0});
  std::ifstream in(path);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0], "step\tnll\tgrad_norm\twall_time");
  EXPECT_EQ(lines[1].substr(0, 2), "1\t");
  EXPECT_EQ(lines[4], "4\t0.5\t1\t2");
}

TEST(Normalization, FitsCorpusMoments) {
  std::vector<TierExample> corpus{example_of(Matrix::Constant(2, 2, 1.0)), example_of(Matrix::Constant(2, 2, 3.0))};
  const Normalization n = fit_normalization(corpus);
  EXPECT_DOUBLE_EQ(n.shift, 2.0);
  EXPECT_DOUBLE_EQ(n.scale, 1.0);
  EXPECT_THROW(fit_normalization({}), std::invalid_argument);
}

// ---- checkpoints ---------------------------------------------------------

TEST(Checkpoint, ForwardOutputsSurviveSaveAndLoad) {
  const auto dir = scratch("roundtrip");
  NetworkConfig c = tiny(3);
  c.norm = Normalization{-3.0, 1.5};
  c.attention_components = 2;
  c.vocab_size = 4;
  c.attention_kappa_bias = std::log(0.125);
  Network net = Network::create(c, 12);
  const auto corpus = toy_corpus(2, 5, 3, 13);
  std::vector<TierExample> texted = corpus;
  for (auto& e : texted) e.text = {1, 3};
  TrainConfig cfg = fast_train(4);
  TrainerState st = initial_trainer_state(cfg);
  train_tier(net, texted, cfg, st, 4);
  save_checkpoint(dir / "tier1.ckpt", make_checkpoint(1, net, "tiers=1;axes=", st));
  const Checkpoint back = load_checkpoint(dir / "tier1.ckpt");
  EXPECT_EQ(back.step, 4);
  EXPECT_EQ(back.tier, 1);
  EXPECT_EQ(back.schedule, "tiers=1;axes=");
  Network restored = network_from_checkpoint(back);
  const GmmParamGrid a = net.network_forward(texted[0]), b = restored.network_forward(texted[0]);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.stddev, b.stddev);
  EXPECT_EQ(a.weight, b.weight);
  EXPECT_EQ(rng_to_string(trainer_state_from(back).rng), rng_to_string(st.rng));
  EXPECT_FALSE(std::filesystem::exists(dir / "tier1.ckpt.tmp"));
}

TEST(Checkpoint, MismatchedConfigurationIsRejected) {
  Network net = Network::create(tiny(3), 1);
  const Checkpoint c = make_checkpoint(1, net, "", initial_trainer_state(fast_train(1)));
  NetworkConfig other = tiny(3);
  other.hidden = 5;
  Network wrong = Network::create(other, 1);
  EXPECT_THROW(restore_parameters(wrong.parameters(), c, wrong.config().describe()), CheckpointError);
  Network same = Network::create(tiny(3), 99);
  EXPECT_NO_THROW(restore_parameters(same.parameters(), c, same.config().describe()));
  EXPECT_EQ(same.parameters().all()[3].value, net.parameters().all()[3].value);
}

TEST(Checkpoint, CorruptionIsDetected) {
  Network net = Network::create(tiny(3), 1);
  const std::string bytes = encode_checkpoint(make_checkpoint(1, net, "s", initial_trainer_state(fast_train(1))));
  EXPECT_NO_THROW(decode_checkpoint(bytes));
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  EXPECT_THROW(decode_checkpoint(flipped), CheckpointError);
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), CheckpointError);
  std::string version = bytes;
  version[4] = 7;
  EXPECT_THROW(decode_checkpoint(version), CheckpointError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
  EXPECT_THROW(decode_checkpoint(""), CheckpointError);
  EXPECT_THROW(load_checkpoint("/nonexistent/melgen.ckpt"), CheckpointError);
}

TEST(Checkpoint, ResumeRunsInLockstep) {
  const auto dir = scratch("resume");
  const auto corpus = toy_corpus(4, 4, 3, 14);
  TrainConfig cfg = fast_train(8);

  Network whole = Network::create(tiny(3), 15);
  TrainerState sw = initial_trainer_state(cfg);
  TrainLog log_whole;
  train_tier(whole, corpus, cfg, sw, 8, &log_whole);

  Network first = Network::create(tiny(3), 15);
  TrainerState s1 = initial_trainer_state(cfg);
  TrainLog log_split;
  train_tier(first, corpus, cfg, s1, 3, &log_split);
  save_checkpoint(dir / "tier1.ckpt", make_checkpoint(1, first, "", s1));

  const Checkpoint c = load_checkpoint(dir / "tier1.ckpt");
  Network second = network_from_checkpoint(c);
  TrainerState s2 = trainer_state_from(c);
  train_tier(second, corpus, cfg, s2, 5, &log_split);

  EXPECT_EQ(s2.step, 8);
  for (std::size_t k = 0; k < whole.parameters().size(); ++k) {
    EXPECT_EQ(second.parameters().all()[k].value, whole.parameters().all()[k].value) << whole.parameters().all()[k].name;
  }
  ASSERT_EQ(log_split.rows().size(), 8u);
  for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(log_split.rows()[k].nll, log_whole.rows()[k].nll);
}

TEST(Checkpoint, PeriodicCallbackFires) {
  const auto corpus = toy_corpus(2, 4, 3, 16);
  Network net = Network::create(tiny(3), 17);
  TrainConfig cfg = fast_train(7);
  cfg.checkpoint_every = 3;
  TrainerState st = initial_trainer_state(cfg);
  std::vector<std::int64_t> at;
  train_tier(net, corpus, cfg, st, 7, nullptr, [&](const TrainerState& s) { at.push_back(s.step); });
  EXPECT_EQ(at, (std::vector<std::int64_t>{3, 6}));
}

TEST(Checkpoint, DescriptionRoundTrips) {
  NetworkConfig c = tiny(5);
  c.conditioning_dim = 3;
  c.feature_layers = 0;
  c.norm = Normalization{0.1, 0.3};
  c.attention_kappa_bias = -2.0794415416798357;
  EXPECT_EQ(parse_network_description(c.describe()).describe(), c.describe());
  EXPECT_THROW(parse_network_description("bogus=1\n"), CheckpointError);
}

// ---- sampling ------------------------------------------------------------

TEST(SampleTier, FullPrimeIsReturnedExactly) {
  std::mt19937_64 rng(18);
  Network net = Network::create(tiny(3), 19);
  SampleOptions opt;
  opt.prime = random_grid(5, 3, rng);
  const SampleResult r = sample_tier(net, 5, 3, Matrix(), Eigen::RowVectorXd(0), {}, opt, rng);
  EXPECT_EQ(r.x, opt.prime);
}

TEST(SampleTier, PartialPrimeClampsLeadingFrames) {
  std::mt19937_64 rng(20);
  Network net = Network::create(tiny(3), 21);
  SampleOptions opt;
  opt.prime = random_grid(2, 3, rng);
  const SampleResult r = sample_tier(net, 6, 3, Matrix(), Eigen::RowVectorXd(0), {}, opt, rng);
  EXPECT_EQ(r.x.rows(), 6);
  EXPECT_EQ(r.x.topRows(2), opt.prime);
  EXPECT_TRUE(r.x.allFinite());
}

TEST(SampleTier, ZeroTemperatureIsRepeatable) {
  Network net = Network::create(tiny(4), 22);
  SampleOptions opt;
  opt.temperature = 0.0;
  std::mt19937_64 a(7), b(7);
  const Matrix x = sample_tier(net, 6, 4, Matrix(), Eigen::RowVectorXd(0), {}, opt, a).x;
  const Matrix y = sample_tier(net, 6, 4, Matrix(), Eigen::RowVectorXd(0), {}, opt, b).x;
  EXPECT_EQ(x, y);
  EXPECT_EQ(x.rows(), 6);
  EXPECT_EQ(x.cols(), 4);
}

TEST(SampleTier, Errors) {
  std::mt19937_64 rng(23);
  Network net = Network::create(tiny(3), 24);
  SampleOptions opt;
  opt.prime = random_grid(7, 3, rng);
  EXPECT_THROW(sample_tier(net, 5, 3, Matrix(), Eigen::RowVectorXd(0), {}, opt, rng), std::invalid_argument);
  opt.prime = Matrix();
  EXPECT_THROW(sample_tier(net, 0, 3, Matrix(), Eigen::RowVectorXd(0), {}, opt, rng), std::invalid_argument);
  EXPECT_THROW(sample_tier(net, 4, 2, Matrix(), Eigen::RowVectorXd(0), {}, opt, rng), std::invalid_argument);
}

// ---- corpus slicing ------------------------------------------------------

TEST(SliceCorpus, TenSecondClipFitsWhole) {
  const SpectrogramConfig sc;  // 22050 Hz, hop 256
  const int max_frames = max_frames_for(10.0, sc);
  EXPECT_EQ(max_frames, 861);
  std::mt19937_64 rng(25);
  const SliceResult r = slice_corpus({Matrix::Zero(861, 2)}, max_frames, 1, rng);
  ASSERT_EQ(r.crops.size(), 1u);
  EXPECT_EQ(r.crops[0].rows(), 861);
}

TEST(SliceCorpus, ShortClipKeepsItsLengthRoundedDown) {
  const SpectrogramConfig sc;
  std::mt19937_64 rng(26);
  const int three_seconds = max_frames_for(3.0, sc);  // 258 frames
  const SliceResult r = slice_corpus({Matrix::Zero(three_seconds, 2)}, max_frames_for(6.0, sc), 4, rng);
  ASSERT_EQ(r.crops.size(), 1u);
  EXPECT_EQ(r.crops[0].rows(), 256);
}

TEST(SliceCorpus, CropsAreContiguousAndDivisible) {
  std::mt19937_64 rng(27);
  std::vector<Matrix> clips;
  for (int k = 0; k < 40; ++k) {
    const int frames = 1 + static_cast<int>(rng() % 300);
    Matrix x(frames, 1);
    for (int i = 0; i < frames; ++i) x(i, 0) = i;
    clips.push_back(x);
  }
  const SliceResult r = slice_corpus(clips, 100, 8, rng);
  EXPECT_EQ(r.crops.size() + r.warnings.size(), clips.size());
  for (const Matrix& c : r.crops) {
    EXPECT_EQ(c.rows() % 8, 0);
    EXPECT_LE(c.rows(), 100);
    for (Eigen::Index i = 1; i < c.rows(); ++i) EXPECT_EQ(c(i, 0), c(i - 1, 0) + 1);
  }
  for (const auto& w : r.warnings) EXPECT_NE(w.find("skipped"), std::string::npos);
}

TEST(SliceCorpus, Errors) {
  std::mt19937_64 rng(28);
  EXPECT_THROW(max_frames_for(0.0, SpectrogramConfig{}), std::invalid_argument);
  EXPECT_THROW(slice_corpus({Matrix::Zero(4, 1)}, 0, 1, rng), std::invalid_argument);
  EXPECT_THROW(slice_corpus({Matrix::Zero(4, 1)}, 4, 0, rng), std::invalid_argument);
}

}  // namespace
}  // namespace melgen
