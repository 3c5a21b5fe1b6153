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

#pragma once

#include "melgen/baselines/frame_models.hpp"
#include "melgen/runtime/train.hpp"

#include <cstdio>
#include <iomanip>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace melgen {

/// Grids whose elements walk along frequency in steps of +-`step` with a
/// fair coin per element plus Gaussian noise; frames are independent. Each
/// conditional given the previous channel is a two-peaked mixture, so a
/// single Gaussian per element and a diagonal Gaussian per frame both fit
/// it poorly.
inline std::vector<Matrix> bimodal_corpus(int count, int frames, int channels, std::uint64_t seed, double step = 1.0,
                                          double noise = 0.1) {
  if (count < 1 || frames < 1 || channels < 1) throw std::invalid_argument("bimodal_corpus: sizes must be positive");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> normal(0.0, noise);
  std::vector<Matrix> out;
  for (int n = 0; n < count; ++n) {
    Matrix x(frames, channels);
    for (int i = 0; i < frames; ++i) {
      double prev = 0.0;
      for (int j = 0; j < channels; ++j) {
        prev += (coin(rng) ? step : -step) + normal(rng);
        x(i, j) = prev;
      }
    }
    out.push_back(std::move(x));
  }
  return out;
}

struct BenchmarkEntry {
  std::string model;
  std::string task;  // "unconditional" or "text-conditional"
  double train_nll = 0.0;
  double nll = 0.0;   // held-out, nats per element
  bool bound = false; // true for negated ELBO (an upper bound on the NLL)
  std::size_t parameters = 0;
};

/// Results laid out as model x task. Rendered as TSV and as an aligned
/// text table; bound entries carry a "<=" flag.
class ResultsTable {
 public:
  void add(BenchmarkEntry e) { entries_.push_back(std::move(e)); }
  const std::vector<BenchmarkEntry>& entries() const { return entries_; }

  const BenchmarkEntry* find(const std::string& model, const std::string& task) const {
    for (const auto& e : entries_)
      if (e.model == model && e.task == task) return &e;
    return nullptr;
  }

  std::string tsv() const {
    std::ostringstream s;
    s << "model\ttask\tnll_nats_per_dim\tbound\ttrain_nll\tparameters\n";
    s.precision(8);
    for (const auto& e : entries_) {
      s << e.model << '\t' << e.task << '\t' << e.nll << '\t' << (e.bound ? "<=" : "=") << '\t' << e.train_nll << '\t'
        << e.parameters << '\n';
    }
    return s.str();
  }

  std::string text() const {
    const std::vector<std::string> tasks{"unconditional", "text-conditional"};
    std::vector<std::string> models;
    std::size_t width = 5;
    for (const auto& e : entries_) {
      if (std::find(models.begin(), models.end(), e.model) == models.end()) models.push_back(e.model);
      width = std::max(width, e.model.size());
    }
    std::ostringstream s;
    s << std::left << std::setw(static_cast<int>(width)) << "Model";
    for (const auto& t : tasks) s << "  " << std::right << std::setw(18) << t;
    s << '\n';
    for (const auto& m : models) {
      s << std::left << std::setw(static_cast<int>(width)) << m;
      for (const auto& t : tasks) {
        const BenchmarkEntry* e = find(m, t);
        std::string cell = "-";
        if (e != nullptr) {
          char buf[64];
          std::snprintf(buf, sizeof buf, "%s%.4f", e->bound ? "<= " : "", e->nll);
          cell = buf;
        }
        s << "  " << std::right << std::setw(18) << cell;
      }
      s << '\n';
    }
    return s.str();
  }

 private:
  std::vector<BenchmarkEntry> entries_;
};

/// A model to benchmark: a fine-grained network or a frame-level model.
struct BenchmarkModel {
  std::string name;
  std::variant<NetworkConfig, FrameModelConfig> config;
};

struct BenchmarkOptions {
  TrainConfig train;
  int eval_samples = 8;   // posterior draws per example for latent models
  std::uint64_t seed = 0;
  std::string task = "unconditional";
};

namespace bench_detail {

inline double weighted_mean(const std::vector<TierExample>& set, const std::function<double(const TierExample&)>& f) {
  double acc = 0.0, n = 0.0;
  for (const auto& e : set) {
    const double w = static_cast<double>(e.x.size());
    acc += f(e) * w;
    n += w;
  }
  return acc / n;
}

}  // namespace bench_detail

/// Trains every model on `train` and scores it on `train` and `test`.
/// Per-model progress lines go to `progress` when given.
inline ResultsTable run_density_benchmark(const std::vector<TierExample>& train, const std::vector<TierExample>& test,
                                          const std::vector<BenchmarkModel>& models, const BenchmarkOptions& opt,
                                          std::ostream* progress = nullptr) {
  if (train.empty() || test.empty()) throw std::invalid_argument("benchmark: empty corpus split");
  ResultsTable table;
  std::uint64_t k = 0;
  for (const auto& m : models) {
    ++k;
    BenchmarkEntry e;
    e.model = m.name;
    e.task = opt.task;
    TrainerState st = initial_trainer_state(opt.train);
    st.rng.seed(opt.seed * 1000003ULL + k);
    if (const auto* nc = std::get_if<NetworkConfig>(&m.config)) {
      Network net = Network::create(*nc, opt.seed + k);
      TrainReport r = train_tier(net, train, opt.train, st, opt.train.steps);
      if (r.halted) throw NumericError("benchmark: " + m.name + " diverged at " + r.halt_reason);
      e.train_nll = bench_detail::weighted_mean(train, [&](const TierExample& x) { return net.nll(x); });
      e.nll = bench_detail::weighted_mean(test, [&](const TierExample& x) { return net.nll(x); });
      e.parameters = net.parameters().scalar_count();
    } else {
      const auto& fc = std::get<FrameModelConfig>(m.config);
      FrameModel fm = FrameModel::create(fc, opt.seed + k);
      const auto per_epoch = static_cast<std::int64_t>((train.size() + static_cast<std::size_t>(opt.train.batch_size) - 1) /
                                                       static_cast<std::size_t>(opt.train.batch_size));
      LossFn fn = [&fm, &st, per_epoch](Tape& tape, std::span<const TierExample> b, std::mt19937_64& rng) {
        return fm.loss(tape, b, kl_anneal_weight(st.step, per_epoch), rng);
      };
      TrainReport r = train_loop(fm.parameters(), train, fn, opt.train, st, opt.train.steps);
      if (r.halted) throw NumericError("benchmark: " + m.name + " diverged at " + r.halt_reason);
      std::mt19937_64 eval_rng(opt.seed + 7919 * k);
      e.bound = fm.is_bound();
      e.train_nll = bench_detail::weighted_mean(train, [&](const TierExample& x) { return fm.evaluate(x, opt.eval_samples, eval_rng); });
      e.nll = bench_detail::weighted_mean(test, [&](const TierExample& x) { return fm.evaluate(x, opt.eval_samples, eval_rng); });
      e.parameters = fm.parameters().scalar_count();
    }
    if (!std::isfinite(e.nll) || !std::isfinite(e.train_nll)) throw NumericError("benchmark: non-finite score for " + m.name);
    if (progress != nullptr) {
      *progress << "  " << e.model << ": held-out " << (e.bound ? "<= " : "") << e.nll << " nats/dim (train " << e.train_nll
                << ", " << e.parameters << " parameters)\n";
    }
    table.add(std::move(e));
  }
  return table;
}

/// Sizes shared by every model of the standard comparison.
struct BenchmarkSuite {
  int channels = 0;
  int layers = 2;
  int hidden = 16;
  int mixtures = 10;
  int latent_dim = 8;
  int attention_components = 0;  // > 0 for the text-conditional task
  int vocab_size = 0;
  double attention_kappa_bias = 0.0;
  Normalization norm;
};

/// Fine-grained GMM and single-Gaussian networks, the framewise diagonal
/// Gaussian, and the two VAE variants.
inline std::vector<BenchmarkModel> standard_benchmark_models(const BenchmarkSuite& s) {
  NetworkConfig n;
  n.layers = s.layers;
  n.hidden = s.hidden;
  n.mixtures = s.mixtures;
  n.mel_channels = s.channels;
  n.use_centralized = s.attention_components > 0;
  n.attention_components = s.attention_components;
  n.vocab_size = s.vocab_size;
  n.attention_kappa_bias = s.attention_kappa_bias;
  n.norm = s.norm;
  NetworkConfig single = n;
  single.mixtures = 1;

  FrameModelConfig f;
  f.channels = s.channels;
  f.layers = s.layers;
  f.hidden = s.hidden;
  f.latent_dim = s.latent_dim;
  f.attention_components = s.attention_components;
  f.vocab_size = s.vocab_size;
  f.norm = s.norm;
  FrameModelConfig global = f, local = f;
  global.latent = LatentKind::Global;
  local.latent = LatentKind::Local;

  return {{"autoregressive-gmm", n},
          {"autoregressive-gaussian", single},
          {"framewise-gaussian", f},
          {"vae-global", global},
          {"vae-local", local}};
}

}  // namespace melgen
