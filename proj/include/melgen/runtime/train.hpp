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

#include "melgen/net/network.hpp"
#include "melgen/runtime/checkpoint.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <span>
#include <string>
#include <vector>

namespace melgen {

struct TrainConfig {
  double learning_rate = 1e-4;
  double momentum = 0.9;
  int batch_size = 1;
  double max_sample_duration = 10.0;  // seconds
  std::int64_t steps = 1000;
  double grad_clip_norm = 1.0;        // infinity disables clipping
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 0;  // 0: only at the end

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train.learning_rate must be positive");
    if (!(momentum > 0.0 && momentum < 1.0)) throw std::invalid_argument("train.momentum must be in (0, 1)");
    if (batch_size < 1) throw std::invalid_argument("train.batch_size must be positive");
    if (!(max_sample_duration > 0.0)) throw std::invalid_argument("train.max_sample_duration must be positive");
    if (steps < 0) throw std::invalid_argument("train.steps must be non-negative");
    if (!(grad_clip_norm > 0.0)) throw std::invalid_argument("train.grad_clip_norm must be positive");
    if (checkpoint_every < 0) throw std::invalid_argument("train.checkpoint_every must be non-negative");
  }

  RmsPropConfig optimizer() const {
    RmsPropConfig o;
    o.learning_rate = learning_rate;
    o.momentum = momentum;
    return o;
  }
};

/// Mutable training state; stored in checkpoints so a resumed run continues
/// in lockstep with an uninterrupted one.
struct TrainerState {
  std::int64_t step = 0;
  std::mt19937_64 rng;
  RmsPropState optimizer;
};

struct TrainLogRow {
  std::int64_t step = 0;
  double nll = 0.0;
  double grad_norm = 0.0;
  double wall_time = 0.0;
};

/// Append-only TSV log: step, nll, grad_norm, wall_time.
class TrainLog {
 public:
  TrainLog() = default;
  explicit TrainLog(std::filesystem::path path) : path_(std::move(path)) {
    const bool fresh = !std::filesystem::exists(path_) || std::filesystem::file_size(path_) == 0;
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::app);
    if (!out) throw std::runtime_error("cannot open training log " + path_.string());
    if (fresh) out << "step\tnll\tgrad_norm\twall_time\n";
  }

  void append(const TrainLogRow& r) {
    rows_.push_back(r);
    if (path_.empty()) return;
    std::ofstream out(path_, std::ios::app);
    out.precision(10);
    out << r.step << '\t' << r.nll << '\t' << r.grad_norm << '\t' << r.wall_time << '\n';
  }

  const std::vector<TrainLogRow>& rows() const { return rows_; }

 private:
  std::filesystem::path path_;
  std::vector<TrainLogRow> rows_;
};

struct TrainReport {
  std::int64_t steps_run = 0;
  double first_nll = std::numeric_limits<double>::quiet_NaN();
  double last_nll = std::numeric_limits<double>::quiet_NaN();
  bool halted = false;
  std::string halt_reason;
};

/// Mean loss (nats per element) of a batch of same-shaped examples.
using LossFn = std::function<Var(Tape&, std::span<const TierExample>, std::mt19937_64&)>;

/// Batches may mix shapes; examples are grouped by shape and the group
/// losses are combined weighted by element count.
inline Var batch_loss(Tape& tape, const std::vector<TierExample>& batch, const LossFn& loss, std::mt19937_64& rng) {
  std::map<std::pair<Eigen::Index, Eigen::Index>, std::vector<TierExample>> groups;
  for (const auto& e : batch) groups[{e.x.rows(), e.x.cols()}].push_back(e);
  if (groups.size() == 1) return loss(tape, groups.begin()->second, rng);
  double total = 0.0;
  for (const auto& [shape, g] : groups) total += static_cast<double>(shape.first * shape.second) * static_cast<double>(g.size());
  Var sum;
  for (const auto& [shape, g] : groups) {
    const double w = static_cast<double>(shape.first * shape.second) * static_cast<double>(g.size()) / total;
    Var part = ops::scale(loss(tape, g, rng), w);
    sum = sum.tape == nullptr ? part : ops::add(sum, part);
  }
  return sum;
}

/// Runs `steps` optimizer updates from the current state. A non-finite
/// loss or gradient halts training before the parameters are touched.
inline TrainReport train_loop(ParameterSet& ps, const std::vector<TierExample>& corpus, const LossFn& loss,
                              const TrainConfig& cfg, TrainerState& st, std::int64_t steps, TrainLog* log = nullptr,
                              const std::function<void(const TrainerState&)>& on_checkpoint = {}) {
  cfg.validate();
  if (corpus.empty()) throw std::invalid_argument("training corpus is empty");
  TrainReport rep;
  const auto start = std::chrono::steady_clock::now();
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
  for (std::int64_t s = 0; s < steps; ++s) {
    std::vector<TierExample> batch;
    for (int b = 0; b < cfg.batch_size; ++b) batch.push_back(corpus[pick(st.rng)]);
    ps.zero_grad();
    Tape tape;
    double value = 0.0;
    try {
      Var l = batch_loss(tape, batch, loss, st.rng);
      value = l.value()(0, 0);
      if (!std::isfinite(value)) throw NumericError("loss is not finite");
      tape.backward(l);
    } catch (const NumericError& e) {
      rep.halted = true;
      rep.halt_reason = std::string("step ") + std::to_string(st.step + 1) + ": " + e.what();
      return rep;
    }
    const double norm = clip_grad_norm(ps, cfg.grad_clip_norm);
    if (!std::isfinite(norm)) {
      rep.halted = true;
      rep.halt_reason = "step " + std::to_string(st.step + 1) + ": gradient is not finite";
      return rep;
    }
    rmsprop_step(ps, st.optimizer, cfg.optimizer());
    ++st.step;
    ++rep.steps_run;
    if (rep.steps_run == 1) rep.first_nll = value;
    rep.last_nll = value;
    if (log != nullptr) {
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      log->append({st.step, value, norm, wall});
    }
    if (on_checkpoint && cfg.checkpoint_every > 0 && st.step % cfg.checkpoint_every == 0) on_checkpoint(st);
  }
  return rep;
}

/// Teacher-forced maximum-likelihood training of one tier network.
inline TrainReport train_tier(Network& net, const std::vector<TierExample>& corpus, const TrainConfig& cfg,
                              TrainerState& st, std::int64_t steps, TrainLog* log = nullptr,
                              const std::function<void(const TrainerState&)>& on_checkpoint = {}) {
  LossFn fn = [&net](Tape& tape, std::span<const TierExample> b, std::mt19937_64& rng) { return net.loss(tape, b, nullptr, &rng); };
  return train_loop(net.parameters(), corpus, fn, cfg, st, steps, log, on_checkpoint);
}

inline TrainerState initial_trainer_state(const TrainConfig& cfg) {
  TrainerState st;
  st.rng.seed(cfg.seed);
  return st;
}

inline Checkpoint make_checkpoint(int tier, const std::string& config, const std::string& schedule, const ParameterSet& ps,
                                  const TrainerState& st) {
  Checkpoint c;
  c.tier = tier;
  c.config = config;
  c.schedule = schedule;
  c.params = snapshot(ps);
  c.optimizer = st.optimizer;
  c.step = st.step;
  c.rng_state = rng_to_string(st.rng);
  return c;
}

inline Checkpoint make_checkpoint(int tier, const Network& net, const std::string& schedule, const TrainerState& st) {
  return make_checkpoint(tier, net.config().describe(), schedule, net.parameters(), st);
}

inline TrainerState trainer_state_from(const Checkpoint& c) {
  TrainerState st;
  st.step = c.step;
  st.rng = rng_from_string(c.rng_state);
  st.optimizer = c.optimizer;
  return st;
}

/// Rebuilds a tier network from its checkpoint. The configuration is parsed
/// back from the stored description.
inline NetworkConfig parse_network_description(const std::string& text) {
  NetworkConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
    if (k == "layers") c.layers = std::stoi(v);
    else if (k == "hidden") c.hidden = std::stoi(v);
    else if (k == "mixtures") c.mixtures = std::stoi(v);
    else if (k == "mel_channels") c.mel_channels = std::stoi(v);
    else if (k == "use_centralized") c.use_centralized = v == "1";
    else if (k == "conditioning_dim") c.conditioning_dim = std::stoi(v);
    else if (k == "feature_layers") c.feature_layers = std::stoi(v);
    else if (k == "attention_components") c.attention_components = std::stoi(v);
    else if (k == "vocab_size") c.vocab_size = std::stoi(v);
    else if (k == "attention_kappa_bias") c.attention_kappa_bias = std::stod(v);
    else if (k == "norm_shift") c.norm.shift = std::stod(v);
    else if (k == "norm_scale") c.norm.scale = std::stod(v);
    else throw CheckpointError("checkpoint: unknown config key '" + k + "'");
  }
  return c;
}

inline Network network_from_checkpoint(const Checkpoint& c) {
  Network net = Network::create(parse_network_description(c.config), 0);
  if (net.config().describe() != c.config) throw CheckpointError("checkpoint: config does not round-trip");
  restore_parameters(net.parameters(), c, c.config);
  return net;
}

/// Shift and scale from corpus statistics so the network sees roughly unit
/// variance inputs.
inline Normalization fit_normalization(const std::vector<TierExample>& corpus) {
  double sum = 0.0, sq = 0.0, n = 0.0;
  for (const auto& e : corpus) {
    sum += e.x.sum();
    sq += e.x.squaredNorm();
    n += static_cast<double>(e.x.size());
  }
  if (n == 0.0) throw std::invalid_argument("fit_normalization: empty corpus");
  const double mean = sum / n;
  const double var = std::max(sq / n - mean * mean, 1e-12);
  return Normalization{mean, std::sqrt(var)};
}

}  // namespace melgen
