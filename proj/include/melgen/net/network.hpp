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

#include "melgen/density/gmm.hpp"
#include "melgen/net/frame_stack.hpp"
#include "melgen/tts/attention.hpp"

#include <cstdint>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <vector>

namespace melgen {

struct NetworkConfig {
  int layers = 2;
  int hidden = 16;
  int mixtures = 10;
  int mel_channels = 0;         // frame width seen by the centralized stack
  bool use_centralized = false;
  int conditioning_dim = 0;     // per-example features broadcast over the grid (speaker one-hot)
  int feature_layers = 0;       // > 0 adds a context extractor over the lower tiers
  int attention_components = 0; // > 0 enables text attention
  int vocab_size = 0;
  double attention_kappa_bias = 0.0;  // initial location-step bias
  double frame_dropout = 0.0;   // training only: chance of hiding a previous frame from the frame-level inputs
  Normalization norm;

  bool has_attention() const { return attention_components > 0; }
  int attention_layer_index() const { return has_attention() ? std::max(1, layers / 2) : 0; }
  /// Width of z: external features followed by extractor features.
  int total_conditioning_dim() const { return conditioning_dim + (feature_layers > 0 ? hidden : 0); }

  void validate() const {
    if (layers < 1) throw std::invalid_argument("network config: layers must be >= 1");
    if (hidden < 1) throw std::invalid_argument("network config: hidden size must be >= 1");
    if (mixtures < 1) throw std::invalid_argument("network config: mixtures must be >= 1");
    if (conditioning_dim < 0 || feature_layers < 0 || attention_components < 0) {
      throw std::invalid_argument("network config: negative size");
    }
    if (use_centralized && mel_channels < 1) throw std::invalid_argument("network config: centralized stack needs mel_channels");
    if (has_attention() && !use_centralized) throw std::invalid_argument("network config: attention requires the centralized stack");
    if (has_attention() && vocab_size < 1) throw std::invalid_argument("network config: attention requires a vocabulary");
    if (!(norm.scale > 0.0) || !std::isfinite(norm.shift)) throw std::invalid_argument("network config: invalid normalization");
    if (!(frame_dropout >= 0.0 && frame_dropout < 1.0)) throw std::invalid_argument("network config: frame_dropout must be in [0, 1)");
  }

  /// Canonical text form; checkpoints store a digest of it.
  std::string describe() const {
    std::ostringstream s;
    s.precision(17);
    s << "layers=" << layers << "\nhidden=" << hidden << "\nmixtures=" << mixtures
      << "\nmel_channels=" << mel_channels << "\nuse_centralized=" << use_centralized
      << "\nconditioning_dim=" << conditioning_dim << "\nfeature_layers=" << feature_layers
      << "\nattention_components=" << attention_components << "\nvocab_size=" << vocab_size
      << "\nattention_kappa_bias=" << attention_kappa_bias << "\nnorm_shift=" << norm.shift
      << "\nnorm_scale=" << norm.scale << "\n";
    return s.str();
  }
};

/// One training or evaluation example for a single tier (data units).
struct TierExample {
  Matrix x;                       // frames x channels
  Matrix context;                 // interleaved lower tiers, same shape as x; empty for the first tier
  Eigen::RowVectorXd condition;   // conditioning_dim entries, empty when unused
  std::vector<int> text;          // token ids, empty when unused
};

struct GridShape {
  int batch = 1;
  int frames = 0;
  int channels = 0;
  Eigen::Index rows() const { return static_cast<Eigen::Index>(batch) * frames * channels; }
  Eigen::Index frame_rows() const { return static_cast<Eigen::Index>(batch) * frames; }
};

/// Per-layer features. h_t and h_f have grid rows (b, i, j); h_c has frame
/// rows (b, i) and is empty when the centralized stack is off.
struct StackState {
  Var h_t;
  Var h_f;
  Var h_c;
};

class Network {
 public:
  static Network create(const NetworkConfig& config, std::uint64_t seed) {
    config.validate();
    Network n;
    n.config_ = config;
    std::mt19937_64 rng(seed);
    auto& ps = n.params_;
    const Eigen::Index h = config.hidden;
    const int d = config.total_conditioning_dim();

    n.in_time_ = ps.add("input.time", 1, h);
    n.in_freq_ = ps.add("input.freq", 1, h);
    init::scaled_uniform(ps[n.in_time_].value, rng);
    init::scaled_uniform(ps[n.in_freq_].value, rng);
    if (d > 0) {
      n.cond_time_ = ps.add("input.cond_time", d, h);
      n.cond_freq_ = ps.add("input.cond_freq", d, h);
      init::scaled_uniform(ps[n.cond_time_].value, rng);
      init::scaled_uniform(ps[n.cond_freq_].value, rng);
    }
    if (config.use_centralized) {
      n.in_central_ = ps.add("input.central", config.mel_channels, h);
      init::scaled_uniform(ps[n.in_central_].value, rng);
    }

    for (int l = 1; l <= config.layers; ++l) {
      const std::string p = "time." + std::to_string(l);
      TimeLayer t;
      t.freq_fwd = make_lstm(ps, p + ".freq_fwd", h, h, rng);
      t.freq_bwd = make_lstm(ps, p + ".freq_bwd", h, h, rng);
      t.time_fwd = make_lstm(ps, p + ".time_fwd", h, h, rng);
      t.proj = ps.add(p + ".proj", 3 * h, h);
      init::scaled_uniform(ps[t.proj].value, rng);
      n.time_.push_back(t);
    }
    for (int l = 1; l <= config.layers; ++l) {
      const std::string p = "freq." + std::to_string(l);
      FreqLayer f;
      f.rnn = make_lstm(ps, p + ".rnn", h, h, rng);
      f.proj = ps.add(p + ".proj", h, h);
      init::scaled_uniform(ps[f.proj].value, rng);
      n.freq_.push_back(f);
    }
    if (config.use_centralized) {
      n.central_ = FrameStack::create(ps, "central", config.layers, h, config.attention_components, rng,
                                       config.attention_kappa_bias);
    }
    if (config.has_attention()) n.text_ = TextEncoder::create(ps, "text", config.vocab_size, h, rng);

    n.head_ = ps.add("output.theta", h, 3 * config.mixtures);
    init::scaled_uniform(ps[n.head_].value, rng);

    if (config.feature_layers > 0) {
      n.fx_in_ = ps.add("context.input", 1, h);
      init::scaled_uniform(ps[n.fx_in_].value, rng);
      for (int l = 1; l <= config.feature_layers; ++l) {
        const std::string p = "context." + std::to_string(l);
        ContextLayer c;
        c.freq_fwd = make_lstm(ps, p + ".freq_fwd", h, h, rng);
        c.freq_bwd = make_lstm(ps, p + ".freq_bwd", h, h, rng);
        c.time_fwd = make_lstm(ps, p + ".time_fwd", h, h, rng);
        c.time_bwd = make_lstm(ps, p + ".time_bwd", h, h, rng);
        c.proj = ps.add(p + ".proj", 4 * h, h);
        init::scaled_uniform(ps[c.proj].value, rng);
        n.context_.push_back(c);
      }
    }
    return n;
  }

  const NetworkConfig& config() const { return config_; }
  /// Frame dropout is a training setting, so checkpoints do not carry it.
  void set_frame_dropout(double p) {
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("network config: frame_dropout must be in [0, 1)");
    config_.frame_dropout = p;
  }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  // ---- layer-level operations ------------------------------------------

  /// Layer-0 states from normalized inputs `xn` (B*T x M, rows (b, i)) and
  /// optional conditioning z (grid rows x D). Frames flagged in `dropped`
  /// (B*T entries) are zeroed in the time and centralized inputs only.
  StackState init_inputs(Tape& tape, const Matrix& xn, const GridShape& g, Var z,
                         const std::vector<char>* dropped = nullptr) {
    if (xn.rows() != g.frame_rows() || xn.cols() != g.channels) throw std::invalid_argument("init_inputs: shape mismatch");
    const bool has_z = z.tape != nullptr;
    if (has_z && (z.rows() != g.rows() || z.cols() != config_.total_conditioning_dim())) {
      throw std::invalid_argument("init_inputs: conditioning shape does not match the spectrogram");
    }
    if (!has_z && config_.total_conditioning_dim() > 0) throw std::invalid_argument("init_inputs: missing conditioning");
    Matrix prev_time = Matrix::Zero(g.rows(), 1);
    Matrix prev_freq = Matrix::Zero(g.rows(), 1);
    for (int b = 0; b < g.batch; ++b)
      for (int i = 0; i < g.frames; ++i)
        for (int j = 0; j < g.channels; ++j) {
          const int r = layout::grid_row(b, i, j, g.frames, g.channels);
          if (i > 0 && !(dropped && (*dropped)[b * g.frames + i - 1])) prev_time(r, 0) = xn(b * g.frames + i - 1, j);
          if (j > 0) prev_freq(r, 0) = xn(b * g.frames + i, j - 1);
        }
    StackState s;
    s.h_t = ops::matmul(tape.constant(std::move(prev_time)), tape.param(params_[in_time_]));
    s.h_f = ops::matmul(tape.constant(std::move(prev_freq)), tape.param(params_[in_freq_]));
    if (has_z) {
      s.h_t = ops::add(s.h_t, ops::matmul(z, tape.param(params_[cond_time_])));
      s.h_f = ops::add(s.h_f, ops::matmul(z, tape.param(params_[cond_freq_])));
    }
    if (config_.use_centralized) {
      if (g.channels != config_.mel_channels) throw std::invalid_argument("init_inputs: channel count differs from config");
      Matrix prev_frame = Matrix::Zero(g.frame_rows(), g.channels);
      for (int b = 0; b < g.batch; ++b)
        for (int i = 1; i < g.frames; ++i)
          if (!(dropped && (*dropped)[b * g.frames + i - 1])) prev_frame.row(b * g.frames + i) = xn.row(b * g.frames + i - 1);
      s.h_c = ops::matmul(tape.constant(std::move(prev_frame)), tape.param(params_[in_central_]));
    }
    return s;
  }

  /// h_t[l] = W [fwd_f, bwd_f, fwd_t](h_t[l-1]) + h_t[l-1].
  Var time_delayed_layer(Tape& tape, int l, Var h, const GridShape& g) {
    const TimeLayer& t = time_.at(static_cast<std::size_t>(l - 1));
    Var a = run_lstm(tape, params_, t.freq_fwd, h, layout::along_frequency(g.batch, g.frames, g.channels, false));
    Var b = run_lstm(tape, params_, t.freq_bwd, h, layout::along_frequency(g.batch, g.frames, g.channels, true));
    Var c = run_lstm(tape, params_, t.time_fwd, h, layout::along_time(g.batch, g.frames, g.channels, false));
    return check(ops::add(ops::matmul(ops::concat_cols({a, b, c}), tape.param(params_[t.proj])), h), "time-delayed layer");
  }

  /// h_f[l] = W RNN_f(h_f[l-1] + h_t[l] + h_c[l]) + h_f[l-1]; h_c is
  /// broadcast along frequency when present.
  Var frequency_delayed_layer(Tape& tape, int l, Var h_f, Var h_t, Var h_c, const GridShape& g) {
    const FreqLayer& f = freq_.at(static_cast<std::size_t>(l - 1));
    Var in = ops::add(h_f, h_t);
    if (h_c.tape != nullptr) in = ops::add(in, ops::gather_rows(h_c, frame_of_row(g)));
    Var r = run_lstm(tape, params_, f.rnn, in, layout::along_frequency(g.batch, g.frames, g.channels, false));
    return check(ops::add(ops::matmul(r, tape.param(params_[f.proj])), h_f), "frequency-delayed layer");
  }

  Var centralized_layer(Tape& tape, int l, Var h_c, const GridShape& g, const TextContext* text = nullptr,
                        std::vector<AttentionTrace>* traces = nullptr) {
    if (!central_) throw std::logic_error("centralized_layer: network has no centralized stack");
    return check(central_->layer(tape, params_, l, h_c, g.batch, g.frames, text, traces), "centralized layer");
  }

  /// Non-causal context features from normalized lower tiers (grid rows x 1).
  Var feature_extractor_forward(Tape& tape, const Matrix& context, const GridShape& g) {
    if (context_.empty()) throw std::logic_error("feature_extractor_forward: network has no context extractor");
    if (context.rows() != g.rows() || context.cols() != 1) throw std::invalid_argument("feature_extractor_forward: shape mismatch");
    if (!context.allFinite()) throw NumericError("feature_extractor_forward: non-finite context");
    Var h = ops::matmul(tape.constant(context), tape.param(params_[fx_in_]));
    for (const ContextLayer& c : context_) {
      Var a = run_lstm(tape, params_, c.freq_fwd, h, layout::along_frequency(g.batch, g.frames, g.channels, false));
      Var b = run_lstm(tape, params_, c.freq_bwd, h, layout::along_frequency(g.batch, g.frames, g.channels, true));
      Var d = run_lstm(tape, params_, c.time_fwd, h, layout::along_time(g.batch, g.frames, g.channels, false));
      Var e = run_lstm(tape, params_, c.time_bwd, h, layout::along_time(g.batch, g.frames, g.channels, true));
      h = check(ops::add(ops::matmul(ops::concat_cols({a, b, d, e}), tape.param(params_[c.proj])), h), "context layer");
    }
    return h;
  }

  // ---- whole-network passes ---------------------------------------------

  /// Conditioning grid z for a batch, or an empty Var when the tier has none.
  Var conditioning(Tape& tape, std::span<const TierExample> batch, const GridShape& g) {
    std::vector<Var> parts;
    if (config_.conditioning_dim > 0) {
      Matrix c(g.rows(), config_.conditioning_dim);
      for (int b = 0; b < g.batch; ++b) {
        const auto& cond = batch[static_cast<std::size_t>(b)].condition;
        if (cond.size() != config_.conditioning_dim) throw std::invalid_argument("conditioning: expected " +
                                                          std::to_string(config_.conditioning_dim) + " features");
        const Eigen::Index per = static_cast<Eigen::Index>(g.frames) * g.channels;
        for (Eigen::Index r = 0; r < per; ++r) c.row(b * per + r) = cond;
      }
      parts.push_back(tape.constant(std::move(c)));
    }
    if (config_.feature_layers > 0) {
      Matrix ctx(g.rows(), 1);
      for (int b = 0; b < g.batch; ++b) {
        const Matrix& m = batch[static_cast<std::size_t>(b)].context;
        if (m.rows() != g.frames || m.cols() != g.channels) throw std::invalid_argument("conditioning: context shape must equal the tier shape");
        for (int i = 0; i < g.frames; ++i)
          for (int j = 0; j < g.channels; ++j) ctx(layout::grid_row(b, i, j, g.frames, g.channels), 0) = config_.norm.to_model(m(i, j));
      }
      parts.push_back(feature_extractor_forward(tape, ctx, g));
    }
    if (parts.empty()) return Var{};
    return parts.size() == 1 ? parts[0] : ops::concat_cols(parts);
  }

  /// Unconstrained outputs theta_hat (grid rows x 3K, normalized units).
  /// With `rng`, previous frames are hidden at the configured frame_dropout rate.
  Var forward_raw(Tape& tape, std::span<const TierExample> batch, std::vector<AttentionTrace>* traces = nullptr,
                  std::mt19937_64* rng = nullptr) {
    const GridShape g = shape_of(batch);
    Matrix xn(g.frame_rows(), g.channels);
    for (int b = 0; b < g.batch; ++b) {
      const Matrix& x = batch[static_cast<std::size_t>(b)].x;
      if (!x.allFinite()) throw std::invalid_argument("network_forward: non-finite spectrogram");
      xn.middleRows(static_cast<Eigen::Index>(b) * g.frames, g.frames) = normalize(x);
    }
    Var z = conditioning(tape, batch, g);
    std::vector<char> dropped;
    if (rng && config_.frame_dropout > 0.0) {
      std::bernoulli_distribution drop(config_.frame_dropout);
      dropped.resize(static_cast<std::size_t>(g.frame_rows()));
      for (auto& d : dropped) d = drop(*rng) ? 1 : 0;
    }
    StackState s = init_inputs(tape, xn, g, z, dropped.empty() ? nullptr : &dropped);

    std::optional<TextContext> text;
    if (config_.has_attention()) {
      std::vector<std::vector<int>> texts;
      for (const auto& e : batch) texts.push_back(e.text);
      text.emplace();
      text->chars = text_->encode_batch(tape, params_, texts, text->max_len);
      for (const auto& t : texts) text->lengths.push_back(static_cast<int>(t.size()));
    }
    for (int l = 1; l <= config_.layers; ++l) {
      s.h_t = time_delayed_layer(tape, l, s.h_t, g);
      if (config_.use_centralized) s.h_c = centralized_layer(tape, l, s.h_c, g, text ? &*text : nullptr, traces);
      s.h_f = frequency_delayed_layer(tape, l, s.h_f, s.h_t, s.h_c, g);
    }
    return ops::matmul(s.h_f, tape.param(params_[head_]));
  }

  /// Mean teacher-forced NLL over every element of the batch, nats per element.
  Var loss(Tape& tape, std::span<const TierExample> batch, std::vector<AttentionTrace>* traces = nullptr,
           std::mt19937_64* rng = nullptr) {
    Var raw = forward_raw(tape, batch, traces, rng);
    const GridShape g = shape_of(batch);
    Matrix targets(g.rows(), 1);
    for (int b = 0; b < g.batch; ++b) {
      const Matrix& x = batch[static_cast<std::size_t>(b)].x;
      for (int i = 0; i < g.frames; ++i)
        for (int j = 0; j < g.channels; ++j) targets(layout::grid_row(b, i, j, g.frames, g.channels), 0) = x(i, j);
    }
    return gmm_nll_loss(raw, targets, config_.norm);
  }

  /// Mixture parameters (data units) for one example.
  GmmParamGrid network_forward(const TierExample& example, std::vector<AttentionTrace>* traces = nullptr) {
    Tape tape(false);
    Var raw = forward_raw(tape, std::span<const TierExample>(&example, 1), traces);
    return constrain_params(RawParamGrid{example.x.rows(), example.x.cols(), raw.value()}, config_.norm);
  }

  /// Extractor features for one context grid (frames x channels, data
  /// units), laid out as grid rows x hidden.
  Matrix context_features(const Matrix& context) {
    const GridShape g{1, static_cast<int>(context.rows()), static_cast<int>(context.cols())};
    Matrix ctx(g.rows(), 1);
    for (int i = 0; i < g.frames; ++i)
      for (int j = 0; j < g.channels; ++j) ctx(layout::grid_row(0, i, j, g.frames, g.channels), 0) = config_.norm.to_model(context(i, j));
    Tape tape(false);
    return feature_extractor_forward(tape, ctx, g).value();
  }

  double nll(const TierExample& example) {
    Tape tape(false);
    return loss(tape, std::span<const TierExample>(&example, 1)).value()(0, 0);
  }

 private:
  friend class Generator;

  struct TimeLayer {
    Lstm freq_fwd, freq_bwd, time_fwd;
    int proj = -1;
  };
  struct FreqLayer {
    Lstm rnn;
    int proj = -1;
  };
  struct ContextLayer {
    Lstm freq_fwd, freq_bwd, time_fwd, time_bwd;
    int proj = -1;
  };

  static GridShape shape_of(std::span<const TierExample> batch) {
    if (batch.empty()) throw std::invalid_argument("network: empty batch");
    GridShape g{static_cast<int>(batch.size()), static_cast<int>(batch[0].x.rows()), static_cast<int>(batch[0].x.cols())};
    if (g.frames < 1 || g.channels < 1) throw std::invalid_argument("network: empty spectrogram");
    for (const auto& e : batch) {
      if (e.x.rows() != g.frames || e.x.cols() != g.channels) throw std::invalid_argument("network: batch elements differ in shape");
    }
    return g;
  }

  static std::vector<int> frame_of_row(const GridShape& g) {
    std::vector<int> idx(static_cast<std::size_t>(g.rows()));
    for (Eigen::Index r = 0; r < g.rows(); ++r) idx[static_cast<std::size_t>(r)] = static_cast<int>(r / g.channels);
    return idx;
  }

  static Var check(Var v, const char* where) {
    if (!v.value().allFinite()) throw NumericError(std::string(where) + ": non-finite activations");
    return v;
  }

  Matrix normalize(const Matrix& x) const {
    return ((x.array() - config_.norm.shift) / config_.norm.scale).matrix();
  }

  NetworkConfig config_;
  ParameterSet params_;
  int in_time_ = -1, in_freq_ = -1, in_central_ = -1;
  int cond_time_ = -1, cond_freq_ = -1;
  std::vector<TimeLayer> time_;
  std::vector<FreqLayer> freq_;
  std::optional<FrameStack> central_;
  std::optional<TextEncoder> text_;
  int head_ = -1;
  int fx_in_ = -1;
  std::vector<ContextLayer> context_;
};

/// Incremental evaluation for ancestral sampling. Recurrent states along
/// time (and of the centralized stack) are carried between frames, so each
/// element costs O(L) cell updates. Produces the same raw outputs as
/// Network::forward_raw on the completed grid.
class Generator {
 public:
  /// `features` are the context-extractor rows (grid rows x H) for every
  /// frame that will be generated, or empty when the tier has none;
  /// `condition` is broadcast to every element. Without features the number
  /// of frames is unbounded.
  Generator(Network& net, int channels, Matrix features, Eigen::RowVectorXd condition, std::vector<int> text)
      : net_(net), channels_(channels), features_(std::move(features)), condition_(std::move(condition)) {
    const auto& cfg = net.config();
    if (cfg.use_centralized && channels != cfg.mel_channels) throw std::invalid_argument("generator: channel count differs from config");
    if (condition_.size() != cfg.conditioning_dim) throw std::invalid_argument("generator: wrong conditioning width");
    if (cfg.feature_layers > 0 && (features_.cols() != cfg.hidden || features_.rows() % channels != 0)) {
      throw std::invalid_argument("generator: context features have the wrong shape");
    }
    auto& ps = net.params_;
    for (const auto& t : net.time_) {
      time_state_.push_back(ps[t.time_fwd.init].value.replicate(channels, 1));
    }
    if (net.central_) {
      for (int l = 1; l <= cfg.layers; ++l) {
        if (l == net.central_->attention_layer) {
          central_state_.push_back(ps[net.central_->attention->rnn.init].value);
        } else {
          central_state_.push_back(ps[net.central_->rnn[static_cast<std::size_t>(l - 1)].init].value);
        }
      }
    }
    if (cfg.has_attention()) {
      if (text.empty()) throw std::invalid_argument("generator: text is required for attention");
      Tape tape(false);
      chars_ = net.text_->encode(tape, ps, text).value();
      text_length_ = static_cast<int>(text.size());
      kappa_ = Matrix::Zero(1, cfg.attention_components);
      read_ = Matrix::Zero(1, cfg.hidden);
    }
    prev_frame_ = Eigen::RowVectorXd::Zero(channels);
  }

  int frame() const { return frame_; }
  const std::optional<AttentionGamma>& gamma() const { return gamma_; }

  /// Advances to the next frame. `previous` is the frame just completed
  /// (data units); it is ignored for the first frame.
  void begin_frame(const Eigen::RowVectorXd& previous) {
    const auto& cfg = net_.config();
    auto& ps = net_.params_;
    if (frame_ >= 0) {
      if (previous.size() != channels_) throw std::invalid_argument("generator: frame width mismatch");
      prev_frame_ = ((previous.array() - cfg.norm.shift) / cfg.norm.scale).matrix();
    }
    ++frame_;
    if (cfg.feature_layers > 0 && (frame_ + 1) * channels_ > features_.rows()) {
      throw std::out_of_range("generator: no context features for frame " + std::to_string(frame_));
    }
    Tape tape(false);
    z_ = frame_conditioning(frame_);

    // Time-delayed stack for this frame only.
    Matrix x_prev = frame_ == 0 ? Matrix::Zero(channels_, 1) : Matrix(prev_frame_.transpose());
    Var h = ops::matmul(tape.constant(x_prev), tape.param(ps[net_.in_time_]));
    if (z_.cols() > 0) h = ops::add(h, ops::matmul(tape.constant(z_), tape.param(ps[net_.cond_time_])));
    h_t_.clear();
    for (std::size_t l = 0; l < net_.time_.size(); ++l) {
      const auto& t = net_.time_[l];
      Var a = run_lstm(tape, ps, t.freq_fwd, h, layout::along_frequency(1, 1, channels_, false));
      Var b = run_lstm(tape, ps, t.freq_bwd, h, layout::along_frequency(1, 1, channels_, true));
      Var hc = lstm_step(tape, ps, t.time_fwd, lstm_gates(tape, ps, t.time_fwd, h), tape.constant(time_state_[l]));
      time_state_[l] = hc.value();
      Var c = ops::slice_cols(hc, 0, cfg.hidden);
      h = ops::add(ops::matmul(ops::concat_cols({a, b, c}), tape.param(ps[t.proj])), h);
      h_t_.push_back(h.value());
    }

    // Centralized stack.
    h_c_.clear();
    gamma_.reset();
    if (net_.central_) {
      const FrameStack& cs = *net_.central_;
      Matrix x_row = frame_ == 0 ? Matrix::Zero(1, channels_) : Matrix(prev_frame_);
      Var y = ops::matmul(tape.constant(x_row), tape.param(ps[net_.in_central_]));
      for (int l = 1; l <= cfg.layers; ++l) {
        const auto idx = static_cast<std::size_t>(l - 1);
        if (l == cs.attention_layer) {
          TextContext text{tape.constant(chars_), {text_length_}, text_length_};
          std::vector<AttentionGamma> gammas;
          auto s = cs.attention->step(tape, ps, y, tape.constant(read_), tape.constant(central_state_[idx]),
                                      tape.constant(kappa_), text, &gammas);
          central_state_[idx] = s.hc.value();
          kappa_ = s.kappa.value();
          read_ = s.w.value();
          gamma_ = gammas.front();
          y = ops::add(s.out, y);
        } else {
          const Lstm& r = cs.rnn[idx];
          Var hc = lstm_step(tape, ps, r, lstm_gates(tape, ps, r, y), tape.constant(central_state_[idx]));
          central_state_[idx] = hc.value();
          y = ops::add(ops::matmul(ops::slice_cols(hc, 0, cfg.hidden), tape.param(ps[cs.proj[idx]])), y);
        }
        h_c_.push_back(y.value());
      }
    }

    // Frequency-delayed states restart at every frame.
    freq_state_.clear();
    for (const auto& f : net_.freq_) freq_state_.push_back(ps[f.rnn.init].value);
  }

  /// Raw outputs (1 x 3K, normalized units) for element j of the current
  /// frame given the value at j - 1 (data units; ignored for j = 0).
  Eigen::RowVectorXd element(int j, double previous) {
    if (frame_ < 0) throw std::logic_error("generator: begin_frame must be called first");
    if (j < 0 || j >= channels_) throw std::out_of_range("generator: channel index out of range");
    const auto& cfg = net_.config();
    auto& ps = net_.params_;
    Tape tape(false);
    Matrix xin(1, 1);
    xin(0, 0) = j == 0 ? 0.0 : cfg.norm.to_model(previous);
    Var h = ops::matmul(tape.constant(xin), tape.param(ps[net_.in_freq_]));
    if (z_.cols() > 0) h = ops::add(h, ops::matmul(tape.constant(z_.row(j)), tape.param(ps[net_.cond_freq_])));
    for (std::size_t l = 0; l < net_.freq_.size(); ++l) {
      const auto& f = net_.freq_[l];
      Matrix in = h.value() + h_t_[l].row(j);
      if (!h_c_.empty()) in += h_c_[l];
      Var hc = lstm_step(tape, ps, f.rnn, lstm_gates(tape, ps, f.rnn, tape.constant(std::move(in))),
                         tape.constant(freq_state_[l]));
      freq_state_[l] = hc.value();
      h = ops::add(ops::matmul(ops::slice_cols(hc, 0, cfg.hidden), tape.param(ps[f.proj])), h);
    }
    Matrix out = ops::matmul(h, tape.param(ps[net_.head_])).value();
    if (!out.allFinite()) throw NumericError("generator: non-finite output");
    return out.row(0);
  }

 private:
  Matrix frame_conditioning(int i) const {
    const auto& cfg = net_.config();
    const int d = cfg.total_conditioning_dim();
    Matrix z(channels_, d);
    if (d == 0) return z;
    if (cfg.conditioning_dim > 0) z.leftCols(cfg.conditioning_dim) = condition_.replicate(channels_, 1);
    if (cfg.feature_layers > 0) {
      z.rightCols(cfg.hidden) = features_.middleRows(static_cast<Eigen::Index>(i) * channels_, channels_);
    }
    return z;
  }

  Network& net_;
  int channels_;
  Matrix features_;
  Eigen::RowVectorXd condition_;
  int frame_ = -1;
  Eigen::RowVectorXd prev_frame_;
  Matrix z_;
  std::vector<Matrix> time_state_, central_state_, freq_state_;
  std::vector<Matrix> h_t_, h_c_;
  int text_length_ = 0;
  Matrix chars_, kappa_, read_;
  std::optional<AttentionGamma> gamma_;
};

}  // namespace melgen
