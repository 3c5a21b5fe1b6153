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
#include "melgen/net/network.hpp"

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace melgen {

enum class LatentKind { None, Global, Local };

inline const char* latent_name(LatentKind k) {
  switch (k) {
    case LatentKind::Global: return "global";
    case LatentKind::Local: return "local";
    default: return "none";
  }
}

/// Frame-level model: an autoregressive recurrent decoder emits a diagonal
/// Gaussian per frame. With a latent it becomes a VAE whose inference
/// network is a bidirectional recurrent stack.
struct FrameModelConfig {
  int channels = 0;
  int layers = 2;
  int hidden = 16;
  LatentKind latent = LatentKind::None;
  int latent_dim = 16;
  int encoder_layers = 1;
  int attention_components = 0;
  int vocab_size = 0;
  Normalization norm;

  bool has_attention() const { return attention_components > 0; }

  void validate() const {
    if (channels < 1) throw std::invalid_argument("frame model: channels must be >= 1");
    if (layers < 1 || hidden < 1) throw std::invalid_argument("frame model: layers and hidden must be >= 1");
    if (latent != LatentKind::None && (latent_dim < 1 || encoder_layers < 1)) {
      throw std::invalid_argument("frame model: latent and encoder sizes must be >= 1");
    }
    if (has_attention() && vocab_size < 1) throw std::invalid_argument("frame model: attention requires a vocabulary");
    if (!(norm.scale > 0.0)) throw std::invalid_argument("frame model: invalid normalization");
  }

  std::string describe() const {
    std::ostringstream s;
    s.precision(17);
    s << "kind=frame\nchannels=" << channels << "\nlayers=" << layers << "\nhidden=" << hidden
      << "\nlatent=" << latent_name(latent) << "\nlatent_dim=" << latent_dim << "\nencoder_layers=" << encoder_layers
      << "\nattention_components=" << attention_components << "\nvocab_size=" << vocab_size
      << "\nnorm_shift=" << norm.shift << "\nnorm_scale=" << norm.scale << "\n";
    return s.str();
  }
};

/// Mean diagonal-Gaussian NLL in nats per element of frames x (T x d) under
/// per-frame means and standard deviations of the same shape.
inline double framewise_gaussian_nll(const Matrix& x, const Matrix& mean, const Matrix& stddev) {
  if (x.rows() != mean.rows() || x.cols() != mean.cols() || x.rows() != stddev.rows() || x.cols() != stddev.cols()) {
    throw std::invalid_argument("framewise_gaussian_nll: shape mismatch");
  }
  if (x.size() == 0) throw std::invalid_argument("framewise_gaussian_nll: empty input");
  if ((stddev.array() <= 0.0).any()) throw std::invalid_argument("framewise_gaussian_nll: standard deviations must be positive");
  const auto z = ((x - mean).array() / stddev.array());
  return (0.5 * z.square() + stddev.array().log() + kHalfLog2Pi).sum() / static_cast<double>(x.size());
}

/// Linear KL-weight ramp reaching 1 at the last step of the first epoch.
inline double kl_anneal_weight(std::int64_t step, std::int64_t steps_per_epoch) {
  if (steps_per_epoch < 1) throw std::invalid_argument("kl_anneal_weight: steps per epoch must be >= 1");
  if (step < 0) throw std::invalid_argument("kl_anneal_weight: negative step");
  return std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(steps_per_epoch));
}

/// Per-batch objective terms, all in nats summed over the batch.
struct FrameLossTerms {
  double reconstruction = 0.0;  // -log p(x | z), data units
  double kl = 0.0;
  double elements = 0.0;
};

class FrameModel {
 public:
  static FrameModel create(const FrameModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    FrameModel m;
    m.cfg_ = cfg;
    std::mt19937_64 rng(seed);
    auto& ps = m.params_;
    const Eigen::Index h = cfg.hidden;
    m.in_x_ = ps.add("decoder.input.x", cfg.channels, h);
    init::scaled_uniform(ps[m.in_x_].value, rng);
    m.in_b_ = ps.add("decoder.input.bias", 1, h);
    if (cfg.latent != LatentKind::None) {
      m.in_z_ = ps.add("decoder.input.z", cfg.latent_dim, h);
      init::scaled_uniform(ps[m.in_z_].value, rng);
    }
    m.decoder_ = FrameStack::create(ps, "decoder", cfg.layers, h, cfg.attention_components, rng);
    if (cfg.has_attention()) m.text_ = TextEncoder::create(ps, "text", cfg.vocab_size, h, rng);
    m.head_w_ = ps.add("decoder.head.w", h, 2 * cfg.channels);
    m.head_b_ = ps.add("decoder.head.b", 1, 2 * cfg.channels);
    init::scaled_uniform(ps[m.head_w_].value, rng);
    if (cfg.latent != LatentKind::None) {
      m.enc_in_ = ps.add("encoder.input.w", cfg.channels, h);
      m.enc_in_b_ = ps.add("encoder.input.b", 1, h);
      init::scaled_uniform(ps[m.enc_in_].value, rng);
      m.encoder_ = BidirectionalFrameStack::create(ps, "encoder", cfg.encoder_layers, h, rng);
      m.enc_head_w_ = ps.add("encoder.head.w", h, 2 * cfg.latent_dim);
      m.enc_head_b_ = ps.add("encoder.head.b", 1, 2 * cfg.latent_dim);
      init::scaled_uniform(ps[m.enc_head_w_].value, rng);
    }
    return m;
  }

  const FrameModelConfig& config() const { return cfg_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  bool is_bound() const { return cfg_.latent != LatentKind::None; }

  /// Per-element training objective in data units: the exact NLL without a
  /// latent, otherwise the single-sample negated ELBO with the KL term
  /// weighted by `kl_weight`.
  Var loss(Tape& tape, std::span<const TierExample> batch, double kl_weight, std::mt19937_64& rng,
           FrameLossTerms* terms = nullptr) {
    if (!(kl_weight >= 0.0 && kl_weight <= 1.0)) throw std::invalid_argument("vae_elbo: kl_weight must be in [0, 1]");
    const Shape s = shape_of(batch);
    const Matrix xn = stack_normalized(batch, s);
    Var z;
    Var kl;
    if (is_bound()) {
      auto [mean, log_std] = posterior(tape, xn, s);
      Matrix eps(mean.rows(), mean.cols());
      std::normal_distribution<double> normal(0.0, 1.0);
      for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(rng);
      z = ops::add(mean, ops::mul(ops::exp(log_std), tape.constant(std::move(eps))));
      kl = ops::kl_standard_normal(mean, log_std);
    }
    Var rec = reconstruction(tape, batch, xn, s, z);
    const double n = static_cast<double>(xn.size());
    Var total = rec;
    if (kl.tape != nullptr && kl_weight > 0.0) total = ops::add(total, ops::scale(kl, kl_weight));
    Var per = ops::scale(total, 1.0 / n);
    Matrix offset(1, 1);
    offset(0, 0) = std::log(cfg_.norm.scale);
    per = ops::add(per, tape.constant(std::move(offset)));
    if (terms != nullptr) {
      terms->reconstruction = rec.value()(0, 0) + n * std::log(cfg_.norm.scale);
      terms->kl = kl.tape != nullptr ? kl.value()(0, 0) : 0.0;
      terms->elements = n;
    }
    if (!std::isfinite(per.value()(0, 0))) throw NumericError("frame model: objective is not finite");
    return per;
  }

  /// Held-out score in nats per element: exact NLL, or the negated ELBO
  /// (KL weight 1) averaged over `samples` posterior draws.
  double evaluate(const TierExample& e, int samples, std::mt19937_64& rng) {
    const int draws = is_bound() ? std::max(1, samples) : 1;
    double acc = 0.0;
    for (int k = 0; k < draws; ++k) {
      Tape tape(false);
      acc += loss(tape, std::span<const TierExample>(&e, 1), 1.0, rng).value()(0, 0);
    }
    return acc / draws;
  }

  /// -log p(x | z) in nats for a single example and a fixed latent
  /// (1 x Z for a global latent, T x Z for a local one).
  double conditional_nll(const TierExample& e, const Matrix& z) {
    if (!is_bound()) throw std::logic_error("conditional_nll: model has no latent");
    const Shape s = shape_of(std::span<const TierExample>(&e, 1));
    const Eigen::Index rows = cfg_.latent == LatentKind::Global ? 1 : s.frames;
    if (z.rows() != rows || z.cols() != cfg_.latent_dim) throw std::invalid_argument("conditional_nll: latent shape mismatch");
    Tape tape(false);
    const Matrix xn = stack_normalized(std::span<const TierExample>(&e, 1), s);
    Var rec = reconstruction(tape, std::span<const TierExample>(&e, 1), xn, s, tape.constant(z));
    return rec.value()(0, 0) + static_cast<double>(xn.size()) * std::log(cfg_.norm.scale);
  }

  /// Posterior mean and standard deviation for one example; rows as in
  /// conditional_nll.
  std::pair<Matrix, Matrix> posterior_of(const TierExample& e) {
    if (!is_bound()) throw std::logic_error("posterior_of: model has no latent");
    const Shape s = shape_of(std::span<const TierExample>(&e, 1));
    Tape tape(false);
    auto [m, ls] = posterior(tape, stack_normalized(std::span<const TierExample>(&e, 1), s), s);
    return {m.value(), ls.value().array().exp().matrix()};
  }

  /// Per-frame Gaussian parameters (data units) for an example; latent
  /// models use the posterior mean.
  std::pair<Matrix, Matrix> frame_params(const TierExample& e) {
    const Shape s = shape_of(std::span<const TierExample>(&e, 1));
    Tape tape(false);
    const Matrix xn = stack_normalized(std::span<const TierExample>(&e, 1), s);
    Var z;
    if (is_bound()) z = posterior(tape, xn, s).first;
    auto [mean, log_std] = decode(tape, std::span<const TierExample>(&e, 1), xn, s, z);
    Matrix mu = (mean.value().array() * cfg_.norm.scale + cfg_.norm.shift).matrix();
    Matrix sd = (log_std.value().array().exp() * cfg_.norm.scale).matrix();
    return {mu, sd};
  }

 private:
  struct Shape {
    int batch = 0;
    int frames = 0;
  };

  Shape shape_of(std::span<const TierExample> batch) const {
    if (batch.empty()) throw std::invalid_argument("frame model: empty batch");
    Shape s{static_cast<int>(batch.size()), static_cast<int>(batch[0].x.rows())};
    for (const auto& e : batch) {
      if (e.x.rows() != s.frames || e.x.cols() != cfg_.channels) throw std::invalid_argument("frame model: corpus/model shape mismatch");
      if (!e.x.allFinite()) throw std::invalid_argument("frame model: non-finite input");
    }
    if (s.frames < 1) throw std::invalid_argument("frame model: empty spectrogram");
    return s;
  }

  Matrix stack_normalized(std::span<const TierExample> batch, const Shape& s) const {
    Matrix xn(static_cast<Eigen::Index>(s.batch) * s.frames, cfg_.channels);
    for (int b = 0; b < s.batch; ++b) {
      xn.middleRows(static_cast<Eigen::Index>(b) * s.frames, s.frames) =
          ((batch[static_cast<std::size_t>(b)].x.array() - cfg_.norm.shift) / cfg_.norm.scale).matrix();
    }
    return xn;
  }

  std::pair<Var, Var> posterior(Tape& tape, const Matrix& xn, const Shape& s) {
    Var h = ops::add_row(ops::matmul(tape.constant(xn), tape.param(params_[enc_in_])), tape.param(params_[enc_in_b_]));
    h = encoder_->run(tape, params_, h, s.batch, s.frames);
    if (cfg_.latent == LatentKind::Global) h = ops::mean_row_groups(h, s.frames);
    Var q = ops::add_row(ops::matmul(h, tape.param(params_[enc_head_w_])), tape.param(params_[enc_head_b_]));
    return {ops::slice_cols(q, 0, cfg_.latent_dim), ops::slice_cols(q, cfg_.latent_dim, cfg_.latent_dim)};
  }

  /// Decoder means and log standard deviations (normalized units).
  std::pair<Var, Var> decode(Tape& tape, std::span<const TierExample> batch, const Matrix& xn, const Shape& s, Var z) {
    Matrix prev = Matrix::Zero(xn.rows(), xn.cols());
    for (int b = 0; b < s.batch; ++b)
      for (int i = 1; i < s.frames; ++i) prev.row(b * s.frames + i) = xn.row(b * s.frames + i - 1);
    Var h = ops::add_row(ops::matmul(tape.constant(std::move(prev)), tape.param(params_[in_x_])), tape.param(params_[in_b_]));
    if (z.tape != nullptr) {
      Var zr = z;
      if (cfg_.latent == LatentKind::Global) {
        std::vector<int> idx(static_cast<std::size_t>(s.batch) * static_cast<std::size_t>(s.frames));
        for (std::size_t r = 0; r < idx.size(); ++r) idx[r] = static_cast<int>(r) / s.frames;
        zr = ops::gather_rows(z, idx);
      }
      h = ops::add(h, ops::matmul(zr, tape.param(params_[in_z_])));
    }
    std::optional<TextContext> text;
    if (cfg_.has_attention()) {
      std::vector<std::vector<int>> texts;
      for (const auto& e : batch) texts.push_back(e.text);
      text.emplace();
      text->chars = text_->encode_batch(tape, params_, texts, text->max_len);
      for (const auto& t : texts) text->lengths.push_back(static_cast<int>(t.size()));
    }
    auto outs = decoder_.run(tape, params_, h, s.batch, s.frames, text ? &*text : nullptr);
    Var out = ops::add_row(ops::matmul(outs.back(), tape.param(params_[head_w_])), tape.param(params_[head_b_]));
    return {ops::slice_cols(out, 0, cfg_.channels), ops::slice_cols(out, cfg_.channels, cfg_.channels)};
  }

  /// Summed -log p(x | z) in normalized units.
  Var reconstruction(Tape& tape, std::span<const TierExample> batch, const Matrix& xn, const Shape& s, Var z) {
    auto [mean, log_std] = decode(tape, batch, xn, s, z);
    return ops::diag_gaussian_nll(xn, mean, log_std);
  }

  FrameModelConfig cfg_;
  ParameterSet params_;
  int in_x_ = -1, in_b_ = -1, in_z_ = -1;
  FrameStack decoder_;
  std::optional<TextEncoder> text_;
  int head_w_ = -1, head_b_ = -1;
  int enc_in_ = -1, enc_in_b_ = -1;
  std::optional<BidirectionalFrameStack> encoder_;
  int enc_head_w_ = -1, enc_head_b_ = -1;
};

}  // namespace melgen
