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

#include "melgen/audio/mel.hpp"
#include "melgen/multiscale/tiers.hpp"
#include "melgen/runtime/train.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace melgen::cli {

/// Invalid or inconsistent configuration; names the offending field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::runtime_error(what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Everything a run needs. Defaults are a desk-scale version of the
/// full-size hyperparameters.
struct RunConfig {
  SpectrogramConfig spectrogram;
  std::string task = "unconditional";  // or "tts"
  std::filesystem::path corpus;
  std::filesystem::path vocabulary;    // defaults to <corpus>/vocab.txt for tts
  int speakers = 0;                    // > 0 enables one-hot speaker conditioning
  double heldout_fraction = 0.1;

  int tiers = 1;
  std::vector<int> layers{2};          // per tier, "5-4-3-2-2" style
  int hidden = 16;
  int mixtures = 10;
  int feature_layers = 1;
  int attention_components = 1;
  double attention_kappa_bias = 0.0;
  double frame_dropout = 0.0;
  bool centralized = true;             // tier 1 only

  TrainConfig train;
  std::uint64_t seed = 0;
  std::string name = "run";

  int time_splits() const { return time_splits_of(schedule_for(tiers)); }

  static AxisSchedule schedule_for(int g) {
    AxisSchedule s;
    for (int k = 0; k + 1 < g; ++k) s.push_back(k % 2 == 0 ? Axis::Frequency : Axis::Time);
    return s;
  }
  AxisSchedule schedule() const { return schedule_for(tiers); }

  /// Schedule metadata stored in every tier checkpoint.
  std::string schedule_text() const {
    std::string s = "tiers=" + std::to_string(tiers) + ";axes=";
    for (Axis a : schedule()) s += std::string(axis_name(a)) + ",";
    return s;
  }

  NetworkConfig network(int tier, int vocab_size, const Normalization& norm) const {
    NetworkConfig n;
    n.layers = layers.at(static_cast<std::size_t>(tier - 1));
    n.hidden = hidden;
    n.mixtures = mixtures;
    n.norm = norm;
    n.frame_dropout = frame_dropout;
    if (tier == 1) {
      auto [f, c] = tier_shape(schedule(), 1, 1 << time_splits(), spectrogram.mel_channels);
      (void)f;
      n.use_centralized = centralized;
      n.mel_channels = c;
      n.conditioning_dim = speakers;
      if (task == "tts") {
        n.attention_components = attention_components;
        n.vocab_size = vocab_size;
        n.attention_kappa_bias = attention_kappa_bias;
      }
    } else {
      n.feature_layers = feature_layers;
    }
    return n;
  }

  std::string describe() const {
    std::ostringstream s;
    s.precision(10);
    s << "spectrogram.sample_rate = " << spectrogram.sample_rate << "\n"
      << "spectrogram.hop = " << spectrogram.hop << "\n"
      << "spectrogram.window = " << spectrogram.window << "\n"
      << "spectrogram.fft_size = " << spectrogram.fft_size << "\n"
      << "spectrogram.mel_channels = " << spectrogram.mel_channels << "\n"
      << "spectrogram.f_min = " << spectrogram.f_min << "\n"
      << "spectrogram.f_max = " << spectrogram.f_max << "\n"
      << "task.kind = " << task << "\n"
      << "corpus.path = " << corpus.string() << "\n"
      << "corpus.vocabulary = " << vocabulary.string() << "\n"
      << "corpus.speakers = " << speakers << "\n"
      << "corpus.heldout_fraction = " << heldout_fraction << "\n"
      << "multiscale.tiers = " << tiers << "\n"
      << "network.layers = ";
    for (std::size_t k = 0; k < layers.size(); ++k) s << (k ? "-" : "") << layers[k];
    s << "\n"
      << "network.hidden = " << hidden << "\n"
      << "network.mixtures = " << mixtures << "\n"
      << "network.feature_layers = " << feature_layers << "\n"
      << "network.attention_components = " << attention_components << "\n"
      << "network.attention_kappa_bias = " << attention_kappa_bias << "\n"
      << "network.frame_dropout = " << frame_dropout << "\n"
      << "network.centralized = " << (centralized ? "true" : "false") << "\n"
      << "train.learning_rate = " << train.learning_rate << "\n"
      << "train.momentum = " << train.momentum << "\n"
      << "train.batch_size = " << train.batch_size << "\n"
      << "train.max_sample_duration = " << train.max_sample_duration << "\n"
      << "train.steps = " << train.steps << "\n"
      << "train.grad_clip_norm = " << train.grad_clip_norm << "\n"
      << "train.checkpoint_every = " << train.checkpoint_every << "\n"
      << "run.seed = " << seed << "\n"
      << "run.name = " << name << "\n";
    return s.str();
  }

  void validate() const {
    try {
      spectrogram.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("spectrogram", e.what());
    }
    if (task != "unconditional" && task != "tts") throw ConfigError("task.kind", "must be 'unconditional' or 'tts'");
    if (tiers < 1) throw ConfigError("multiscale.tiers", "must be >= 1");
    if (static_cast<int>(layers.size()) != tiers) {
      throw ConfigError("network.layers", "needs one layer count per tier (" + std::to_string(tiers) + ")");
    }
    for (int l : layers)
      if (l < 1) throw ConfigError("network.layers", "layer counts must be >= 1");
    if (hidden < 1) throw ConfigError("network.hidden", "must be >= 1");
    if (mixtures < 1) throw ConfigError("network.mixtures", "must be >= 1");
    if (!(frame_dropout >= 0.0 && frame_dropout < 1.0)) throw ConfigError("network.frame_dropout", "must be in [0, 1)");
    if (tiers > 1 && feature_layers < 1) throw ConfigError("network.feature_layers", "upsampling tiers need >= 1 layer");
    if (task == "tts" && attention_components < 1) throw ConfigError("network.attention_components", "tts needs >= 1");
    if (task == "tts" && !centralized) throw ConfigError("network.centralized", "tts requires the centralized stack");
    if (speakers < 0) throw ConfigError("corpus.speakers", "must be >= 0");
    if (!(heldout_fraction >= 0.0 && heldout_fraction < 1.0)) throw ConfigError("corpus.heldout_fraction", "must be in [0, 1)");
    try {
      shape_after(schedule(), 1 << time_splits(), spectrogram.mel_channels, schedule().size());
    } catch (const std::invalid_argument& e) {
      throw ConfigError("spectrogram.mel_channels", std::string("not divisible by the tier schedule: ") + e.what());
    }
    try {
      train.validate();
    } catch (const std::invalid_argument& e) {
      const std::string msg = e.what();
      throw ConfigError(msg.substr(0, msg.find(' ')), msg);
    }
  }

 private:
  static int time_splits_of(const AxisSchedule& s) { return melgen::time_splits(s); }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  in >> out;
  if (!in || !in.eof()) {
    // istringstream sets eof only when it consumed the whole token
    std::string rest;
    if (!in || (in >> rest, !rest.empty())) throw ConfigError(key, "cannot parse '" + v + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "expected a boolean, got '" + v + "'");
}

}  // namespace config_detail

/// Applies one `section.key = value` assignment.
inline void set_option(RunConfig& c, const std::string& key, const std::string& value) {
  using config_detail::parse_bool;
  using config_detail::parse_number;
  const std::string& v = value;
  if (key == "spectrogram.sample_rate") c.spectrogram.sample_rate = parse_number<int>(key, v);
  else if (key == "spectrogram.hop") c.spectrogram.hop = parse_number<int>(key, v);
  else if (key == "spectrogram.window") c.spectrogram.window = parse_number<int>(key, v);
  else if (key == "spectrogram.fft_size") c.spectrogram.fft_size = parse_number<int>(key, v);
  else if (key == "spectrogram.mel_channels") c.spectrogram.mel_channels = parse_number<int>(key, v);
  else if (key == "spectrogram.f_min") c.spectrogram.f_min = parse_number<double>(key, v);
  else if (key == "spectrogram.f_max") c.spectrogram.f_max = parse_number<double>(key, v);
  else if (key == "task.kind") c.task = v;
  else if (key == "corpus.path") c.corpus = v;
  else if (key == "corpus.vocabulary") c.vocabulary = v;
  else if (key == "corpus.speakers") c.speakers = parse_number<int>(key, v);
  else if (key == "corpus.heldout_fraction") c.heldout_fraction = parse_number<double>(key, v);
  else if (key == "multiscale.tiers") c.tiers = parse_number<int>(key, v);
  else if (key == "network.layers") {
    c.layers.clear();
    std::istringstream in(v);
    std::string part;
    while (std::getline(in, part, '-')) c.layers.push_back(parse_number<int>(key, config_detail::trim(part)));
  } else if (key == "network.hidden") c.hidden = parse_number<int>(key, v);
  else if (key == "network.mixtures") c.mixtures = parse_number<int>(key, v);
  else if (key == "network.feature_layers") c.feature_layers = parse_number<int>(key, v);
  else if (key == "network.attention_components") c.attention_components = parse_number<int>(key, v);
  else if (key == "network.attention_kappa_bias") c.attention_kappa_bias = parse_number<double>(key, v);
  else if (key == "network.frame_dropout") c.frame_dropout = parse_number<double>(key, v);
  else if (key == "network.centralized") c.centralized = parse_bool(key, v);
  else if (key == "train.learning_rate") c.train.learning_rate = parse_number<double>(key, v);
  else if (key == "train.momentum") c.train.momentum = parse_number<double>(key, v);
  else if (key == "train.batch_size") c.train.batch_size = parse_number<int>(key, v);
  else if (key == "train.max_sample_duration") c.train.max_sample_duration = parse_number<double>(key, v);
  else if (key == "train.steps") c.train.steps = parse_number<std::int64_t>(key, v);
  else if (key == "train.grad_clip_norm") c.train.grad_clip_norm = v == "inf" ? std::numeric_limits<double>::infinity() : parse_number<double>(key, v);
  else if (key == "train.checkpoint_every") c.train.checkpoint_every = parse_number<std::int64_t>(key, v);
  else if (key == "run.seed") c.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "run.name") c.name = v;
  else throw ConfigError(key, "unknown configuration key");
}

/// Flat key-value text; '#' starts a comment. Relative paths are resolved
/// against `base`.
inline RunConfig parse_config(const std::string& text, const std::filesystem::path& base = {}) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(n), "expected 'key = value'");
    set_option(c, config_detail::trim(line.substr(0, eq)), config_detail::trim(line.substr(eq + 1)));
  }
  if (!base.empty()) {
    if (!c.corpus.empty() && c.corpus.is_relative()) c.corpus = base / c.corpus;
    if (!c.vocabulary.empty() && c.vocabulary.is_relative()) c.vocabulary = base / c.vocabulary;
  }
  if (c.layers.size() == 1 && c.tiers > 1) c.layers.assign(static_cast<std::size_t>(c.tiers), c.layers.front());
  c.train.seed = c.seed;
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

}  // namespace melgen::cli
