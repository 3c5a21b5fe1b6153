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

#include "melgen/audio/inversion.hpp"
#include "melgen/audio/wav.hpp"
#include "melgen/baselines/benchmark.hpp"
#include "melgen/cli/config.hpp"
#include "melgen/cli/toydata.hpp"
#include "melgen/multiscale/tiers.hpp"
#include "melgen/runtime/checkpoint.hpp"
#include "melgen/runtime/corpus.hpp"
#include "melgen/runtime/sampling.hpp"
#include "melgen/runtime/train.hpp"
#include "melgen/tts/vocabulary.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace melgen::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kConfig = 2, kRuntime = 3 };

/// Root directory for run outputs: $MELGEN_OUT, else ./runs.
inline std::filesystem::path output_root() {
  const char* env = std::getenv("MELGEN_OUT");
  return env != nullptr && *env != '\0' ? std::filesystem::path(env) : std::filesystem::path("runs");
}

/// 8-bit binary PGM of a (frames x channels) grid: time runs left to right,
/// low frequencies at the bottom, values scaled to the grid's own range.
inline void write_pgm(const std::filesystem::path& path, const Matrix& x) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const auto w = x.rows(), h = x.cols();
  out << "P5\n" << w << ' ' << h << "\n255\n";
  const double lo = x.size() ? x.minCoeff() : 0.0;
  const double hi = x.size() ? x.maxCoeff() : 0.0;
  const double span = hi > lo ? hi - lo : 1.0;
  for (Eigen::Index r = h - 1; r >= 0; --r) {
    for (Eigen::Index c = 0; c < w; ++c) {
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * (x(c, r) - lo) / span))));
    }
  }
}

namespace cmd_detail {

inline std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_matrix(const std::filesystem::path& p, const Matrix& m) {
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    const std::int64_t r = m.rows(), c = m.cols();
    out.write(reinterpret_cast<const char*>(&r), sizeof r);
    out.write(reinterpret_cast<const char*>(&c), sizeof c);
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!out) throw std::runtime_error("cannot write " + tmp);
  }
  std::filesystem::rename(tmp, p);
}

inline std::optional<Matrix> read_matrix(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return std::nullopt;
  std::int64_t r = 0, c = 0;
  in.read(reinterpret_cast<char*>(&r), sizeof r);
  in.read(reinterpret_cast<char*>(&c), sizeof c);
  if (!in || r < 0 || c < 0) return std::nullopt;
  Matrix m(r, c);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!in || in.peek() != std::char_traits<char>::eof()) return std::nullopt;
  return m;
}

inline std::string spectrogram_key(const SpectrogramConfig& c) {
  std::ostringstream s;
  s.precision(17);
  s << c.sample_rate << ' ' << c.hop << ' ' << c.window << ' ' << c.fft_size << ' ' << c.mel_channels << ' ' << c.f_min
    << ' ' << c.f_max << ' ' << c.log_floor;
  return s.str();
}

}  // namespace cmd_detail

/// One corpus clip after analysis.
struct PreparedClip {
  Matrix mel;
  std::string text;
  int speaker = -1;
};

struct PrepareStats {
  int computed = 0;
  int reused = 0;
};

/// Loads every clip of the corpus, computing log-mel spectrograms through a
/// cache keyed by the audio bytes and the analysis settings.
inline std::vector<PreparedClip> prepare_corpus(const RunConfig& cfg, const std::filesystem::path& cache_dir,
                                                PrepareStats* stats = nullptr) {
  if (cfg.corpus.empty()) throw ConfigError("corpus.path", "no corpus configured");
  if (!std::filesystem::exists(cfg.corpus / "manifest.tsv")) {
    throw ConfigError("corpus.path", "no manifest.tsv in " + cfg.corpus.string());
  }
  const auto entries = toy::read_manifest(cfg.corpus);
  if (entries.empty()) throw ConfigError("corpus.path", "corpus " + cfg.corpus.string() + " is empty");
  std::filesystem::create_directories(cache_dir);
  const std::uint64_t spec_hash = fnv1a(cmd_detail::spectrogram_key(cfg.spectrogram));
  std::vector<PreparedClip> out;
  for (const auto& e : entries) {
    const auto bytes = cmd_detail::read_bytes(e.wav);
    const auto path = cache_dir / (cmd_detail::hex64(fnv1a(bytes.data(), bytes.size(), spec_hash)) + ".mel");
    PreparedClip c;
    c.text = e.text;
    c.speaker = e.speaker;
    if (auto cached = cmd_detail::read_matrix(path); cached && cached->cols() == cfg.spectrogram.mel_channels) {
      c.mel = std::move(*cached);
      if (stats) ++stats->reused;
    } else {
      const Waveform w = decode_wav(bytes);
      if (w.sample_rate != cfg.spectrogram.sample_rate) {
        throw ConfigError("spectrogram.sample_rate", e.wav.string() + " is sampled at " + std::to_string(w.sample_rate) + " Hz");
      }
      c.mel = compute_melspectrogram(w, cfg.spectrogram).values;
      cmd_detail::write_matrix(path, c.mel);
      if (stats) ++stats->computed;
    }
    out.push_back(std::move(c));
  }
  return out;
}

/// Deterministic split: the last round(fraction * n) clips are held out,
/// at least one when the fraction is positive and more than one clip exists.
inline std::pair<std::vector<PreparedClip>, std::vector<PreparedClip>> split_heldout(std::vector<PreparedClip> clips,
                                                                                     double fraction) {
  const auto n = clips.size();
  std::size_t held = 0;
  if (fraction > 0.0 && n > 1) {
    held = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n))));
    held = std::min(held, n - 1);
  }
  std::vector<PreparedClip> test(std::make_move_iterator(clips.end() - static_cast<std::ptrdiff_t>(held)),
                                 std::make_move_iterator(clips.end()));
  clips.resize(n - held);
  return {std::move(clips), std::move(test)};
}

inline std::optional<Vocabulary> load_vocabulary(const RunConfig& cfg) {
  if (cfg.task != "tts") return std::nullopt;
  const auto path = cfg.vocabulary.empty() ? cfg.corpus / "vocab.txt" : cfg.vocabulary;
  try {
    return Vocabulary::load(path);
  } catch (const std::exception& e) {
    throw ConfigError("corpus.vocabulary", e.what());
  }
}

inline Eigen::RowVectorXd speaker_condition(const RunConfig& cfg, int speaker) {
  if (cfg.speakers == 0) return {};
  if (speaker < 0 || speaker >= cfg.speakers) {
    throw ConfigError("corpus.speakers", "speaker id " + std::to_string(speaker) + " outside [0, " +
                                             std::to_string(cfg.speakers) + ")");
  }
  Eigen::RowVectorXd z = Eigen::RowVectorXd::Zero(cfg.speakers);
  z(speaker) = 1.0;
  return z;
}

inline std::vector<int> encode_text(const std::optional<Vocabulary>& voc, const std::string& text) {
  if (!voc) return {};
  try {
    return voc->encode(text);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("corpus.vocabulary", e.what());
  }
}

/// Full-resolution training examples. Untexted clips get one random crop
/// no longer than the maximum duration; texted clips are kept whole so the
/// transcript stays aligned, only trimmed to a multiple of the time scale.
inline std::vector<TierExample> training_grids(const RunConfig& cfg, const std::vector<PreparedClip>& clips,
                                               std::mt19937_64& rng, std::vector<std::string>& warnings) {
  const int divisor = 1 << cfg.time_splits();
  const int max_frames = max_frames_for(cfg.train.max_sample_duration, cfg.spectrogram);
  const auto voc = load_vocabulary(cfg);
  std::vector<TierExample> out;
  for (std::size_t k = 0; k < clips.size(); ++k) {
    const auto& c = clips[k];
    TierExample e;
    e.condition = speaker_condition(cfg, c.speaker);
    if (voc) {
      e.text = encode_text(voc, c.text);
      const auto t = static_cast<int>(c.mel.rows());
      const int len = (t / divisor) * divisor;
      if (t > max_frames) warnings.push_back("clip " + std::to_string(k) + ": texted clip longer than train.max_sample_duration kept whole");
      if (len == 0) {
        warnings.push_back("clip " + std::to_string(k) + ": shorter than one unit of " + std::to_string(divisor) + " frames; skipped");
        continue;
      }
      e.x = c.mel.topRows(len);
    } else {
      SliceResult s = slice_corpus({c.mel}, max_frames, divisor, rng);
      for (auto& w : s.warnings) warnings.push_back("clip " + std::to_string(k) + ": " + w);
      if (s.crops.empty()) continue;
      e.x = std::move(s.crops.front());
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<TierExample> tier_examples(const RunConfig& cfg, const std::vector<TierExample>& grids, int tier) {
  std::vector<TierExample> out;
  for (const auto& e : grids) out.push_back(tier_example(decompose(e.x, cfg.schedule()), tier, e.condition, e.text));
  return out;
}

inline std::filesystem::path tier_checkpoint_path(const std::filesystem::path& run_dir, int tier) {
  return run_dir / ("tier" + std::to_string(tier) + ".ckpt");
}

/// Loads a tier checkpoint and checks it against the run configuration.
inline Network load_tier(const RunConfig& cfg, const std::filesystem::path& run_dir, int tier, int vocab_size) {
  const auto path = tier_checkpoint_path(run_dir, tier);
  if (!std::filesystem::exists(path)) throw std::runtime_error("no checkpoint for tier " + std::to_string(tier) + " at " + path.string());
  const Checkpoint c = load_checkpoint(path);
  if (c.schedule != cfg.schedule_text()) throw ConfigError("multiscale.tiers", "checkpoint " + path.string() + " uses schedule " + c.schedule);
  NetworkConfig stored = parse_network_description(c.config);
  if (cfg.network(tier, vocab_size, stored.norm).describe() != c.config) {
    throw ConfigError("network", "checkpoint " + path.string() + " was trained with a different network configuration");
  }
  return network_from_checkpoint(c);
}

inline double read_stop_threshold(const std::filesystem::path& run_dir) {
  std::ifstream in(run_dir / "stop_threshold.txt");
  double tau = -1.0;
  if (!(in >> tau)) throw std::runtime_error("no stop threshold in " + run_dir.string() + "; train tier 1 first");
  return tau;
}

/// Echoes the resolved configuration with a "# " prefix on every line.
inline void echo_config(std::ostream& out, const std::string& text, std::uint64_t seed) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out << "# " << line << '\n';
  out << "# seed = " << seed << '\n';
}

inline std::filesystem::path prepare_run_dir(const RunConfig& cfg, std::ostream& out) {
  const auto dir = output_root() / cfg.name;
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "config.resolved") << cfg.describe();
  echo_config(out, cfg.describe(), cfg.seed);
  return dir;
}

// Commands. Each returns normally on success and throws ConfigError or a
// runtime exception on failure.

struct ToydataArgs {
  std::string kind = "tones";
  int count = 32;
  std::uint64_t seed = 0;
  std::string out;
};

inline void cmd_toydata(const ToydataArgs& a, std::ostream& out) {
  out << "# kind = " << a.kind << "\n# count = " << a.count << "\n# out = " << a.out << "\n# seed = " << a.seed << '\n';
  if (a.count < 1) throw ConfigError("--count", "must be >= 1");
  if (a.kind == "tones") {
    toy::TonesOptions o;
    o.count = a.count;
    toy::write_corpus(toy::tones(o, a.seed), a.out);
  } else if (a.kind == "char-to-tone") {
    toy::CharToneOptions o;
    o.count = a.count;
    toy::write_corpus(toy::char_to_tone(o, a.seed), a.out, toy::char_tone_symbols());
  } else {
    throw ConfigError("--kind", "unknown toy corpus '" + a.kind + "'");
  }
  out << "toydata: wrote " << a.count << " clips to " << a.out << '\n';
}

inline void cmd_prepare(const RunConfig& cfg, std::ostream& out) {
  echo_config(out, cfg.describe(), cfg.seed);
  PrepareStats st;
  const auto clips = prepare_corpus(cfg, output_root() / "cache", &st);
  out << "prepare: clips=" << clips.size() << " computed=" << st.computed << " reused=" << st.reused << '\n';
}

struct TrainArgs {
  int tier = 1;
  std::int64_t steps = -1;  // total; negative uses train.steps
};

inline void cmd_train(const RunConfig& cfg, const TrainArgs& a, std::ostream& out) {
  if (a.tier < 1 || a.tier > cfg.tiers) throw ConfigError("--tier", "must be in [1, " + std::to_string(cfg.tiers) + "]");
  const auto dir = prepare_run_dir(cfg, out);
  auto [train_clips, held] = split_heldout(prepare_corpus(cfg, output_root() / "cache"), cfg.heldout_fraction);
  const auto voc = load_vocabulary(cfg);
  const int vocab_size = voc ? voc->size() : 0;

  std::mt19937_64 crop_rng(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(a.tier));
  std::vector<std::string> warnings;
  const auto grids = training_grids(cfg, train_clips, crop_rng, warnings);
  for (const auto& w : warnings) out << "warning: " << w << '\n';
  if (grids.empty()) throw ConfigError("corpus.path", "no clip survives slicing");
  const auto examples = tier_examples(cfg, grids, a.tier);

  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed + static_cast<std::uint64_t>(a.tier);
  if (a.steps >= 0) tc.steps = a.steps;
  const auto ckpt_path = tier_checkpoint_path(dir, a.tier);
  std::optional<Network> net;
  TrainerState st;
  if (std::filesystem::exists(ckpt_path)) {
    net.emplace(load_tier(cfg, dir, a.tier, vocab_size));
    net->set_frame_dropout(cfg.frame_dropout);
    st = trainer_state_from(load_checkpoint(ckpt_path));
    out << "train: resuming tier " << a.tier << " at step " << st.step << '\n';
  } else {
    net.emplace(Network::create(cfg.network(a.tier, vocab_size, fit_normalization(examples)), tc.seed));
    st = initial_trainer_state(tc);
  }
  const std::string schedule = cfg.schedule_text();
  auto save = [&](const TrainerState& s) { save_checkpoint(ckpt_path, make_checkpoint(a.tier, *net, schedule, s)); };
  TrainLog log(dir / ("tier" + std::to_string(a.tier) + ".log.tsv"));
  const std::int64_t remaining = std::max<std::int64_t>(0, tc.steps - st.step);
  const TrainReport r = train_tier(*net, examples, tc, st, remaining, &log, save);
  save(st);
  if (r.halted) throw NumericError("training halted at " + r.halt_reason);
  out << "train: tier=" << a.tier << " steps=" << st.step << " examples=" << examples.size() << " first_nll=" << r.first_nll
      << " last_nll=" << r.last_nll << '\n';
  if (a.tier == 1 && net->config().has_attention()) {
    const double tau = estimate_stop_threshold(*net, examples);
    std::ofstream(dir / "stop_threshold.txt") << std::setprecision(17) << tau << '\n';
    out << "train: stop_threshold=" << tau << '\n';
  }
}

struct SampleArgs {
  double temperature = 1.0;
  std::string prime;
  std::string text;
  int speaker = -1;
  int frames = 0;  // 0: train.max_sample_duration
  std::optional<std::uint64_t> seed;
  std::string out = "sample";
  int griffin_lim_iterations = 50;
};

inline void cmd_sample(RunConfig cfg, const SampleArgs& a, std::ostream& out) {
  if (a.seed) cfg.seed = *a.seed;
  if (!(a.temperature >= 0.0)) throw ConfigError("--temperature", "must be >= 0");
  const auto dir = prepare_run_dir(cfg, out);
  const auto voc = load_vocabulary(cfg);
  if (voc && a.text.empty()) throw ConfigError("--text", "text-to-speech runs need --text");
  if (!voc && !a.text.empty()) throw ConfigError("--text", "task.kind is not tts");
  if (cfg.speakers > 0 && a.speaker < 0) throw ConfigError("--speaker", "run is speaker-conditioned; pass --speaker");
  const std::vector<int> text = encode_text(voc, a.text);
  const Eigen::RowVectorXd condition = speaker_condition(cfg, cfg.speakers > 0 ? a.speaker : -1);

  std::vector<Network> nets;
  for (int g = 1; g <= cfg.tiers; ++g) nets.push_back(load_tier(cfg, dir, g, voc ? voc->size() : 0));
  std::vector<Network*> models;
  for (auto& n : nets) models.push_back(&n);

  const int divisor = 1 << cfg.time_splits();
  int frames = a.frames > 0 ? a.frames : max_frames_for(cfg.train.max_sample_duration, cfg.spectrogram);
  frames = (frames / divisor) * divisor;
  if (frames == 0) throw ConfigError("--frames", "shorter than one unit of " + std::to_string(divisor) + " frames");

  SampleOptions opt;
  opt.temperature = a.temperature;
  if (voc) opt.tau = read_stop_threshold(dir);
  if (!a.prime.empty()) {
    const Matrix p = compute_melspectrogram(load_wav(a.prime), cfg.spectrogram).values;
    const int len = (std::min<int>(static_cast<int>(p.rows()), frames) / divisor) * divisor;
    if (len == 0) throw ConfigError("--prime", "prime is shorter than one unit of " + std::to_string(divisor) + " frames");
    opt.prime = p.topRows(len);
  }
  std::mt19937_64 rng(cfg.seed);
  const Matrix x = multiscale_sample(models, cfg.schedule(), frames, cfg.spectrogram.mel_channels, condition, text, opt, rng);

  GriffinLimOptions gl;
  gl.iterations = a.griffin_lim_iterations;
  const InversionResult audio = invert_griffin_lim(MelSpectrogram{x, cfg.spectrogram}, gl);
  const auto wav_path = dir / (a.out + ".wav");
  save_wav(wav_path, audio.waveform);
  write_pgm(dir / (a.out + ".pgm"), x);
  const auto bytes = cmd_detail::read_bytes(wav_path);
  out << "sample: frames=" << x.rows() << " wav=" << wav_path.string() << " fnv1a=" << cmd_detail::hex64(fnv1a(bytes.data(), bytes.size()))
      << '\n';
}

struct InvertArgs {
  std::string input;
  std::string method = "griffin-lim";
  int iterations = 50;
  std::string out = "inverted";
};

inline void cmd_invert(const RunConfig& cfg, const InvertArgs& a, std::ostream& out) {
  const auto dir = prepare_run_dir(cfg, out);
  const Waveform w = load_wav(a.input);
  if (w.sample_rate != cfg.spectrogram.sample_rate) {
    throw ConfigError("spectrogram.sample_rate", a.input + " is sampled at " + std::to_string(w.sample_rate) + " Hz");
  }
  const MelSpectrogram x = compute_melspectrogram(w, cfg.spectrogram);
  InversionResult r;
  if (a.method == "griffin-lim") {
    GriffinLimOptions o;
    o.iterations = a.iterations;
    r = invert_griffin_lim(x, o);
  } else if (a.method == "gradient") {
    GradientInversionOptions o;
    o.steps = a.iterations;
    r = invert_gradient_based(x, o);
  } else {
    throw ConfigError("--method", "expected griffin-lim or gradient");
  }
  if (!r.warning.empty()) out << "warning: " << r.warning << '\n';
  save_wav(dir / (a.out + ".wav"), r.waveform);
  write_pgm(dir / (a.out + ".pgm"), x.values);
  out << "invert: method=" << a.method << " initial=" << (r.trace.empty() ? 0.0 : r.trace.front())
      << " final=" << (r.trace.empty() ? 0.0 : r.trace.back()) << '\n';
}

inline void cmd_nll(const RunConfig& cfg, std::ostream& out) {
  const auto dir = prepare_run_dir(cfg, out);
  auto [train_clips, held] = split_heldout(prepare_corpus(cfg, output_root() / "cache"), cfg.heldout_fraction);
  if (held.empty()) throw ConfigError("corpus.heldout_fraction", "no held-out clips");
  const auto voc = load_vocabulary(cfg);
  std::vector<Network> nets;
  for (int g = 1; g <= cfg.tiers; ++g) nets.push_back(load_tier(cfg, dir, g, voc ? voc->size() : 0));
  std::vector<Network*> models;
  for (auto& n : nets) models.push_back(&n);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::string> warnings;
  const auto grids = training_grids(cfg, held, rng, warnings);
  for (const auto& w : warnings) out << "warning: " << w << '\n';
  if (grids.empty()) throw ConfigError("corpus.heldout_fraction", "no held-out clip survives slicing");
  double total = 0.0, n = 0.0;
  for (const auto& e : grids) {
    total -= multiscale_log_likelihood(models, e.x, cfg.schedule(), e.condition, e.text);
    n += static_cast<double>(e.x.size());
  }
  out << "nll: clips=" << grids.size() << " nats_per_dim=" << std::setprecision(10) << total / n << '\n';
}

struct BenchArgs {
  std::string corpus = "bimodal";  // or "config"
  std::int64_t steps = -1;
  int count = 512;
};

inline void cmd_bench(RunConfig cfg, const BenchArgs& a, std::ostream& out) {
  if (a.steps >= 0) cfg.train.steps = a.steps;
  const auto dir = prepare_run_dir(cfg, out);
  std::vector<TierExample> train, test;
  BenchmarkSuite suite;
  suite.layers = cfg.layers.front();
  suite.hidden = cfg.hidden;
  suite.mixtures = cfg.mixtures;
  BenchmarkOptions opt;
  opt.train = cfg.train;
  opt.seed = cfg.seed;
  if (a.corpus == "bimodal") {
    if (a.count < 2) throw ConfigError("--count", "must be >= 2");
    for (auto& x : bimodal_corpus(a.count, 8, 8, cfg.seed)) train.push_back(TierExample{std::move(x), {}, {}, {}});
    for (auto& x : bimodal_corpus(std::max(1, a.count / 3), 8, 8, cfg.seed + 1)) test.push_back(TierExample{std::move(x), {}, {}, {}});
    suite.channels = 8;
  } else if (a.corpus == "config") {
    auto [train_clips, held] = split_heldout(prepare_corpus(cfg, output_root() / "cache"), cfg.heldout_fraction);
    if (held.empty()) throw ConfigError("corpus.heldout_fraction", "no held-out clips");
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::string> warnings;
    RunConfig flat = cfg;
    flat.tiers = 1;
    flat.layers = {cfg.layers.front()};
    train = training_grids(flat, train_clips, rng, warnings);
    test = training_grids(flat, held, rng, warnings);
    for (const auto& w : warnings) out << "warning: " << w << '\n';
    suite.channels = cfg.spectrogram.mel_channels;
    if (const auto voc = load_vocabulary(cfg)) {
      suite.attention_components = cfg.attention_components;
      suite.vocab_size = voc->size();
      suite.attention_kappa_bias = cfg.attention_kappa_bias;
      opt.task = "text-conditional";
    }
    if (train.empty() || test.empty()) throw ConfigError("corpus.path", "corpus too small for a benchmark split");
  } else {
    throw ConfigError("--corpus", "expected bimodal or config");
  }
  suite.norm = fit_normalization(train);
  const ResultsTable table = run_density_benchmark(train, test, standard_benchmark_models(suite), opt, &out);
  std::ofstream(dir / "results.tsv") << table.tsv();
  std::ofstream(dir / "results.txt") << table.text();
  out << table.text();
}

namespace cmd_detail {

/// One-line failure record on stderr: melgen: error=<kind> field=<f> reason="<text>".
inline int fail(std::ostream& err, ExitCode code, const std::string& field, std::string reason) {
  for (auto& ch : reason)
    if (ch == '"' || ch == '\n') ch = '\'';
  static const char* kinds[] = {"none", "usage", "config", "runtime"};
  err << "melgen: error=" << kinds[code];
  if (!field.empty()) err << " field=" << field;
  err << " reason=\"" << reason << "\"\n";
  return code;
}

}  // namespace cmd_detail

/// Parses argv and dispatches one subcommand. Exit codes: 0 success,
/// 1 usage error, 2 configuration error, 3 runtime failure.
inline int run_command(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Spectrogram density models: data, training, sampling and evaluation", "melgen"};
  app.require_subcommand(1);
  std::string config_path;
  auto with_config = [&](CLI::App* sub) { sub->add_option("-c,--config", config_path, "run configuration file")->required(); };

  ToydataArgs toydata;
  auto* toy_cmd = app.add_subcommand("toydata", "write a synthetic corpus");
  toy_cmd->add_option("--kind", toydata.kind, "tones | char-to-tone")->capture_default_str();
  toy_cmd->add_option("--count", toydata.count, "number of clips")->capture_default_str();
  toy_cmd->add_option("--seed", toydata.seed, "random seed")->capture_default_str();
  toy_cmd->add_option("--out", toydata.out, "output directory")->required();

  auto* prepare = app.add_subcommand("prepare", "analyse the corpus into the spectrogram cache");
  with_config(prepare);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train one tier");
  with_config(train_cmd);
  train_cmd->add_option("--tier", train.tier, "tier index, 1 = coarsest")->required();
  train_cmd->add_option("--steps", train.steps, "total step count (overrides train.steps)");

  SampleArgs sample;
  std::uint64_t sample_seed = 0;
  auto* sample_cmd = app.add_subcommand("sample", "generate a spectrogram and its audio");
  with_config(sample_cmd);
  sample_cmd->add_option("--temperature", sample.temperature, "sampling temperature; 0 takes the mode of the chosen component")
      ->capture_default_str();
  sample_cmd->add_option("--prime", sample.prime, "WAV whose leading frames are clamped");
  sample_cmd->add_option("--text", sample.text, "transcript for text-to-speech runs");
  sample_cmd->add_option("--speaker", sample.speaker, "speaker id for speaker-conditioned runs");
  sample_cmd->add_option("--frames", sample.frames, "frame budget (default: train.max_sample_duration)");
  auto* seed_opt = sample_cmd->add_option("--seed", sample_seed, "overrides run.seed");
  sample_cmd->add_option("--out", sample.out, "output name inside the run directory")->capture_default_str();
  sample_cmd->add_option("--griffin-lim-iterations", sample.griffin_lim_iterations, "phase reconstruction iterations")
      ->capture_default_str();

  InvertArgs invert;
  auto* invert_cmd = app.add_subcommand("invert", "reconstruct audio from the spectrogram of a WAV");
  with_config(invert_cmd);
  invert_cmd->add_option("--input", invert.input, "input WAV")->required();
  invert_cmd->add_option("--method", invert.method, "griffin-lim | gradient")->capture_default_str();
  invert_cmd->add_option("--iterations", invert.iterations, "iterations or gradient steps")->capture_default_str();
  invert_cmd->add_option("--out", invert.out, "output name inside the run directory")->capture_default_str();

  auto* nll_cmd = app.add_subcommand("nll", "held-out negative log-likelihood of the trained tiers");
  with_config(nll_cmd);

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench-density", "train and score the density model comparison");
  with_config(bench_cmd);
  bench_cmd->add_option("--corpus", bench.corpus, "bimodal | config")->capture_default_str();
  bench_cmd->add_option("--steps", bench.steps, "training steps per model (overrides train.steps)");
  bench_cmd->add_option("--count", bench.count, "bimodal training grids")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << app.help();
    return cmd_detail::fail(err, kUsage, "", e.what());
  }

  try {
    if (toy_cmd->parsed()) {
      cmd_toydata(toydata, out);
      return kOk;
    }
    RunConfig cfg = load_config(config_path);
    cfg.validate();
    if (prepare->parsed()) cmd_prepare(cfg, out);
    else if (train_cmd->parsed()) cmd_train(cfg, train, out);
    else if (sample_cmd->parsed()) {
      if (seed_opt->count() > 0) sample.seed = sample_seed;
      cmd_sample(cfg, sample, out);
    } else if (invert_cmd->parsed()) cmd_invert(cfg, invert, out);
    else if (nll_cmd->parsed()) cmd_nll(cfg, out);
    else if (bench_cmd->parsed()) cmd_bench(cfg, bench, out);
    return kOk;
  } catch (const ConfigError& e) {
    return cmd_detail::fail(err, kConfig, e.field(), e.what());
  } catch (const std::exception& e) {
    return cmd_detail::fail(err, kRuntime, "", e.what());
  }
}

inline int run_command(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<const char*> argv{"melgen"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_command(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace melgen::cli
