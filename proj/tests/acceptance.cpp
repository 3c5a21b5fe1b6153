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

// Acceptance runner: one PASS/FAIL line per criterion. With arguments,
// only the listed criterion numbers run. Exit status is 0 only when every
// selected criterion passes.

#include "melgen/audio/inversion.hpp"
#include "melgen/baselines/benchmark.hpp"
#include "melgen/cli/toydata.hpp"
#include "melgen/multiscale/tiers.hpp"
#include "melgen/runtime/checkpoint.hpp"
#include "melgen/runtime/sampling.hpp"
#include "melgen/runtime/train.hpp"
#include "melgen/tts/vocabulary.hpp"
#include "support.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>

namespace melgen {
namespace {

using testing::random_grid;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::filesystem::path out_dir() {
  const char* env = std::getenv("MELGEN_OUT");
  const auto dir = std::filesystem::path(env && *env ? env : "acceptance_out");
  std::filesystem::create_directories(dir);
  return dir;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

TierExample example_of(Matrix x) {
  TierExample e;
  e.x = std::move(x);
  return e;
}

// 1. Constrained mixture parameters over random raw grids.
Outcome constraint_suite() {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(-40.0, 40.0);
  std::uniform_int_distribution<int> kk(1, 10), side(1, 6);
  double worst_sum = 0.0, min_sigma = std::numeric_limits<double>::infinity(), min_pi = 1.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int k = kk(rng), t = side(rng), m = side(rng);
    RawParamGrid raw{t, m, Matrix(t * m, 3 * k)};
    for (Eigen::Index i = 0; i < raw.values.size(); ++i) raw.values.data()[i] = u(rng);
    const GmmParamGrid g = constrain_params(raw);
    worst_sum = std::max(worst_sum, (g.weight.rowwise().sum().array() - 1.0).abs().maxCoeff());
    min_sigma = std::min(min_sigma, g.stddev.minCoeff());
    min_pi = std::min(min_pi, g.weight.minCoeff());
  }
  return {worst_sum <= 1e-6 && min_sigma > 0.0 && min_pi >= 0.0,
          "max |sum(pi) - 1| = " + fmt(worst_sum) + ", min sigma = " + fmt(min_sigma) + ", min pi = " + fmt(min_pi)};
}

// 2. Log density and grid NLL against naive summation.
Outcome density_oracle() {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> u(-3, 3), ls(std::log(1e-2), std::log(5.0));
  std::uniform_int_distribution<int> kk(1, 10);
  auto direct = [](double v, const std::vector<double>& mu, const std::vector<double>& sd, const std::vector<double>& pi) {
    double p = 0.0;
    for (std::size_t c = 0; c < mu.size(); ++c) {
      const double z = (v - mu[c]) / sd[c];
      p += pi[c] * std::exp(-0.5 * z * z) / (sd[c] * std::sqrt(2.0 * std::numbers::pi));
    }
    return std::log(p);
  };
  double worst = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int k = kk(rng);
    std::vector<double> mu(k), sd(k), pi(k);
    double z = 0.0;
    for (int c = 0; c < k; ++c) {
      mu[c] = u(rng);
      sd[c] = std::exp(ls(rng));
      pi[c] = std::exp(u(rng));
      z += pi[c];
    }
    for (auto& p : pi) p /= z;
    const auto near = static_cast<std::size_t>(trial % k);
    const double v = mu[near] + 2.0 * sd[near] * (u(rng) / 3.0);
    const double want = direct(v, mu, sd, pi);
    worst = std::max(worst, std::abs(gmm_log_density(v, GmmView{mu, sd, pi}) - want) / (1.0 + std::abs(want)));
  }
  // Whole-grid NLL: mean of the per-element terms.
  for (int trial = 0; trial < 100; ++trial) {
    const int k = kk(rng);
    RawParamGrid raw{3, 4, Matrix(12, 3 * k)};
    for (Eigen::Index i = 0; i < raw.values.size(); ++i) raw.values.data()[i] = 0.5 * u(rng);
    const GmmParamGrid g = constrain_params(raw);
    Matrix x(3, 4);
    double total = 0.0;
    for (Eigen::Index r = 0; r < 12; ++r) {
      x(r / 4, r % 4) = g.mean(r, 0) + 0.5 * u(rng) * g.stddev(r, 0);
      std::vector<double> mu(g.mean.row(r).data(), g.mean.row(r).data() + k);
      std::vector<double> sd(g.stddev.row(r).data(), g.stddev.row(r).data() + k);
      std::vector<double> pi(g.weight.row(r).data(), g.weight.row(r).data() + k);
      total -= direct(x(r / 4, r % 4), mu, sd, pi);
    }
    worst = std::max(worst, std::abs(spectrogram_nll(x, g) - total / 12.0) / (1.0 + std::abs(total / 12.0)));
  }
  return {worst <= 1e-10, "max relative difference " + fmt(worst)};
}

NetworkConfig tiny_network(int channels, int hidden) {
  NetworkConfig c;
  c.layers = 2;
  c.hidden = hidden;
  c.mixtures = 2;
  c.use_centralized = true;
  c.mel_channels = channels;
  return c;
}

// 3. Analytic gradients against central differences.
Outcome gradient_check() {
  std::mt19937_64 rng(303);
  Network net = Network::create(tiny_network(3, 4), 303);
  const TierExample e = example_of(random_grid(4, 3, rng));
  const testing::GradientCheck g = testing::check_gradients(net, e);
  return {g.max_rel_error < 1e-4 && g.checked == net.parameters().scalar_count(),
          std::to_string(g.checked) + " scalars, max relative error " + fmt(g.max_rel_error) + " at " + g.worst};
}

// 4. No output depends on the element it describes or anything after it.
Outcome causality_suite() {
  std::mt19937_64 rng(404);
  Network net = Network::create(tiny_network(6, 8), 404);
  const TierExample e = example_of(random_grid(8, 6, rng));
  const testing::CausalityCheck c = testing::check_causality(net, e);
  return {c.violations == 0, std::to_string(c.comparisons) + " comparisons, " + std::to_string(c.violations) + " violations"};
}

// 5. Split/interleave roundtrips and the six-tier shapes.
Outcome multiscale_exactness() {
  std::mt19937_64 rng(505);
  int failures = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int t = 2 * (1 + static_cast<int>(rng() % 32)), m = 2 * (1 + static_cast<int>(rng() % 32));
    const Matrix x = random_grid(t, m, rng, 10.0);
    for (Axis a : {Axis::Time, Axis::Frequency}) {
      auto [even, odd] = split(x, a);
      if (interleave(even, odd, a) != x) ++failures;
    }
  }
  // Grids are frames x channels; the figure quotes channels x frames.
  const AxisSchedule s = default_schedule(6, 200, 256);
  const TierSet d = decompose(random_grid(200, 256, rng), s);
  const Matrix low = recombine(d.tiers, s, 3);
  const bool shapes = d.tiers[0].cols() == 32 && d.tiers[0].rows() == 50 && low.cols() == 64 && low.rows() == 100;
  return {failures == 0 && shapes, std::to_string(failures) + " roundtrip mismatches; tier 1 " + std::to_string(d.tiers[0].cols()) +
                                       "x" + std::to_string(d.tiers[0].rows()) + ", tiers 1-3 " + std::to_string(low.cols()) +
                                       "x" + std::to_string(low.rows())};
}

// 6. Attention weight normalization, monotone locations, spot value.
Outcome attention_normalization() {
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> loc(-5.0, 30.0), logb(-6.0, 3.0), raw(-3.0, 3.0);
  double worst = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int comps = 1 + static_cast<int>(rng() % 10), len = 1 + static_cast<int>(rng() % 40);
    AttentionGamma g;
    double z = 0.0;
    for (int m = 0; m < comps; ++m) {
      g.kappa.push_back(loc(rng));
      g.beta.push_back(std::exp(logb(rng)));
      g.alpha.push_back(std::exp(raw(rng)));
      z += g.alpha.back();
    }
    for (double& a : g.alpha) a /= z;
    const AttentionWeights w = discretized_attention_weights(g, len);
    double total = w.left_mass + w.right_mass;
    for (double p : w.phi) total += p;
    worst = std::max(worst, std::abs(total - 1.0));
  }

  ParameterSet ps;
  const AttentionCell cell = AttentionCell::create(ps, "att", 6, 3, rng);
  Tape tape(false);
  TextContext text{tape.constant(random_grid(9, 6, rng)), {9}, 9};
  std::vector<AttentionTrace> traces;
  cell.run(tape, ps, tape.constant(random_grid(1000, 6, rng, 3.0)), 1, 1000, text, &traces);
  bool increasing = traces.size() == 1 && traces[0].gamma.size() == 1000;
  for (std::size_t i = 0; increasing && i < traces[0].gamma.size(); ++i) {
    for (std::size_t m = 0; m < 3; ++m) {
      const double prev = i == 0 ? 0.0 : traces[0].gamma[i - 1].kappa[m];
      increasing = increasing && traces[0].gamma[i].kappa[m] > prev;
    }
  }

  const double spot = discretized_attention_weights(AttentionGamma{{2.0}, {1.0}, {1.0}}, 4).phi[1];
  return {worst <= 1e-9 && increasing && std::abs(spot - 0.24492) <= 1e-5,
          "max |total - 1| = " + fmt(worst) + ", kappa increasing over 1000 steps: " + (increasing ? "yes" : "no") +
              ", phi(2) = " + fmt(spot, 7)};
}

// 7. Overfitting one short clip.
Outcome overfit_sanity() {
  const SpectrogramConfig spec = SpectrogramConfig::make(16000, 200, 40);
  const Matrix x = compute_melspectrogram(toy::speech_like({1.0, 16000}, 7), spec).values;
  const std::vector<TierExample> corpus{example_of(x)};
  NetworkConfig c;
  c.layers = 2;
  c.hidden = 16;
  c.mixtures = 4;
  c.use_centralized = true;
  c.mel_channels = static_cast<int>(x.cols());
  c.norm = fit_normalization(corpus);
  Network net = Network::create(c, 7);
  const double before = net.nll(corpus[0]);
  TrainConfig t;
  t.learning_rate = 1e-4;
  t.momentum = 0.9;
  t.steps = 2000;
  t.seed = 7;
  TrainerState st = initial_trainer_state(t);
  const TrainReport r = train_tier(net, corpus, t, st, t.steps);
  const double after = net.nll(corpus[0]);
  return {!r.halted && before - after >= 1.0,
          std::to_string(x.rows()) + "x" + std::to_string(x.cols()) + " grid, NLL " + fmt(before) + " -> " + fmt(after) +
              " nats/dim (drop " + fmt(before - after) + ") in " + std::to_string(r.steps_run) + " steps"};
}

// 8. Held-out NLL ordering on the bimodal corpus.
Outcome density_ordering() {
  const int frames = 8, channels = 8;
  std::vector<TierExample> train, test;
  for (const auto& x : bimodal_corpus(512, frames, channels, 801)) train.push_back(example_of(x));
  for (const auto& x : bimodal_corpus(64, frames, channels, 802)) test.push_back(example_of(x));
  BenchmarkSuite s;
  s.channels = channels;
  s.layers = 2;
  s.hidden = 16;
  s.mixtures = 4;
  s.latent_dim = 8;
  s.norm = fit_normalization(train);
  BenchmarkOptions opt;
  opt.train.learning_rate = 1e-3;
  opt.train.steps = 3000;
  opt.train.batch_size = 4;
  opt.eval_samples = 16;
  opt.seed = 8;
  std::ostringstream progress;
  const ResultsTable t = run_density_benchmark(train, test, standard_benchmark_models(s), opt, &progress);
  std::ofstream(out_dir() / "density_ordering.tsv") << t.tsv();
  auto nll = [&t](const std::string& model) { return t.find(model, "unconditional")->nll; };
  const double gmm = nll("autoregressive-gmm"), gauss = nll("autoregressive-gaussian"), frame = nll("framewise-gaussian");
  const double global = nll("vae-global"), local = nll("vae-local");
  const bool pass = gauss - gmm > 0.05 && frame - gauss > 0.05 && local <= global;
  return {pass, "gmm " + fmt(gmm) + " < gaussian " + fmt(gauss) + " < framewise " + fmt(frame) + "; vae-local " + fmt(local) +
                    " <= vae-global " + fmt(global) + " (nats/dim, held-out)"};
}

// 9. Text-conditioned generation on the char-to-tone corpus.
Outcome toy_tts() {
  const SpectrogramConfig spec = toy::spectrogram_config();
  const Vocabulary voc(toy::char_tone_symbols());
  toy::CharToneOptions o;
  o.count = 200;
  std::vector<TierExample> corpus;
  for (const auto& c : toy::char_to_tone(o, 11)) {
    TierExample e = example_of(compute_melspectrogram(c.audio, spec).values);
    e.text = voc.encode(c.text);
    corpus.push_back(std::move(e));
  }
  NetworkConfig nc;
  nc.layers = 2;
  nc.hidden = 16;
  nc.mixtures = 1;
  nc.use_centralized = true;
  nc.mel_channels = spec.mel_channels;
  nc.attention_components = 1;
  nc.vocab_size = voc.size();
  nc.attention_kappa_bias = std::log(1.0 / o.frames_per_char);
  nc.frame_dropout = 0.5;
  nc.norm = fit_normalization(corpus);
  Network net = Network::create(nc, 5);
  TrainConfig t;
  t.learning_rate = 1e-3;
  t.steps = 8000;
  t.seed = 3;
  TrainerState st = initial_trainer_state(t);
  const TrainReport r = train_tier(net, corpus, t, st, t.steps);
  if (r.halted) return {false, "training halted: " + r.halt_reason};
  save_checkpoint(out_dir() / "toy_tts.ckpt", make_checkpoint(1, net, "tiers=1;axes=", st));

  const double tau = estimate_stop_threshold(net, corpus);
  const auto centers = mel_center_frequencies(spec);
  toy::CharToneOptions held = o;
  held.count = 16;
  std::mt19937_64 rng(9);
  int good = 0, total = 0, stopped = 0;
  bool monotone = true;
  for (const auto& c : toy::char_to_tone(held, 12)) {
    const std::vector<int> text = voc.encode(c.text);
    const int target = static_cast<int>(text.size()) * o.frames_per_char;
    SampleOptions so;
    so.temperature = 0.0;
    so.tau = tau;
    const SampleResult s = sample_tier(net, target * 3 / 2, spec.mel_channels, Matrix(), Eigen::RowVectorXd(0), text, so, rng);
    stopped += s.terminated ? 1 : 0;
    for (std::size_t i = 0; i < s.gammas.size(); ++i) {
      for (std::size_t m = 0; m < s.gammas[i].kappa.size(); ++m) {
        monotone = monotone && (i == 0 || s.gammas[i].kappa[m] > s.gammas[i - 1].kappa[m]);
      }
      const AttentionWeights w = discretized_attention_weights(s.gammas[i], static_cast<int>(text.size()));
      const auto u = static_cast<std::size_t>(std::max_element(w.phi.begin(), w.phi.end()) - w.phi.begin());
      Eigen::Index peak;
      s.x.row(static_cast<Eigen::Index>(i)).maxCoeff(&peak);
      good += std::abs(centers[static_cast<std::size_t>(peak)] - toy::char_tone_hz(text[u], spec)) < 1e-9 ? 1 : 0;
      ++total;
    }
  }
  const double accuracy = total ? static_cast<double>(good) / total : 0.0;
  return {monotone && stopped == held.count && accuracy >= 0.9,
          "attention monotone: " + std::string(monotone ? "yes" : "no") + ", stopped within 1.5x: " + std::to_string(stopped) + "/" +
              std::to_string(held.count) + ", frames on the attended pitch: " + fmt(100.0 * accuracy, 3) + "% of " +
              std::to_string(total) + " (train NLL " + fmt(r.last_nll) + ", tau " + fmt(tau) + ")"};
}

// 10. Phase reconstruction quality.
Outcome inversion() {
  const SpectrogramConfig spec = SpectrogramConfig::make(16000, 200, 40);
  const MelSpectrogram x = compute_melspectrogram(toy::speech_like({1.0, 16000}, 1), spec);
  const InversionResult gl = invert_griffin_lim(x);
  bool nonincreasing = true;
  for (std::size_t k = 1; k < gl.trace.size(); ++k) nonincreasing = nonincreasing && gl.trace[k] <= gl.trace[k - 1];
  const bool halved = gl.trace.back() <= 0.5 * gl.trace.front();
  const double gl_loss = log_mel_loss(gl.waveform.samples, x, false).loss;
  GradientInversionOptions go;
  go.steps = 200;
  const InversionResult gr = invert_gradient_based(x, go, gl.waveform);
  const double final_loss = gr.trace.empty() ? gl_loss : gr.trace.back();
  return {nonincreasing && halved && final_loss < gl_loss,
          "spectral convergence " + fmt(gl.trace.front()) + " -> " + fmt(gl.trace.back()) + " in " +
              std::to_string(gl.trace.size() - 1) + " iterations (non-increasing: " + (nonincreasing ? "yes" : "no") +
              "); log-mel MSE " + fmt(gl_loss) + " -> " + fmt(final_loss)};
}

// 11. Seeded sampling, checkpoint roundtrip, lockstep resume.
Outcome determinism_and_persistence() {
  std::mt19937_64 data(1101);
  std::vector<TierExample> corpus;
  for (int k = 0; k < 4; ++k) corpus.push_back(example_of(random_grid(6, 4, data)));
  NetworkConfig c = tiny_network(4, 8);
  c.norm = fit_normalization(corpus);
  TrainConfig t;
  t.learning_rate = 1e-3;
  t.steps = 10;
  t.seed = 11;

  Network whole = Network::create(c, 11);
  TrainerState sw = initial_trainer_state(t);
  train_tier(whole, corpus, t, sw, 10);

  Network first = Network::create(c, 11);
  TrainerState s1 = initial_trainer_state(t);
  train_tier(first, corpus, t, s1, 4);
  const auto path = out_dir() / "resume.ckpt";
  save_checkpoint(path, make_checkpoint(1, first, "tiers=1;axes=", s1));
  const Checkpoint loaded = load_checkpoint(path);
  Network restored = network_from_checkpoint(loaded);
  const GmmParamGrid a = first.network_forward(corpus[0]), b = restored.network_forward(corpus[0]);
  const bool roundtrip = a.mean == b.mean && a.stddev == b.stddev && a.weight == b.weight;
  TrainerState s2 = trainer_state_from(loaded);
  train_tier(restored, corpus, t, s2, 6);
  bool lockstep = true;
  for (std::size_t k = 0; k < whole.parameters().size(); ++k) {
    lockstep = lockstep && whole.parameters().all()[k].value == restored.parameters().all()[k].value;
  }

  SampleOptions so;
  so.temperature = 0.0;
  std::mt19937_64 r1(5), r2(5);
  const Matrix x1 = sample_tier(whole, 8, 4, Matrix(), Eigen::RowVectorXd(0), {}, so, r1).x;
  const Matrix x2 = sample_tier(whole, 8, 4, Matrix(), Eigen::RowVectorXd(0), {}, so, r2).x;
  const bool repeatable = x1 == x2;
  return {roundtrip && lockstep && repeatable, std::string("sampling repeatable: ") + (repeatable ? "yes" : "no") +
                                                   ", checkpoint forward bit-exact: " + (roundtrip ? "yes" : "no") +
                                                   ", resume in lockstep: " + (lockstep ? "yes" : "no")};
}

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome()> run;
};

}  // namespace
}  // namespace melgen

int main(int argc, char** argv) {
  using namespace melgen;
  const std::vector<Criterion> all{
      {1, "constraint suite", constraint_suite},
      {2, "density oracle", density_oracle},
      {3, "gradient check", gradient_check},
      {4, "causality suite", causality_suite},
      {5, "multiscale exactness", multiscale_exactness},
      {6, "attention normalization", attention_normalization},
      {7, "overfit sanity", overfit_sanity},
      {8, "density ordering", density_ordering},
      {9, "toy text-to-speech", toy_tts},
      {10, "inversion", inversion},
      {11, "determinism and persistence", determinism_and_persistence},
  };
  // Arguments select criteria; "--known-failure N" keeps N's FAIL line but
  // leaves it out of the exit status.
  std::set<int> selected, known;
  for (int k = 1; k < argc; ++k) {
    const std::string a = argv[k];
    if (a == "--known-failure" && k + 1 < argc) known.insert(std::atoi(argv[++k]));
    else selected.insert(std::atoi(a.c_str()));
  }

  int failed = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool excused = !o.pass && known.count(c.id);
    failed += o.pass || excused ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << c.id << " (" << c.name << "): " << o.detail << " ["
              << fmt(secs, 3) << " s]" << (excused ? " (known failure)" : "") << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
