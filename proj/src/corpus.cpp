#include "vcm/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include <spdlog/spdlog.h>

namespace vcm {

namespace {

struct Resonator
{
  double f_start, f_end, bandwidth;
  double y1 = 0.0, y2 = 0.0;

  double step(double x, double frac, int sr)
  {
    const double f = f_start + (f_end - f_start) * frac;
    const double r = std::exp(-std::numbers::pi * bandwidth / sr);
    const double a1 = 2.0 * r * std::cos(2.0 * std::numbers::pi * f / sr);
    const double a2 = -r * r;
    const double y = (1.0 - r) * x + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

// Raised-cosine gate: 1 inside [a, b), ramps of `ramp` samples at both ends.
double gate(Eigen::Index n, Eigen::Index a, Eigen::Index b, Eigen::Index ramp)
{
  if (n < a || n >= b)
    return 0.0;
  const Eigen::Index d = std::min(n - a, b - 1 - n);
  if (d >= ramp)
    return 1.0;
  return 0.5 - 0.5 * std::cos(std::numbers::pi * double(d) / double(ramp));
}

} // namespace

Waveform synth_pseudo_speech(std::uint64_t seed, double duration, int sample_rate)
{
  if (!(duration > 0.0) || sample_rate <= 0)
    throw UsageError("synth_pseudo_speech: duration and rate must be positive");
  std::mt19937_64                        rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  std::normal_distribution<double> gauss(0.0, 1.0);

  const int          sr = sample_rate;
  const Eigen::Index n = static_cast<Eigen::Index>(std::lround(duration * sr));
  const Eigen::Index lead = static_cast<Eigen::Index>(uni(0.02, 0.08) * double(n));
  const Eigen::Index tail = static_cast<Eigen::Index>(uni(0.02, 0.08) * double(n));
  const Eigen::Index ramp = sr / 50;

  // Voiced span with up to two unvoiced gaps of at most 5% each.
  struct Span
  {
    Eigen::Index a, b;
  };
  std::vector<Span> gaps;
  const int         n_gaps = std::uniform_int_distribution<int>(0, 2)(rng);
  for (int g = 0; g < n_gaps; ++g) {
    const Eigen::Index len = static_cast<Eigen::Index>(uni(0.02, 0.05) * double(n));
    const Eigen::Index at = lead + static_cast<Eigen::Index>(u(rng) * double(n - lead - tail - len));
    gaps.push_back({at, at + len});
  }
  auto voicing = [&](Eigen::Index i) {
    double v = gate(i, lead, n - tail, ramp);
    for (const auto &g : gaps)
      v *= 1.0 - gate(i, g.a, g.b, ramp);
    return v;
  };

  const double base = uni(90.0, 250.0);
  const double a1 = uni(0.05, 0.2), r1 = uni(0.5, 3.0), p1 = uni(0.0, 2.0 * std::numbers::pi);
  const double a2 = uni(0.02, 0.1), r2 = uni(3.0, 7.0), p2 = uni(0.0, 2.0 * std::numbers::pi);
  const double breath = uni(0.005, 0.02);

  Resonator formants[3] = {{uni(300, 900), uni(300, 900), uni(60, 200)},
                           {uni(900, 2500), uni(900, 2500), uni(60, 200)},
                           {uni(2200, 3800), uni(2200, 3800), uni(60, 200)}};

  ArrayXd out(n);
  double  phase = u(rng), g1 = 0.0, g2 = 0.0, g_prev = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = double(i) / sr;
    const double f0 = std::clamp(
        base * std::exp(a1 * std::sin(2.0 * std::numbers::pi * r1 * t + p1) +
                        a2 * std::sin(2.0 * std::numbers::pi * r2 * t + p2)),
        80.0, 300.0);
    phase += f0 / sr;
    double pulse = 0.0;
    if (phase >= 1.0) {
      phase -= 1.0;
      pulse = 1.0;
    }
    // Critically damped glottal lowpass, then first difference for lip radiation.
    const double g = pulse + 1.9 * g1 - 0.9025 * g2;
    g2 = g1;
    g1 = g;
    const double radiated = g - g_prev;
    g_prev = g;
    const double v = voicing(i);
    double x = 0.2 * v * radiated + breath * gate(i, lead, n - tail, ramp) * gauss(rng);
    const double frac = double(i) / double(std::max<Eigen::Index>(n - 1, 1));
    for (auto &f : formants)
      x = f.step(x, frac, sr);
    out[i] = x;
  }
  out -= out.mean();
  const double peak = out.abs().maxCoeff();
  if (peak > 0.0)
    out *= uni(0.3, 0.8) / peak;
  for (Eigen::Index i = 0; i < n; ++i)
    out[i] += 1e-4 * gauss(rng);
  return {out, sr};
}

TrialManifest gen_desk_corpus(const DeskCorpusConfig &cfg, std::uint64_t seed,
                              const std::filesystem::path &out_dir)
{
  if (cfg.n_trials < 20)
    throw UsageError("gen_desk_corpus: need at least 20 trials");
  if (!(cfg.min_duration > 0.0) || cfg.max_duration < cfg.min_duration)
    throw UsageError("gen_desk_corpus: bad duration range");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "wav", ec);
  if (ec)
    throw DataError("gen_desk_corpus: cannot create " + (out_dir / "wav").string() + ": " +
                    ec.message());

  const int n_train = static_cast<int>(std::lround(0.6 * cfg.n_trials));
  const int n_dev = static_cast<int>(std::lround(0.2 * cfg.n_trials));

  TrialManifest m;
  m.root = out_dir;
  for (int i = 0; i < cfg.n_trials; ++i) {
    const std::uint64_t s = derive_seed(seed, "corpus", std::uint64_t(i));
    std::mt19937_64     rng(s);
    const double        dur =
        std::uniform_real_distribution<double>(cfg.min_duration, cfg.max_duration)(rng);
    char id[32];
    std::snprintf(id, sizeof id, "D_%04d", i);
    const Waveform w = synth_pseudo_speech(splitmix64(s), dur, cfg.sample_rate);
    const std::string rel = std::string("wav/") + id + ".wav";
    write_wav(out_dir / rel, w);
    const Subset sub = i < n_train ? Subset::Train : i < n_train + n_dev ? Subset::Dev : Subset::Eval;
    m.records.push_back({id, rel, Label::Bonafide, "-", id, sub});
  }
  write_manifest(out_dir / "manifest.tsv", m);
  return m;
}

Waveform trim_nonspeech(const Waveform &w, const TrimConfig &cfg)
{
  if (w.size() == 0)
    throw DataError("trim_nonspeech: empty waveform");
  if (!(cfg.frame_ms > 0.0) || !(cfg.hop_ms > 0.0) || !(cfg.threshold_db > 0.0))
    throw UsageError("trim_nonspeech: frame, hop and threshold must be positive");
  const Eigen::Index frame = std::lround(cfg.frame_ms * 1e-3 * w.sample_rate);
  const Eigen::Index hop = std::lround(cfg.hop_ms * 1e-3 * w.sample_rate);
  if (w.size() < frame)
    return w;

  const Eigen::Index n_frames = (w.size() - frame) / hop + 1;
  ArrayXd            energy(n_frames);
  for (Eigen::Index t = 0; t < n_frames; ++t)
    energy[t] = w.samples.segment(t * hop, frame).square().sum();
  const double top = energy.maxCoeff();
  if (!(top > 0.0)) {
    spdlog::warn("trim_nonspeech: no frame above the gate, returning a {} ms stub", cfg.stub_ms);
    const Eigen::Index len =
        std::min<Eigen::Index>(w.size(), std::lround(cfg.stub_ms * 1e-3 * w.sample_rate));
    return {w.samples.segment((w.size() - len) / 2, len), w.sample_rate};
  }
  const double gate_level = top * std::pow(10.0, -cfg.threshold_db / 10.0);
  Eigen::Index first = 0, last = n_frames - 1;
  while (energy[first] < gate_level)
    ++first;
  while (energy[last] < gate_level)
    --last;
  const Eigen::Index a = first * hop, b = last * hop + frame;
  return {w.samples.segment(a, b - a), w.sample_rate};
}

} // namespace vcm
