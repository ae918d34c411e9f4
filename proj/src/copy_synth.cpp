#include "vcm/copy_synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <thread>

#include <spdlog/spdlog.h>

#include "vcm/mel.hpp"
#include "vcm/resample.hpp"

namespace vcm {

namespace {

constexpr double kPreEmphasis = 0.97;
constexpr double kBandwidthExpansion = 0.996;
constexpr double kGlMomentum = 0.99;

// 32 ms Hann window with an 8 ms hop; 512/128 at 16 kHz.
StftConfig channel_stft(int sample_rate)
{
  const int win = 2 * static_cast<int>(std::lround(0.016 * sample_rate));
  return StftConfig{win, win / 4, win, Window::Hann, false};
}

// ||A||_F over the full spectrum represented by a half spectrum.
double full_spectrum_norm(const MatrixXd &half)
{
  const Eigen::Index bins = half.cols();
  double             acc = half.col(0).squaredNorm() + half.col(bins - 1).squaredNorm();
  if (bins > 2)
    acc += 2.0 * half.middleCols(1, bins - 2).squaredNorm();
  return std::sqrt(acc);
}

ArrayXd fit_length(const ArrayXd &x, Eigen::Index offset, Eigen::Index n)
{
  ArrayXd out = ArrayXd::Zero(n);
  const Eigen::Index avail = std::max<Eigen::Index>(0, std::min(n, x.size() - offset));
  if (avail > 0)
    out.head(avail) = x.segment(offset, avail);
  return out;
}

} // namespace

// ---------------------------------------------------------------------------

double spectral_convergence(const Waveform &w, const Eigen::Ref<const MatrixXd> &target,
                            const StftConfig &cfg)
{
  const MatrixXd mag = magnitude(stft(w, cfg));
  if (mag.rows() != target.rows() || mag.cols() != target.cols())
    throw UsageError("spectral_convergence: shape mismatch");
  const double denom = full_spectrum_norm(target);
  return denom > 0 ? full_spectrum_norm(mag - target) / denom : 0.0;
}

GriffinLimResult griffin_lim(const Eigen::Ref<const MatrixXd> &target, const StftConfig &cfg,
                             int iters, int sample_rate, std::uint64_t seed)
{
  validate(cfg);
  if (iters < 1)
    throw UsageError("griffin_lim: iters must be >= 1");
  if (target.cols() != cfg.bins())
    throw UsageError("griffin_lim: magnitude has wrong bin count");
  if (target.rows() < 1)
    throw UsageError("griffin_lim: empty magnitude");

  ComplexSpectrogram spec;
  spec.config = cfg;
  spec.sample_rate = sample_rate;
  spec.frames.resize(target.rows(), target.cols());

  std::mt19937_64                        rng(seed);
  std::uniform_real_distribution<double> phase(-std::numbers::pi, std::numbers::pi);
  for (Eigen::Index t = 0; t < target.rows(); ++t)
    for (Eigen::Index k = 0; k < target.cols(); ++k)
      spec.frames(t, k) = std::polar(target(t, k), phase(rng));

  const double     denom = full_spectrum_norm(target);
  GriffinLimResult result;
  result.wave = istft_least_squares(spec);
  Eigen::MatrixXcd previous = spec.frames;
  auto             convergence = [&](const ComplexSpectrogram &s) {
    return denom > 0 ? full_spectrum_norm(magnitude(s) - target) / denom : 0.0;
  };
  for (int it = 0; it < iters; ++it) {
    const ComplexSpectrogram rebuilt = stft(result.wave, cfg);
    // The projection of iterate it-1 doubles as its convergence measurement.
    if (it > 0)
      result.spectral_convergence.push_back(convergence(rebuilt));
    // Momentum step on the consistent projection (fast Griffin-Lim).
    const Eigen::MatrixXcd accel = rebuilt.frames + kGlMomentum * (rebuilt.frames - previous);
    previous = rebuilt.frames;
    for (Eigen::Index t = 0; t < target.rows(); ++t)
      for (Eigen::Index k = 0; k < target.cols(); ++k) {
        const std::complex<double> c = accel(t, k);
        const double               m = std::abs(c);
        spec.frames(t, k) = m > 0 ? c * (target(t, k) / m) : std::complex<double>(target(t, k));
      }
    result.wave = istft_least_squares(spec);
  }
  result.spectral_convergence.push_back(convergence(stft(result.wave, cfg)));
  return result;
}

// ---------------------------------------------------------------------------

LpcResult lpc_analyze(const Eigen::Ref<const ArrayXd> &frame, int order)
{
  if (order < 1 || frame.size() <= 2 * order)
    throw UsageError("lpc_analyze: frame must be longer than twice the order");

  LpcResult res;
  res.coefficients = VectorXd::Zero(order);
  VectorXd r(order + 1);
  for (int lag = 0; lag <= order; ++lag)
    r[lag] = (frame.head(frame.size() - lag) * frame.tail(frame.size() - lag)).sum();

  if (!(r[0] > 1e-20)) {
    res.silent = true;
    res.gain = 1.0;
    res.error_energy = 0.0;
    res.residual_ratio = 1.0;
    return res;
  }

  VectorXd a = VectorXd::Zero(order);
  VectorXd prev(order);
  double   err = r[0];
  for (int i = 0; i < order; ++i) {
    double acc = r[i + 1];
    for (int j = 0; j < i; ++j)
      acc -= a[j] * r[i - j];
    const double k = acc / err;
    prev = a;
    a[i] = k;
    for (int j = 0; j < i; ++j)
      a[j] = prev[j] - k * prev[i - 1 - j];
    err *= (1.0 - k * k);
    if (err <= r[0] * 1e-14) {
      err = r[0] * 1e-14;
      break;
    }
  }

  double scale = 1.0;
  for (int i = 0; i < order; ++i) {
    scale *= kBandwidthExpansion;
    a[i] *= scale;
  }
  res.coefficients = a;
  res.error_energy = err;
  res.residual_ratio = err / r[0];
  res.gain = std::sqrt(err);
  return res;
}

PitchEstimate estimate_f0(const Eigen::Ref<const ArrayXd> &frame, int sample_rate)
{
  const Eigen::Index n = frame.size();
  if (n < static_cast<Eigen::Index>(std::ceil(0.025 * sample_rate)))
    throw UsageError("estimate_f0: frame shorter than 25 ms");

  PitchEstimate est;
  const ArrayXd x = frame - frame.mean();
  if (!(x.square().sum() > 1e-20))
    return est;

  const auto lag_lo = static_cast<Eigen::Index>(std::floor(sample_rate / 400.0));
  const auto lag_hi =
      std::min<Eigen::Index>(static_cast<Eigen::Index>(std::ceil(sample_rate / 60.0)), n - 2);
  ArrayXd r = ArrayXd::Zero(lag_hi + 2);
  for (Eigen::Index lag = std::max<Eigen::Index>(1, lag_lo - 1); lag <= lag_hi + 1; ++lag) {
    const auto   a = x.head(n - lag);
    const auto   b = x.tail(n - lag);
    const double den = std::sqrt(a.square().sum() * b.square().sum());
    r[lag] = den > 0 ? (a * b).sum() / den : 0.0;
  }

  const double best = r.segment(lag_lo, lag_hi - lag_lo + 1).maxCoeff();
  // Shortest lag that is a local maximum close to the global one; guards
  // against picking a sub-harmonic.
  Eigen::Index lag = lag_lo;
  for (Eigen::Index l = lag_lo; l <= lag_hi; ++l)
    if (r[l] >= 0.9 * best && r[l] >= r[l - 1] && r[l] >= r[l + 1]) {
      lag = l;
      break;
    }
  const double a = r[lag - 1], b = r[lag], c = r[lag + 1];
  const double denom = a - 2.0 * b + c;
  const double shift = denom < 0 ? std::clamp(0.5 * (a - c) / denom, -0.5, 0.5) : 0.0;

  est.peak = b;
  est.voiced = b > 0.5;
  est.f0 = est.voiced ? sample_rate / (double(lag) + shift) : 0.0;
  return est;
}

Waveform lpc_resynthesize(const Waveform &w, int order, double frame_ms, double hop_ms,
                          std::uint64_t seed)
{
  const int          sr = w.sample_rate;
  const auto         len = static_cast<Eigen::Index>(std::lround(frame_ms * sr / 1000.0));
  const auto         hop = static_cast<Eigen::Index>(std::lround(hop_ms * sr / 1000.0));
  const Eigen::Index n = w.size();
  if (hop <= 0 || len <= 2 * order)
    throw UsageError("lpc_resynthesize: frame too short for the LPC order");
  if (n < len)
    throw DataError("lpc_resynthesize: input shorter than one frame");

  const Eigen::Index frames = (n - len + hop - 1) / hop + 1;
  const Eigen::Index padded = (frames - 1) * hop + len;

  ArrayXd raw = ArrayXd::Zero(padded);
  raw.head(n) = w.samples;
  ArrayXd emph = raw;
  for (Eigen::Index i = padded - 1; i > 0; --i)
    emph[i] -= kPreEmphasis * raw[i - 1];

  const ArrayXd win = make_window(Window::Hann, len);
  ArrayXd       out = ArrayXd::Zero(padded);
  ArrayXd       norm = ArrayXd::Zero(padded);
  ArrayXd       excitation(len), synth(len);

  // Pitch per frame, then one pulse grid over the whole signal so that
  // overlapping frames agree on pulse positions.
  std::vector<Eigen::Index> period(frames, 0);
  for (Eigen::Index t = 0; t < frames; ++t) {
    const PitchEstimate pitch = estimate_f0(raw.segment(t * hop, len), sr);
    if (pitch.voiced)
      period[t] = std::max<Eigen::Index>(1, std::lround(sr / pitch.f0));
  }
  std::vector<char> pulse(padded, 0);
  for (Eigen::Index pos = 0; pos < padded;) {
    const Eigen::Index t = std::clamp<Eigen::Index>((pos - len / 2 + hop / 2) / hop, 0, frames - 1);
    if (period[t] > 0) {
      pulse[pos] = 1;
      pos += period[t];
    } else {
      ++pos;
    }
  }

  for (Eigen::Index t = 0; t < frames; ++t) {
    const Eigen::Index start = t * hop;
    const LpcResult    lpc = lpc_analyze(emph.segment(start, len) * win, order);
    const VectorXd    &a = lpc.coefficients;

    // Residual of the unwindowed frame, with history from the signal.
    double sq = 0.0;
    for (Eigen::Index i = 0; i < len; ++i) {
      double pred = 0.0;
      for (int k = 1; k <= order && start + i - k >= 0; ++k)
        pred += a[k - 1] * emph[start + i - k];
      const double e = emph[start + i] - pred;
      sq += e * e;
    }
    const double sigma = lpc.silent ? 0.0 : std::sqrt(sq / double(len));

    excitation.setZero();
    if (sigma > 0.0) {
      if (period[t] > 0) {
        const double amp = sigma * std::sqrt(double(period[t]));
        for (Eigen::Index i = 0; i < len; ++i)
          if (pulse[start + i])
            excitation[i] = amp;
      } else {
        std::mt19937_64                  rng(derive_seed(seed, "lpc-frame", std::uint64_t(t)));
        std::normal_distribution<double> g(0.0, sigma);
        for (auto &v : excitation)
          v = g(rng);
      }
    }

    for (Eigen::Index i = 0; i < len; ++i) {
      double acc = excitation[i];
      for (int k = 1; k <= order && i - k >= 0; ++k)
        acc += a[k - 1] * synth[i - k];
      synth[i] = acc;
    }
    out.segment(start, len) += synth * win;
    norm.segment(start, len) += win;
  }

  out /= norm.max(1e-6);
  for (Eigen::Index i = 1; i < padded; ++i)
    out[i] += kPreEmphasis * out[i - 1];
  return {out.head(n), sr};
}

// ---------------------------------------------------------------------------

VocoderChannel VocoderChannel::griffin_lim_mel()
{
  VocoderChannel c;
  c.kind = ChannelKind::GriffinLimMel;
  c.n_mels = 80;
  c.iters = 32;
  return c;
}

VocoderChannel VocoderChannel::coarse_mel_gl()
{
  VocoderChannel c;
  c.kind = ChannelKind::CoarseMelGL;
  c.n_mels = 20;
  c.iters = 32;
  return c;
}

VocoderChannel VocoderChannel::phase_random(std::uint64_t seed)
{
  VocoderChannel c;
  c.kind = ChannelKind::PhaseRandom;
  c.seed = seed;
  return c;
}

VocoderChannel VocoderChannel::lpc_source_filter()
{
  VocoderChannel c;
  c.kind = ChannelKind::LpcSourceFilter;
  return c;
}

std::string VocoderChannel::name() const
{
  std::string base;
  switch (kind) {
  case ChannelKind::GriffinLimMel:
  case ChannelKind::CoarseMelGL:
    base = "gl_mel" + std::to_string(n_mels);
    break;
  case ChannelKind::PhaseRandom:
    base = "phase_rand";
    break;
  case ChannelKind::LpcSourceFilter:
    base = "lpc" + std::to_string(lpc_order);
    break;
  }
  if (intermediate_sr)
    base += "_rs" + std::to_string(*intermediate_sr);
  return base;
}

VocoderChannel parse_channel(std::string_view spec)
{
  std::string_view   base = spec;
  std::optional<int> rate;
  if (const auto at = spec.find('@'); at != std::string_view::npos) {
    base = spec.substr(0, at);
    try {
      rate = std::stoi(std::string(spec.substr(at + 1)));
    } catch (const std::exception &) {
      throw UsageError("channel '" + std::string(spec) + "': bad intermediate rate");
    }
  }
  VocoderChannel c;
  if (base == "gl_mel80")
    c = VocoderChannel::griffin_lim_mel();
  else if (base == "gl_mel20")
    c = VocoderChannel::coarse_mel_gl();
  else if (base == "phase_rand")
    c = VocoderChannel::phase_random();
  else if (base == "lpc16")
    c = VocoderChannel::lpc_source_filter();
  else
    throw UsageError("unknown channel '" + std::string(base) +
                     "' (expected gl_mel80, gl_mel20, phase_rand, lpc16)");
  c.intermediate_sr = rate;
  return c;
}

std::vector<VocoderChannel> parse_channels(std::string_view list)
{
  std::vector<VocoderChannel> out;
  std::size_t                 pos = 0;
  while (pos <= list.size()) {
    const auto end = std::min(list.find(',', pos), list.size());
    auto       item = list.substr(pos, end - pos);
    while (!item.empty() && item.front() == ' ')
      item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ')
      item.remove_suffix(1);
    if (!item.empty())
      out.push_back(parse_channel(item));
    pos = end + 1;
  }
  if (out.empty())
    throw UsageError("channel list is empty");
  return out;
}

std::vector<VocoderChannel> default_channels()
{
  return {VocoderChannel::griffin_lim_mel(), VocoderChannel::coarse_mel_gl(),
          VocoderChannel::phase_random(), VocoderChannel::lpc_source_filter()};
}

namespace {

Waveform synth_gl(const Waveform &w, const VocoderChannel &ch)
{
  const StftConfig   cfg = channel_stft(w.sample_rate);
  const Eigen::Index pad = cfg.win_length - cfg.hop;
  Waveform           padded{ArrayXd::Zero(w.size() + 2 * pad), w.sample_rate};
  padded.samples.segment(pad, w.size()) = w.samples;

  const MelFilterbank fb = make_mel_filterbank(ch.n_mels, cfg.fft_size, w.sample_rate);
  const MatrixXd      mag = mel_pseudo_inverse(mel_apply(stft(padded, cfg), fb), fb);
  const auto          gl = griffin_lim(mag, cfg, ch.iters, w.sample_rate,
                                       derive_seed(ch.seed, "griffin-lim", std::uint64_t(ch.n_mels)));
  return {fit_length(gl.wave.samples, pad, w.size()), w.sample_rate};
}

Waveform synth_phase_random(const Waveform &w, const VocoderChannel &ch)
{
  const StftConfig   cfg{512, 512, 512, Window::Rectangular, false};
  const Eigen::Index blocks = (w.size() + cfg.win_length - 1) / cfg.win_length;
  Waveform           padded{ArrayXd::Zero(blocks * cfg.win_length), w.sample_rate};
  padded.samples.head(w.size()) = w.samples;

  ComplexSpectrogram                     s = stft(padded, cfg);
  std::mt19937_64                        rng(derive_seed(ch.seed, "phase-random"));
  std::uniform_real_distribution<double> phase(-std::numbers::pi, std::numbers::pi);
  std::bernoulli_distribution            flip(0.5);
  const Eigen::Index                     last = cfg.bins() - 1;
  for (Eigen::Index t = 0; t < s.num_frames(); ++t)
    for (Eigen::Index k = 0; k <= last; ++k) {
      const double m = std::abs(s.frames(t, k));
      if (k == 0 || k == last)
        s.frames(t, k) = flip(rng) ? -m : m; // real bins keep their magnitude
      else
        s.frames(t, k) = std::polar(m, phase(rng));
    }
  return {fit_length(istft(s).samples, 0, w.size()), w.sample_rate};
}

Waveform synth_native(const Waveform &w, const VocoderChannel &ch)
{
  if (w.sample_rate < 8000 || w.sample_rate > 48000)
    throw DataError("copy_synthesize: unsupported sample rate " + std::to_string(w.sample_rate));
  switch (ch.kind) {
  case ChannelKind::GriffinLimMel:
  case ChannelKind::CoarseMelGL:
    return synth_gl(w, ch);
  case ChannelKind::PhaseRandom:
    return synth_phase_random(w, ch);
  case ChannelKind::LpcSourceFilter:
    return lpc_resynthesize(w, ch.lpc_order, ch.frame_ms, ch.hop_ms,
                            derive_seed(ch.seed, "lpc"));
  }
  throw UsageError("copy_synthesize: unknown channel kind");
}

} // namespace

Waveform copy_synthesize(const Waveform &w, const VocoderChannel &ch)
{
  validate(w);
  if (w.duration() < 0.5)
    throw DataError("copy_synthesize: input shorter than 0.5 s");
  if (ch.n_mels < 1 || ch.iters < 1 || ch.lpc_order < 1 || ch.frame_ms <= 0 || ch.hop_ms <= 0)
    throw UsageError("copy_synthesize: channel parameters must be positive");
  if (rms(w.samples) < 1e-9)
    spdlog::warn("copy_synthesize: silent input, output is the channel's noise floor");

  if (!ch.intermediate_sr || *ch.intermediate_sr == w.sample_rate)
    return synth_native(w, ch);

  const Waveform up = resample(w, *ch.intermediate_sr);
  const Waveform voc = synth_native(up, ch);
  Waveform       back = resample(voc, w.sample_rate);
  back.samples = fit_length(back.samples, 0, w.size());
  return back;
}

PairedTrialSet build_vocoded_set(const TrialManifest &manifest,
                                 const std::vector<VocoderChannel> &channels,
                                 const std::filesystem::path &out_dir, unsigned workers)
{
  if (channels.empty())
    throw UsageError("build_vocoded_set: no channels");
  const TrialManifest bona = manifest.filter(Label::Bonafide);
  if (bona.records.empty())
    throw DataError("build_vocoded_set: manifest has no bona fide trials");
  std::filesystem::create_directories(out_dir);
  const auto out_abs = std::filesystem::absolute(out_dir);

  // results[i * channels + c]
  std::vector<std::optional<TrialRecord>> results(bona.records.size() * channels.size());
  auto work = [&](std::size_t i) {
    const TrialRecord &src = bona.records[i];
    Waveform           w;
    try {
      w = read_wav(manifest.resolve(src));
    } catch (const Error &e) {
      spdlog::error("synth: skipping '{}': {}", src.trial_id, e.what());
      return;
    }
    for (std::size_t c = 0; c < channels.size(); ++c) {
      const std::string tag = channels[c].name();
      const std::string id = src.trial_id + "__" + tag;
      try {
        const Waveform voc = copy_synthesize(w, channels[c]);
        write_wav(out_abs / (id + ".wav"), voc);
        results[i * channels.size() + c] =
            TrialRecord{id, (out_abs / (id + ".wav")).string(), Label::Spoof, tag, src.trial_id,
                        src.subset};
      } catch (const Error &e) {
        spdlog::error("synth: '{}' through {} failed: {}", src.trial_id, tag, e.what());
      }
    }
  };

  if (workers == 0)
    workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(bona.records.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < bona.records.size(); ++i)
      work(i);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < workers; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < bona.records.size(); i += workers)
          work(i);
      });
  }

  PairedTrialSet set;
  set.manifest.root = out_abs;
  for (TrialRecord r : bona.records) {
    r.path = std::filesystem::absolute(bona.resolve(r)).string();
    set.manifest.records.push_back(std::move(r));
  }
  std::vector<TrialRecord> spoofs;
  for (auto &r : results)
    if (r)
      spoofs.push_back(std::move(*r));
  if (spoofs.empty())
    throw DataError("build_vocoded_set: no trial could be synthesised");
  std::sort(spoofs.begin(), spoofs.end(),
            [](const TrialRecord &a, const TrialRecord &b) { return a.trial_id < b.trial_id; });
  set.manifest.records.insert(set.manifest.records.end(), spoofs.begin(), spoofs.end());
  validate(set.manifest);
  set.pairing = build_pairing_index(set.manifest);
  return set;
}

double log_spectral_distance(const Waveform &a, const Waveform &b)
{
  const StftConfig cfg = channel_stft(a.sample_rate);
  const MatrixXd   pa = magnitude(stft(a, cfg)).array().square().matrix();
  const MatrixXd   pb = magnitude(stft(b, cfg)).array().square().matrix();
  const Eigen::Index frames = std::min(pa.rows(), pb.rows());
  const double       floor = 1e-10 * std::max(pa.maxCoeff(), pb.maxCoeff()) + 1e-30;
  double             total = 0.0;
  for (Eigen::Index t = 0; t < frames; ++t) {
    const ArrayXd d = 10.0 * ((pa.row(t).array() + floor) / (pb.row(t).array() + floor)).log10();
    total += std::sqrt(d.square().mean());
  }
  return frames > 0 ? total / double(frames) : 0.0;
}

} // namespace vcm
