#include "vcm/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "vcm/stft.hpp"

namespace vcm {

namespace {

constexpr double kMuLaw = 255.0;
constexpr int    kCodecLowpassOrder = 6;

double uniform(std::mt19937_64 &rng, Range r)
{
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

void check_input(const Waveform &w, const char *who)
{
  if (w.size() == 0)
    throw DataError(std::string(who) + ": empty input");
}

// Moving RMS over a centred window of 2*half+1 samples.
ArrayXd local_rms(const ArrayXd &x, Eigen::Index half)
{
  const Eigen::Index n = x.size();
  ArrayXd            cum(n + 1);
  cum[0] = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    cum[i + 1] = cum[i] + x[i] * x[i];
  ArrayXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index a = std::max<Eigen::Index>(0, i - half);
    const Eigen::Index b = std::min<Eigen::Index>(n, i + half + 1);
    out[i] = std::sqrt(std::max(0.0, cum[b] - cum[a]) / double(b - a));
  }
  return out;
}

// Gaussian noise with power spectrum ~ f^-tilt (DC removed).
ArrayXd coloured_noise(Eigen::Index n, double tilt, std::mt19937_64 &rng)
{
  Eigen::Index nfft = 2; // power of two keeps kissfft off its slow generic radix
  while (nfft < n)
    nfft *= 2;
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::VectorXcd                 bins(nfft / 2 + 1);
  bins[0] = 0.0;
  for (Eigen::Index k = 1; k < bins.size(); ++k) {
    const double scale = std::pow(double(k), -0.5 * tilt);
    bins[k] = {scale * g(rng), scale * g(rng)};
  }
  bins[bins.size() - 1] = bins[bins.size() - 1].real();
  return irfft(bins, nfft).head(n).array();
}

} // namespace

std::string_view to_string(AugmentKind k)
{
  switch (k) {
  case AugmentKind::RawBoostLike:
    return "rawboost";
  case AugmentKind::FreqMask:
    return "freq_mask";
  case AugmentKind::CodecSim:
    return "codec";
  }
  return "?";
}

AugmentKind parse_augment_kind(std::string_view s)
{
  if (s == "rawboost")
    return AugmentKind::RawBoostLike;
  if (s == "freq_mask")
    return AugmentKind::FreqMask;
  if (s == "codec")
    return AugmentKind::CodecSim;
  throw UsageError("unknown augmentation '" + std::string(s) +
                   "' (expected rawboost, freq_mask, codec)");
}

AugmentOp AugmentOp::rawboost(std::uint64_t seed)
{
  AugmentOp op;
  op.kind = AugmentKind::RawBoostLike;
  op.seed = seed;
  return op;
}

AugmentOp AugmentOp::freq_mask(std::uint64_t seed)
{
  AugmentOp op;
  op.kind = AugmentKind::FreqMask;
  op.seed = seed;
  return op;
}

AugmentOp AugmentOp::codec(std::uint64_t seed)
{
  AugmentOp op;
  op.kind = AugmentKind::CodecSim;
  op.seed = seed;
  return op;
}

void validate(const AugmentOp &op)
{
  auto ordered = [](Range r, const char *name) {
    if (!(r.lo <= r.hi) || !(r.lo > 0.0))
      throw UsageError(std::string("augment: bad range for ") + name);
  };
  ordered(op.snr_db, "snr");
  ordered(op.band_lo, "band_lo");
  ordered(op.band_width, "band_width");
  ordered(op.bitrate, "bitrate");
  if (op.notches_min < 0 || op.notches_min > op.notches_max)
    throw UsageError("augment: bad notch count range");
  if (op.order < 2 || op.order % 2 != 0)
    throw UsageError("augment: band-stop order must be even");
}

// ---------------------------------------------------------------------------

RawBoostDraw draw_rawboost(const AugmentOp &op, int sample_rate)
{
  validate(op);
  std::mt19937_64 rng(derive_seed(op.seed, "rawboost"));
  RawBoostDraw    d;
  const int       count = std::uniform_int_distribution<int>(op.notches_min, op.notches_max)(rng);
  const double    nyquist = 0.5 * sample_rate;
  for (int i = 0; i < count; ++i)
    d.notches.push_back({uniform(rng, {100.0, 0.9 * nyquist}), uniform(rng, {5.0, 20.0})});
  d.impulse_density = uniform(rng, {0.001, 0.01});
  d.impulse_gain = uniform(rng, {0.5, 3.0});
  d.snr_db = uniform(rng, op.snr_db);
  d.noise_tilt = uniform(rng, {0.0, 2.0});
  return d;
}

Waveform rawboost_like(const Waveform &w, const AugmentOp &op, const RawBoostParts &parts)
{
  check_input(w, "rawboost_like");
  const RawBoostDraw d = draw_rawboost(op, w.sample_rate);
  std::mt19937_64    rng(derive_seed(op.seed, "rawboost-noise"));
  ArrayXd            y = w.samples;

  if (parts.convolutive && !d.notches.empty()) {
    BiquadCascade c;
    for (const auto &n : d.notches)
      c.sections.push_back(design_notch(n.freq, n.q, w.sample_rate));
    y = sosfilt(c, y);
  }

  if (parts.impulsive) {
    const ArrayXd                          amp = local_rms(y, w.sample_rate / 200);
    std::bernoulli_distribution            hit(d.impulse_density);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      if (hit(rng)) {
        const double r = u(rng);
        y[i] += d.impulse_gain * (r < 0 ? -1.0 : 1.0) * (0.5 + 0.5 * std::abs(r)) * amp[i];
      }
    }
  }

  if (parts.stationary) {
    const double ref = rms(y);
    if (ref > 0.0) {
      ArrayXd      noise = coloured_noise(y.size(), d.noise_tilt, rng);
      const double n_rms = std::sqrt(noise.square().mean());
      if (n_rms > 0.0)
        y += noise * (ref / n_rms * std::pow(10.0, -d.snr_db / 20.0));
    }
  }

  if (parts.peak_normalize) {
    const double in_peak = w.samples.abs().maxCoeff();
    const double out_peak = y.abs().maxCoeff();
    if (out_peak > 0.0)
      y *= in_peak / out_peak;
  }
  return {y, w.sample_rate};
}

// ---------------------------------------------------------------------------

double StopBand::centre(double sample_rate) const
{
  const double wl = std::tan(std::numbers::pi * lo / sample_rate);
  const double wh = std::tan(std::numbers::pi * hi / sample_rate);
  return sample_rate / std::numbers::pi * std::atan(std::sqrt(wl * wh));
}

StopBand draw_stop_band(const AugmentOp &op, int sample_rate)
{
  validate(op);
  std::mt19937_64 rng(derive_seed(op.seed, "freq-mask"));
  const double    ceiling = 0.98 * 0.5 * sample_rate;
  StopBand        b;
  b.lo = uniform(rng, op.band_lo);
  b.hi = std::min(b.lo + uniform(rng, op.band_width), ceiling);
  if (!(b.lo > 0.0 && b.lo < b.hi))
    throw UsageError("freq_mask: drawn band [" + std::to_string(b.lo) + ", " +
                     std::to_string(b.hi) + "] Hz does not fit below Nyquist");
  return b;
}

Waveform apply_stop_band(const Waveform &w, const StopBand &band, int order)
{
  return filtfilt(design_butterworth_bandstop(order, band.lo, band.hi, w.sample_rate), w);
}

Waveform freq_mask(const Waveform &w, const AugmentOp &op)
{
  check_input(w, "freq_mask");
  return apply_stop_band(w, draw_stop_band(op, w.sample_rate), op.order);
}

// ---------------------------------------------------------------------------

CodecSetting codec_setting(double bitrate, int sample_rate)
{
  const double t = std::clamp((bitrate - 16.0) / (320.0 - 16.0), 0.0, 1.0);
  const double nyquist = 0.5 * sample_rate;
  CodecSetting s;
  s.bitrate = bitrate;
  s.cutoff = std::round(3000.0 + t * (nyquist - 3000.0));
  s.bits = static_cast<int>(std::lround(6.0 + 6.0 * t));
  return s;
}

double draw_bitrate(const AugmentOp &op)
{
  validate(op);
  std::mt19937_64 rng(derive_seed(op.seed, "codec"));
  return uniform(rng, op.bitrate);
}

ArrayXd mu_law_quantize(const Eigen::Ref<const ArrayXd> &x, int bits)
{
  if (bits < 2 || bits > 24)
    throw UsageError("mu_law_quantize: bits out of range");
  const double levels = std::ldexp(1.0, bits - 1) - 1.0;
  const double log_mu = std::log1p(kMuLaw);
  return x.unaryExpr([&](double v) {
    const double c = std::clamp(v, -1.0, 1.0);
    const double y = std::copysign(std::log1p(kMuLaw * std::abs(c)) / log_mu, c);
    const double q = std::round(y * levels) / levels;
    return std::copysign(std::expm1(std::abs(q) * log_mu) / kMuLaw, q);
  });
}

Waveform codec_sim_at(const Waveform &w, double bitrate)
{
  check_input(w, "codec_sim");
  const CodecSetting s = codec_setting(bitrate, w.sample_rate);
  ArrayXd            y = w.samples;
  if (s.cutoff < 0.5 * w.sample_rate && y.size() > 3 * kCodecLowpassOrder + 3)
    y = filtfilt(design_butterworth_lowpass(kCodecLowpassOrder, s.cutoff, w.sample_rate), y);
  return {mu_law_quantize(y, s.bits), w.sample_rate};
}

Waveform codec_sim(const Waveform &w, const AugmentOp &op)
{
  return codec_sim_at(w, draw_bitrate(op));
}

// ---------------------------------------------------------------------------

Waveform apply(const Waveform &w, const AugmentOp &op)
{
  switch (op.kind) {
  case AugmentKind::RawBoostLike:
    return rawboost_like(w, op);
  case AugmentKind::FreqMask:
    return freq_mask(w, op);
  case AugmentKind::CodecSim:
    return codec_sim(w, op);
  }
  throw UsageError("augment: unknown kind");
}

AugmentPlan default_plan(std::uint64_t master_seed)
{
  return {{AugmentOp::rawboost(), AugmentOp::freq_mask(), AugmentOp::codec()}, master_seed};
}

Waveform augment_view(const Waveform &w, const AugmentPlan &plan, std::string_view trial_id,
                      int view)
{
  if (plan.ops.empty())
    throw UsageError("augment plan has no ops");
  const std::uint64_t seed = derive_seed(plan.master_seed, trial_id, std::uint64_t(view));
  AugmentOp           op = plan.ops[splitmix64(seed) % plan.ops.size()];
  op.seed = seed;
  return apply(w, op);
}

} // namespace vcm
