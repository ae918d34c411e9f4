#include "vcm/stft.hpp"

#include <cmath>
#include <numbers>

#include <unsupported/Eigen/FFT>

namespace vcm {

namespace {

Eigen::FFT<double> &fft_engine()
{
  thread_local Eigen::FFT<double> engine = [] {
    Eigen::FFT<double> f;
    f.SetFlag(Eigen::FFT<double>::HalfSpectrum);
    return f;
  }();
  return engine;
}


ArrayXd reflect_pad(const ArrayXd &x, Eigen::Index pad)
{
  const Eigen::Index n = x.size();
  if (pad >= n)
    throw DataError("stft: signal too short for centred padding");
  ArrayXd out(n + 2 * pad);
  for (Eigen::Index i = 0; i < pad; ++i) {
    out[pad - 1 - i] = x[i + 1];
    out[pad + n + i] = x[n - 2 - i];
  }
  out.segment(pad, n) = x;
  return out;
}

} // namespace

ArrayXd make_window(Window kind, Eigen::Index length)
{
  ArrayXd w(length);
  const double two_pi = 2.0 * std::numbers::pi;
  for (Eigen::Index i = 0; i < length; ++i) {
    const double phase = two_pi * double(i) / double(length);
    switch (kind) {
    case Window::Hann:
      w[i] = 0.5 - 0.5 * std::cos(phase);
      break;
    case Window::Hamming:
      w[i] = 0.54 - 0.46 * std::cos(phase);
      break;
    case Window::Rectangular:
      w[i] = 1.0;
      break;
    }
  }
  return w;
}

void validate(const StftConfig &cfg)
{
  if (cfg.fft_size < 2 || cfg.fft_size % 2 != 0)
    throw UsageError("stft: fft_size must be even");
  if (cfg.hop <= 0 || cfg.hop > cfg.win_length || cfg.win_length > cfg.fft_size)
    throw UsageError("stft: need 0 < hop <= win_length <= fft_size");
}

bool satisfies_cola(const StftConfig &cfg)
{
  const ArrayXd w = make_window(cfg.window, cfg.win_length);
  ArrayXd       acc = ArrayXd::Zero(cfg.hop);
  for (Eigen::Index i = 0; i < cfg.win_length; ++i)
    acc[i % cfg.hop] += w[i];
  const double mean = acc.mean();
  return mean > 0 && ((acc - mean).abs() <= 1e-10 * mean).all();
}

VectorXcd rfft(const Eigen::Ref<const VectorXd> &frame, Eigen::Index nfft)
{
  VectorXd padded = VectorXd::Zero(nfft);
  padded.head(std::min(nfft, frame.size())) = frame.head(std::min(nfft, frame.size()));
  VectorXcd out;
  fft_engine().fwd(out, padded);
  return out;
}

VectorXd irfft(const Eigen::Ref<const VectorXcd> &bins, Eigen::Index nfft)
{
  VectorXcd in = bins;
  // Imaginary parts of DC and Nyquist carry no information for real signals.
  in[0] = in[0].real();
  in[nfft / 2] = in[nfft / 2].real();
  VectorXd out;
  fft_engine().inv(out, in, nfft);
  return out;
}

ComplexSpectrogram stft(const Waveform &w, const StftConfig &cfg)
{
  validate(cfg);
  const ArrayXd x = cfg.center ? reflect_pad(w.samples, cfg.win_length / 2) : w.samples;
  if (x.size() < cfg.win_length)
    throw DataError("stft: waveform shorter than win_length");

  const ArrayXd      win = make_window(cfg.window, cfg.win_length);
  const Eigen::Index nf = frame_count(x.size(), cfg.win_length, cfg.hop);
  ComplexSpectrogram s;
  s.config = cfg;
  s.sample_rate = w.sample_rate;
  s.frames.resize(nf, cfg.bins());
  VectorXd frame(cfg.win_length);
  for (Eigen::Index t = 0; t < nf; ++t) {
    frame = (x.segment(t * cfg.hop, cfg.win_length) * win).matrix();
    s.frames.row(t) = rfft(frame, cfg.fft_size).transpose();
  }
  return s;
}

namespace {

Waveform overlap_add(const ComplexSpectrogram &s, bool weighted)
{
  const StftConfig &cfg = s.config;
  validate(cfg);
  const Eigen::Index nf = s.num_frames();
  if (s.frames.cols() != cfg.bins())
    throw UsageError("istft: bin count does not match fft_size");

  Waveform out;
  out.sample_rate = s.sample_rate;
  if (nf == 0) {
    out.samples.resize(0);
    return out;
  }
  const ArrayXd      win = make_window(cfg.window, cfg.win_length);
  const Eigen::Index len = (nf - 1) * cfg.hop + cfg.win_length;
  ArrayXd            acc = ArrayXd::Zero(len);
  ArrayXd            norm = ArrayXd::Zero(len);
  for (Eigen::Index t = 0; t < nf; ++t) {
    const ArrayXd frame = irfft(s.frames.row(t).transpose(), cfg.fft_size)
                              .head(cfg.win_length)
                              .array();
    if (weighted) {
      acc.segment(t * cfg.hop, cfg.win_length) += frame * win;
      norm.segment(t * cfg.hop, cfg.win_length) += win.square();
    } else {
      acc.segment(t * cfg.hop, cfg.win_length) += frame;
    }
  }
  if (weighted) {
    const double floor = 1e-8 * norm.maxCoeff();
    acc /= norm.max(floor);
  } else {
    acc /= win.sum() / double(cfg.hop);
  }

  if (cfg.center) {
    const Eigen::Index pad = cfg.win_length / 2;
    out.samples = len > 2 * pad ? ArrayXd(acc.segment(pad, len - 2 * pad)) : ArrayXd(0);
  } else {
    out.samples = std::move(acc);
  }
  return out;
}

} // namespace

Waveform istft(const ComplexSpectrogram &s)
{
  if (!satisfies_cola(s.config))
    throw UsageError("istft: window/hop combination is not constant-overlap-add");
  return overlap_add(s, false);
}

Waveform istft_least_squares(const ComplexSpectrogram &s) { return overlap_add(s, true); }

MatrixXd magnitude(const ComplexSpectrogram &s) { return s.frames.cwiseAbs(); }

} // namespace vcm
