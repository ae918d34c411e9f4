#pragma once

// Shared helpers for the unit tests. Everything here is written directly
// against the definitions (direct summation, naive loops) and does not call
// into the library's transform code.

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include <Eigen/Dense>

namespace vcm::test {

inline Eigen::ArrayXd sine(double freq, double sr, Eigen::Index n, double amp = 1.0,
                           double phase = 0.0)
{
  Eigen::ArrayXd x(n);
  for (Eigen::Index i = 0; i < n; ++i)
    x[i] = amp * std::sin(2.0 * std::numbers::pi * freq * double(i) / sr + phase);
  return x;
}

inline Eigen::ArrayXd noise(Eigen::Index n, std::uint64_t seed, double scale = 1.0)
{
  std::mt19937_64                  rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  Eigen::ArrayXd                   x(n);
  for (auto &v : x)
    v = g(rng);
  return x;
}

inline double rms_of(const Eigen::ArrayXd &x) { return std::sqrt(x.square().mean()); }

inline double db(double ratio) { return 20.0 * std::log10(ratio); }

/// |DFT| at integer bin k by direct summation.
inline double dft_magnitude(const Eigen::ArrayXd &x, Eigen::Index k)
{
  std::complex<double> acc = 0.0;
  const double         n = double(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i)
    acc += x[i] * std::polar(1.0, -2.0 * std::numbers::pi * double(k) * double(i) / n);
  return std::abs(acc);
}

/// Bin with the largest direct-summation DFT magnitude in [0, n/2].
inline Eigen::Index dft_peak_bin(const Eigen::ArrayXd &x)
{
  Eigen::Index best = 0;
  double       best_mag = -1.0;
  for (Eigen::Index k = 0; k <= x.size() / 2; ++k) {
    const double m = dft_magnitude(x, k);
    if (m > best_mag) {
      best_mag = m;
      best = k;
    }
  }
  return best;
}

/// Autocorrelation F0 estimate over [fmin, fmax], independent of the
/// library's pitch tracker: raw (unnormalised) autocorrelation maximum with
/// the shortest lag preferred among near-ties.
inline double autocorr_f0(const Eigen::ArrayXd &x, double sr, double fmin = 60.0,
                          double fmax = 400.0)
{
  const auto lo = static_cast<Eigen::Index>(std::floor(sr / fmax));
  const auto hi = static_cast<Eigen::Index>(std::ceil(sr / fmin));
  Eigen::ArrayXd r(hi + 2);
  for (Eigen::Index lag = 0; lag < hi + 2; ++lag) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i + lag < x.size(); ++i)
      acc += x[i] * x[i + lag];
    r[lag] = acc / double(x.size() - lag);
  }
  const double best = r.segment(lo, hi - lo + 1).maxCoeff();
  Eigen::Index lag = lo;
  for (; lag <= hi; ++lag)
    if (r[lag] >= 0.9 * best && r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1])
      break;
  const double a = r[lag - 1], b = r[lag], c = r[lag + 1];
  const double denom = a - 2.0 * b + c;
  const double shift = denom != 0.0 ? 0.5 * (a - c) / denom : 0.0;
  return sr / (double(lag) + shift);
}

} // namespace vcm::test

namespace vcm::test {

/// Harmonic tone with a fixed vowel-like envelope (peaks near 700 and 1200 Hz).
inline Eigen::ArrayXd harmonic_tone(double f0, double sr, Eigen::Index n, double amp = 0.3)
{
  Eigen::ArrayXd x = Eigen::ArrayXd::Zero(n);
  for (int h = 1; h * f0 < sr / 2 - 200; ++h) {
    const double f = h * f0;
    const double env = 1.0 / h + 0.8 * std::exp(-std::pow((f - 700.0) / 150.0, 2)) +
                       0.5 * std::exp(-std::pow((f - 1200.0) / 200.0, 2));
    x += sine(f, sr, n, env, 0.3 * h);
  }
  return amp * x / x.abs().maxCoeff();
}

inline double correlation(const Eigen::ArrayXd &a, const Eigen::ArrayXd &b)
{
  const Eigen::ArrayXd x = a - a.mean(), y = b - b.mean();
  return (x * y).sum() / std::sqrt(x.square().sum() * y.square().sum());
}

} // namespace vcm::test
