#include "vcm/iir.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace vcm {

using cd = std::complex<double>;

std::array<cd, 2> Biquad::poles() const
{
  // Roots of z^2 + a1 z + a2.
  const cd disc = std::sqrt(cd(a1 * a1 - 4.0 * a2, 0.0));
  return {(-a1 + disc) / 2.0, (-a1 - disc) / 2.0};
}

cd Biquad::response(double omega) const
{
  const cd z1 = std::polar(1.0, -omega);
  const cd z2 = z1 * z1;
  return (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2);
}

cd BiquadCascade::response(double freq_hz, double sample_rate) const
{
  const double omega = 2.0 * std::numbers::pi * freq_hz / sample_rate;
  cd           h = 1.0;
  for (const auto &s : sections)
    h *= s.response(omega);
  return h;
}

double BiquadCascade::max_pole_radius() const
{
  double r = 0.0;
  for (const auto &s : sections)
    for (const auto &p : s.poles())
      r = std::max(r, std::abs(p));
  return r;
}

namespace {

std::vector<cd> butterworth_prototype(int n)
{
  std::vector<cd> p;
  for (int k = 0; k < n; ++k)
    p.push_back(std::polar(1.0, std::numbers::pi * (2.0 * k + n + 1.0) / (2.0 * n)));
  return p;
}

cd bilinear(cd s) { return (1.0 + s) / (1.0 - s); }

// Groups digital poles into conjugate pairs (or pairs of reals) and returns
// the denominator (a1, a2) of each pair.
std::vector<std::pair<double, double>> pair_poles(std::vector<cd> poles)
{
  std::vector<std::pair<double, double>> out;
  std::vector<double>                    reals;
  for (const cd &p : poles) {
    const double tol = 1e-12 * std::max(1.0, std::abs(p));
    if (std::abs(p.imag()) <= tol)
      reals.push_back(p.real());
    else if (p.imag() > 0)
      out.emplace_back(-2.0 * p.real(), std::norm(p));
  }
  std::sort(reals.begin(), reals.end());
  for (std::size_t i = 0; i + 1 < reals.size(); i += 2)
    out.emplace_back(-(reals[i] + reals[i + 1]), reals[i] * reals[i + 1]);
  if (reals.size() % 2 == 1)
    out.emplace_back(-reals.back(), 0.0);
  return out;
}

} // namespace

BiquadCascade design_butterworth_bandstop(int order, double f_lo, double f_hi, double sample_rate)
{
  if (order < 2 || order % 2 != 0)
    throw UsageError("butterworth band-stop: order must be even and >= 2");
  if (!(f_lo > 0.0 && f_lo < f_hi && f_hi < sample_rate / 2.0))
    throw UsageError("butterworth band-stop: need 0 < f_lo < f_hi < sample_rate/2");

  const int    n = order / 2;
  const double w1 = std::tan(std::numbers::pi * f_lo / sample_rate);
  const double w2 = std::tan(std::numbers::pi * f_hi / sample_rate);
  const double bw = w2 - w1;
  const double w0sq = w1 * w2;

  std::vector<cd> digital;
  for (const cd &p : butterworth_prototype(n)) {
    const cd half = bw / (2.0 * p);
    const cd root = std::sqrt(half * half - w0sq);
    digital.push_back(bilinear(half + root));
    digital.push_back(bilinear(half - root));
  }

  const double notch = 2.0 * std::atan(std::sqrt(w0sq));
  const double c = std::cos(notch);
  BiquadCascade cascade;
  for (const auto &[a1, a2] : pair_poles(digital)) {
    const double g = (1.0 + a1 + a2) / (2.0 - 2.0 * c);
    cascade.sections.push_back({g, -2.0 * c * g, g, a1, a2});
  }
  std::sort(cascade.sections.begin(), cascade.sections.end(),
            [](const Biquad &l, const Biquad &r) { return l.a2 < r.a2; });
  return cascade;
}

BiquadCascade design_butterworth_lowpass(int order, double cutoff, double sample_rate)
{
  if (order < 1)
    throw UsageError("butterworth low-pass: order must be >= 1");
  if (!(cutoff > 0.0 && cutoff < sample_rate / 2.0))
    throw UsageError("butterworth low-pass: need 0 < cutoff < sample_rate/2");

  const double    wc = std::tan(std::numbers::pi * cutoff / sample_rate);
  std::vector<cd> digital;
  for (const cd &p : butterworth_prototype(order))
    digital.push_back(bilinear(wc * p));

  BiquadCascade cascade;
  for (const auto &[a1, a2] : pair_poles(digital)) {
    if (a2 == 0.0) {
      // First-order section: zero at z = -1.
      const double g = (1.0 + a1) / 2.0;
      cascade.sections.push_back({g, g, 0.0, a1, 0.0});
    } else {
      const double g = (1.0 + a1 + a2) / 4.0;
      cascade.sections.push_back({g, 2.0 * g, g, a1, a2});
    }
  }
  return cascade;
}

Biquad design_notch(double f0, double q, double sample_rate)
{
  if (!(f0 > 0.0 && f0 < sample_rate / 2.0) || q <= 0.0)
    throw UsageError("notch: need 0 < f0 < sample_rate/2 and q > 0");
  const double w0 = 2.0 * std::numbers::pi * f0 / sample_rate;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double a0 = 1.0 + alpha;
  return {1.0 / a0, -2.0 * std::cos(w0) / a0, 1.0 / a0, -2.0 * std::cos(w0) / a0,
          (1.0 - alpha) / a0};
}

ArrayXd sosfilt(const BiquadCascade &c, const Eigen::Ref<const ArrayXd> &x,
                std::optional<double> initial_scale)
{
  ArrayXd y = x;
  double  dc_in = initial_scale.value_or(0.0);
  for (const auto &s : c.sections) {
    double z1 = 0.0, z2 = 0.0;
    if (initial_scale) {
      const double g = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
      z2 = (s.b2 - s.a2 * g) * dc_in;
      z1 = (s.b1 - s.a1 * g) * dc_in + z2;
      dc_in *= g;
    }
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double in = y[i];
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      y[i] = out;
    }
  }
  return y;
}

Eigen::Index filtfilt_padding(const BiquadCascade &c, Eigen::Index n)
{
  Eigen::Index pad = 3 * c.order();
  const double r = c.max_pole_radius();
  if (r > 0.0 && r < 1.0) {
    // Long enough for the slowest transient to decay below 1e-13.
    const double decay = std::ceil(std::log(1e-13) / std::log(r));
    pad = std::max(pad, static_cast<Eigen::Index>(decay));
  }
  return std::min(pad, n - 1);
}

ArrayXd filtfilt(const BiquadCascade &c, const Eigen::Ref<const ArrayXd> &x)
{
  const Eigen::Index n = x.size();
  if (n <= 3 * c.order() || n < 2)
    throw DataError("filtfilt: input of " + std::to_string(n) +
                    " samples is too short for a filter of order " + std::to_string(c.order()));
  if (c.sections.empty())
    return x;

  const Eigen::Index pad = filtfilt_padding(c, n);
  ArrayXd            ext(n + 2 * pad);
  for (Eigen::Index i = 0; i < pad; ++i) {
    ext[pad - 1 - i] = 2.0 * x[0] - x[i + 1];
    ext[pad + n + i] = 2.0 * x[n - 1] - x[n - 2 - i];
  }
  ext.segment(pad, n) = x;

  ArrayXd fwd = sosfilt(c, ext, ext[0]);
  fwd.reverseInPlace();
  ArrayXd back = sosfilt(c, fwd, fwd[0]);
  back.reverseInPlace();
  return back.segment(pad, n);
}

Waveform filtfilt(const BiquadCascade &c, const Waveform &w)
{
  return {filtfilt(c, w.samples), w.sample_rate};
}

} // namespace vcm
