#include "vcm/resample.hpp"

#include <cmath>
#include <numeric>

namespace vcm {

namespace {

constexpr double kKaiserBeta = 8.0;
constexpr int    kTapsPerPhase = 32;

ArrayXd kaiser_sinc(int up, int down)
{
  const int    factor = std::max(up, down);
  const int    half = kTapsPerPhase / 2 * factor;
  const int    len = 2 * half + 1;
  const double fc = 0.5 / factor; // cycles per sample at the upsampled rate
  const double norm = std::cyl_bessel_i(0.0, kKaiserBeta);
  ArrayXd      h(len);
  for (int k = 0; k < len; ++k) {
    const double t = k - half;
    const double x = 2.0 * fc * t;
    const double sinc = t == 0 ? 1.0 : std::sin(M_PI * x) / (M_PI * x);
    const double r = double(t) / half;
    const double win = std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(std::max(0.0, 1.0 - r * r))) / norm;
    h[k] = 2.0 * fc * sinc * win;
  }
  return h / h.sum();
}

} // namespace

ResampleRatio resample_ratio(int source_rate, int target_rate, int max_factor)
{
  if (source_rate <= 0 || target_rate <= 0)
    throw UsageError("resample: rates must be positive");
  const int g = std::gcd(source_rate, target_rate);
  ResampleRatio r{target_rate / g, source_rate / g};
  if (r.up > max_factor || r.down > max_factor)
    throw UsageError("resample: unsupported ratio " + std::to_string(target_rate) + "/" +
                     std::to_string(source_rate));
  return r;
}

Waveform resample(const Waveform &w, int target_rate)
{
  const ResampleRatio r = resample_ratio(w.sample_rate, target_rate);
  if (r.up == 1 && r.down == 1)
    return w;

  const ArrayXd      h = kaiser_sinc(r.up, r.down) * double(r.up);
  const Eigen::Index half = (h.size() - 1) / 2;
  const Eigen::Index n = w.samples.size();
  const auto         n_out =
      static_cast<Eigen::Index>(std::llround(double(n) * r.up / double(r.down)));

  Waveform out;
  out.sample_rate = target_rate;
  out.samples = ArrayXd::Zero(n_out);
  for (Eigen::Index m = 0; m < n_out; ++m) {
    // Position of output m on the upsampled grid, shifted by the kernel centre.
    const Eigen::Index t = m * r.down + half;
    // Inputs i contribute where 0 <= t - i*up < h.size().
    Eigen::Index i_lo = std::max<Eigen::Index>(0, (t - h.size() + r.up) / r.up);
    Eigen::Index i_hi = std::min<Eigen::Index>(n - 1, t / r.up);
    double       acc = 0.0;
    for (Eigen::Index i = i_lo; i <= i_hi; ++i) {
      const Eigen::Index k = t - i * r.up;
      if (k >= 0 && k < h.size())
        acc += w.samples[i] * h[k];
    }
    out.samples[m] = acc;
  }
  return out;
}

} // namespace vcm
