#pragma once

#include <array>
#include <complex>
#include <optional>
#include <vector>

#include "vcm/waveform.hpp"

namespace vcm {

/// Second-order section with a0 normalised to 1:
///   H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)
struct Biquad
{
  double b0 = 1, b1 = 0, b2 = 0;
  double a1 = 0, a2 = 0;

  std::array<std::complex<double>, 2> poles() const;
  std::complex<double>                response(double omega) const;
};

struct BiquadCascade
{
  std::vector<Biquad> sections;

  std::complex<double> response(double freq_hz, double sample_rate) const;
  double               max_pole_radius() const;
  bool                 stable() const { return max_pole_radius() < 1.0; }
  /// Total filter order (two per section).
  Eigen::Index order() const { return 2 * Eigen::Index(sections.size()); }
};

/// Digital Butterworth band-stop of the given (even) total order, built by
/// the bilinear transform with pre-warped edges; order/2 sections.
BiquadCascade design_butterworth_bandstop(int order, double f_lo, double f_hi, double sample_rate);

/// Digital Butterworth low-pass; odd orders end with a first-order section.
BiquadCascade design_butterworth_lowpass(int order, double cutoff, double sample_rate);

/// Constant-skirt notch (RBJ cookbook) at f0 with quality factor q.
Biquad design_notch(double f0, double q, double sample_rate);

/// Causal filtering through the cascade; zero initial state unless
/// `initial_scale` is given, in which case every section starts in the
/// steady state for a constant input of that value.
ArrayXd sosfilt(const BiquadCascade &c, const Eigen::Ref<const ArrayXd> &x,
                std::optional<double> initial_scale = std::nullopt);

/// Edge padding used by filtfilt for a signal of length n.
Eigen::Index filtfilt_padding(const BiquadCascade &c, Eigen::Index n);

/// Zero-phase forward-backward filtering with odd-reflection padding and
/// steady-state initial conditions. Length and rate are preserved.
Waveform filtfilt(const BiquadCascade &c, const Waveform &w);
ArrayXd  filtfilt(const BiquadCascade &c, const Eigen::Ref<const ArrayXd> &x);

} // namespace vcm
