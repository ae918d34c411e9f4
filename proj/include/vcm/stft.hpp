#pragma once

#include <complex>

#include "vcm/waveform.hpp"

namespace vcm {

using Eigen::MatrixXcd;
using Eigen::VectorXcd;

enum class Window { Hann, Hamming, Rectangular };

/// Periodic window of the given length.
ArrayXd make_window(Window kind, Eigen::Index length);

struct StftConfig
{
  Eigen::Index fft_size = 512;
  Eigen::Index hop = 128;
  Eigen::Index win_length = 512;
  Window       window = Window::Hann;
  // Reflect-pads win_length/2 samples on both sides before framing.
  bool center = false;

  Eigen::Index bins() const { return fft_size / 2 + 1; }
};

/// Throws UsageError unless 0 < hop <= win_length <= fft_size and fft_size
/// is even.
void validate(const StftConfig &cfg);

/// True when shifted copies of the window sum to a constant at this hop.
bool satisfies_cola(const StftConfig &cfg);

struct ComplexSpectrogram
{
  MatrixXcd  frames; // F x bins
  StftConfig config;
  int        sample_rate = 16000;

  Eigen::Index num_frames() const { return frames.rows(); }
};

// Real-input transforms of size nfft; bins = nfft/2+1.
VectorXcd rfft(const Eigen::Ref<const VectorXd> &frame, Eigen::Index nfft);
VectorXd  irfft(const Eigen::Ref<const VectorXcd> &bins, Eigen::Index nfft);

/// Number of frames produced for a signal of n samples (without centering).
inline Eigen::Index frame_count(Eigen::Index n, Eigen::Index win, Eigen::Index hop)
{
  return n < win ? 0 : (n - win) / hop + 1;
}

ComplexSpectrogram stft(const Waveform &w, const StftConfig &cfg);

/// Overlap-add inverse normalised by the window's constant overlap sum.
/// Output length is (F-1)*hop + win_length (minus the centering pad).
Waveform istft(const ComplexSpectrogram &s);

/// Least-squares inverse: analysis-window weighted overlap-add divided by
/// the per-sample sum of squared windows. Used inside phase reconstruction,
/// where it is the projection onto consistent spectrograms.
Waveform istft_least_squares(const ComplexSpectrogram &s);

/// |bins|, F x bins.
MatrixXd magnitude(const ComplexSpectrogram &s);

} // namespace vcm
