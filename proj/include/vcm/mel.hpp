#pragma once

#include "vcm/stft.hpp"

namespace vcm {

struct MelFilterbank
{
  Eigen::Index n_mels = 80;
  Eigen::Index fft_size = 512;
  double       fmin = 0.0;
  double       fmax = 8000.0;
  int          sample_rate = 16000;
  MatrixXd     weights; // n_mels x (fft_size/2+1)
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular filters evenly spaced on the Slaney mel scale. fmax <= 0 means
/// sample_rate/2.
MelFilterbank make_mel_filterbank(Eigen::Index n_mels, Eigen::Index fft_size, int sample_rate,
                                  double fmin = 0.0, double fmax = -1.0);

/// Triangular filters evenly spaced in Hz.
MatrixXd linear_triangular_filters(Eigen::Index n_filters, Eigen::Index fft_size, int sample_rate);

/// F x n_mels matrix of fb.weights applied to |bins|.
MatrixXd mel_apply(const ComplexSpectrogram &s, const MelFilterbank &fb);
MatrixXd mel_apply(const Eigen::Ref<const MatrixXd> &magnitudes, const MelFilterbank &fb);

/// Minimum-norm least-squares pseudo-inverse of the filterbank, bins x n_mels.
/// Throws NumericalError when the filterbank is rank deficient.
MatrixXd filterbank_pseudo_inverse(const MelFilterbank &fb);

/// Approximate magnitudes (F x bins) from a mel matrix; negatives clamped to 0.
MatrixXd mel_pseudo_inverse(const Eigen::Ref<const MatrixXd> &mel, const MelFilterbank &fb);

} // namespace vcm
