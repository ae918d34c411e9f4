#include "vcm/mel.hpp"

#include <cmath>

namespace vcm {

namespace {

// Slaney scale: linear below 1 kHz, logarithmic above.
constexpr double kLinearStep = 200.0 / 3.0;
constexpr double kBreakHz = 1000.0;
constexpr double kBreakMel = kBreakHz / kLinearStep;
const double     kLogStep = std::log(6.4) / 27.0;

} // namespace

double hz_to_mel(double hz)
{
  return hz < kBreakHz ? hz / kLinearStep : kBreakMel + std::log(hz / kBreakHz) / kLogStep;
}

double mel_to_hz(double mel)
{
  return mel < kBreakMel ? mel * kLinearStep : kBreakHz * std::exp(kLogStep * (mel - kBreakMel));
}

namespace {

MatrixXd triangles(const ArrayXd &edges_hz, Eigen::Index fft_size, int sample_rate)
{
  const Eigen::Index n = edges_hz.size() - 2;
  const Eigen::Index bins = fft_size / 2 + 1;
  MatrixXd           w = MatrixXd::Zero(n, bins);
  for (Eigen::Index m = 0; m < n; ++m) {
    const double lo = edges_hz[m], c = edges_hz[m + 1], hi = edges_hz[m + 2];
    for (Eigen::Index k = 0; k < bins; ++k) {
      const double f = double(k) * sample_rate / double(fft_size);
      const double up = (f - lo) / (c - lo);
      const double down = (hi - f) / (hi - c);
      w(m, k) = std::max(0.0, std::min(up, down));
    }
  }
  return w;
}

} // namespace

MelFilterbank make_mel_filterbank(Eigen::Index n_mels, Eigen::Index fft_size, int sample_rate,
                                  double fmin, double fmax)
{
  if (fmax <= 0)
    fmax = sample_rate / 2.0;
  if (n_mels < 1 || fmin < 0 || fmin >= fmax || fmax > sample_rate / 2.0)
    throw UsageError("mel: need 0 <= fmin < fmax <= sample_rate/2 and n_mels >= 1");

  MelFilterbank fb;
  fb.n_mels = n_mels;
  fb.fft_size = fft_size;
  fb.fmin = fmin;
  fb.fmax = fmax;
  fb.sample_rate = sample_rate;

  const ArrayXd mels = ArrayXd::LinSpaced(n_mels + 2, hz_to_mel(fmin), hz_to_mel(fmax));
  fb.weights = triangles(mels.unaryExpr([](double m) { return mel_to_hz(m); }), fft_size,
                         sample_rate);
  for (Eigen::Index m = 0; m < n_mels; ++m)
    if (fb.weights.row(m).maxCoeff() <= 0.0)
      throw UsageError("mel: filter " + std::to_string(m) +
                       " covers no FFT bin; reduce n_mels or raise fft_size");
  return fb;
}

MatrixXd linear_triangular_filters(Eigen::Index n_filters, Eigen::Index fft_size, int sample_rate)
{
  return triangles(ArrayXd::LinSpaced(n_filters + 2, 0.0, sample_rate / 2.0), fft_size,
                   sample_rate);
}

MatrixXd mel_apply(const Eigen::Ref<const MatrixXd> &magnitudes, const MelFilterbank &fb)
{
  if (magnitudes.cols() != fb.weights.cols())
    throw UsageError("mel_apply: spectrogram has " + std::to_string(magnitudes.cols()) +
                     " bins, filterbank expects " + std::to_string(fb.weights.cols()));
  return magnitudes * fb.weights.transpose();
}

MatrixXd mel_apply(const ComplexSpectrogram &s, const MelFilterbank &fb)
{
  if (s.config.fft_size != fb.fft_size || s.sample_rate != fb.sample_rate)
    throw UsageError("mel_apply: filterbank does not match fft_size/sample_rate");
  return mel_apply(magnitude(s), fb);
}

MatrixXd filterbank_pseudo_inverse(const MelFilterbank &fb)
{
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(fb.weights);
  cod.setThreshold(1e-10);
  if (cod.rank() < fb.weights.rows())
    throw NumericalError("mel_pseudo_inverse: filterbank has numerical rank " +
                         std::to_string(cod.rank()) + " < " + std::to_string(fb.weights.rows()));
  return cod.pseudoInverse();
}

MatrixXd mel_pseudo_inverse(const Eigen::Ref<const MatrixXd> &mel, const MelFilterbank &fb)
{
  if (fb.n_mels < 8)
    throw UsageError("mel_pseudo_inverse: need n_mels >= 8");
  if (mel.cols() != fb.n_mels)
    throw UsageError("mel_pseudo_inverse: mel matrix width does not match filterbank");
  const MatrixXd pinv = filterbank_pseudo_inverse(fb);
  return (mel * pinv.transpose()).cwiseMax(0.0);
}

} // namespace vcm
