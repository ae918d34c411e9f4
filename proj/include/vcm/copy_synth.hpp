#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vcm/manifest.hpp"
#include "vcm/stft.hpp"

namespace vcm {

// ---------------------------------------------------------------------------
// Phase reconstruction
// ---------------------------------------------------------------------------

struct GriffinLimResult
{
  Waveform            wave;
  /// ||(|STFT(x_i)| - target)||_F / ||target||_F after each iteration.
  std::vector<double> spectral_convergence;
};

/// Griffin-Lim: alternate projections between the target magnitude and the
/// set of consistent spectrograms (least-squares inverse STFT), with a 0.99
/// momentum term on the consistent projection. The initial phase is drawn
/// uniformly from `seed`.
GriffinLimResult griffin_lim(const Eigen::Ref<const MatrixXd> &magnitude, const StftConfig &cfg,
                             int iters, int sample_rate, std::uint64_t seed = 0x61u);

/// Spectral convergence of a waveform against a target magnitude.
double spectral_convergence(const Waveform &w, const Eigen::Ref<const MatrixXd> &target,
                            const StftConfig &cfg);

// ---------------------------------------------------------------------------
// Source-filter analysis
// ---------------------------------------------------------------------------

struct LpcResult
{
  /// Predictor a_1..a_p with x[n] ~ sum_k a_k x[n-k], after bandwidth
  /// expansion (a_k scaled by 0.996^k).
  VectorXd coefficients;
  /// Prediction error energy of the Levinson recursion (before expansion).
  double error_energy = 0.0;
  /// error_energy / frame energy; 1 means no prediction gain.
  double residual_ratio = 1.0;
  double gain = 1.0;
  bool   silent = false;
};

/// Levinson-Durbin on the frame autocorrelation. The caller pre-emphasises
/// and windows the frame. A zero-energy frame is flagged silent and gets
/// zero coefficients with unit gain.
LpcResult lpc_analyze(const Eigen::Ref<const ArrayXd> &frame, int order);

struct PitchEstimate
{
  bool   voiced = false;
  double f0 = 0.0;
  double peak = 0.0; // normalised autocorrelation at the chosen lag
};

/// Normalised-autocorrelation peak in 60-400 Hz; voiced iff peak > 0.5.
PitchEstimate estimate_f0(const Eigen::Ref<const ArrayXd> &frame, int sample_rate);

/// Frame-wise LPC analysis and resynthesis with pulse-train / white-noise
/// excitation, overlap-added with a Hann cross-fade.
Waveform lpc_resynthesize(const Waveform &w, int order = 16, double frame_ms = 25.0,
                          double hop_ms = 10.0, std::uint64_t seed = 0x1bc5u);

// ---------------------------------------------------------------------------
// Vocoder channels
// ---------------------------------------------------------------------------

enum class ChannelKind { GriffinLimMel, CoarseMelGL, PhaseRandom, LpcSourceFilter };

struct VocoderChannel
{
  ChannelKind   kind = ChannelKind::GriffinLimMel;
  int           n_mels = 80;
  int           iters = 32;
  std::uint64_t seed = 0;
  int           lpc_order = 16;
  double        frame_ms = 25.0;
  double        hop_ms = 10.0;
  /// When set, synthesis runs at this rate between two resampling steps.
  std::optional<int> intermediate_sr;

  static VocoderChannel griffin_lim_mel();
  static VocoderChannel coarse_mel_gl();
  static VocoderChannel phase_random(std::uint64_t seed = 7);
  static VocoderChannel lpc_source_filter();

  /// Attack tag, e.g. "gl_mel80" or "gl_mel80_rs24000".
  std::string name() const;
};

/// Parses "gl_mel80", "gl_mel20", "phase_rand", "lpc16", optionally
/// suffixed with "@<rate>" for a resampling roundtrip.
VocoderChannel              parse_channel(std::string_view spec);
std::vector<VocoderChannel> parse_channels(std::string_view comma_list);
std::vector<VocoderChannel> default_channels();

/// Resynthesises `w` through the channel. Output rate and length equal the
/// input's. Inputs shorter than 0.5 s or at unsupported rates throw.
Waveform copy_synthesize(const Waveform &w, const VocoderChannel &ch);

/// One spoofed trial per (bona fide trial, channel), written as WAV under
/// out_dir with id "<source>__<channel>". Trials are synthesised in parallel.
PairedTrialSet build_vocoded_set(const TrialManifest &manifest,
                                 const std::vector<VocoderChannel> &channels,
                                 const std::filesystem::path &out_dir, unsigned workers = 0);

/// Mean over frames of the RMS log-spectral distance in dB (Hann 32 ms / 8 ms).
double log_spectral_distance(const Waveform &a, const Waveform &b);

} // namespace vcm
