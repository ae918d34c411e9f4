#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "vcm/iir.hpp"
#include "vcm/waveform.hpp"

namespace vcm {

enum class AugmentKind { RawBoostLike, FreqMask, CodecSim };

std::string_view to_string(AugmentKind k);
AugmentKind      parse_augment_kind(std::string_view s);

struct Range
{
  double lo = 0.0;
  double hi = 0.0;
};

struct AugmentOp
{
  AugmentKind kind = AugmentKind::RawBoostLike;

  // RawBoostLike
  Range snr_db{10.0, 40.0};
  int   notches_min = 1;
  int   notches_max = 5;

  // FreqMask (Hz)
  Range band_lo{300.0, 6000.0};
  Range band_width{200.0, 2000.0};
  int   order = 10;

  // CodecSim (kbps)
  Range bitrate{16.0, 320.0};

  std::uint64_t seed = 0;

  static AugmentOp rawboost(std::uint64_t seed = 0);
  static AugmentOp freq_mask(std::uint64_t seed = 0);
  static AugmentOp codec(std::uint64_t seed = 0);
};

/// Throws UsageError on empty or inverted ranges.
void validate(const AugmentOp &op);

// ---------------------------------------------------------------------------

/// RawBoost component switches; everything on by default.
struct RawBoostParts
{
  bool convolutive = true;
  bool impulsive = true;
  bool stationary = true;
  bool peak_normalize = true;
};

/// Random draws behind one rawboost_like call.
struct RawBoostDraw
{
  struct Notch
  {
    double freq = 0.0;
    double q = 0.0;
  };
  std::vector<Notch> notches;
  double             impulse_density = 0.0; // fraction of samples hit
  double             impulse_gain = 0.0;
  double             snr_db = 0.0;
  double             noise_tilt = 0.0; // spectral slope exponent of the additive noise
};

RawBoostDraw draw_rawboost(const AugmentOp &op, int sample_rate);

Waveform rawboost_like(const Waveform &w, const AugmentOp &op, const RawBoostParts &parts = {});

// ---------------------------------------------------------------------------

struct StopBand
{
  double lo = 0.0;
  double hi = 0.0;
  /// Frequency of the infinite-attenuation point (pre-warped geometric centre).
  double centre(double sample_rate) const;
};

/// Edges drawn uniformly from the op's ranges, upper edge kept below 0.98 of
/// the Nyquist rate.
StopBand draw_stop_band(const AugmentOp &op, int sample_rate);

Waveform freq_mask(const Waveform &w, const AugmentOp &op);
Waveform apply_stop_band(const Waveform &w, const StopBand &band, int order);

// ---------------------------------------------------------------------------

struct CodecSetting
{
  double bitrate = 0.0; // kbps
  double cutoff = 0.0;  // Hz; at or above Nyquist means no band limit
  int    bits = 0;
};

/// Linear maps 16..320 kbps -> 3 kHz..Nyquist and 6..12 bits, both rounded.
CodecSetting codec_setting(double bitrate, int sample_rate);
double       draw_bitrate(const AugmentOp &op);

Waveform codec_sim(const Waveform &w, const AugmentOp &op);
Waveform codec_sim_at(const Waveform &w, double bitrate);

/// mu-law companded uniform quantisation to `bits` bits (mu = 255).
ArrayXd mu_law_quantize(const Eigen::Ref<const ArrayXd> &x, int bits);

// ---------------------------------------------------------------------------

/// Dispatch on op.kind.
Waveform apply(const Waveform &w, const AugmentOp &op);

/// A set of candidate ops plus a master seed. View v of trial t applies one
/// op chosen by the derived seed hash(master, t, v).
struct AugmentPlan
{
  std::vector<AugmentOp> ops;
  std::uint64_t          master_seed = 0;
};

AugmentPlan default_plan(std::uint64_t master_seed);
Waveform    augment_view(const Waveform &w, const AugmentPlan &plan, std::string_view trial_id,
                         int view);

} // namespace vcm
