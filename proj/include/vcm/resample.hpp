#pragma once

#include "vcm/waveform.hpp"

namespace vcm {

struct ResampleRatio
{
  int up = 1;   // L
  int down = 1; // M
};

/// Reduced L/M for target/source; throws UsageError when either factor
/// exceeds max_factor.
ResampleRatio resample_ratio(int source_rate, int target_rate, int max_factor = 64);

/// Polyphase rational resampler with a Kaiser-windowed sinc (beta 8). The
/// kernel spans 32 samples of the lower of the two rates on each polyphase
/// branch and cuts off at the lower Nyquist frequency. Output length is
/// round(n * target / source).
Waveform resample(const Waveform &w, int target_rate);

} // namespace vcm
