#pragma once

#include <filesystem>

#include "vcm/common.hpp"

namespace vcm {

/// Mono PCM signal, nominal amplitude range [-1, 1].
struct Waveform
{
  ArrayXd samples;
  int     sample_rate = 16000;

  Eigen::Index size() const { return samples.size(); }
  double       duration() const { return double(samples.size()) / sample_rate; }
};

/// Throws DataError when the rate is non-positive or a sample is not finite.
void validate(const Waveform &w);

double rms(const Eigen::Ref<const ArrayXd> &x);

/// 16-bit PCM mono WAV. Reader scales by 1/32768; writer clips to [-1, 1]
/// and scales by 32767.
Waveform read_wav(const std::filesystem::path &path);
void     write_wav(const std::filesystem::path &path, const Waveform &w);

} // namespace vcm
