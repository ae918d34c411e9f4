#pragma once

#include <filesystem>

#include "vcm/manifest.hpp"
#include "vcm/waveform.hpp"

namespace vcm {

struct DeskCorpusConfig
{
  int    n_trials = 200;
  int    sample_rate = 16000;
  double min_duration = 1.0; // s
  double max_duration = 4.0;
};

/// One pseudo-speech utterance: an F0 contour in 80-300 Hz drives a glottal
/// pulse train through three moving formant resonators, plus breath noise
/// and short near-silent edges.
Waveform synth_pseudo_speech(std::uint64_t seed, double duration, int sample_rate = 16000);

/// Writes <out_dir>/wav/D_XXXX.wav and <out_dir>/manifest.tsv, bona fide
/// only, split 60/20/20 into train/dev/eval by index.
TrialManifest gen_desk_corpus(const DeskCorpusConfig &cfg, std::uint64_t seed,
                              const std::filesystem::path &out_dir);

struct TrimConfig
{
  double threshold_db = 40.0; // below the loudest frame
  double frame_ms = 20.0;
  double hop_ms = 10.0;
  double stub_ms = 100.0;
};

/// Drops leading and trailing frames quieter than the loudest frame by more
/// than threshold_db. A signal with no frame above the gate (all zero) comes
/// back as a centred stub with a warning.
Waveform trim_nonspeech(const Waveform &w, const TrimConfig &cfg = {});

} // namespace vcm
