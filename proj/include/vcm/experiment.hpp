#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vcm/corpus.hpp"
#include "vcm/stats_sig.hpp"
#include "vcm/trainer.hpp"

namespace vcm {

/// One trained variant of the countermeasure.
struct SystemSpec
{
  std::string name;
  LossMode    loss = LossMode::CE_CF;
  Pairing     pairing = Pairing::Paired;
  bool        augment = true;
  /// Train and dev spoofs come from the resampling-roundtrip channels.
  bool roundtrip = false;
};

/// Built-ins: ce, ce_aug, cf_paired, cf_random, cf_paired_rs.
SystemSpec builtin_system(const std::string &name);

struct ExperimentConfig
{
  // Empty manifests mean "generate the desk corpus".
  std::filesystem::path train_manifest;
  std::filesystem::path dev_manifest;
  std::filesystem::path eval_manifest;
  int                   corpus_trials = 200;
  std::uint64_t         corpus_seed = 1;

  std::vector<std::string> channels{"gl_mel80", "gl_mel20", "phase_rand", "lpc16"};
  int                      roundtrip_rate = 24000;

  std::vector<AugmentKind> augment_ops{AugmentKind::RawBoostLike, AugmentKind::FreqMask,
                                       AugmentKind::CodecSim};
  TrainConfig              train;

  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<SystemSpec>    systems;
  double                     alpha = 0.05;
  TrimConfig                 trim;
  std::filesystem::path      out_dir = "vcm_out";
  unsigned                   workers = 0;
};

/// Desk defaults: excitation features on, systems ce_aug, cf_paired and
/// cf_paired_rs.
ExperimentConfig default_experiment_config();

/// INI file layered over the defaults. Unknown sections or keys are usage
/// errors. Relative manifest paths resolve against the file's directory.
ExperimentConfig load_experiment_config(const std::filesystem::path &path);
ExperimentConfig load_experiment_config_or_default(const std::filesystem::path &path);

void validate(const ExperimentConfig &cfg);

/// Canonical INI rendering of every resolved setting.
std::string to_ini(const ExperimentConfig &cfg);
/// FNV-1a of to_ini, 16 hex digits.
std::string config_hash(const ExperimentConfig &cfg);

AugmentPlan augment_plan(const ExperimentConfig &cfg, std::uint64_t seed);
TrainConfig train_config_for(const ExperimentConfig &cfg, const SystemSpec &sys);

/// Writes a manifest with paths relative to its own directory.
void write_relative_manifest(const std::filesystem::path &path, TrialManifest m);

struct RunRecord
{
  std::string   system;
  std::uint64_t seed = 0;
  int           best_epoch = 0;
  int           epochs = 0;
  /// Per evaluation set ("eval", "eval_trim") and "pooled".
  std::map<std::string, EerResult> eer;
  std::vector<GroupResult>         groups; // per channel on "eval"
};

struct ExperimentReport
{
  std::vector<RunRecord>                               runs;
  /// system -> set -> mean EER over seeds.
  std::map<std::string, std::map<std::string, double>> means;
  SignificanceMatrix                                   significance;
  std::map<std::string, std::string>                   manifest_hashes;
};

/// Full pipeline. Outputs land under cfg.out_dir; a failing stage aborts
/// with its name in the message and keeps whatever was written before it.
ExperimentReport run_experiment(const ExperimentConfig &cfg);

} // namespace vcm
