#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vcm/augment.hpp"
#include "vcm/cm_model.hpp"
#include "vcm/eval_metrics.hpp"

namespace vcm {

struct TrainConfig
{
  double         lr0 = 1e-3;
  double         lr_decay = 0.1;
  int            decay_every = 10;
  AdamConfig     adam;
  int            batch_size = 8;   // CE-only batches
  double         max_segment = 4.0; // s
  int            patience = 10;
  int            max_epochs = 30;
  LossConfig     loss;
  Pairing        pairing = Pairing::Paired;
  int            spoofs_per_batch = 4; // S
  int            views = 1;            // K augmented views per trial
  bool           augment = true;
  ModelShape     shape;
  FrontEndConfig frontend;
};

void validate(const TrainConfig &cfg);

/// Frames kept from a max_segment crop at the front-end hop.
Eigen::Index max_segment_frames(const TrainConfig &cfg, int sample_rate = 16000);

/// Raw front-end features per trial; index 0 is the original, 1..K the
/// augmented views.
struct FeatureStore
{
  std::map<std::string, std::vector<MatrixXd>> views;
  std::map<std::string, Label>                 labels;

  const MatrixXd &get(const std::string &trial_id, int view) const;
};

/// One subset ready for training: features, pairing and the id lists.
struct TrainData
{
  FeatureStore             features;
  PairingIndex             pairing;
  std::vector<std::string> bona;
  std::vector<std::string> spoof;
};

/// Reads every trial of `m`, runs the front end on it and on `views`
/// augmented copies (none when plan is null). Unreadable trials are skipped
/// with a warning.
TrainData make_train_data(const TrialManifest &m, const FrontEndConfig &fe,
                          const AugmentPlan *plan, int views, unsigned workers = 0);

struct EpochRecord
{
  int    epoch = 0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double dev_eer = 0.0;
  double lr = 0.0;
};

struct TrainResult
{
  ModelParams              best;
  int                      best_epoch = 0;
  std::vector<EpochRecord> history;
};

/// Seeded training with dev-loss early stopping. The returned model is the
/// one from the epoch with the lowest dev loss.
TrainResult train(const TrainData &train_set, const TrainData &dev_set, const TrainConfig &cfg,
                  std::uint64_t seed);

/// Mean loss over the deterministic dev batches, full length.
double dev_loss(const TrainData &dev_set, const ModelParams &p, const TrainConfig &cfg,
                std::uint64_t seed);

void write_history_csv(const std::filesystem::path &path, const std::vector<EpochRecord> &h);

/// Keeps `len` frames starting at `start`.
MatrixXd crop_frames(const MatrixXd &raw, Eigen::Index start, Eigen::Index len);

/// Full-length inference on every trial; read failures land in `missing`.
/// With trim set, non-speech edges are removed before the front end.
ScoreSet score_set(const TrialManifest &m, const ModelParams &p, const std::string &set_name,
                   bool trim = false);

} // namespace vcm
