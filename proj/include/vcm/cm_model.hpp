#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vcm/contrastive_loss.hpp"
#include "vcm/waveform.hpp"

namespace vcm {

// ---------------------------------------------------------------------------
// Fixed front end: log frame energy + log filterbank energies, optionally
// followed by two excitation descriptors (log kurtosis and log crest factor
// of the order-16 LPC residual of the pre-emphasised frame).
// ---------------------------------------------------------------------------

enum class FilterScale { Linear, Mel };

struct FrontEndConfig
{
  int         frame = 400;
  int         hop = 160;
  int         fft_size = 512;
  int         n_filters = 24;
  FilterScale scale = FilterScale::Linear;
  bool        excitation = false;

  int dim() const { return n_filters + 1 + (excitation ? 2 : 0); }
};

/// Frames of `frame` samples every `hop`: N = floor((T - frame) / hop) + 1.
Eigen::Index frontend_frames(Eigen::Index samples, const FrontEndConfig &cfg);

/// N x (1 + n_filters) raw front-end features (log floor 1e-10).
MatrixXd frontend(const Waveform &w, const FrontEndConfig &cfg);

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

struct DenseLayer
{
  MatrixXd w; // out x in
  VectorXd b;
};

struct ModelShape
{
  int input = 25;
  int hidden = 64;      // extractor hidden width
  int feature_dim = 32; // D
  int head_hidden = 64;
  int head_depth = 3; // affine + LeakyReLU blocks before the output layer
};

struct ModelParams
{
  ModelShape      shape;
  FrontEndConfig  frontend;
  /// Input standardisation from training statistics (not trained).
  Eigen::RowVectorXd in_mean;
  Eigen::RowVectorXd in_scale; // 1 / std
  /// layers[0..1]: extractor; layers[2..]: head, the last one giving 2 logits.
  std::vector<DenseLayer> layers;
};

inline constexpr double kLeakySlope = 0.01;
inline constexpr int    kExtractorLayers = 2;

ModelParams init_params(const ModelShape &shape, const FrontEndConfig &fe, std::uint64_t seed);

/// Zero-valued tensors shaped like the trainable layers.
std::vector<DenseLayer> zeros_like(const std::vector<DenseLayer> &layers);

void validate(const ModelParams &p);

/// Fits in_mean / in_scale on the rows of every matrix.
void fit_input_norm(ModelParams &p, const std::vector<const MatrixXd *> &frontend_features);

/// Standardised front-end features.
MatrixXd normalise(const MatrixXd &raw, const ModelParams &p);

/// Extractor output (N x D) for raw front-end features.
MatrixXd feature_sequence(const MatrixXd &raw, const ModelParams &p);

/// Front end + extractor for a waveform.
MatrixXd extract_features(const Waveform &w, const ModelParams &p);

Eigen::RowVectorXd global_avg_pool(const MatrixXd &frames);

struct Classification
{
  Eigen::Vector2d logits; // (bonafide, spoof)
  double          score = 0.0;
};

Classification classify(const Eigen::RowVectorXd &pooled, const ModelParams &p);
double         score_of(const Eigen::Vector2d &logits);

/// Score of a whole trial from raw front-end features.
double score_features(const MatrixXd &raw, const ModelParams &p);

// ---------------------------------------------------------------------------
// Loss and gradient
// ---------------------------------------------------------------------------

/// CF alone exists for gradient checks and ablations.
enum class LossMode { CE, CE_CF, CF };

std::string_view to_string(LossMode m);
LossMode         parse_loss_mode(std::string_view s);

struct LossConfig
{
  LossMode mode = LossMode::CE;
  CfConfig cf;
};

/// Raw front-end inputs with labels (0 = bona fide, 1 = spoof). With CF on,
/// `cf_bona` and `cf_spoof` index the members of I and J in `inputs`; their
/// extractor outputs are cut to the shortest member before the CF term.
struct TrainBatch
{
  std::vector<MatrixXd> inputs;
  std::vector<int>      labels;
  std::vector<int>      cf_bona;
  std::vector<int>      cf_spoof;
  std::string           id;
};

struct LossGrad
{
  double                  loss = 0.0;
  double                  ce = 0.0;
  double                  cf = 0.0;
  std::vector<DenseLayer> grads;
};

/// Mean cross-entropy over the batch plus, in CE_CF mode, the contrastive
/// loss (CF mode: contrastive loss only). Throws NumericalError on a
/// non-finite loss.
LossGrad forward_backward(const TrainBatch &batch, const ModelParams &p, const LossConfig &cfg,
                          bool with_grad = true);

// ---------------------------------------------------------------------------
// Optimiser and schedule
// ---------------------------------------------------------------------------

struct AdamConfig
{
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState
{
  std::vector<DenseLayer> m;
  std::vector<DenseLayer> v;
  long                    step = 0;
};

AdamState adam_init(const std::vector<DenseLayer> &layers);
void      adam_step(std::vector<DenseLayer> &params, const std::vector<DenseLayer> &grads,
                    AdamState &state, double lr, const AdamConfig &cfg = {});

/// lr0 * decay^floor((epoch - 1) / every), epochs counted from 1.
double learning_rate(double lr0, int epoch, double decay = 0.1, int every = 10);

/// Tracks the best dev loss; improvement means strictly lower.
class EarlyStopper
{
public:
  explicit EarlyStopper(int patience);

  /// Returns true when `loss` is a new best.
  bool update(int epoch, double loss);
  bool should_stop() const { return since_best_ >= patience_; }
  int  best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

private:
  int    patience_;
  int    since_best_ = 0;
  int    best_epoch_ = 0;
  double best_loss_;
};

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// Text checkpoint; every number in hexadecimal float form so a reload is
/// exact and the bytes are deterministic.
void        save_checkpoint(const std::filesystem::path &path, const ModelParams &p,
                            const std::string &config_hash);
ModelParams load_checkpoint(const std::filesystem::path &path, std::string *config_hash = nullptr);

} // namespace vcm
