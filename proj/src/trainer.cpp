#include "vcm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <thread>

#include <spdlog/spdlog.h>

#include "vcm/corpus.hpp"

namespace vcm {

void validate(const TrainConfig &cfg)
{
  if (!(cfg.lr0 > 0.0) || !(cfg.lr_decay > 0.0) || cfg.decay_every < 1)
    throw UsageError("train: learning rate settings must be positive");
  if (cfg.batch_size < 1 || !(cfg.max_segment > 0.0) || cfg.max_epochs < 1)
    throw UsageError("train: batch size, segment and epoch cap must be positive");
  if (cfg.patience < 1)
    throw UsageError("train: patience must be at least 1");
  if (!(cfg.loss.cf.tau > 0.0))
    throw UsageError("train: tau must be positive");
  if (cfg.loss.mode != LossMode::CE && (cfg.spoofs_per_batch < 1 || cfg.views < 1))
    throw UsageError("train: contrastive batches need S >= 1 and K >= 1");
  if (cfg.loss.mode != LossMode::CE && !cfg.augment)
    throw UsageError("train: contrastive batches need augmented views");
  if (cfg.views < 0)
    throw UsageError("train: negative view count");
}

Eigen::Index max_segment_frames(const TrainConfig &cfg, int sample_rate)
{
  const auto samples = static_cast<Eigen::Index>(std::floor(cfg.max_segment * sample_rate));
  return std::max<Eigen::Index>(1, frontend_frames(samples, cfg.frontend));
}

const MatrixXd &FeatureStore::get(const std::string &trial_id, int view) const
{
  const auto it = views.find(trial_id);
  if (it == views.end())
    throw DataError("feature store: unknown trial '" + trial_id + "'");
  if (view < 0 || view >= int(it->second.size()))
    throw DataError("feature store: trial '" + trial_id + "' has no view " +
                    std::to_string(view));
  return it->second[std::size_t(view)];
}

TrainData make_train_data(const TrialManifest &m, const FrontEndConfig &fe,
                          const AugmentPlan *plan, int views, unsigned workers)
{
  const int                          n_views = plan ? 1 + std::max(views, 0) : 1;
  std::vector<std::vector<MatrixXd>> feats(m.records.size());
  auto work = [&](std::size_t i) {
    const TrialRecord &r = m.records[i];
    try {
      const Waveform w = read_wav(m.resolve(r));
      feats[i].push_back(frontend(w, fe));
      for (int v = 1; v < n_views; ++v)
        feats[i].push_back(frontend(augment_view(w, *plan, r.trial_id, v), fe));
    } catch (const Error &e) {
      spdlog::warn("features: skipping '{}': {}", r.trial_id, e.what());
      feats[i].clear();
    }
  };
  if (workers == 0)
    workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(1, m.records.size())));
  if (workers <= 1) {
    for (std::size_t i = 0; i < m.records.size(); ++i)
      work(i);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < workers; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < m.records.size(); i += workers)
          work(i);
      });
  }

  TrainData d;
  TrialManifest kept{{}, m.root};
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    if (feats[i].empty())
      continue;
    const TrialRecord &r = m.records[i];
    kept.records.push_back(r);
    d.features.views[r.trial_id] = std::move(feats[i]);
    d.features.labels[r.trial_id] = r.label;
    (r.label == Label::Bonafide ? d.bona : d.spoof).push_back(r.trial_id);
  }
  d.pairing = build_pairing_index(kept);
  return d;
}

MatrixXd crop_frames(const MatrixXd &raw, Eigen::Index start, Eigen::Index len)
{
  if (start < 0 || len < 1 || start + len > raw.rows())
    throw UsageError("crop_frames: window outside the sequence");
  return raw.middleRows(start, len);
}

namespace {

struct Member
{
  std::string id;
  int         view = 0;
};

struct PlannedBatch
{
  std::vector<Member> members;
  int                 n_bona = 0; // contrastive: members[0..n_bona) form I
  bool                contrastive = false;
};

// Contrastive: one batch per bona fide trial. CE: every (trial, view) once,
// in chunks of batch_size.
std::vector<PlannedBatch> plan_epoch(const TrainData &d, const TrainConfig &cfg,
                                     std::mt19937_64 &rng)
{
  std::vector<PlannedBatch> out;
  if (cfg.loss.mode != LossMode::CE) {
    std::vector<std::string> order = d.bona;
    std::shuffle(order.begin(), order.end(), rng);
    for (const auto &id : order) {
      const BatchPlan bp = compose_batch(id, d.pairing, d.spoof, cfg.spoofs_per_batch, cfg.views,
                                         cfg.pairing, rng);
      PlannedBatch pb;
      pb.contrastive = true;
      for (const auto &m : bp.bona)
        pb.members.push_back({m.trial_id, m.view});
      pb.n_bona = int(pb.members.size());
      for (const auto &m : bp.spoof)
        pb.members.push_back({m.trial_id, m.view});
      out.push_back(std::move(pb));
    }
    return out;
  }
  const int           n_views = cfg.augment ? 1 + cfg.views : 1;
  std::vector<Member> all;
  for (const auto *ids : {&d.bona, &d.spoof})
    for (const auto &id : *ids)
      for (int v = 0; v < n_views; ++v)
        all.push_back({id, v});
  std::shuffle(all.begin(), all.end(), rng);
  for (std::size_t i = 0; i < all.size(); i += std::size_t(cfg.batch_size)) {
    PlannedBatch pb;
    pb.members.assign(all.begin() + std::ptrdiff_t(i),
                      all.begin() + std::ptrdiff_t(std::min(all.size(), i + std::size_t(cfg.batch_size))));
    out.push_back(std::move(pb));
  }
  return out;
}

// Contrastive batches share one crop length and start fraction so paired
// members stay time-aligned; CE members are cropped independently.
TrainBatch materialise(const PlannedBatch &pb, const TrainData &d, Eigen::Index max_frames,
                       std::mt19937_64 *rng, const std::string &id)
{
  TrainBatch b;
  b.id = id;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::Index                           common = max_frames;
  double                                 frac = 0.0;
  if (pb.contrastive) {
    for (const auto &m : pb.members)
      common = std::min(common, d.features.get(m.id, m.view).rows());
    if (rng)
      frac = u(*rng);
  }
  for (std::size_t i = 0; i < pb.members.size(); ++i) {
    const Member   &m = pb.members[i];
    const MatrixXd &raw = d.features.get(m.id, m.view);
    const Eigen::Index len = pb.contrastive ? common : std::min(max_frames, raw.rows());
    const double       f = pb.contrastive ? frac : (rng ? u(*rng) : 0.0);
    Eigen::Index start = static_cast<Eigen::Index>(std::floor(f * double(raw.rows() - len + 1)));
    start = std::clamp<Eigen::Index>(start, 0, raw.rows() - len);
    b.inputs.push_back(len == raw.rows() ? raw : crop_frames(raw, start, len));
    b.labels.push_back(d.features.labels.at(m.id) == Label::Bonafide ? 0 : 1);
    if (pb.contrastive)
      (int(i) < pb.n_bona ? b.cf_bona : b.cf_spoof).push_back(int(i));
  }
  return b;
}

ScoreSet score_originals(const TrainData &d, const ModelParams &p)
{
  ScoreSet s;
  for (const auto *ids : {&d.bona, &d.spoof})
    for (const auto &id : *ids)
      s.entries.push_back({id, score_features(d.features.get(id, 0), p), d.features.labels.at(id),
                           "-", "dev"});
  return s;
}

} // namespace

double dev_loss(const TrainData &dev_set, const ModelParams &p, const TrainConfig &cfg,
                std::uint64_t seed)
{
  std::mt19937_64 rng(derive_seed(seed, "dev-batches"));
  const auto      plan = plan_epoch(dev_set, cfg, rng);
  if (plan.empty())
    throw DataError("dev set yields no batches");
  const Eigen::Index full = std::numeric_limits<Eigen::Index>::max();
  double             total = 0.0;
  for (std::size_t i = 0; i < plan.size(); ++i)
    total += forward_backward(materialise(plan[i], dev_set, full, nullptr, "dev/" + std::to_string(i)),
                              p, cfg.loss, false)
                 .loss;
  return total / double(plan.size());
}

TrainResult train(const TrainData &train_set, const TrainData &dev_set, const TrainConfig &cfg,
                  std::uint64_t seed)
{
  validate(cfg);
  if (train_set.bona.empty() || train_set.spoof.empty())
    throw UsageError("train: training set needs both bona fide and spoofed trials");
  if (dev_set.bona.empty() || dev_set.spoof.empty())
    throw UsageError("train: dev set needs both bona fide and spoofed trials");

  ModelParams p = init_params(cfg.shape, cfg.frontend, derive_seed(seed, "init"));
  {
    std::vector<const MatrixXd *> originals;
    for (const auto *ids : {&train_set.bona, &train_set.spoof})
      for (const auto &id : *ids)
        originals.push_back(&train_set.features.get(id, 0));
    fit_input_norm(p, originals);
  }

  const Eigen::Index max_frames = max_segment_frames(cfg);
  AdamState          adam = adam_init(p.layers);
  EarlyStopper       stopper(cfg.patience);
  TrainResult        result;
  result.best = p;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double    lr = learning_rate(cfg.lr0, epoch, cfg.lr_decay, cfg.decay_every);
    std::mt19937_64 rng(derive_seed(seed, "epoch", std::uint64_t(epoch)));
    const auto      plan = plan_epoch(train_set, cfg, rng);
    double          train_loss = 0.0;
    for (std::size_t i = 0; i < plan.size(); ++i) {
      const TrainBatch b = materialise(plan[i], train_set, max_frames, &rng,
                                       "epoch" + std::to_string(epoch) + "/" + std::to_string(i));
      const LossGrad   lg = forward_backward(b, p, cfg.loss);
      adam_step(p.layers, lg.grads, adam, lr, cfg.adam);
      train_loss += lg.loss;
    }
    train_loss /= double(plan.size());

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = train_loss;
    rec.dev_loss = dev_loss(dev_set, p, cfg, seed);
    rec.dev_eer = compute_eer(score_originals(dev_set, p)).eer;
    result.history.push_back(rec);
    spdlog::debug("epoch {} lr {:g} train {:.5f} dev {:.5f} dev_eer {:.4f}", epoch, lr,
                  rec.train_loss, rec.dev_loss, rec.dev_eer);

    if (stopper.update(epoch, rec.dev_loss)) {
      result.best = p;
      result.best_epoch = epoch;
    }
    if (stopper.should_stop())
      break;
  }
  return result;
}

void write_history_csv(const std::filesystem::path &path, const std::vector<EpochRecord> &h)
{
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out)
    throw DataError("cannot write " + path.string());
  out << "epoch,train_loss,dev_loss,dev_eer,lr\n";
  for (const auto &r : h)
    out << r.epoch << ',' << format_number(r.train_loss) << ',' << format_number(r.dev_loss) << ','
        << format_number(r.dev_eer) << ',' << format_number(r.lr) << '\n';
}

ScoreSet score_set(const TrialManifest &m, const ModelParams &p, const std::string &set_name,
                   bool trim)
{
  validate(p);
  ScoreSet s;
  s.name = set_name;
  for (const auto &r : m.records) {
    try {
      Waveform w = read_wav(m.resolve(r));
      if (trim)
        w = trim_nonspeech(w);
      s.entries.push_back({r.trial_id, score_features(frontend(w, p.frontend), p), r.label,
                           r.attack_tag, set_name});
    } catch (const DataError &e) {
      spdlog::warn("score: '{}' missing: {}", r.trial_id, e.what());
      s.missing.push_back(r.trial_id);
    }
  }
  if (!s.missing.empty())
    spdlog::warn("score: {} of {} trials in '{}' could not be scored", s.missing.size(),
                 m.records.size(), set_name);
  return s;
}

} // namespace vcm
