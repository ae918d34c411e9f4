#include "vcm/cm_model.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "vcm/copy_synth.hpp"
#include "vcm/mel.hpp"
#include "vcm/stft.hpp"

namespace vcm {

namespace {

constexpr double kLogFloor = 1e-10;

MatrixXd leaky(const MatrixXd &a)
{
  return a.unaryExpr([](double v) { return v > 0 ? v : kLeakySlope * v; });
}

MatrixXd leaky_grad(const MatrixXd &a)
{
  return a.unaryExpr([](double v) { return v > 0 ? 1.0 : kLeakySlope; });
}

MatrixXd filter_weights(const FrontEndConfig &cfg, int sample_rate)
{
  if (cfg.scale == FilterScale::Mel)
    return make_mel_filterbank(cfg.n_filters, cfg.fft_size, sample_rate).weights;
  return linear_triangular_filters(cfg.n_filters, cfg.fft_size, sample_rate);
}

// Everything the backward pass needs for one trial.
struct TrialCache
{
  MatrixXd              x;  // standardised input
  MatrixXd              a1; // extractor pre-activation
  MatrixXd              h1;
  MatrixXd              z;  // extractor output
  std::vector<VectorXd> head_pre;
  std::vector<VectorXd> head_in;
  Eigen::Vector2d       logits;
};

TrialCache forward_trial(const MatrixXd &raw, const ModelParams &p)
{
  TrialCache c;
  c.x = normalise(raw, p);
  c.a1 = (c.x * p.layers[0].w.transpose()).rowwise() + p.layers[0].b.transpose();
  c.h1 = leaky(c.a1);
  c.z = (c.h1 * p.layers[1].w.transpose()).rowwise() + p.layers[1].b.transpose();
  VectorXd h = global_avg_pool(c.z).transpose();
  for (std::size_t l = kExtractorLayers; l + 1 < p.layers.size(); ++l) {
    c.head_in.push_back(h);
    VectorXd a = p.layers[l].w * h + p.layers[l].b;
    c.head_pre.push_back(a);
    h = leaky(a);
  }
  c.head_in.push_back(h);
  c.logits = p.layers.back().w * h + p.layers.back().b;
  return c;
}

// Accumulates parameter gradients given dL/dlogits and an extra dL/dz term.
void backward_trial(const TrialCache &c, const ModelParams &p, const Eigen::Vector2d &dlogits,
                    const MatrixXd *dz_extra, std::vector<DenseLayer> &g)
{
  const std::size_t out = p.layers.size() - 1;
  g[out].w += dlogits * c.head_in.back().transpose();
  g[out].b += dlogits;
  VectorXd dh = p.layers[out].w.transpose() * dlogits;
  for (std::size_t l = out; l-- > kExtractorLayers;) {
    const std::size_t k = l - kExtractorLayers;
    const VectorXd    da = dh.cwiseProduct(leaky_grad(c.head_pre[k]));
    g[l].w += da * c.head_in[k].transpose();
    g[l].b += da;
    dh = p.layers[l].w.transpose() * da;
  }
  // Global average pooling spreads dL/dv evenly over the frames.
  const Eigen::Index n = c.z.rows();
  MatrixXd           dz = (dh.transpose() / double(n)).replicate(n, 1);
  if (dz_extra)
    dz.topRows(dz_extra->rows()) += *dz_extra;

  g[1].w += dz.transpose() * c.h1;
  g[1].b += dz.colwise().sum().transpose();
  const MatrixXd da1 = (dz * p.layers[1].w).cwiseProduct(leaky_grad(c.a1));
  g[0].w += da1.transpose() * c.x;
  g[0].b += da1.colwise().sum().transpose();
}

constexpr int kResidualOrder = 16;

// (log kurtosis, log crest factor) of the LPC residual; Gaussian values for
// a frame with no residual energy.
Eigen::Vector2d excitation_features(const Eigen::Ref<const ArrayXd> &frame, const ArrayXd &window)
{
  ArrayXd y(frame.size());
  y[0] = frame[0];
  y.tail(y.size() - 1) = frame.tail(y.size() - 1) - 0.97 * frame.head(y.size() - 1);
  const LpcResult lpc = lpc_analyze(y * window, kResidualOrder);
  const Eigen::Index n = y.size() - kResidualOrder;
  ArrayXd            e = y.tail(n);
  for (int k = 1; k <= kResidualOrder; ++k)
    e -= lpc.coefficients[k - 1] * y.segment(kResidualOrder - k, n);
  const double m2 = e.square().mean();
  if (!(m2 > 1e-20))
    return {std::log(3.0), 0.5 * std::log(3.0)};
  const double m4 = e.square().square().mean();
  return {std::log(m4 / (m2 * m2)), std::log(e.abs().maxCoeff() / std::sqrt(m2))};
}

} // namespace

// ---------------------------------------------------------------------------

Eigen::Index frontend_frames(Eigen::Index samples, const FrontEndConfig &cfg)
{
  return frame_count(samples, cfg.frame, cfg.hop);
}

MatrixXd frontend(const Waveform &w, const FrontEndConfig &cfg)
{
  const Eigen::Index n = frontend_frames(w.size(), cfg);
  if (n < 1)
    throw DataError("frontend: input of " + std::to_string(w.size()) +
                    " samples is shorter than one " + std::to_string(cfg.frame) +
                    "-sample frame");
  if (cfg.excitation && cfg.frame <= 2 * kResidualOrder)
    throw UsageError("frontend: frame too short for the residual features");
  const StftConfig   sc{cfg.fft_size, cfg.hop, cfg.frame, Window::Hamming, false};
  const auto         spec = stft(w, sc);
  const MatrixXd     power = spec.frames.cwiseAbs2();
  const MatrixXd     fbank = power * filter_weights(cfg, w.sample_rate).transpose();

  MatrixXd out(n, cfg.dim());
  for (Eigen::Index t = 0; t < n; ++t)
    out(t, 0) = std::log(std::max(w.samples.segment(t * cfg.hop, cfg.frame).square().sum(),
                                  kLogFloor));
  out.middleCols(1, cfg.n_filters) = fbank.array().max(kLogFloor).log().matrix();
  if (cfg.excitation) {
    const ArrayXd window = make_window(Window::Hamming, cfg.frame);
    for (Eigen::Index t = 0; t < n; ++t)
      out.row(t).tail(2) = excitation_features(w.samples.segment(t * cfg.hop, cfg.frame), window);
  }
  return out;
}

ModelParams init_params(const ModelShape &shape, const FrontEndConfig &fe, std::uint64_t seed)
{
  if (shape.input != fe.dim())
    throw UsageError("init_params: input width does not match the front end");
  if (shape.hidden < 1 || shape.feature_dim < 1 || shape.head_hidden < 1 || shape.head_depth < 1)
    throw UsageError("init_params: layer widths must be positive");
  ModelParams p;
  p.shape = shape;
  p.frontend = fe;
  p.in_mean = Eigen::RowVectorXd::Zero(shape.input);
  p.in_scale = Eigen::RowVectorXd::Ones(shape.input);

  std::mt19937_64 rng(derive_seed(seed, "init"));
  auto            layer = [&](int in, int out, double gain) {
    std::normal_distribution<double> g(0.0, gain / std::sqrt(double(in)));
    DenseLayer                       d{MatrixXd(out, in), VectorXd::Zero(out)};
    for (Eigen::Index i = 0; i < d.w.size(); ++i)
      d.w.data()[i] = g(rng);
    return d;
  };
  const double he = std::sqrt(2.0);
  p.layers.push_back(layer(shape.input, shape.hidden, he));
  p.layers.push_back(layer(shape.hidden, shape.feature_dim, 1.0));
  int width = shape.feature_dim;
  for (int l = 0; l < shape.head_depth; ++l) {
    p.layers.push_back(layer(width, shape.head_hidden, he));
    width = shape.head_hidden;
  }
  p.layers.push_back(layer(width, 2, 1.0));
  return p;
}

std::vector<DenseLayer> zeros_like(const std::vector<DenseLayer> &layers)
{
  std::vector<DenseLayer> z;
  for (const auto &l : layers)
    z.push_back({MatrixXd::Zero(l.w.rows(), l.w.cols()), VectorXd::Zero(l.b.size())});
  return z;
}

void validate(const ModelParams &p)
{
  const auto &s = p.shape;
  if (p.layers.size() != std::size_t(kExtractorLayers + s.head_depth + 1))
    throw DataError("model: wrong layer count");
  if (p.in_mean.size() != s.input || p.in_scale.size() != s.input)
    throw DataError("model: input normalisation has the wrong width");
  int width = s.input;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto &d = p.layers[l];
    if (d.w.cols() != width || d.b.size() != d.w.rows())
      throw DataError("model: layer " + std::to_string(l) + " has inconsistent dims");
    if (!d.w.allFinite() || !d.b.allFinite())
      throw NumericalError("model: layer " + std::to_string(l) + " has non-finite values");
    width = int(d.w.rows());
  }
  if (width != 2 || p.layers[1].w.rows() != s.feature_dim)
    throw DataError("model: output widths are inconsistent");
}

void fit_input_norm(ModelParams &p, const std::vector<const MatrixXd *> &features)
{
  const Eigen::Index d = p.shape.input;
  VectorXd           sum = VectorXd::Zero(d), sq = VectorXd::Zero(d);
  double             count = 0.0;
  for (const MatrixXd *m : features) {
    if (m->cols() != d)
      throw DataError("fit_input_norm: feature width mismatch");
    sum += m->colwise().sum().transpose();
    sq += m->array().square().matrix().colwise().sum().transpose();
    count += double(m->rows());
  }
  if (count < 2)
    throw DataError("fit_input_norm: not enough frames");
  const VectorXd mean = sum / count;
  const VectorXd var = (sq / count - mean.cwiseAbs2()).cwiseMax(0.0);
  p.in_mean = mean.transpose();
  p.in_scale = (var.array().sqrt().max(1e-6)).inverse().matrix().transpose();
}

MatrixXd normalise(const MatrixXd &raw, const ModelParams &p)
{
  if (raw.cols() != p.in_mean.size())
    throw UsageError("normalise: feature width mismatch");
  return (raw.rowwise() - p.in_mean).array().rowwise() * p.in_scale.array();
}

MatrixXd feature_sequence(const MatrixXd &raw, const ModelParams &p)
{
  return forward_trial(raw, p).z;
}

MatrixXd extract_features(const Waveform &w, const ModelParams &p)
{
  return feature_sequence(frontend(w, p.frontend), p);
}

Eigen::RowVectorXd global_avg_pool(const MatrixXd &frames)
{
  if (frames.rows() < 1)
    throw UsageError("global_avg_pool: empty sequence");
  return frames.colwise().mean();
}

double score_of(const Eigen::Vector2d &logits) { return logits[0] - logits[1]; }

Classification classify(const Eigen::RowVectorXd &pooled, const ModelParams &p)
{
  if (pooled.size() != p.shape.feature_dim)
    throw UsageError("classify: pooled vector has the wrong width");
  VectorXd h = pooled.transpose();
  for (std::size_t l = kExtractorLayers; l + 1 < p.layers.size(); ++l)
    h = leaky(p.layers[l].w * h + p.layers[l].b);
  Classification c;
  c.logits = p.layers.back().w * h + p.layers.back().b;
  c.score = score_of(c.logits);
  return c;
}

double score_features(const MatrixXd &raw, const ModelParams &p)
{
  return score_of(forward_trial(raw, p).logits);
}

// ---------------------------------------------------------------------------

std::string_view to_string(LossMode m)
{
  switch (m) {
  case LossMode::CE:
    return "ce";
  case LossMode::CE_CF:
    return "ce_cf";
  case LossMode::CF:
    return "cf";
  }
  return "?";
}

LossMode parse_loss_mode(std::string_view s)
{
  if (s == "ce")
    return LossMode::CE;
  if (s == "ce_cf" || s == "ce+cf")
    return LossMode::CE_CF;
  if (s == "cf")
    return LossMode::CF;
  throw UsageError("unknown loss mode '" + std::string(s) + "' (expected ce, ce_cf or cf)");
}

LossGrad forward_backward(const TrainBatch &batch, const ModelParams &p, const LossConfig &cfg,
                          bool with_grad)
{
  const std::size_t b = batch.inputs.size();
  if (b == 0 || batch.labels.size() != b)
    throw UsageError("forward_backward: batch inputs and labels disagree");

  std::vector<TrialCache> caches;
  caches.reserve(b);
  for (const auto &x : batch.inputs)
    caches.push_back(forward_trial(x, p));

  LossGrad                     out;
  std::vector<Eigen::Vector2d> dlogits(b, Eigen::Vector2d::Zero());
  const bool                   use_ce = cfg.mode != LossMode::CF;
  for (std::size_t i = 0; use_ce && i < b; ++i) {
    const Eigen::Vector2d &l = caches[i].logits;
    const double           peak = l.maxCoeff();
    const double           lse = peak + std::log((l.array() - peak).exp().sum());
    const int              y = batch.labels[i];
    if (y != 0 && y != 1)
      throw UsageError("forward_backward: labels must be 0 or 1");
    out.ce += (lse - l[y]) / double(b);
    dlogits[i] = (l.array() - lse).exp().matrix();
    dlogits[i][y] -= 1.0;
    dlogits[i] /= double(b);
  }

  std::vector<std::optional<MatrixXd>> dz(b);
  if (cfg.mode != LossMode::CE) {
    if (batch.cf_bona.size() < 2 || batch.cf_spoof.size() < 2)
      throw UsageError("forward_backward: contrastive batch needs two members per class");
    Eigen::Index n = std::numeric_limits<Eigen::Index>::max();
    for (int i : batch.cf_bona)
      n = std::min(n, caches.at(std::size_t(i)).z.rows());
    for (int i : batch.cf_spoof)
      n = std::min(n, caches.at(std::size_t(i)).z.rows());
    CfBatch<double> cfb;
    for (int i : batch.cf_bona)
      cfb.bona.push_back(caches[std::size_t(i)].z.topRows(n));
    for (int i : batch.cf_spoof)
      cfb.spoof.push_back(caches[std::size_t(i)].z.topRows(n));
    auto r = contrastive_feature_loss(cfb, cfg.cf, with_grad);
    out.cf = r.loss;
    if (with_grad) {
      for (std::size_t k = 0; k < batch.cf_bona.size(); ++k)
        dz[std::size_t(batch.cf_bona[k])] = std::move(r.grad_bona[k]);
      for (std::size_t k = 0; k < batch.cf_spoof.size(); ++k)
        dz[std::size_t(batch.cf_spoof[k])] = std::move(r.grad_spoof[k]);
    }
  }
  out.loss = out.ce + out.cf;
  if (!std::isfinite(out.loss))
    throw NumericalError("non-finite loss in batch '" + batch.id + "'");
  if (!with_grad)
    return out;

  out.grads = zeros_like(p.layers);
  for (std::size_t i = 0; i < b; ++i)
    backward_trial(caches[i], p, dlogits[i], dz[i] ? &*dz[i] : nullptr, out.grads);
  return out;
}

// ---------------------------------------------------------------------------

AdamState adam_init(const std::vector<DenseLayer> &layers)
{
  return {zeros_like(layers), zeros_like(layers), 0};
}

void adam_step(std::vector<DenseLayer> &params, const std::vector<DenseLayer> &grads,
               AdamState &state, double lr, const AdamConfig &cfg)
{
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw UsageError("adam_step: shape mismatch");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  auto         update = [&](auto &x, const auto &g, auto &m, auto &v) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseAbs2();
    x.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
  };
  for (std::size_t l = 0; l < params.size(); ++l) {
    update(params[l].w, grads[l].w, state.m[l].w, state.v[l].w);
    update(params[l].b, grads[l].b, state.m[l].b, state.v[l].b);
  }
}

double learning_rate(double lr0, int epoch, double decay, int every)
{
  return lr0 * std::pow(decay, double((std::max(epoch, 1) - 1) / every));
}

EarlyStopper::EarlyStopper(int patience)
    : patience_(patience), best_loss_(std::numeric_limits<double>::infinity())
{
  if (patience < 1)
    throw UsageError("early stopping patience must be at least 1");
}

bool EarlyStopper::update(int epoch, double loss)
{
  if (loss < best_loss_) {
    best_loss_ = loss;
    best_epoch_ = epoch;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

// ---------------------------------------------------------------------------

namespace {

void put_numbers(std::ostream &out, const double *v, Eigen::Index n)
{
  char buf[48];
  for (Eigen::Index i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "%a", v[i]);
    out << (i ? " " : "") << buf;
  }
  out << '\n';
}

void get_numbers(std::istream &in, double *v, Eigen::Index n)
{
  std::string tok;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(in >> tok))
      throw DataError("checkpoint: truncated tensor");
    char *end = nullptr;
    v[i] = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0')
      throw DataError("checkpoint: bad number '" + tok + "'");
  }
}

void expect(std::istream &in, const std::string &word)
{
  std::string tok;
  if (!(in >> tok) || tok != word)
    throw DataError("checkpoint: expected '" + word + "', got '" + tok + "'");
}

} // namespace

void save_checkpoint(const std::filesystem::path &path, const ModelParams &p,
                     const std::string &config_hash)
{
  validate(p);
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out)
    throw DataError("cannot write checkpoint " + path.string());
  const auto &s = p.shape;
  const auto &f = p.frontend;
  out << "vcm-checkpoint 1\n";
  out << "config_hash " << (config_hash.empty() ? "-" : config_hash) << '\n';
  out << "shape " << s.input << ' ' << s.hidden << ' ' << s.feature_dim << ' ' << s.head_hidden
      << ' ' << s.head_depth << '\n';
  out << "frontend " << f.frame << ' ' << f.hop << ' ' << f.fft_size << ' ' << f.n_filters << ' '
      << (f.scale == FilterScale::Mel ? "mel" : "linear") << ' ' << int(f.excitation) << '\n';
  out << "in_mean ";
  put_numbers(out, p.in_mean.data(), p.in_mean.size());
  out << "in_scale ";
  put_numbers(out, p.in_scale.data(), p.in_scale.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto &d = p.layers[l];
    out << "layer " << l << ' ' << d.w.rows() << ' ' << d.w.cols() << '\n';
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w = d.w;
    put_numbers(out, w.data(), w.size());
    put_numbers(out, d.b.data(), d.b.size());
  }
}

ModelParams load_checkpoint(const std::filesystem::path &path, std::string *config_hash)
{
  std::ifstream in(path);
  if (!in)
    throw DataError("cannot open checkpoint " + path.string());
  expect(in, "vcm-checkpoint");
  expect(in, "1");
  expect(in, "config_hash");
  std::string hash;
  in >> hash;
  if (config_hash)
    *config_hash = hash;

  ModelParams p;
  auto       &s = p.shape;
  auto       &f = p.frontend;
  expect(in, "shape");
  in >> s.input >> s.hidden >> s.feature_dim >> s.head_hidden >> s.head_depth;
  expect(in, "frontend");
  std::string scale;
  int         excitation = 0;
  in >> f.frame >> f.hop >> f.fft_size >> f.n_filters >> scale >> excitation;
  f.excitation = excitation != 0;
  if (!in)
    throw DataError("checkpoint: malformed header");
  f.scale = scale == "mel" ? FilterScale::Mel : FilterScale::Linear;
  if (s.input != f.dim() || s.input < 1 || s.head_depth < 1)
    throw DataError("checkpoint: inconsistent shape");
  p.in_mean.resize(s.input);
  p.in_scale.resize(s.input);
  expect(in, "in_mean");
  get_numbers(in, p.in_mean.data(), s.input);
  expect(in, "in_scale");
  get_numbers(in, p.in_scale.data(), s.input);
  const int layers = kExtractorLayers + s.head_depth + 1;
  for (int l = 0; l < layers; ++l) {
    expect(in, "layer");
    expect(in, std::to_string(l));
    Eigen::Index rows = 0, cols = 0;
    in >> rows >> cols;
    if (!in || rows < 1 || cols < 1 || rows > 100000 || cols > 100000)
      throw DataError("checkpoint: bad layer dims");
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w(rows, cols);
    get_numbers(in, w.data(), w.size());
    DenseLayer d{w, VectorXd(rows)};
    get_numbers(in, d.b.data(), rows);
    p.layers.push_back(std::move(d));
  }
  validate(p);
  return p;
}

} // namespace vcm
