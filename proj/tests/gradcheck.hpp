#pragma once

// Central finite-difference check of forward_backward on tiny random models.

#include <algorithm>
#include <random>

#include "vcm/cm_model.hpp"

namespace vcm::test {

inline ModelParams tiny_model(std::mt19937_64 &rng, int n_filters, int hidden, int d)
{
  FrontEndConfig fe;
  fe.n_filters = n_filters;
  ModelShape s{fe.dim(), hidden, d, 6, 3};
  ModelParams p = init_params(s, fe, rng());
  std::uniform_real_distribution<double> u(0.5, 2.0), c(-1.0, 1.0);
  for (Eigen::Index i = 0; i < s.input; ++i) {
    p.in_mean[i] = c(rng);
    p.in_scale[i] = u(rng);
  }
  for (auto &l : p.layers)
    for (Eigen::Index i = 0; i < l.b.size(); ++i)
      l.b[i] = 0.1 * c(rng);
  return p;
}

/// |I| bona members then |J| spoof members, every input N x width.
inline TrainBatch random_batch(std::mt19937_64 &rng, int n_bona, int n_spoof, int n, int width)
{
  std::normal_distribution<double> g(0.0, 1.0);
  TrainBatch                       b;
  b.id = "fd";
  for (int m = 0; m < n_bona + n_spoof; ++m) {
    MatrixXd x(n, width);
    for (Eigen::Index i = 0; i < x.size(); ++i)
      x.data()[i] = g(rng);
    b.inputs.push_back(x);
    b.labels.push_back(m < n_bona ? 0 : 1);
    (m < n_bona ? b.cf_bona : b.cf_spoof).push_back(m);
  }
  return b;
}

/// Relative error |a - b| / max(|a|, |b|, 1e-4).
inline double rel_error(double a, double b)
{
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4});
}

/// Largest relative error between analytic and central-difference gradients
/// (step h) over every trainable parameter.
inline double max_gradient_error(const TrainBatch &batch, const ModelParams &p,
                                 const LossConfig &cfg, double h = 1e-5)
{
  const LossGrad lg = forward_backward(batch, p, cfg);
  double         worst = 0.0;
  ModelParams    q = p;
  auto           probe = [&](double &slot, double analytic) {
    const double keep = slot;
    slot = keep + h;
    const double up = forward_backward(batch, q, cfg, false).loss;
    slot = keep - h;
    const double down = forward_backward(batch, q, cfg, false).loss;
    slot = keep;
    worst = std::max(worst, rel_error((up - down) / (2.0 * h), analytic));
  };
  for (std::size_t l = 0; l < q.layers.size(); ++l) {
    for (Eigen::Index i = 0; i < q.layers[l].w.size(); ++i)
      probe(q.layers[l].w.data()[i], lg.grads[l].w.data()[i]);
    for (Eigen::Index i = 0; i < q.layers[l].b.size(); ++i)
      probe(q.layers[l].b.data()[i], lg.grads[l].b.data()[i]);
  }
  return worst;
}

} // namespace vcm::test
