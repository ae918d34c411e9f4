#pragma once

// Independent brute-force references shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "vcm/contrastive_loss.hpp"
#include "vcm/eval_metrics.hpp"

namespace vcm::oracle {

// Direct transcription of the loss with plain loops and raw exponentials,
// evaluated in long double.
inline long double naive_f(const FrameMatrix<double> &a, const FrameMatrix<double> &b, long double tau)
{
  long double acc = 0;
  for (Eigen::Index n = 0; n < a.rows(); ++n) {
    long double dot = 0, na = 0, nb = 0;
    for (Eigen::Index d = 0; d < a.cols(); ++d) {
      dot += (long double)a(n, d) * b(n, d);
      na += (long double)a(n, d) * a(n, d);
      nb += (long double)b(n, d) * b(n, d);
    }
    acc += dot / (tau * std::sqrt(na) * std::sqrt(nb));
  }
  return acc / a.rows();
}

inline long double naive_loss(const std::vector<FrameMatrix<double>> &bona, const std::vector<FrameMatrix<double>> &spoof,
                       long double tau)
{
  auto h = [&](const FrameMatrix<double> &z) {
    long double s = 0;
    for (const auto &x : bona)
      s += std::exp(naive_f(z, x, tau));
    for (const auto &x : spoof)
      s += std::exp(naive_f(z, x, tau));
    return s - std::exp(naive_f(z, z, tau));
  };
  long double loss = 0;
  for (std::size_t i = 0; i < bona.size(); ++i) {
    long double inner = 0;
    for (std::size_t p = 0; p < bona.size(); ++p)
      if (p != i)
        inner += std::log(std::exp(naive_f(bona[i], bona[p], tau)) / h(bona[i]));
    loss -= inner / (long double)(bona.size() - 1);
  }
  for (std::size_t j = 0; j < spoof.size(); ++j) {
    long double inner = 0;
    for (std::size_t p = 0; p < spoof.size(); ++p)
      if (p != j)
        inner += std::log(std::exp(naive_f(spoof[j], spoof[p], tau)) / h(spoof[j]));
    loss -= inner / (long double)(spoof.size() - 1);
  }
  return loss;
}

// Exhaustive threshold enumeration with naive counting; same crossing and
// interpolation rule as the documented convention.
inline EerResult brute_force_eer(const std::vector<double> &bona, const std::vector<double> &spoof)
{
  std::set<double> uniq(bona.begin(), bona.end());
  uniq.insert(spoof.begin(), spoof.end());
  std::vector<double> t(uniq.begin(), uniq.end());
  t.push_back(std::numeric_limits<double>::infinity());
  double prev_frr = 0, prev_far = 0, prev_t = 0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    std::size_t miss = 0, fa = 0;
    for (double v : bona)
      miss += v < t[k];
    for (double v : spoof)
      fa += v >= t[k];
    const double frr = double(miss) / double(bona.size());
    const double far = double(fa) / double(spoof.size());
    const double d = frr - far;
    if (d >= 0) {
      EerResult r{frr, t[k], bona.size(), spoof.size()};
      if (d != 0 && k > 0) {
        const double d_prev = prev_frr - prev_far;
        const double alpha = -d_prev / (d - d_prev);
        r.eer = prev_frr + alpha * (frr - prev_frr);
        r.threshold = std::isfinite(t[k]) ? prev_t + alpha * (t[k] - prev_t) : prev_t;
      } else if (!std::isfinite(t[k])) {
        r.threshold = prev_t;
      }
      return r;
    }
    prev_frr = frr;
    prev_far = far;
    prev_t = t[k];
  }
  return {};
}

// Adjusted p-values: reject iff max_{j<=k} (m-j+1) p_(j) <= alpha.
inline std::vector<bool> holm_by_adjusted(const std::vector<double> &p, double alpha)
{
  std::vector<std::size_t> idx(p.size());
  for (std::size_t i = 0; i < idx.size(); ++i)
    idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return p[a] < p[b]; });
  std::vector<bool> out(p.size(), false);
  double            running = 0.0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    running = std::max(running, double(p.size() - k) * p[idx[k]]);
    out[idx[k]] = running <= alpha;
  }
  return out;
}

// Textbook procedure: walk the ascending p-values, reject while
// p_(k) <= alpha / (m - k + 1), stop at the first failure.
inline std::vector<bool> holm_sequential(const std::vector<double> &p, double alpha)
{
  std::vector<std::size_t> idx(p.size());
  for (std::size_t i = 0; i < idx.size(); ++i)
    idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return p[a] < p[b]; });
  std::vector<bool> out(p.size(), false);
  const std::size_t m = p.size();
  for (std::size_t k = 0; k < m; ++k) {
    if (!(p[idx[k]] <= alpha / double(m - k)))
      break;
    out[idx[k]] = true;
  }
  return out;
}

inline std::vector<bool> bonferroni(const std::vector<double> &p, double alpha)
{
  std::vector<bool> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i)
    out[i] = p[i] <= alpha / double(p.size());
  return out;
}

} // namespace vcm::oracle
