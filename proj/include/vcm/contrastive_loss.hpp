#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vcm/common.hpp"
#include "vcm/manifest.hpp"

namespace vcm {

enum class CfLevels { Sequence, Utterance, Both };

std::string_view to_string(CfLevels l);
CfLevels         parse_cf_levels(std::string_view s);

struct CfConfig
{
  double   tau = 0.07;
  CfLevels levels = CfLevels::Both;
};

template <class Scalar>
using FrameMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Two-class contrastive batch. `bona` is the set I (1+K views of one bona
/// fide trial), `spoof` the set J. Every member is an N x D frame matrix.
template <class Scalar>
struct CfBatch
{
  std::vector<FrameMatrix<Scalar>> bona;
  std::vector<FrameMatrix<Scalar>> spoof;

  std::size_t size() const { return bona.size() + spoof.size(); }
  const FrameMatrix<Scalar> &member(std::size_t m) const
  {
    return m < bona.size() ? bona[m] : spoof[m - bona.size()];
  }
  bool same_class(std::size_t a, std::size_t b) const
  {
    return (a < bona.size()) == (b < bona.size());
  }
};

template <class Scalar>
struct CfResult
{
  Scalar                           loss = 0;
  std::vector<FrameMatrix<Scalar>> grad_bona;
  std::vector<FrameMatrix<Scalar>> grad_spoof;
};

namespace detail {

inline constexpr double kNormFloor = 1e-12;

template <class Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> floored_row_norms(const FrameMatrix<Scalar> &x)
{
  return x.rowwise().norm().cwiseMax(Scalar(kNormFloor));
}

template <class Scalar>
void check_shapes(const CfBatch<Scalar> &batch)
{
  if (batch.bona.size() < 2 || batch.spoof.size() < 2)
    throw UsageError("contrastive loss: both classes need at least two members (|I|=" +
                     std::to_string(batch.bona.size()) +
                     ", |J|=" + std::to_string(batch.spoof.size()) + ")");
  const auto &first = batch.member(0);
  if (first.rows() < 1 || first.cols() < 1)
    throw UsageError("contrastive loss: empty feature sequence");
  for (std::size_t m = 1; m < batch.size(); ++m)
    if (batch.member(m).rows() != first.rows() || batch.member(m).cols() != first.cols())
      throw UsageError("contrastive loss: members differ in shape");
}

template <class Scalar>
CfBatch<Scalar> pooled(const CfBatch<Scalar> &batch)
{
  CfBatch<Scalar> out;
  for (const auto &x : batch.bona)
    out.bona.push_back(x.colwise().mean());
  for (const auto &x : batch.spoof)
    out.spoof.push_back(x.colwise().mean());
  return out;
}

// Raises only for a frame pair whose raw norms are both zero.
template <class Scalar>
void check_degenerate(const FrameMatrix<Scalar> &a, const FrameMatrix<Scalar> &b)
{
  for (Eigen::Index n = 0; n < a.rows(); ++n)
    if (a.row(n).squaredNorm() == Scalar(0) && b.row(n).squaredNorm() == Scalar(0))
      throw NumericalError("contrastive loss: degenerate frame " + std::to_string(n) +
                           " (both sequences are all-zero there)");
}

} // namespace detail

/// f(a, b) = (1/N) sum_n <a_n, b_n> / (tau |a_n| |b_n|).
template <class Scalar>
Scalar cosine_seq_similarity(const FrameMatrix<Scalar> &a, const FrameMatrix<Scalar> &b,
                             Scalar tau)
{
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() < 1)
    throw UsageError("cosine_seq_similarity: shape mismatch");
  detail::check_degenerate(a, b);
  const auto na = detail::floored_row_norms(a);
  const auto nb = detail::floored_row_norms(b);
  const auto dots = a.cwiseProduct(b).rowwise().sum();
  return dots.cwiseQuotient(na.cwiseProduct(nb)).mean() / tau;
}

/// Pairwise similarity matrix over all members (bona first).
template <class Scalar>
FrameMatrix<Scalar> similarity_matrix(const CfBatch<Scalar> &batch, Scalar tau)
{
  const auto          m = static_cast<Eigen::Index>(batch.size());
  FrameMatrix<Scalar> f(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i; j < m; ++j)
      f(i, j) = f(j, i) = cosine_seq_similarity(batch.member(i), batch.member(j), tau);
  return f;
}

/// log H(z) for member z: log of sum over every other member of exp(f).
template <class Scalar>
Scalar log_partition(const FrameMatrix<Scalar> &f, Eigen::Index z)
{
  Scalar peak = -std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index k = 0; k < f.cols(); ++k)
    if (k != z)
      peak = std::max(peak, f(z, k));
  Scalar acc = 0;
  for (Eigen::Index k = 0; k < f.cols(); ++k)
    if (k != z)
      acc += std::exp(f(z, k) - peak);
  return peak + std::log(acc);
}

template <class Scalar>
Scalar partition(const CfBatch<Scalar> &batch, std::size_t z, Scalar tau)
{
  return std::exp(log_partition(similarity_matrix(batch, tau), Eigen::Index(z)));
}

/// Contrastive loss at a single level (the sequences as given) with the
/// gradient with respect to every frame of every member.
template <class Scalar>
CfResult<Scalar> cf_level(const CfBatch<Scalar> &batch, Scalar tau, bool with_grad = true)
{
  detail::check_shapes(batch);
  if (!(tau > Scalar(0)))
    throw UsageError("contrastive loss: tau must be positive");

  const auto                m = static_cast<Eigen::Index>(batch.size());
  const FrameMatrix<Scalar> f = similarity_matrix(batch, tau);

  CfResult<Scalar>    out;
  FrameMatrix<Scalar> g = FrameMatrix<Scalar>::Zero(m, m); // dL/dF(row, col)
  for (Eigen::Index z = 0; z < m; ++z) {
    const Scalar log_h = log_partition(f, z);
    const auto   positives =
        static_cast<Scalar>(z < Eigen::Index(batch.bona.size()) ? batch.bona.size() - 1
                                                                 : batch.spoof.size() - 1);
    for (Eigen::Index k = 0; k < m; ++k) {
      if (k == z)
        continue;
      const bool pos = batch.same_class(std::size_t(z), std::size_t(k));
      if (pos)
        out.loss -= (f(z, k) - log_h) / positives;
      g(z, k) = std::exp(f(z, k) - log_h) - (pos ? Scalar(1) / positives : Scalar(0));
    }
  }
  if (!std::isfinite(static_cast<double>(out.loss)))
    throw NumericalError("contrastive loss is not finite");
  if (!with_grad)
    return out;

  // f is symmetric, so each unordered pair contributes g(z,k) + g(k,z).
  const Eigen::Index                n = batch.member(0).rows();
  std::vector<FrameMatrix<Scalar>>  unit(static_cast<std::size_t>(m));
  std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> norms(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    norms[i] = detail::floored_row_norms(batch.member(i));
    unit[i] = norms[i].asDiagonal().inverse() * batch.member(i);
  }
  std::vector<FrameMatrix<Scalar>> grad(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    grad[i] = FrameMatrix<Scalar>::Zero(n, batch.member(i).cols());
    for (Eigen::Index k = 0; k < m; ++k) {
      if (k == i)
        continue;
      const Scalar c = g(i, k) + g(k, i);
      // d f(a,b) / d a_n = (b^_n - (a^_n . b^_n) a^_n) / (N tau |a_n|)
      const auto cosines = unit[i].cwiseProduct(unit[k]).rowwise().sum();
      grad[i] += (c / (Scalar(n) * tau)) * norms[i].asDiagonal().inverse() *
                 (unit[k] - cosines.asDiagonal() * unit[i]);
    }
  }
  out.grad_bona.assign(grad.begin(), grad.begin() + Eigen::Index(batch.bona.size()));
  out.grad_spoof.assign(grad.begin() + Eigen::Index(batch.bona.size()), grad.end());
  return out;
}

/// Loss over the configured levels. The utterance level pools each member
/// over frames (N = 1); with levels = Both the two losses are summed and the
/// gradients are returned with respect to the frame sequences.
template <class Scalar>
CfResult<Scalar> contrastive_feature_loss(const CfBatch<Scalar> &batch, const CfConfig &cfg,
                                          bool with_grad = true)
{
  detail::check_shapes(batch);
  const auto tau = static_cast<Scalar>(cfg.tau);

  CfResult<Scalar> total;
  auto             add = [&](CfResult<Scalar> &&r, bool from_pooled) {
    total.loss += r.loss;
    if (!with_grad)
      return;
    auto merge = [&](std::vector<FrameMatrix<Scalar>>       &dst,
                     const std::vector<FrameMatrix<Scalar>> &src,
                     const std::vector<FrameMatrix<Scalar>> &members) {
      for (std::size_t i = 0; i < src.size(); ++i) {
        const auto n = members[i].rows();
        FrameMatrix<Scalar> g = from_pooled
                                    ? FrameMatrix<Scalar>(src[i].replicate(n, 1) / Scalar(n))
                                    : src[i];
        if (dst.size() <= i)
          dst.push_back(std::move(g));
        else
          dst[i] += g;
      }
    };
    merge(total.grad_bona, r.grad_bona, batch.bona);
    merge(total.grad_spoof, r.grad_spoof, batch.spoof);
  };

  if (cfg.levels != CfLevels::Utterance)
    add(cf_level(batch, tau, with_grad), false);
  if (cfg.levels != CfLevels::Sequence)
    add(cf_level(detail::pooled(batch), tau, with_grad), true);
  return total;
}

// ---------------------------------------------------------------------------
// Mini-batch composition (trial bookkeeping only; features come later).

enum class Pairing { Paired, Random };

std::string_view to_string(Pairing p);
Pairing          parse_pairing(std::string_view s);

struct BatchMember
{
  std::string trial_id;
  int         view = 0; // 0 = original, 1..K = augmented views
};

struct BatchPlan
{
  std::vector<BatchMember> bona;  // I
  std::vector<BatchMember> spoof; // J
};

/// I = {bona} plus K augmented views of it; J = S spoofed trials plus K
/// augmented views of each. Paired mode takes the bona trial's own entries
/// from the pairing index; random mode draws S spoofed trials from `pool`.
BatchPlan compose_batch(const std::string &bona_id, const PairingIndex &pairing,
                        const std::vector<std::string> &pool, int s, int k, Pairing mode,
                        std::mt19937_64 &rng);

} // namespace vcm
