#include "vcm/stats_sig.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace vcm {

double pairwise_eer_test(const EerResult &a, const EerResult &b)
{
  const double n1 = double(a.n_tar + a.n_non);
  const double n2 = double(b.n_tar + b.n_non);
  if (!(n1 > 0 && n2 > 0))
    throw UsageError("pairwise_eer_test: results carry no trial counts");
  const double c1 = std::round(a.eer * n1);
  const double c2 = std::round(b.eer * n2);
  const double pooled = (c1 + c2) / (n1 + n2);
  if (pooled <= 0.0 || pooled >= 1.0)
    return a.eer == b.eer ? 1.0 : 0.0;
  const double z = (a.eer - b.eer) / std::sqrt(pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2));
  // 2 (1 - Phi(|z|)) = erfc(|z| / sqrt 2)
  return std::clamp(std::erfc(std::abs(z) / std::sqrt(2.0)), 0.0, 1.0);
}

std::vector<bool> holm_bonferroni(const std::vector<double> &p, double alpha)
{
  for (double v : p)
    if (!(v >= 0.0 && v <= 1.0))
      throw UsageError("holm_bonferroni: p-values must lie in [0, 1]");
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return p[i] < p[j]; });
  std::vector<bool> reject(p.size(), false);
  const double      m = double(p.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (p[order[k]] > alpha / (m - double(k)))
      break;
    reject[order[k]] = true;
  }
  return reject;
}

SignificanceMatrix significance_matrix(const std::map<std::string, EerResult> &results,
                                       double alpha)
{
  if (results.size() < 2)
    throw UsageError("significance_matrix: need at least two systems");
  SignificanceMatrix m;
  m.alpha = alpha;
  std::vector<const EerResult *> r;
  for (const auto &[name, res] : results) {
    m.systems.push_back(name);
    r.push_back(&res);
  }
  const auto n = Eigen::Index(r.size());
  m.p_values = MatrixXd::Ones(n, n);
  m.reject.setConstant(n, n, false);

  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
  std::vector<double>                                p;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      pairs.emplace_back(i, j);
      p.push_back(pairwise_eer_test(*r[std::size_t(i)], *r[std::size_t(j)]));
    }
  const auto flags = holm_bonferroni(p, alpha);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [i, j] = pairs[k];
    m.p_values(i, j) = m.p_values(j, i) = p[k];
    m.reject(i, j) = m.reject(j, i) = flags[k];
  }
  return m;
}

void write_significance_csv(const std::filesystem::path &stem, const SignificanceMatrix &m)
{
  if (stem.has_parent_path())
    std::filesystem::create_directories(stem.parent_path());
  auto write = [&](const std::string &suffix, auto cell) {
    const auto    path = stem.string() + suffix;
    std::ofstream out(path);
    if (!out)
      throw DataError("cannot write " + path);
    out << "system";
    for (const auto &s : m.systems)
      out << ',' << s;
    out << '\n';
    for (Eigen::Index i = 0; i < Eigen::Index(m.systems.size()); ++i) {
      out << m.systems[std::size_t(i)];
      for (Eigen::Index j = 0; j < Eigen::Index(m.systems.size()); ++j)
        out << ',' << cell(i, j);
      out << '\n';
    }
  };
  write("_p.csv", [&](auto i, auto j) { return format_number(m.p_values(i, j)); });
  write("_reject.csv", [&](auto i, auto j) { return m.reject(i, j) ? "1" : "0"; });
}

} // namespace vcm
