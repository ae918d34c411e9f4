#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vcm/eval_metrics.hpp"

namespace vcm {

/// Two-sided two-proportion z-test on EERs read as error proportions over
/// n_k = n_tar + n_non trials. With a pooled proportion of exactly 0 or 1 the
/// p-value is 1 for equal EERs and 0 otherwise.
double pairwise_eer_test(const EerResult &a, const EerResult &b);

/// Holm step-down. Flags are returned in input order.
std::vector<bool> holm_bonferroni(const std::vector<double> &p, double alpha = 0.05);

struct SignificanceMatrix
{
  std::vector<std::string> systems;
  MatrixXd                 p_values;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> reject;
  double                   alpha = 0.05;
};

/// All C(n,2) pairs tested, Holm correction applied jointly over them.
SignificanceMatrix significance_matrix(const std::map<std::string, EerResult> &results,
                                       double alpha = 0.05);

/// Writes <stem>_p.csv and <stem>_reject.csv.
void write_significance_csv(const std::filesystem::path &stem, const SignificanceMatrix &m);

} // namespace vcm
