#include "tenslink/match.hpp"

#include <cmath>
#include <stdexcept>

namespace tenslink {

FactorMatch match_columns(const Eigen::MatrixXd& est, const Eigen::MatrixXd& ref) {
  if (est.rows() != ref.rows() || est.cols() != ref.cols())
    throw std::invalid_argument("match_columns requires equal matrix sizes");
  const Eigen::Index r = est.cols();

  Eigen::MatrixXd score(r, r);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < r; ++j) {
      double denom = est.col(i).norm() * ref.col(j).norm();
      score(i, j) = denom > 0 ? std::abs(est.col(i).dot(ref.col(j))) / denom : 0.0;
    }

  FactorMatch match;
  match.permutation.assign(static_cast<std::size_t>(r), 0);
  match.scales = Eigen::VectorXd::Zero(r);
  match.congruences = Eigen::VectorXd::Zero(r);

  std::vector<bool> est_used(static_cast<std::size_t>(r), false);
  std::vector<bool> ref_used(static_cast<std::size_t>(r), false);
  for (Eigen::Index step = 0; step < r; ++step) {
    Eigen::Index bi = -1, bj = -1;
    double best = -1.0;
    for (Eigen::Index i = 0; i < r; ++i) {
      if (est_used[static_cast<std::size_t>(i)]) continue;
      for (Eigen::Index j = 0; j < r; ++j) {
        if (ref_used[static_cast<std::size_t>(j)]) continue;
        if (score(i, j) > best) {
          best = score(i, j);
          bi = i;
          bj = j;
        }
      }
    }
    est_used[static_cast<std::size_t>(bi)] = true;
    ref_used[static_cast<std::size_t>(bj)] = true;
    match.permutation[static_cast<std::size_t>(bi)] = static_cast<std::size_t>(bj);
    match.congruences(bi) = best;
    double ref_ss = ref.col(bj).squaredNorm();
    match.scales(bi) = ref_ss > 0 ? ref.col(bj).dot(est.col(bi)) / ref_ss : 0.0;
  }
  match.mean_congruence = r > 0 ? match.congruences.mean() : 0.0;
  return match;
}

}  // namespace tenslink
