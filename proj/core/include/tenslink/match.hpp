#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace tenslink {

/// Column correspondence between an estimated factor set and a reference one,
/// resolving the permutation/sign/scale ambiguity of component models.
struct FactorMatch {
  /// permutation[r] = reference column matched to estimated column r.
  std::vector<std::size_t> permutation;
  /// Per-column scale of the estimate relative to the reference.
  Eigen::VectorXd scales;
  /// |cosine| of each matched column pair, in [0,1].
  Eigen::VectorXd congruences;
  double mean_congruence = 0.0;
};

/// Greedy maximum-|cosine| assignment between the columns of est and ref.
/// Both matrices need the same sizes; zero columns match with congruence 0.
FactorMatch match_columns(const Eigen::MatrixXd& est, const Eigen::MatrixXd& ref);

}  // namespace tenslink
