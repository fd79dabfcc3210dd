#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tenslink/match.hpp"
#include "tenslink/tensor.hpp"

namespace tenslink {

/// Raised when a blind-identification problem has no resolvable answer, e.g.
/// sources whose lagged-covariance profiles are pairwise proportional.
class IdentifiabilityError : public std::runtime_error {
public:
  explicit IdentifiabilityError(const std::string& what)
      : std::runtime_error(what) {}
};

/// Two-factor model x ≈ A Bᵀ with I×R mixing A and T×R sources B.
struct TwoWayFactorization {
  Eigen::MatrixXd mixing;   // A, I x R
  Eigen::MatrixXd sources;  // B, T x R
  std::string method;
  /// Objective value per iteration; nonincreasing for the monotone solvers.
  std::vector<double> objective_trace;
};

/// Best rank-r approximation with orthonormal mixing columns, ordered by
/// decreasing component variance.
TwoWayFactorization pca(const Eigen::MatrixXd& x, std::size_t r);

struct NmfOptions {
  bool orthogonal = false;  // drive BᵀB toward identity (penalty form)
  double sparsity = 0.0;    // l1 weight on the sources
  std::size_t max_iter = 500;
  double tol = 1e-8;
  std::uint64_t seed = 0;
};

/// Nonnegative factorization by column-wise coordinate descent.
TwoWayFactorization nmf(const Eigen::MatrixXd& x, std::size_t r,
                        const NmfOptions& options = {});

/// Smooth component analysis: alternating minimization of
/// ‖X−ABᵀ‖² + γ1·Σ_r‖L a_r‖₂ + γ2·Σ_r‖L b_r‖₂ with first-difference
/// operators L.
TwoWayFactorization smca(const Eigen::MatrixXd& x, std::size_t r, double gamma1,
                         double gamma2, std::size_t max_iter = 500,
                         double tol = 1e-8);

/// First-difference operator of size (n-1) x n: rows (…, 1, -1, …).
Eigen::MatrixXd first_difference(std::size_t n);

/// Symmetrized lagged sample covariances stacked as an I×I×|lags| tensor;
/// slice j holds (C(τ_j)+C(τ_j)ᵀ)/2 with C(τ) = (1/(T−τ)) Σ_t x(t+τ)x(t)ᵀ.
/// No centering is applied; callers remove means first when required.
DenseTensor lagged_covariances(const Eigen::MatrixXd& x,
                               const std::vector<std::size_t>& lags);

struct BlindIdentification {
  Eigen::MatrixXd mixing;   // estimate of A, I x r
  Eigen::MatrixXd sources;  // estimate of B, T x r (rows of recovered signals)
  std::vector<std::size_t> lags;
};

/// Second-order blind identification: joint diagonalization of whitened
/// lagged covariances recovers the mixing up to permutation and scale.
/// Default lags are 0..min(10, T/4).  Throws IdentifiabilityError when the
/// source lag profiles are pairwise near-proportional.
BlindIdentification blind_identify(const Eigen::MatrixXd& x, std::size_t r,
                                   std::vector<std::size_t> lags = {});

/// Sample fourth-order cumulant tensor, fully symmetric in its four indices.
DenseTensor cumulant_tensor(const Eigen::MatrixXd& x);

/// Permutation/scale-invariant separation error of an estimated mixing
/// matrix; zero iff est⁺·truth is a scaled permutation.
double amari_index(const Eigen::MatrixXd& est, const Eigen::MatrixXd& truth);

/// Moore-Penrose pseudo-inverse with singular values below cutoff·σ_max
/// treated as zero.
Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& m, double cutoff = 1e-10);

}  // namespace tenslink
