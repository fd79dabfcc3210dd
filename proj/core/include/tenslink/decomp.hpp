#pragma once

#include <cstdint>
#include <vector>

#include "tenslink/match.hpp"
#include "tenslink/tensor.hpp"

namespace tenslink {

/// Weighted sum of rank-one terms: x ≈ Σ_r λ_r b_r^(1) ∘ ... ∘ b_r^(N).
/// Canonical form keeps weights nonnegative and descending and every factor
/// column at unit 2-norm.
struct KruskalTensor {
  Eigen::VectorXd weights;
  std::vector<Eigen::MatrixXd> factors;

  std::size_t rank() const { return static_cast<std::size_t>(weights.size()); }
  std::size_t order() const { return factors.size(); }
  std::vector<std::size_t> shape() const;
};

/// Core tensor multiplied by one factor matrix per mode:
/// x ≈ g ×_1 B^(1) ×_2 ... ×_N B^(N).
struct TuckerTensor {
  DenseTensor core;
  std::vector<Eigen::MatrixXd> factors;

  std::size_t order() const { return factors.size(); }
  std::vector<std::size_t> shape() const;
  std::vector<std::size_t> ranks() const { return core.shape(); }
};

DenseTensor reconstruct(const KruskalTensor& k);
DenseTensor reconstruct(const TuckerTensor& t);

struct DecompOptions {
  std::size_t max_iter = 500;
  double tol = 1e-8;
  bool random_init = false;  // default: leading singular vectors per mode
  std::uint64_t seed = 0;
};

/// Truncated higher-order SVD: factor n holds the top ranks[n-1] left singular
/// vectors of the mode-n unfolding; the core is x contracted with the factor
/// transposes.  The squared residual is bounded by the discarded singular
/// energy summed over modes.
TuckerTensor hosvd(const DenseTensor& x, const std::vector<std::size_t>& ranks);

struct TuckerFit {
  TuckerTensor model;
  std::vector<double> fit_trace;  // 1 - relative residual, once per sweep
  std::size_t iterations = 0;
  bool converged = false;
};

/// Orthogonal-iteration refinement of hosvd (one least-squares subspace update
/// per mode per sweep); fit is nondecreasing across sweeps.
TuckerFit hooi(const DenseTensor& x, const std::vector<std::size_t>& ranks,
               const DecompOptions& options = {});

struct CpFit {
  KruskalTensor model;
  std::vector<double> fit_trace;
  std::size_t iterations = 0;
  bool converged = false;
  /// True when a near-singular normal-equation solve needed a ridge.
  bool regularized = false;
};

/// Alternating least squares for the rank-r sum-of-rank-ones model.
CpFit cp_als(const DenseTensor& x, std::size_t r,
             const DecompOptions& options = {});

/// Nonnegative variant; x must be entrywise >= 0 and the returned factors are
/// too.  Column-wise updates keep the squared error nonincreasing.
CpFit cp_nonneg(const DenseTensor& x, std::size_t r,
                const DecompOptions& options = {});

/// Largest k such that every k-subset of columns is linearly independent
/// (exhaustive; throws above 8 columns).
std::size_t kruskal_rank(const Eigen::MatrixXd& b);

struct UniquenessCheck {
  std::vector<std::size_t> kappas;
  std::size_t kappa_sum = 0;
  std::size_t threshold = 0;  // 2R + (N-1)
  bool satisfied = false;
};

/// Sufficient condition for essential uniqueness of a rank-R model:
/// Σ_n κ(B^(n)) ≥ 2R + (N-1).
UniquenessCheck cp_uniqueness_check(const std::vector<Eigen::MatrixXd>& factors);

/// Factor congruence between two models of equal rank and shape, invariant to
/// column permutation and to sign/scale of the estimate.  Pair scores average
/// |cosine| across modes; assignment is greedy on the score matrix.
FactorMatch congruence_match(const KruskalTensor& est, const KruskalTensor& ref);

/// Singular values of every mode unfolding (diagnostic for rank selection).
std::vector<Eigen::VectorXd> mode_singular_values(const DenseTensor& x);

}  // namespace tenslink
