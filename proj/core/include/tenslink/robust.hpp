#pragma once

#include <cstdint>
#include <vector>

#include "tenslink/decomp.hpp"
#include "tenslink/tensor.hpp"

namespace tenslink {

/// Additive split of observed data into a structured low-rank part, an
/// entrywise-sparse outlier part, and residual noise.
struct RobustDecomposition {
  DenseTensor lowrank;
  DenseTensor sparse;
  /// Mean squared residual on observed entries after removing lowrank+sparse.
  double noise_variance = 0.0;
  /// Fraction of entries carrying a nonzero outlier estimate.
  double sparse_fraction = 0.0;
  std::size_t iterations = 0;
  /// False when the solver hit its iteration cap before the stopping rule;
  /// the fields then hold the best partial result.
  bool converged = true;
};

struct RpcaOptions {
  std::size_t max_iter = 1000;
  /// Stop when ||y - lowrank - sparse||_F / ||y||_F falls below this.
  double tol = 1e-7;
  /// Penalty growth per pass.  Faster growth converges in fewer passes but
  /// can freeze the split before the multiplier settles on the optimum.
  double mu_growth = 1.2;
};

/// Splits a matrix into low-rank plus entrywise-sparse parts by inexact
/// augmented-Lagrangian iteration on the nuclear-norm / l1 surrogate
///   min ||X||_* + lambda ||E||_1  s.t.  y = X + E.
/// Each pass applies singular-value soft-thresholding to the X update and
/// entrywise shrinkage to the E update with a growing penalty.
RobustDecomposition rpca(const Eigen::MatrixXd& y, double lambda,
                         const RpcaOptions& options = {});

/// rpca with the standard weight lambda = 1 / sqrt(max(rows, cols)).
RobustDecomposition rpca(const Eigen::MatrixXd& y);

struct CompletionOptions {
  std::size_t max_iter = 500;
  /// Stop when observed entries are reproduced to this relative accuracy.
  double tol = 1e-7;
};

/// Completes a partially observed matrix by iterating singular-value
/// soft-thresholding at tau on a dual variable that accumulates the observed
/// misfit, driving the observed entries to reproduction while keeping the
/// estimate low-rank.  The masked tensor must be order-2 with a nonempty mask.
/// A fully observed input is returned unchanged (it is already the solution).
Eigen::MatrixXd soft_impute(const MaskedTensor& y, double tau,
                            const CompletionOptions& options = {});

struct HalrtcOptions {
  std::size_t max_iter = 10000;
  double tol = 1e-9;
  /// Initial consensus penalty and its per-iteration growth.  The growth must
  /// stay gentle: once rho is huge the ADMM steps stall wherever they are, so
  /// an aggressive schedule freezes the iterate before it reaches the optimum
  /// of the nuclear-norm program.  The defaults keep the penalty small for
  /// long enough that marginal instances converge to the actual minimizer.
  double rho = 1e-2;
  double rho_growth = 1.002;
};

/// Tensor completion minimizing the weighted sum of unfolding nuclear norms
/// sum_n alpha_n ||X_(n)||_* subject to reproducing observed entries, by ADMM
/// with one auxiliary tensor per mode and an observed-entry clamp each sweep.
/// weights must be nonnegative and sum to 1 (one per mode).
DenseTensor halrtc(const MaskedTensor& y, const std::vector<double>& weights,
                   const HalrtcOptions& options = {});

/// halrtc with uniform mode weights 1/N.
DenseTensor halrtc(const MaskedTensor& y, const HalrtcOptions& options = {});

struct WoptOptions {
  std::size_t max_iter = 500;
  /// Stop when the gradient norm falls below tol * max(1, sqrt(2 f0)).
  double tol = 1e-9;
  bool random_init = false;
  std::uint64_t seed = 0;
};

struct WoptFit {
  KruskalTensor model;
  /// Final value of 0.5 * || mask ⊙ (y - reconstruction) ||_F^2.
  double objective = 0.0;
  std::vector<double> objective_trace;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Fits a rank-r sum-of-rank-ones model to the observed entries only, by
/// nonlinear conjugate-gradient descent on the masked squared error.  Modes
/// with an entirely unobserved fiber index are unrecoverable and rejected.
WoptFit cp_wopt(const MaskedTensor& y, std::size_t r,
                const WoptOptions& options = {});

/// Analytic gradient of the cp_wopt objective with respect to every factor
/// entry, laid out mode by mode (each factor column-major).  Exposed so the
/// gradient can be checked against finite differences.
Eigen::VectorXd cp_wopt_gradient(const MaskedTensor& y,
                                 const std::vector<Eigen::MatrixXd>& factors);

/// cp_wopt objective at the given factors (weights folded into the factors).
double cp_wopt_objective(const MaskedTensor& y,
                         const std::vector<Eigen::MatrixXd>& factors);

struct RankAdaptOptions {
  std::size_t max_sweeps = 200;
  double tol = 1e-10;
  /// Component weights are soft-thresholded each sweep by
  /// shrink_scale * sigma_hat * max_n (sqrt(I_n) + sqrt(size/I_n)); the
  /// default keeps pure-noise fits below the survival line while leaving
  /// well-separated planted components intact.
  double shrink_scale = 1.0;
  /// Components are removed once their weight drops below this fraction of
  /// the largest weight.
  double prune_rel = 1e-3;
  /// Outliers are entrywise soft-thresholded at outlier_sigma * sigma_hat,
  /// with sigma_hat the robust (median-deviation) residual scale.
  double outlier_sigma = 3.0;
  /// Floor on sigma_hat inside the outlier gate, as a fraction of the robust
  /// spread of the observed data.  The residual scale collapses once the
  /// majority of entries are explained while the slowest entries still carry
  /// honest misfit; without a floor those entries are absorbed into the
  /// outlier slate and frozen out of the fit.  An entry only counts as an
  /// outlier when it stands visibly off the data's own spread.
  double outlier_floor_rel = 0.05;
  /// Residuals beyond outlier_redescend * the gate move into the outlier
  /// term whole instead of being clipped back by the gate.  A clipped
  /// residual keeps pulling the model toward the corrupted value by the gate
  /// amount every sweep, which lets spare components ratchet their way into
  /// gross corruptions; unambiguous outliers must exert no pull at all,
  /// while residuals just past the gate keep a bounded pull so borderline
  /// structure can be reclaimed.
  double outlier_redescend = 3.0;
  /// Shrinkage-free refit sweeps at the final rank to remove threshold bias.
  std::size_t refine_sweeps = 50;
};

struct RankAdaptFit {
  KruskalTensor model;
  /// lowrank = model reconstruction, sparse = outlier estimate, plus the
  /// residual noise variance on observed entries.
  RobustDecomposition parts;
  std::size_t initial_rank = 0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Rank-adaptive robust CP: alternates imputed least-squares factor updates,
/// entrywise outlier soft-thresholding, and column-group weight shrinkage so
/// superfluous components decay and are pruned.  The strongest component is
/// always retained; if even it carries (numerically) zero weight the model is
/// degenerate and an IdentifiabilityError is thrown.
RankAdaptFit cp_rank_adapt(const MaskedTensor& y, std::size_t r_init,
                           const RankAdaptOptions& options = {});

enum class PatchFilter { hosvd, cp_rank_adapt };

struct PatchOptions {
  /// Reference-cube grid stride per axis (1 = every position).
  std::size_t stride = 1;
  /// Candidate cubes are searched within this many voxels of the reference
  /// corner along each axis.
  std::size_t window_radius = 5;
  /// Noise level for the hosvd core threshold; negative means estimate it
  /// from median absolute voxel differences.
  double sigma = -1.0;
  /// Initial rank for the cp_rank_adapt filter.
  std::size_t cp_rank_init = 6;
  /// Worker cap; 0 reads TENSLINK_THREADS (default 1 thread when unset).
  std::size_t threads = 0;
};

/// Patch-grouping volume denoiser: every reference cube on the grid is
/// stacked with its group_size most similar cubes from a local search window
/// into a p x p x p x group_size array, the stack is low-rank filtered, and
/// filtered cubes are aggregated back by per-voxel averaging.  Deterministic
/// for any thread count (per-worker accumulators merged in fixed order).
DenseTensor patch_denoise(const DenseTensor& volume, std::size_t patch,
                          std::size_t group_size,
                          PatchFilter filter = PatchFilter::hosvd,
                          const PatchOptions& options = {});

/// Robust noise-level estimate from median absolute differences of adjacent
/// voxels along every axis; exactly 0 for piecewise-constant volumes whose
/// constant regions dominate.
double estimate_noise_stddev(const DenseTensor& volume);

/// Peak signal-to-noise ratio 10 log10(peak^2 / mean squared error) in dB;
/// +infinity for identical inputs.
double psnr(const DenseTensor& reference, const DenseTensor& estimate,
            double peak);

/// Relative root squared error ||estimate - reference||_F / ||reference||_F.
double rrse(const DenseTensor& reference, const DenseTensor& estimate);

}  // namespace tenslink
