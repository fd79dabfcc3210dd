#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tenslink/decomp.hpp"
#include "tenslink/tensor.hpp"
#include "tenslink/two_way.hpp"

namespace tenslink {

/// K data blocks sharing the size of one designated mode (1-based); the
/// other modes may differ per block.
struct MultiBlockSet {
  std::vector<DenseTensor> blocks;
  std::size_t common_mode = 1;

  MultiBlockSet() = default;
  MultiBlockSet(std::vector<DenseTensor> b, std::size_t mode);

  std::size_t block_count() const { return blocks.size(); }
  std::size_t common_size() const;
};

struct ConcatResult {
  Eigen::MatrixXd stacked;  // (sum of I_k) x T
  /// Per-block (row offset, row count) into the stacked matrix.
  std::vector<std::pair<std::size_t, std::size_t>> row_spans;
};

/// Stacks matrices sharing a column count into one tall matrix.
ConcatResult concat_vertical(const std::vector<Eigen::MatrixXd>& blocks);

/// Splits a tall matrix back into blocks along recorded row spans.
std::vector<Eigen::MatrixXd> split_rows(
    const Eigen::MatrixXd& stacked,
    const std::vector<std::pair<std::size_t, std::size_t>>& row_spans);

using TwoWaySolver =
    std::function<TwoWayFactorization(const Eigen::MatrixXd&, std::size_t)>;

struct JointBss {
  std::vector<Eigen::MatrixXd> mixings;  // A_k: I_k x r
  Eigen::MatrixXd shared_sources;        // B: T x r
  std::string method;
};

/// One shared source matrix across blocks: solve the vertical concatenation
/// with any two-factor solver, then partition the tall mixing matrix.
JointBss joint_bss(const std::vector<Eigen::MatrixXd>& blocks, std::size_t r,
                   const TwoWaySolver& solver);

struct TensorIca {
  Eigen::MatrixXd mixing;   // A: I x r, unit columns
  Eigen::MatrixXd sources;  // B: T x r, unit columns
  Eigen::MatrixXd weights;  // W: K x r; slice k of the data = A diag(W row k) Bᵀ
  CpFit fit;
};

/// Trilinear model of a channel x time x block stack: one mixing and one
/// source set shared by all slices, per-slice diagonal weights.
TensorIca tensor_ica_fit(const DenseTensor& x, std::size_t r,
                         const DecompOptions& options = {});

struct PvdModel {
  Eigen::MatrixXd left;                 // A: I x R_A, orthonormal
  Eigen::MatrixXd right;                // B: T x R_B, orthonormal
  std::vector<Eigen::MatrixXd> cores;   // G_k = Aᵀ X_k B
  std::vector<double> fit_trace;
};

/// Shared orthonormal side factors with per-block cores: X_k ≈ A G_k Bᵀ.
PvdModel pvd(const std::vector<Eigen::MatrixXd>& blocks, std::size_t rank_left,
             std::size_t rank_right, const DecompOptions& options = {});

struct MccaResult {
  /// Per block: I_k x c projection weights in the original variable space.
  std::vector<Eigen::MatrixXd> projections;
  /// Per block: T x c canonical variates, unit sample variance per column.
  std::vector<Eigen::MatrixXd> variates;
  /// T x c consensus scores (normalized average of the block variates).
  Eigen::MatrixXd shared_scores;
  /// Average inter-block correlation per stage, from the stacked-correlation
  /// eigenvalue: rho = (lambda - 1)/(K - 1).  Equals classical canonical
  /// correlations when K = 2.
  Eigen::VectorXd correlations;
  bool whitening_regularized = false;
};

/// Multiset CCA, maximum-variance formulation: stages are leading
/// eigenvectors of the stacked correlation of the whitened blocks, extracted
/// under per-block orthogonality.
MccaResult mcca_maxvar(const std::vector<Eigen::MatrixXd>& blocks, std::size_t c);

struct CobeResult {
  Eigen::MatrixXd basis;  // T x C, orthonormal
  /// Fit gap K - lambda_j of each extracted column (0 = exactly common).
  Eigen::VectorXd residuals;
  /// Full gap curve over all candidate columns, for elbow picking.
  Eigen::VectorXd residual_curve;
};

/// Common orthonormal basis of K subspaces of R^T.  Each block matrix is
/// T x m_k; its columns span the block subspace (rank-truncated internally).
CobeResult cobe(const std::vector<Eigen::MatrixXd>& subspaces, std::size_t c);

enum class SubspaceStrategy { pca, nmf, sobi };

/// Split of every block into a shared-subspace part and a block-specific
/// part.  Matrix case: X_k ≈ Ā_k B̄ᵀ + Ă_k B̆_kᵀ.  Tensor case: mode-1
/// factor partitioned as [B̄ | B̆_k] with the core split accordingly.
struct CifaModel {
  Eigen::MatrixXd common_basis;  // B̄: T x C, orthonormal
  std::size_t common_count = 0;
  std::vector<Eigen::MatrixXd> individual_bases;   // B̆_k: T x R̃_k
  std::vector<Eigen::MatrixXd> common_mixing;      // Ā_k (matrix case)
  std::vector<Eigen::MatrixXd> individual_mixing;  // Ă_k (matrix case)

  bool tensor_case = false;
  std::vector<DenseTensor> common_cores;      // Ḡ_k (tensor case)
  std::vector<DenseTensor> individual_cores;  // Ğ_k (tensor case)
  /// Per block, factors of modes 2..N (tensor case).
  std::vector<std::vector<Eigen::MatrixXd>> side_factors;

  std::vector<double> block_residuals;  // relative residual per block

  DenseTensor reconstruct_block(std::size_t k) const;
  DenseTensor common_part(std::size_t k) const;
  DenseTensor individual_part(std::size_t k) const;
};

/// Two-stage analysis of matrix blocks I_k x T sharing the column dimension
/// (common_mode = 2): a common orthonormal row-space basis of size C, then a
/// per-block factorization of the residual at rank R_k - C using the chosen
/// strategy.  The nmf strategy requires nonnegative residuals.
CifaModel cifa_matrix(const MultiBlockSet& blocks, std::size_t c,
                      const std::vector<std::size_t>& ranks,
                      SubspaceStrategy strategy = SubspaceStrategy::pca);

/// Linked Tucker decomposition of tensor blocks sharing mode 1: per-block
/// Tucker fits whose mode-1 factors are rotated so their first C columns
/// equal one shared orthonormal basis.
CifaModel cifa_tucker(const MultiBlockSet& blocks, std::size_t c,
                      const std::vector<std::vector<std::size_t>>& core_ranks,
                      const DecompOptions& options = {});

/// One pair of latent projections with maximal sample correlation (or
/// covariance for the PLS family).  Weights are stored both as full tensors
/// and, when rank-1 structured, as per-mode vectors.
struct CanonicalPair {
  DenseTensor x_weight;                      // shape of one x sample
  DenseTensor y_weight;                      // shape of one y sample
  std::vector<Eigen::VectorXd> x_mode_weights;  // rank-1 case only
  std::vector<Eigen::VectorXd> y_mode_weights;  // rank-1 case only
  Eigen::VectorXd u, v;                      // scores over the K samples
  double rho = 0.0;
};

/// Multilinear CCA with rank-1 projection weights.  x has shape
/// I_1..I_N x K, y has J_1..J_M x K, samples along the trailing mode.
std::vector<CanonicalPair> mlcca(const DenseTensor& x, const DenseTensor& y,
                                 std::size_t pairs, std::size_t max_iter = 500,
                                 double tol = 1e-10);

struct HoplsModel {
  std::vector<CanonicalPair> stages;
  /// Per stage: loadings regressed on the x score; q deflates x, p builds y.
  std::vector<Eigen::VectorXd> q;  // length prod(I)
  std::vector<Eigen::VectorXd> p;  // length prod(J)
  /// Both sides are centered across samples during fitting; predictions
  /// subtract x_mean and add y_mean back.
  Eigen::VectorXd x_mean;  // length prod(I)
  Eigen::VectorXd y_mean;  // intercept, length prod(J)
  std::vector<std::size_t> x_sample_shape;
  std::vector<std::size_t> y_sample_shape;
};

/// Tensor regression by stage-wise covariance maximization with
/// Tucker-structured projection weights of the given core ranks.
HoplsModel hopls_fit(const DenseTensor& x, const DenseTensor& y,
                     std::size_t pairs,
                     const std::vector<std::size_t>& x_core_ranks,
                     const std::vector<std::size_t>& y_core_ranks,
                     const DecompOptions& options = {});

/// Rank-1 special case of hopls_fit (all core ranks 1).
HoplsModel mlpls_fit(const DenseTensor& x, const DenseTensor& y,
                     std::size_t pairs, const DecompOptions& options = {});

/// Applies the fitted stages to new samples (trailing sample mode) and
/// returns predictions of shape y_sample_shape x K_new.
DenseTensor hopls_predict(const HoplsModel& model, const DenseTensor& x_new);

}  // namespace tenslink
