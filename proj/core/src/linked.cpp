#include "tenslink/linked.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace tenslink {

namespace {

void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

/// Subtracts the mean of every row (variables in rows, samples in columns).
Eigen::MatrixXd center_rows(const Eigen::MatrixXd& x) {
  Eigen::VectorXd means = x.rowwise().mean();
  return x.colwise() - means;
}

/// Subtracts the mean of every column (samples in rows).
Eigen::MatrixXd center_columns(const Eigen::MatrixXd& x) {
  Eigen::RowVectorXd means = x.colwise().mean();
  return x.rowwise() - means;
}

/// Top-c eigenvectors of a symmetric matrix, descending eigenvalue order.
Eigen::MatrixXd top_eigenvectors(const Eigen::MatrixXd& sym, std::size_t c) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  const auto cols = static_cast<Eigen::Index>(c);
  Eigen::MatrixXd out(sym.rows(), cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    out.col(j) = eig.eigenvectors().col(sym.cols() - 1 - j);
  }
  return out;
}

/// Orthonormal basis of the column space, truncated at a relative singular
/// value cutoff.
Eigen::MatrixXd orthonormal_range(const Eigen::MatrixXd& m, double rel_cutoff = 1e-10) {
  if (m.cols() == 0) return Eigen::MatrixXd(m.rows(), 0);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU);
  const double smax = svd.singularValues().size() > 0 ? svd.singularValues()(0) : 0.0;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i) {
    if (svd.singularValues()(i) > rel_cutoff * smax && svd.singularValues()(i) > 0.0) ++rank;
  }
  return svd.matrixU().leftCols(rank);
}

Eigen::VectorXd to_vector(const DenseTensor& t) {
  return Eigen::Map<const Eigen::VectorXd>(t.data().data(),
                                           static_cast<Eigen::Index>(t.size()));
}

DenseTensor from_vector(const std::vector<std::size_t>& shape, const Eigen::VectorXd& v) {
  return DenseTensor(shape, std::vector<double>(v.data(), v.data() + v.size()));
}

}  // namespace

MultiBlockSet::MultiBlockSet(std::vector<DenseTensor> b, std::size_t mode)
    : blocks(std::move(b)), common_mode(mode) {
  require(blocks.size() >= 2, "MultiBlockSet needs at least two blocks");
  require(common_mode >= 1, "common mode index is 1-based");
  const std::size_t shared = blocks.front().dim(common_mode);
  for (const DenseTensor& t : blocks) {
    require(common_mode <= t.order(), "common mode exceeds a block's order");
    require(t.dim(common_mode) == shared, "blocks disagree on the common mode size");
  }
}

std::size_t MultiBlockSet::common_size() const {
  require(!blocks.empty(), "empty block set");
  return blocks.front().dim(common_mode);
}

ConcatResult concat_vertical(const std::vector<Eigen::MatrixXd>& blocks) {
  require(!blocks.empty(), "concat_vertical needs at least one block");
  const Eigen::Index cols = blocks.front().cols();
  Eigen::Index rows = 0;
  for (const auto& b : blocks) {
    require(b.cols() == cols, "blocks disagree on the column count");
    rows += b.rows();
  }
  ConcatResult out;
  out.stacked.resize(rows, cols);
  Eigen::Index offset = 0;
  for (const auto& b : blocks) {
    out.stacked.middleRows(offset, b.rows()) = b;
    out.row_spans.emplace_back(static_cast<std::size_t>(offset),
                               static_cast<std::size_t>(b.rows()));
    offset += b.rows();
  }
  return out;
}

std::vector<Eigen::MatrixXd> split_rows(
    const Eigen::MatrixXd& stacked,
    const std::vector<std::pair<std::size_t, std::size_t>>& row_spans) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(row_spans.size());
  for (const auto& [offset, count] : row_spans) {
    require(offset + count <= static_cast<std::size_t>(stacked.rows()),
            "row span exceeds the stacked matrix");
    out.push_back(stacked.middleRows(static_cast<Eigen::Index>(offset),
                                     static_cast<Eigen::Index>(count)));
  }
  return out;
}

JointBss joint_bss(const std::vector<Eigen::MatrixXd>& blocks, std::size_t r,
                   const TwoWaySolver& solver) {
  require(static_cast<bool>(solver), "joint_bss needs a solver");
  require(r >= 1, "rank must be at least 1");
  ConcatResult cat = concat_vertical(blocks);
  TwoWayFactorization f = solver(cat.stacked, r);
  JointBss out;
  out.shared_sources = f.sources;
  out.mixings = split_rows(f.mixing, cat.row_spans);
  out.method = f.method;
  return out;
}

TensorIca tensor_ica_fit(const DenseTensor& x, std::size_t r,
                         const DecompOptions& options) {
  require(x.order() == 3, "tensor_ica_fit expects a 3rd-order tensor");
  CpFit fit = cp_als(x, r, options);
  TensorIca out;
  out.mixing = fit.model.factors[0];
  out.sources = fit.model.factors[1];
  out.weights = fit.model.factors[2] * fit.model.weights.asDiagonal();
  out.fit = std::move(fit);
  return out;
}

PvdModel pvd(const std::vector<Eigen::MatrixXd>& blocks, std::size_t rank_left,
             std::size_t rank_right, const DecompOptions& options) {
  require(!blocks.empty(), "pvd needs at least one block");
  const Eigen::Index rows = blocks.front().rows();
  const Eigen::Index cols = blocks.front().cols();
  for (const auto& b : blocks) {
    require(b.rows() == rows && b.cols() == cols, "pvd blocks must share one shape");
  }
  require(rank_left >= 1 && rank_left <= static_cast<std::size_t>(rows),
          "left rank out of range");
  require(rank_right >= 1 && rank_right <= static_cast<std::size_t>(cols),
          "right rank out of range");

  double total = 0.0;
  for (const auto& b : blocks) total += b.squaredNorm();
  require(total > 0.0, "pvd blocks are all zero");

  Eigen::MatrixXd m_right = Eigen::MatrixXd::Zero(cols, cols);
  for (const auto& b : blocks) m_right += b.transpose() * b;
  Eigen::MatrixXd right = top_eigenvectors(m_right, rank_right);
  Eigen::MatrixXd left;

  PvdModel out;
  double prev_fit = -std::numeric_limits<double>::infinity();
  for (std::size_t sweep = 0; sweep < options.max_iter; ++sweep) {
    Eigen::MatrixXd m_left = Eigen::MatrixXd::Zero(rows, rows);
    for (const auto& b : blocks) {
      Eigen::MatrixXd xb = b * right;
      m_left += xb * xb.transpose();
    }
    left = top_eigenvectors(m_left, rank_left);

    m_right.setZero();
    for (const auto& b : blocks) {
      Eigen::MatrixXd xa = b.transpose() * left;
      m_right += xa * xa.transpose();
    }
    right = top_eigenvectors(m_right, rank_right);

    double energy = 0.0;
    for (const auto& b : blocks) energy += (left.transpose() * b * right).squaredNorm();
    const double fit = 1.0 - std::sqrt(std::max(0.0, total - energy) / total);
    out.fit_trace.push_back(fit);
    if (fit - prev_fit < options.tol) break;
    prev_fit = fit;
  }

  out.left = left;
  out.right = right;
  out.cores.reserve(blocks.size());
  for (const auto& b : blocks) out.cores.push_back(left.transpose() * b * right);
  return out;
}

MccaResult mcca_maxvar(const std::vector<Eigen::MatrixXd>& blocks, std::size_t c) {
  const std::size_t num_blocks = blocks.size();
  require(num_blocks >= 2, "mcca_maxvar needs at least two blocks");
  const Eigen::Index samples = blocks.front().cols();
  require(samples >= 2, "mcca_maxvar needs at least two samples");
  Eigen::Index min_rows = blocks.front().rows();
  for (const auto& b : blocks) {
    require(b.cols() == samples, "blocks disagree on the sample count");
    require(b.rows() >= 1, "empty block");
    min_rows = std::min(min_rows, b.rows());
  }
  require(c >= 1 && c <= static_cast<std::size_t>(min_rows),
          "component count exceeds the smallest block");

  MccaResult out;
  const double denom = static_cast<double>(samples - 1);

  std::vector<Eigen::MatrixXd> centered(num_blocks);
  std::vector<Eigen::MatrixXd> whiteners(num_blocks);
  std::vector<Eigen::MatrixXd> whitened(num_blocks);
  std::vector<Eigen::Index> offsets(num_blocks);
  Eigen::Index total_rows = 0;
  for (std::size_t k = 0; k < num_blocks; ++k) {
    centered[k] = center_rows(blocks[k]);
    Eigen::MatrixXd cov = centered[k] * centered[k].transpose() / denom;
    Eigen::MatrixXd cov_sym = (cov + cov.transpose()) / 2.0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov_sym);
    const double lmax = eig.eigenvalues().maxCoeff();
    require(lmax > 0.0, "a block has zero variance");
    const double lmin = eig.eigenvalues().minCoeff();
    double ridge = 0.0;
    if (lmin < 1e-10 * lmax) {
      ridge = 1e-10 * lmax;
      out.whitening_regularized = true;
    }
    Eigen::VectorXd inv_sqrt(eig.eigenvalues().size());
    for (Eigen::Index i = 0; i < inv_sqrt.size(); ++i) {
      inv_sqrt(i) = 1.0 / std::sqrt(std::max(eig.eigenvalues()(i), 0.0) + ridge);
    }
    whiteners[k] = eig.eigenvectors() * inv_sqrt.asDiagonal() *
                   eig.eigenvectors().transpose();
    whitened[k] = whiteners[k] * centered[k];
    offsets[k] = total_rows;
    total_rows += blocks[k].rows();
  }

  Eigen::MatrixXd corr(total_rows, total_rows);
  for (std::size_t k = 0; k < num_blocks; ++k) {
    for (std::size_t l = 0; l < num_blocks; ++l) {
      corr.block(offsets[k], offsets[l], blocks[k].rows(), blocks[l].rows()) =
          whitened[k] * whitened[l].transpose() / denom;
    }
  }
  Eigen::MatrixXd corr_sym = (corr + corr.transpose()) / 2.0;

  out.projections.resize(num_blocks);
  out.variates.resize(num_blocks);
  for (std::size_t k = 0; k < num_blocks; ++k) {
    out.projections[k].resize(blocks[k].rows(), static_cast<Eigen::Index>(c));
    out.variates[k].resize(samples, static_cast<Eigen::Index>(c));
  }
  out.shared_scores.resize(samples, static_cast<Eigen::Index>(c));
  out.correlations.resize(static_cast<Eigen::Index>(c));

  // Directions already extracted, per block, in the whitened coordinates.
  std::vector<Eigen::MatrixXd> used(num_blocks);
  for (std::size_t k = 0; k < num_blocks; ++k) used[k].resize(blocks[k].rows(), 0);

  for (std::size_t stage = 0; stage < c; ++stage) {
    Eigen::MatrixXd deflated = corr_sym;
    for (std::size_t k = 0; k < num_blocks; ++k) {
      if (used[k].cols() == 0) continue;
      Eigen::MatrixXd proj = Eigen::MatrixXd::Identity(blocks[k].rows(), blocks[k].rows()) -
                             used[k] * used[k].transpose();
      deflated.middleRows(offsets[k], blocks[k].rows()) =
          (proj * deflated.middleRows(offsets[k], blocks[k].rows())).eval();
      deflated.middleCols(offsets[k], blocks[k].rows()) =
          (deflated.middleCols(offsets[k], blocks[k].rows()) * proj).eval();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
        Eigen::MatrixXd((deflated + deflated.transpose()) / 2.0));
    const double lambda = eig.eigenvalues()(total_rows - 1);
    Eigen::VectorXd w = eig.eigenvectors().col(total_rows - 1);

    const double rho = (lambda - 1.0) / static_cast<double>(num_blocks - 1);
    out.correlations(static_cast<Eigen::Index>(stage)) = std::clamp(rho, 0.0, 1.0);

    Eigen::VectorXd shared = Eigen::VectorXd::Zero(samples);
    for (std::size_t k = 0; k < num_blocks; ++k) {
      Eigen::VectorXd wk = w.segment(offsets[k], blocks[k].rows());
      // Track the whitened direction for the per-block orthogonality of the
      // next stages.
      Eigen::VectorXd dir = wk;
      if (used[k].cols() > 0) dir -= used[k] * (used[k].transpose() * dir);
      if (dir.norm() > 1e-10) {
        used[k].conservativeResize(Eigen::NoChange, used[k].cols() + 1);
        used[k].col(used[k].cols() - 1) = dir.normalized();
      }

      Eigen::VectorXd proj = whiteners[k] * wk;
      Eigen::VectorXd variate = centered[k].transpose() * proj;
      const double scale = std::sqrt(variate.squaredNorm() / denom);
      if (scale > 1e-14) {
        proj /= scale;
        variate /= scale;
      }
      out.projections[k].col(static_cast<Eigen::Index>(stage)) = proj;
      out.variates[k].col(static_cast<Eigen::Index>(stage)) = variate;
      shared += variate;
    }
    shared /= static_cast<double>(num_blocks);
    const double sscale = std::sqrt(shared.squaredNorm() / denom);
    if (sscale > 1e-14) shared /= sscale;
    out.shared_scores.col(static_cast<Eigen::Index>(stage)) = shared;
  }
  return out;
}

CobeResult cobe(const std::vector<Eigen::MatrixXd>& subspaces, std::size_t c) {
  require(!subspaces.empty(), "cobe needs at least one block");
  const Eigen::Index dim = subspaces.front().rows();
  std::vector<Eigen::MatrixXd> bases;
  bases.reserve(subspaces.size());
  for (const auto& s : subspaces) {
    require(s.rows() == dim, "blocks disagree on the shared dimension");
    Eigen::MatrixXd q = orthonormal_range(s);
    require(c <= static_cast<std::size_t>(q.cols()),
            "common basis size exceeds the rank of a block");
    bases.push_back(std::move(q));
  }

  Eigen::MatrixXd overlap = Eigen::MatrixXd::Zero(dim, dim);
  for (const auto& q : bases) overlap += q * q.transpose();
  Eigen::MatrixXd overlap_sym = (overlap + overlap.transpose()) / 2.0;
  const double k_count = static_cast<double>(subspaces.size());

  CobeResult out;
  // Diagnostic gap curve from the full spectrum of the summed projectors.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(overlap_sym);
  out.residual_curve.resize(dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    out.residual_curve(i) = k_count - eig.eigenvalues()(dim - 1 - i);
  }

  out.basis.resize(dim, static_cast<Eigen::Index>(c));
  out.residuals.resize(static_cast<Eigen::Index>(c));

  // Sequential extraction: alternating projection of a candidate column onto
  // every block range (one pass = one multiplication by the summed
  // projectors), deflated against the columns already extracted.
  for (std::size_t col = 0; col < c; ++col) {
    const Eigen::Index j = static_cast<Eigen::Index>(col);
    std::mt19937_64 rng(0xC0BE5EEDull + col);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd b(dim);
    for (int attempt = 0; attempt < 16; ++attempt) {
      for (Eigen::Index i = 0; i < dim; ++i) b(i) = gauss(rng);
      if (j > 0) b -= out.basis.leftCols(j) * (out.basis.leftCols(j).transpose() * b);
      if (b.norm() > 1e-8) break;
    }
    b.normalize();
    for (std::size_t iter = 0; iter < 1000; ++iter) {
      Eigen::VectorXd next = overlap_sym * b;
      if (j > 0) next -= out.basis.leftCols(j) * (out.basis.leftCols(j).transpose() * next);
      const double norm = next.norm();
      if (norm < 1e-14) break;  // nothing left in this direction
      next /= norm;
      const double delta = (next - b).norm();
      b = next;
      if (delta < 1e-13) break;
    }
    out.basis.col(j) = b;
    out.residuals(j) = k_count - b.dot(overlap_sym * b);
  }
  return out;
}

namespace {

/// Reconstructs core ×_1 f1 ×_2 f2 ... for the given factor list.
DenseTensor expand_core(const DenseTensor& core, const Eigen::MatrixXd& mode1,
                        const std::vector<Eigen::MatrixXd>& side) {
  DenseTensor out = mode_n_product(core, mode1, 1);
  for (std::size_t p = 0; p < side.size(); ++p) {
    out = mode_n_product(out, side[p], p + 2);
  }
  return out;
}

std::vector<std::size_t> block_shape_from_parts(const CifaModel& m, std::size_t k) {
  std::vector<std::size_t> shape;
  shape.push_back(static_cast<std::size_t>(m.common_basis.rows()));
  for (const auto& f : m.side_factors[k]) {
    shape.push_back(static_cast<std::size_t>(f.rows()));
  }
  return shape;
}

}  // namespace

DenseTensor CifaModel::common_part(std::size_t k) const {
  if (!tensor_case) {
    const Eigen::Index rows = common_count > 0 ? common_mixing[k].rows()
                                               : individual_mixing[k].rows();
    if (common_count == 0) {
      return DenseTensor::from_matrix(
          Eigen::MatrixXd::Zero(rows, common_basis.rows()));
    }
    return DenseTensor::from_matrix(common_mixing[k] * common_basis.transpose());
  }
  std::vector<std::size_t> shape = block_shape_from_parts(*this, k);
  if (common_count == 0) {
    // Shape with mode-1 size T: a zero tensor.
    return DenseTensor(shape);
  }
  DenseTensor expanded = expand_core(common_cores[k], common_basis, side_factors[k]);
  return expanded;
}

DenseTensor CifaModel::individual_part(std::size_t k) const {
  if (!tensor_case) {
    const Eigen::Index rows = common_count > 0 ? common_mixing[k].rows()
                                               : individual_mixing[k].rows();
    if (individual_bases[k].cols() == 0) {
      return DenseTensor::from_matrix(
          Eigen::MatrixXd::Zero(rows, common_basis.rows()));
    }
    return DenseTensor::from_matrix(individual_mixing[k] *
                                    individual_bases[k].transpose());
  }
  std::vector<std::size_t> shape = block_shape_from_parts(*this, k);
  if (individual_bases[k].cols() == 0) return DenseTensor(shape);
  return expand_core(individual_cores[k], individual_bases[k], side_factors[k]);
}

DenseTensor CifaModel::reconstruct_block(std::size_t k) const {
  return common_part(k) + individual_part(k);
}

CifaModel cifa_matrix(const MultiBlockSet& blocks, std::size_t c,
                      const std::vector<std::size_t>& ranks,
                      SubspaceStrategy strategy) {
  const std::size_t num_blocks = blocks.block_count();
  require(blocks.common_mode == 2, "matrix blocks must share mode 2 (columns)");
  require(ranks.size() == num_blocks, "one rank per block expected");
  for (const DenseTensor& t : blocks.blocks) {
    require(t.order() == 2, "cifa_matrix expects matrix blocks");
  }
  const std::size_t shared = blocks.common_size();

  CifaModel model;
  model.tensor_case = false;
  model.common_count = c;
  model.individual_bases.resize(num_blocks);
  model.common_mixing.resize(num_blocks);
  model.individual_mixing.resize(num_blocks);
  model.block_residuals.resize(num_blocks);

  std::vector<Eigen::MatrixXd> data(num_blocks);
  std::vector<Eigen::MatrixXd> row_bases(num_blocks);
  for (std::size_t k = 0; k < num_blocks; ++k) {
    data[k] = blocks.blocks[k].as_matrix();
    const std::size_t max_rank =
        std::min(static_cast<std::size_t>(data[k].rows()), shared);
    require(ranks[k] >= 1 && ranks[k] <= max_rank, "block rank out of range");
    require(c <= ranks[k], "common count exceeds a block rank");
    Eigen::BDCSVD<Eigen::MatrixXd> svd(data[k], Eigen::ComputeThinV);
    row_bases[k] = svd.matrixV().leftCols(static_cast<Eigen::Index>(ranks[k]));
  }

  if (c > 0) {
    CobeResult cb = cobe(row_bases, c);
    model.common_basis = cb.basis;
  } else {
    model.common_basis = Eigen::MatrixXd(static_cast<Eigen::Index>(shared), 0);
  }

  for (std::size_t k = 0; k < num_blocks; ++k) {
    const Eigen::Index rows = data[k].rows();
    model.common_mixing[k] = data[k] * model.common_basis;  // rows x c
    Eigen::MatrixXd residual =
        data[k] - model.common_mixing[k] * model.common_basis.transpose();

    const std::size_t individual_rank = ranks[k] - c;
    if (individual_rank == 0) {
      model.individual_bases[k] =
          Eigen::MatrixXd(static_cast<Eigen::Index>(shared), 0);
      model.individual_mixing[k] = Eigen::MatrixXd(rows, 0);
    } else {
      switch (strategy) {
        case SubspaceStrategy::pca: {
          Eigen::BDCSVD<Eigen::MatrixXd> svd(residual,
                                             Eigen::ComputeThinU | Eigen::ComputeThinV);
          const Eigen::Index r = static_cast<Eigen::Index>(individual_rank);
          model.individual_mixing[k] =
              svd.matrixU().leftCols(r) * svd.singularValues().head(r).asDiagonal();
          model.individual_bases[k] = svd.matrixV().leftCols(r);
          break;
        }
        case SubspaceStrategy::nmf: {
          require(residual.minCoeff() > -1e-10,
                  "nmf subspace strategy requires a nonnegative residual");
          Eigen::MatrixXd clipped = residual.cwiseMax(0.0);
          TwoWayFactorization f = nmf(clipped, individual_rank);
          model.individual_mixing[k] = f.mixing;
          model.individual_bases[k] = f.sources;
          break;
        }
        case SubspaceStrategy::sobi: {
          BlindIdentification f = blind_identify(residual, individual_rank);
          model.individual_mixing[k] = f.mixing;
          model.individual_bases[k] = f.sources;
          break;
        }
      }
    }

    Eigen::MatrixXd fitted =
        model.common_mixing[k] * model.common_basis.transpose() +
        model.individual_mixing[k] * model.individual_bases[k].transpose();
    const double norm = data[k].norm();
    model.block_residuals[k] = norm > 0.0 ? (data[k] - fitted).norm() / norm : 0.0;
  }
  return model;
}

CifaModel cifa_tucker(const MultiBlockSet& blocks, std::size_t c,
                      const std::vector<std::vector<std::size_t>>& core_ranks,
                      const DecompOptions& options) {
  const std::size_t num_blocks = blocks.block_count();
  require(blocks.common_mode == 1, "tensor blocks must share mode 1");
  require(core_ranks.size() == num_blocks, "one rank vector per block expected");
  const std::size_t shared = blocks.common_size();

  CifaModel model;
  model.tensor_case = true;
  model.common_count = c;
  model.individual_bases.resize(num_blocks);
  model.side_factors.resize(num_blocks);
  model.common_cores.resize(num_blocks);
  model.individual_cores.resize(num_blocks);
  model.block_residuals.resize(num_blocks);

  std::vector<TuckerFit> fits(num_blocks);
  for (std::size_t k = 0; k < num_blocks; ++k) {
    const DenseTensor& t = blocks.blocks[k];
    require(t.order() >= 2, "tensor blocks must have order at least 2");
    require(core_ranks[k].size() == t.order(), "rank vector length mismatch");
    require(c <= core_ranks[k][0], "common count exceeds a block's mode-1 rank");
    fits[k] = hooi(t, core_ranks[k], options);
  }

  if (c > 0) {
    std::vector<Eigen::MatrixXd> mode1(num_blocks);
    for (std::size_t k = 0; k < num_blocks; ++k) mode1[k] = fits[k].model.factors[0];
    CobeResult cb = cobe(mode1, c);
    model.common_basis = cb.basis;
  } else {
    model.common_basis = Eigen::MatrixXd(static_cast<Eigen::Index>(shared), 0);
  }

  for (std::size_t k = 0; k < num_blocks; ++k) {
    const DenseTensor& t = blocks.blocks[k];
    const Eigen::MatrixXd& mode1 = fits[k].model.factors[0];
    const Eigen::Index r1 = mode1.cols();
    const Eigen::Index common = static_cast<Eigen::Index>(c);

    Eigen::MatrixXd individual;  // shared x (r1 - c), orthonormal, ⊥ common basis
    if (r1 - common > 0) {
      if (common > 0) {
        // Rotate the block's mode-1 factor so its leading columns align with
        // the shared basis, then keep the orthogonal remainder.
        Eigen::MatrixXd m = mode1.transpose() * model.common_basis;  // r1 x c
        Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
        Eigen::MatrixXd align = svd.matrixU().leftCols(common) *
                                svd.matrixV().transpose();  // r1 x c
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(align);
        Eigen::MatrixXd full = qr.householderQ();
        Eigen::MatrixXd rest = mode1 * full.rightCols(r1 - common);
        rest -= model.common_basis * (model.common_basis.transpose() * rest);
        individual = orthonormal_range(rest, 1e-14);
        if (individual.cols() < r1 - common) {
          // Degenerate overlap: pad from the orthogonal complement directions
          // the SVD still exposes.
          Eigen::BDCSVD<Eigen::MatrixXd> pad(rest, Eigen::ComputeThinU);
          individual = pad.matrixU().leftCols(r1 - common);
        }
      } else {
        individual = mode1;
      }
    } else {
      individual = Eigen::MatrixXd(static_cast<Eigen::Index>(shared), 0);
    }
    model.individual_bases[k] = individual;
    model.side_factors[k] = std::vector<Eigen::MatrixXd>(
        fits[k].model.factors.begin() + 1, fits[k].model.factors.end());

    // Recompute the core against the aligned factor [common | individual].
    Eigen::MatrixXd combined(model.common_basis.rows(), common + individual.cols());
    if (common > 0) combined.leftCols(common) = model.common_basis;
    if (individual.cols() > 0) combined.rightCols(individual.cols()) = individual;

    DenseTensor core = mode_n_product(t, combined.transpose(), 1);
    for (std::size_t p = 0; p < model.side_factors[k].size(); ++p) {
      core = mode_n_product(core, model.side_factors[k][p].transpose(), p + 2);
    }

    // Split the core along mode 1 into the common and individual slabs.
    Eigen::MatrixXd core1 = unfold(core, 1);
    std::vector<std::size_t> core_shape = core.shape();
    if (common > 0) {
      std::vector<std::size_t> shape = core_shape;
      shape[0] = c;
      model.common_cores[k] = fold(core1.topRows(common), 1, shape);
    }
    if (individual.cols() > 0) {
      std::vector<std::size_t> shape = core_shape;
      shape[0] = static_cast<std::size_t>(individual.cols());
      model.individual_cores[k] = fold(core1.bottomRows(individual.cols()), 1, shape);
    }

    DenseTensor fitted = model.reconstruct_block(k);
    const double norm = frobenius_norm(t);
    model.block_residuals[k] =
        norm > 0.0 ? frobenius_norm(t - fitted) / norm : 0.0;
  }
  return model;
}

namespace {

/// Kronecker chain over the sample modes: the selector S with
/// vec(sample) ᵀ S = (contraction of the sample with every weight except the
/// skipped mode)ᵀ.  Pass skip = npos to contract every mode (S has one
/// column).
Eigen::MatrixXd mode_selector(const std::vector<Eigen::VectorXd>& weights,
                              std::size_t skip) {
  Eigen::MatrixXd acc = Eigen::MatrixXd::Ones(1, 1);
  for (std::size_t p = 0; p < weights.size(); ++p) {
    Eigen::MatrixXd factor;
    if (p == skip) {
      factor = Eigen::MatrixXd::Identity(weights[p].size(), weights[p].size());
    } else {
      factor = weights[p];
    }
    acc = kronecker(factor, acc);
  }
  return acc;
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na < 1e-300 || nb < 1e-300) return 0.0;
  return a.dot(b) / (na * nb);
}

std::vector<std::size_t> sample_shape(const DenseTensor& t) {
  std::vector<std::size_t> shape = t.shape();
  shape.pop_back();
  return shape;
}

}  // namespace

std::vector<CanonicalPair> mlcca(const DenseTensor& x, const DenseTensor& y,
                                 std::size_t pairs, std::size_t max_iter,
                                 double tol) {
  require(x.order() >= 2 && y.order() >= 2,
          "inputs need at least one feature mode plus the sample mode");
  const std::size_t samples = x.dim(x.order());
  require(samples == y.dim(y.order()), "sample counts differ");
  require(samples >= 2, "at least two samples required");
  require(pairs >= 1, "at least one pair requested");

  const std::vector<std::size_t> xshape = sample_shape(x);
  const std::vector<std::size_t> yshape = sample_shape(y);
  Eigen::MatrixXd xc = center_columns(unfold(x, x.order()));
  Eigen::MatrixXd yc = center_columns(unfold(y, y.order()));

  std::vector<CanonicalPair> out;
  for (std::size_t stage = 0; stage < pairs; ++stage) {
    std::vector<Eigen::VectorXd> wx(xshape.size());
    std::vector<Eigen::VectorXd> wy(yshape.size());
    for (std::size_t n = 0; n < xshape.size(); ++n) {
      wx[n] = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(xshape[n])).normalized();
    }
    for (std::size_t m = 0; m < yshape.size(); ++m) {
      wy[m] = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(yshape[m])).normalized();
    }

    Eigen::VectorXd u = xc * mode_selector(wx, std::size_t(-1));
    Eigen::VectorXd v = yc * mode_selector(wy, std::size_t(-1));
    double rho = cosine(u, v);

    for (std::size_t iter = 0; iter < max_iter; ++iter) {
      for (std::size_t n = 0; n < xshape.size(); ++n) {
        Eigen::MatrixXd z = xc * mode_selector(wx, n);  // samples x I_n
        Eigen::MatrixXd gram = z.transpose() * z;
        const double ridge = 1e-12 * (gram.trace() + 1e-300);
        gram.diagonal().array() += ridge;
        Eigen::VectorXd w = gram.ldlt().solve(z.transpose() * v);
        if (w.norm() > 1e-300 && w.allFinite()) wx[n] = w.normalized();
      }
      u = xc * mode_selector(wx, std::size_t(-1));
      for (std::size_t m = 0; m < yshape.size(); ++m) {
        Eigen::MatrixXd z = yc * mode_selector(wy, m);
        Eigen::MatrixXd gram = z.transpose() * z;
        const double ridge = 1e-12 * (gram.trace() + 1e-300);
        gram.diagonal().array() += ridge;
        Eigen::VectorXd w = gram.ldlt().solve(z.transpose() * u);
        if (w.norm() > 1e-300 && w.allFinite()) wy[m] = w.normalized();
      }
      v = yc * mode_selector(wy, std::size_t(-1));
      const double next = cosine(u, v);
      const bool done = std::abs(next - rho) < tol;
      rho = next;
      if (done) break;
    }

    if (u.norm() < 1e-12 || v.norm() < 1e-12) break;  // deflated space exhausted
    if (rho < 0.0) {  // sign canonicalization: flip the y side
      wy[0] = -wy[0];
      v = -v;
      rho = -rho;
    }

    CanonicalPair pair;
    pair.x_mode_weights = wx;
    pair.y_mode_weights = wy;
    pair.x_weight = from_vector(xshape, mode_selector(wx, std::size_t(-1)).col(0));
    pair.y_weight = from_vector(yshape, mode_selector(wy, std::size_t(-1)).col(0));
    pair.u = u.normalized();
    pair.v = v.normalized();
    pair.rho = std::clamp(rho, 0.0, 1.0);
    out.push_back(std::move(pair));

    xc -= out.back().u * (out.back().u.transpose() * xc);
    yc -= out.back().v * (out.back().v.transpose() * yc);
  }
  return out;
}

namespace {

struct WeightFit {
  DenseTensor weight;                        // unit Frobenius norm
  std::vector<Eigen::VectorXd> mode_weights; // populated when all ranks are 1
};

/// Best multilinear-rank approximation direction of the covariance tensor:
/// the normalized Tucker approximation at the requested core ranks.
WeightFit fit_weight(const DenseTensor& cov, const std::vector<std::size_t>& ranks) {
  WeightFit out;
  bool all_one = true;
  for (std::size_t r : ranks) all_one = all_one && (r == 1);

  DecompOptions inner;
  inner.max_iter = 100;
  inner.tol = 1e-12;
  TuckerFit tf = hooi(cov, ranks, inner);
  DenseTensor recon = reconstruct(tf.model);
  const double norm = frobenius_norm(recon);
  require(norm > 0.0, "degenerate covariance direction");
  out.weight = recon * (1.0 / norm);

  if (all_one) {
    out.mode_weights.reserve(ranks.size());
    double core = tf.model.core[0];
    for (std::size_t n = 0; n < ranks.size(); ++n) {
      Eigen::VectorXd w = tf.model.factors[n].col(0);
      if (n == 0 && core < 0.0) w = -w;
      out.mode_weights.push_back(w);
    }
  }
  return out;
}

}  // namespace

HoplsModel hopls_fit(const DenseTensor& x, const DenseTensor& y,
                     std::size_t pairs,
                     const std::vector<std::size_t>& x_core_ranks,
                     const std::vector<std::size_t>& y_core_ranks,
                     const DecompOptions& options) {
  require(x.order() >= 2 && y.order() >= 2,
          "inputs need at least one feature mode plus the sample mode");
  const std::size_t samples = x.dim(x.order());
  require(samples == y.dim(y.order()), "sample counts differ");
  require(samples >= 2, "at least two samples required");
  require(pairs >= 1, "at least one stage requested");

  HoplsModel model;
  model.x_sample_shape = sample_shape(x);
  model.y_sample_shape = sample_shape(y);
  require(x_core_ranks.size() == model.x_sample_shape.size(),
          "one core rank per x feature mode expected");
  require(y_core_ranks.size() == model.y_sample_shape.size(),
          "one core rank per y feature mode expected");
  for (std::size_t n = 0; n < x_core_ranks.size(); ++n) {
    require(x_core_ranks[n] >= 1 && x_core_ranks[n] <= model.x_sample_shape[n],
            "x core rank out of range");
  }
  for (std::size_t m = 0; m < y_core_ranks.size(); ++m) {
    require(y_core_ranks[m] >= 1 && y_core_ranks[m] <= model.y_sample_shape[m],
            "y core rank out of range");
  }

  Eigen::MatrixXd xraw = unfold(x, x.order());  // samples x prod(I)
  Eigen::MatrixXd ymat = unfold(y, y.order());
  model.x_mean = xraw.colwise().mean();
  model.y_mean = ymat.colwise().mean();
  Eigen::MatrixXd xmat = xraw.rowwise() - model.x_mean.transpose();
  Eigen::MatrixXd yc = ymat.rowwise() - model.y_mean.transpose();
  require(yc.norm() > 0.0, "targets have zero variance across samples");
  require(xmat.norm() > 0.0, "inputs have zero variance across samples");

  for (std::size_t stage = 0; stage < pairs; ++stage) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(yc, Eigen::ComputeThinU);
    if (svd.singularValues().size() == 0 || svd.singularValues()(0) < 1e-12) {
      break;  // targets fully explained
    }
    Eigen::VectorXd v = svd.matrixU().col(0) * svd.singularValues()(0);

    WeightFit wx, wy;
    Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(samples));
    double score = 0.0;
    bool degenerate = false;
    for (std::size_t iter = 0; iter < std::max<std::size_t>(options.max_iter, 1);
         ++iter) {
      Eigen::VectorXd cx = xmat.transpose() * v;
      if (cx.norm() < 1e-300) {
        degenerate = true;
        break;
      }
      wx = fit_weight(from_vector(model.x_sample_shape, cx), x_core_ranks);
      u = xmat * to_vector(wx.weight);

      Eigen::VectorXd cy = yc.transpose() * u;
      if (cy.norm() < 1e-300) {
        degenerate = true;
        break;
      }
      wy = fit_weight(from_vector(model.y_sample_shape, cy), y_core_ranks);
      v = yc * to_vector(wy.weight);

      const double next = u.dot(v);
      if (std::abs(next - score) <= 1e-10 * std::max(1.0, std::abs(score))) {
        score = next;
        break;
      }
      score = next;
    }
    if (degenerate || u.squaredNorm() < 1e-300) break;

    CanonicalPair pair;
    pair.x_weight = wx.weight;
    pair.y_weight = wy.weight;
    pair.x_mode_weights = wx.mode_weights;
    pair.y_mode_weights = wy.mode_weights;
    pair.u = u;
    pair.v = v;
    pair.rho = cosine(u, v);

    // Regression link: both loadings regressed on the x score.
    const double uu = u.squaredNorm();
    Eigen::VectorXd q = xmat.transpose() * u / uu;
    Eigen::VectorXd p = yc.transpose() * u / uu;
    xmat -= u * q.transpose();
    yc -= u * p.transpose();

    model.stages.push_back(std::move(pair));
    model.q.push_back(std::move(q));
    model.p.push_back(std::move(p));
  }
  require(!model.stages.empty(), "no informative stage could be extracted");
  return model;
}

HoplsModel mlpls_fit(const DenseTensor& x, const DenseTensor& y,
                     std::size_t pairs, const DecompOptions& options) {
  require(x.order() >= 2 && y.order() >= 2,
          "inputs need at least one feature mode plus the sample mode");
  std::vector<std::size_t> xr(x.order() - 1, 1);
  std::vector<std::size_t> yr(y.order() - 1, 1);
  return hopls_fit(x, y, pairs, xr, yr, options);
}

DenseTensor hopls_predict(const HoplsModel& model, const DenseTensor& x_new) {
  require(!model.stages.empty(), "model has no stages");
  require(x_new.order() == model.x_sample_shape.size() + 1,
          "sample order does not match the trained model");
  for (std::size_t n = 0; n < model.x_sample_shape.size(); ++n) {
    require(x_new.dim(n + 1) == model.x_sample_shape[n],
            "sample shape does not match the trained model");
  }
  const std::size_t count = x_new.dim(x_new.order());

  Eigen::MatrixXd xmat = unfold(x_new, x_new.order());  // count x prod(I)
  xmat.rowwise() -= model.x_mean.transpose();
  Eigen::MatrixXd pred = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(count), model.y_mean.size());
  pred.rowwise() += model.y_mean.transpose();

  for (std::size_t j = 0; j < model.stages.size(); ++j) {
    Eigen::VectorXd t = xmat * to_vector(model.stages[j].x_weight);
    pred += t * model.p[j].transpose();
    xmat -= t * model.q[j].transpose();
  }

  std::vector<std::size_t> shape = model.y_sample_shape;
  shape.push_back(count);
  return fold(pred, shape.size(), shape);
}

}  // namespace tenslink
