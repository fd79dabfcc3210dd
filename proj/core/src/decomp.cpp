#include "tenslink/decomp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "cp_detail.hpp"

namespace tenslink {

namespace {

using detail::canonicalize;
using detail::cp_initial_factors;
using detail::gram_hadamard_skip;
using detail::khatri_rao_skip;
using detail::leading_mode_subspace;
using detail::normalize_columns;

void check_ranks(const DenseTensor& x, const std::vector<std::size_t>& ranks) {
  if (ranks.size() != x.order())
    throw std::invalid_argument("one target rank per mode is required");
  for (std::size_t n = 0; n < ranks.size(); ++n) {
    if (ranks[n] < 1) throw std::invalid_argument("target ranks must be positive");
    if (ranks[n] > x.shape()[n])
      throw std::invalid_argument("target rank exceeds mode size");
  }
}

double fit_from_residual(double residual, double norm_x) {
  return norm_x > 0 ? 1.0 - residual / norm_x : 1.0;
}

// Residual of the current factors/weights against the mode-1 unfolding.
double cp_residual(const Eigen::MatrixXd& x1, const Eigen::VectorXd& weights,
                   const std::vector<Eigen::MatrixXd>& factors) {
  Eigen::MatrixXd recon =
      factors[0] * weights.asDiagonal() * khatri_rao_skip(factors, 1).transpose();
  return (x1 - recon).norm();
}

}  // namespace

std::vector<std::size_t> KruskalTensor::shape() const {
  std::vector<std::size_t> s;
  s.reserve(factors.size());
  for (const auto& f : factors) s.push_back(static_cast<std::size_t>(f.rows()));
  return s;
}

std::vector<std::size_t> TuckerTensor::shape() const {
  std::vector<std::size_t> s;
  s.reserve(factors.size());
  for (const auto& f : factors) s.push_back(static_cast<std::size_t>(f.rows()));
  return s;
}

DenseTensor reconstruct(const KruskalTensor& k) {
  if (k.factors.empty()) throw std::invalid_argument("model has no factors");
  for (const auto& f : k.factors)
    if (f.cols() != k.weights.size())
      throw std::invalid_argument("factor column count does not match weights");
  Eigen::MatrixXd m1 = k.factors[0] * k.weights.asDiagonal() *
                       khatri_rao_skip(k.factors, 1).transpose();
  return fold(m1, 1, k.shape());
}

DenseTensor reconstruct(const TuckerTensor& t) {
  if (t.factors.size() != t.core.order())
    throw std::invalid_argument("one factor per core mode is required");
  DenseTensor x = t.core;
  for (std::size_t n = 1; n <= t.factors.size(); ++n)
    x = mode_n_product(x, t.factors[n - 1], n);
  return x;
}

TuckerTensor hosvd(const DenseTensor& x, const std::vector<std::size_t>& ranks) {
  check_ranks(x, ranks);
  TuckerTensor t;
  t.factors.resize(x.order());
  for (std::size_t n = 1; n <= x.order(); ++n)
    t.factors[n - 1] = leading_mode_subspace(x, n, ranks[n - 1]);
  DenseTensor core = x;
  for (std::size_t n = 1; n <= x.order(); ++n)
    core = mode_n_product(core, Eigen::MatrixXd(t.factors[n - 1].transpose()), n);
  t.core = std::move(core);
  return t;
}

TuckerFit hooi(const DenseTensor& x, const std::vector<std::size_t>& ranks,
               const DecompOptions& options) {
  check_ranks(x, ranks);
  TuckerFit result;
  result.model = hosvd(x, ranks);
  const double norm_x = frobenius_norm(x);

  auto current_fit = [&]() {
    DenseTensor core = x;
    for (std::size_t n = 1; n <= x.order(); ++n)
      core = mode_n_product(
          core, Eigen::MatrixXd(result.model.factors[n - 1].transpose()), n);
    double core_norm = frobenius_norm(core);
    double resid2 = std::max(0.0, norm_x * norm_x - core_norm * core_norm);
    return fit_from_residual(std::sqrt(resid2), norm_x);
  };

  double fit = current_fit();
  result.fit_trace.push_back(fit);
  for (std::size_t it = 0; it < options.max_iter; ++it) {
    for (std::size_t n = 1; n <= x.order(); ++n) {
      DenseTensor w = x;
      for (std::size_t p = 1; p <= x.order(); ++p) {
        if (p == n) continue;
        w = mode_n_product(
            w, Eigen::MatrixXd(result.model.factors[p - 1].transpose()), p);
      }
      result.model.factors[n - 1] = leading_mode_subspace(w, n, ranks[n - 1]);
    }
    double next = current_fit();
    result.fit_trace.push_back(next);
    result.iterations = it + 1;
    if (std::abs(next - fit) < options.tol) {
      result.converged = true;
      fit = next;
      break;
    }
    fit = next;
  }

  DenseTensor core = x;
  for (std::size_t n = 1; n <= x.order(); ++n)
    core = mode_n_product(
        core, Eigen::MatrixXd(result.model.factors[n - 1].transpose()), n);
  result.model.core = std::move(core);
  return result;
}

CpFit cp_als(const DenseTensor& x, std::size_t r, const DecompOptions& options) {
  if (r < 1) throw std::invalid_argument("target rank must be at least 1");
  if (x.order() < 2) throw std::invalid_argument("input must have order >= 2");

  CpFit result;
  std::vector<Eigen::MatrixXd> factors = cp_initial_factors(x, r, options);
  Eigen::VectorXd weights = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(r));
  normalize_columns(factors, weights);

  std::vector<Eigen::MatrixXd> unfoldings;
  unfoldings.reserve(x.order());
  for (std::size_t n = 1; n <= x.order(); ++n) unfoldings.push_back(unfold(x, n));
  const double norm_x = frobenius_norm(x);

  double fit = fit_from_residual(cp_residual(unfoldings[0], weights, factors),
                                 norm_x);
  result.fit_trace.push_back(fit);

  for (std::size_t it = 0; it < options.max_iter; ++it) {
    for (std::size_t n = 1; n <= x.order(); ++n) {
      Eigen::MatrixXd m = unfoldings[n - 1] * khatri_rao_skip(factors, n);
      Eigen::MatrixXd gram = gram_hadamard_skip(factors, n);
      double trace = gram.trace();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
      if (trace <= 0) {
        gram = Eigen::MatrixXd::Identity(gram.rows(), gram.cols());
        result.regularized = true;
      } else if (eig.eigenvalues().minCoeff() < 1e-12 * trace) {
        gram += 1e-12 * trace * Eigen::MatrixXd::Identity(gram.rows(), gram.cols());
        result.regularized = true;
      }
      factors[n - 1] = gram.ldlt().solve(m.transpose()).transpose();
    }
    normalize_columns(factors, weights);

    double next = fit_from_residual(cp_residual(unfoldings[0], weights, factors),
                                    norm_x);
    result.fit_trace.push_back(next);
    result.iterations = it + 1;
    if (std::abs(next - fit) < options.tol) {
      result.converged = true;
      fit = next;
      break;
    }
    fit = next;
  }

  result.model.weights = std::move(weights);
  result.model.factors = std::move(factors);
  canonicalize(result.model);
  return result;
}

CpFit cp_nonneg(const DenseTensor& x, std::size_t r, const DecompOptions& options) {
  if (r < 1) throw std::invalid_argument("target rank must be at least 1");
  if (x.order() < 2) throw std::invalid_argument("input must have order >= 2");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] < 0)
      throw std::invalid_argument("nonnegative factorization needs nonnegative input");

  CpFit result;
  std::vector<Eigen::MatrixXd> factors = cp_initial_factors(x, r, options);
  for (auto& f : factors) f = f.cwiseAbs().cwiseMax(1e-6);

  std::vector<Eigen::MatrixXd> unfoldings;
  unfoldings.reserve(x.order());
  for (std::size_t n = 1; n <= x.order(); ++n) unfoldings.push_back(unfold(x, n));
  const double norm_x = frobenius_norm(x);

  Eigen::VectorXd ones = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(r));
  auto residual = [&]() {
    Eigen::MatrixXd recon =
        factors[0] * khatri_rao_skip(factors, 1).transpose();
    return (unfoldings[0] - recon).norm();
  };

  double fit = fit_from_residual(residual(), norm_x);
  result.fit_trace.push_back(fit);

  for (std::size_t it = 0; it < options.max_iter; ++it) {
    for (std::size_t n = 1; n <= x.order(); ++n) {
      Eigen::MatrixXd m = unfoldings[n - 1] * khatri_rao_skip(factors, n);
      Eigen::MatrixXd gram = gram_hadamard_skip(factors, n);
      Eigen::MatrixXd& f = factors[n - 1];
      for (Eigen::Index c = 0; c < f.cols(); ++c) {
        double diag = gram(c, c);
        if (diag < 1e-300) continue;
        f.col(c) = (f.col(c) + (m.col(c) - f * gram.col(c)) / diag)
                       .cwiseMax(0.0);
      }
    }
    double next = fit_from_residual(residual(), norm_x);
    result.fit_trace.push_back(next);
    result.iterations = it + 1;
    if (std::abs(next - fit) < options.tol) {
      result.converged = true;
      fit = next;
      break;
    }
    fit = next;
  }

  Eigen::VectorXd weights = ones;
  normalize_columns(factors, weights);
  result.model.weights = std::move(weights);
  result.model.factors = std::move(factors);
  canonicalize(result.model);
  return result;
}

std::size_t kruskal_rank(const Eigen::MatrixXd& b) {
  const std::size_t cols = static_cast<std::size_t>(b.cols());
  if (cols == 0) throw std::invalid_argument("matrix has no columns");
  if (cols > 8)
    throw std::invalid_argument("exhaustive Kruskal rank is limited to 8 columns");

  auto subset_independent = [&](const std::vector<Eigen::Index>& subset) {
    Eigen::MatrixXd sub(b.rows(), static_cast<Eigen::Index>(subset.size()));
    for (std::size_t j = 0; j < subset.size(); ++j)
      sub.col(static_cast<Eigen::Index>(j)) = b.col(subset[j]);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(sub);
    double smax = svd.singularValues()(0);
    double smin = svd.singularValues()(svd.singularValues().size() - 1);
    return smax > 0 && smin > 1e-10 * smax &&
           subset.size() <= static_cast<std::size_t>(b.rows());
  };

  std::size_t kappa = 0;
  for (std::size_t k = 1; k <= cols; ++k) {
    // Enumerate all k-subsets of columns.
    std::vector<Eigen::Index> subset(k);
    for (std::size_t j = 0; j < k; ++j) subset[j] = static_cast<Eigen::Index>(j);
    bool all_independent = true;
    while (true) {
      if (!subset_independent(subset)) {
        all_independent = false;
        break;
      }
      std::size_t j = k;
      while (j > 0 &&
             subset[j - 1] == static_cast<Eigen::Index>(cols - k + j - 1))
        --j;
      if (j == 0) break;
      ++subset[j - 1];
      for (std::size_t l = j; l < k; ++l) subset[l] = subset[l - 1] + 1;
    }
    if (!all_independent) break;
    kappa = k;
  }
  return kappa;
}

UniquenessCheck cp_uniqueness_check(const std::vector<Eigen::MatrixXd>& factors) {
  if (factors.empty()) throw std::invalid_argument("no factors given");
  const Eigen::Index r = factors.front().cols();
  for (const auto& f : factors)
    if (f.cols() != r)
      throw std::invalid_argument("factors must share the column count");

  UniquenessCheck check;
  for (const auto& f : factors) {
    std::size_t kappa = kruskal_rank(f);
    check.kappas.push_back(kappa);
    check.kappa_sum += kappa;
  }
  check.threshold = 2 * static_cast<std::size_t>(r) + (factors.size() - 1);
  // A single rank-1 term is essentially unique whenever it is nonzero, even
  // though the k-rank sum N can never reach the generic threshold N+1.
  if (r == 1)
    check.satisfied = check.kappa_sum == factors.size();
  else
    check.satisfied = check.kappa_sum >= check.threshold;
  return check;
}

FactorMatch congruence_match(const KruskalTensor& est, const KruskalTensor& ref) {
  if (est.rank() != ref.rank() || est.shape() != ref.shape())
    throw std::invalid_argument("models must share rank and shape");
  const Eigen::Index r = static_cast<Eigen::Index>(est.rank());
  const std::size_t n_modes = est.order();

  Eigen::MatrixXd score = Eigen::MatrixXd::Zero(r, r);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < r; ++j) {
      double acc = 0.0;
      for (std::size_t n = 0; n < n_modes; ++n) {
        double denom =
            est.factors[n].col(i).norm() * ref.factors[n].col(j).norm();
        acc += denom > 0
                   ? std::abs(est.factors[n].col(i).dot(ref.factors[n].col(j))) /
                         denom
                   : 0.0;
      }
      score(i, j) = acc / static_cast<double>(n_modes);
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
    match.scales(bi) =
        ref.weights(bj) > 0 ? est.weights(bi) / ref.weights(bj) : 0.0;
  }
  match.mean_congruence = r > 0 ? match.congruences.mean() : 0.0;
  return match;
}

std::vector<Eigen::VectorXd> mode_singular_values(const DenseTensor& x) {
  std::vector<Eigen::VectorXd> values;
  values.reserve(x.order());
  for (std::size_t n = 1; n <= x.order(); ++n) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(unfold(x, n));
    values.push_back(svd.singularValues());
  }
  return values;
}

}  // namespace tenslink
