#pragma once

// Internal helpers shared by the sum-of-rank-ones solvers (dense, masked, and
// rank-adaptive).  Not installed.

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "tenslink/decomp.hpp"
#include "tenslink/tensor.hpp"

namespace tenslink::detail {

// Fixes the sign of each column so its largest-magnitude entry is positive.
inline void canonical_signs(Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.cols(); ++r) {
    Eigen::Index imax;
    m.col(r).cwiseAbs().maxCoeff(&imax);
    if (m(imax, r) < 0) m.col(r) = -m.col(r);
  }
}

// Top-k eigenvectors of the mode-n Gram matrix, largest eigenvalue first.
inline Eigen::MatrixXd leading_mode_subspace(const DenseTensor& x, std::size_t n,
                                             std::size_t k) {
  Eigen::MatrixXd un = unfold(x, n);
  Eigen::MatrixXd gram = un * un.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const Eigen::Index in = gram.rows();
  Eigen::MatrixXd b(in, static_cast<Eigen::Index>(k));
  for (std::size_t j = 0; j < k; ++j)
    b.col(static_cast<Eigen::Index>(j)) =
        eig.eigenvectors().col(in - 1 - static_cast<Eigen::Index>(j));
  canonical_signs(b);
  return b;
}

// Khatri-Rao product of all factors except the one for mode skip (1-based),
// ordered so the lowest remaining mode index varies fastest, matching the
// column order of the mode-skip unfolding.
inline Eigen::MatrixXd khatri_rao_skip(const std::vector<Eigen::MatrixXd>& factors,
                                       std::size_t skip) {
  const Eigen::Index r = factors.front().cols();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Ones(1, r);
  for (std::size_t p = 1; p <= factors.size(); ++p) {
    if (p == skip) continue;
    acc = khatri_rao(factors[p - 1], acc);
  }
  return acc;
}

// Hadamard product of the factor Gram matrices, skipping one mode.
inline Eigen::MatrixXd gram_hadamard_skip(
    const std::vector<Eigen::MatrixXd>& factors, std::size_t skip) {
  const Eigen::Index r = factors.front().cols();
  Eigen::MatrixXd g = Eigen::MatrixXd::Ones(r, r);
  for (std::size_t p = 1; p <= factors.size(); ++p) {
    if (p == skip) continue;
    g = g.cwiseProduct(factors[p - 1].transpose() * factors[p - 1]);
  }
  return g;
}

// Unit-normalizes every factor column, multiplying the norms into weights.
inline void normalize_columns(std::vector<Eigen::MatrixXd>& factors,
                              Eigen::VectorXd& weights) {
  const Eigen::Index r = factors.front().cols();
  weights = Eigen::VectorXd::Ones(r);
  for (auto& f : factors)
    for (Eigen::Index c = 0; c < r; ++c) {
      double norm = f.col(c).norm();
      weights(c) *= norm;
      if (norm > 0) {
        f.col(c) /= norm;
      } else {
        f.col(c).setZero();
        f(0, c) = 1.0;
      }
    }
}

// Canonical component order and signs: weights descending (ties broken by
// factor entries), largest-magnitude entry positive in every mode but the
// last, compensating sign flips absorbed by the last mode.
inline void canonicalize(KruskalTensor& k) {
  const std::size_t n_modes = k.factors.size();
  const Eigen::Index r = k.weights.size();
  for (Eigen::Index c = 0; c < r; ++c)
    for (std::size_t n = 0; n + 1 < n_modes; ++n) {
      Eigen::Index imax;
      k.factors[n].col(c).cwiseAbs().maxCoeff(&imax);
      if (k.factors[n](imax, c) < 0) {
        k.factors[n].col(c) = -k.factors[n].col(c);
        k.factors[n_modes - 1].col(c) = -k.factors[n_modes - 1].col(c);
      }
    }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(r));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (k.weights(a) != k.weights(b)) return k.weights(a) > k.weights(b);
    for (const auto& f : k.factors)
      for (Eigen::Index i = 0; i < f.rows(); ++i)
        if (f(i, a) != f(i, b)) return f(i, a) > f(i, b);
    return false;
  });

  KruskalTensor sorted;
  sorted.weights = Eigen::VectorXd(r);
  sorted.factors.assign(n_modes, Eigen::MatrixXd());
  for (std::size_t n = 0; n < n_modes; ++n)
    sorted.factors[n].resize(k.factors[n].rows(), r);
  for (Eigen::Index c = 0; c < r; ++c) {
    sorted.weights(c) = k.weights(order[static_cast<std::size_t>(c)]);
    for (std::size_t n = 0; n < n_modes; ++n)
      sorted.factors[n].col(c) =
          k.factors[n].col(order[static_cast<std::size_t>(c)]);
  }
  k = std::move(sorted);
}

// One factor matrix per mode: leading mode subspaces padded with seeded
// Gaussian columns, or fully random when requested.
inline std::vector<Eigen::MatrixXd> cp_initial_factors(
    const DenseTensor& x, std::size_t r, const DecompOptions& options) {
  const std::size_t n_modes = x.order();
  std::vector<Eigen::MatrixXd> factors(n_modes);
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> dist;
  for (std::size_t n = 0; n < n_modes; ++n) {
    const std::size_t in = x.shape()[n];
    Eigen::MatrixXd f(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(r));
    if (options.random_init) {
      for (Eigen::Index c = 0; c < f.cols(); ++c)
        for (Eigen::Index i = 0; i < f.rows(); ++i) f(i, c) = dist(rng);
    } else {
      const std::size_t lead = std::min(r, in);
      f.leftCols(static_cast<Eigen::Index>(lead)) =
          leading_mode_subspace(x, n + 1, lead);
      for (std::size_t c = lead; c < r; ++c)
        for (Eigen::Index i = 0; i < f.rows(); ++i)
          f(i, static_cast<Eigen::Index>(c)) = dist(rng);
    }
    factors[n] = f;
  }
  return factors;
}

}  // namespace tenslink::detail
