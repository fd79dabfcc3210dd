#include <doctest.h>

#include <random>

#include "tenslink/decomp.hpp"
#include "test_util.hpp"

using namespace tenslink;
using testutil::random_matrix;
using testutil::random_orthonormal;
using testutil::random_tensor;

namespace {

KruskalTensor random_kruskal(const std::vector<std::size_t>& shape, std::size_t r,
                             unsigned seed) {
  KruskalTensor k;
  k.weights = Eigen::VectorXd(static_cast<Eigen::Index>(r));
  for (std::size_t i = 0; i < r; ++i)
    k.weights(static_cast<Eigen::Index>(i)) = static_cast<double>(r - i);
  for (std::size_t n = 0; n < shape.size(); ++n)
    k.factors.push_back(random_orthonormal(static_cast<Eigen::Index>(shape[n]),
                                           static_cast<Eigen::Index>(r),
                                           seed * 31 + static_cast<unsigned>(n)));
  return k;
}

double fit_error(const DenseTensor& x, const DenseTensor& approx) {
  return frobenius_norm(x - approx) / frobenius_norm(x);
}

}  // namespace

TEST_CASE("kruskal reconstruction matches the entrywise sum of rank-1 terms") {
  KruskalTensor k = random_kruskal({4, 3, 5}, 3, 5);
  DenseTensor x = reconstruct(k);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t l = 0; l < 5; ++l) {
        double expect = 0.0;
        for (Eigen::Index r = 0; r < 3; ++r)
          expect += k.weights(r) * k.factors[0](static_cast<Eigen::Index>(i), r) *
                    k.factors[1](static_cast<Eigen::Index>(j), r) *
                    k.factors[2](static_cast<Eigen::Index>(l), r);
        CHECK(x.at({i, j, l}) == doctest::Approx(expect).epsilon(1e-12));
      }
}

TEST_CASE("tucker reconstruction matches the brute-force contraction") {
  TuckerTensor t;
  t.core = random_tensor({2, 3, 2}, 11);
  t.factors = {random_matrix(4, 2, 12), random_matrix(5, 3, 13),
               random_matrix(3, 2, 14)};
  DenseTensor x = reconstruct(t);
  REQUIRE(x.shape() == std::vector<std::size_t>{4, 5, 3});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t l = 0; l < 3; ++l) {
        double expect = 0.0;
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t c = 0; c < 2; ++c)
              expect += t.core.at({a, b, c}) *
                        t.factors[0](static_cast<Eigen::Index>(i),
                                     static_cast<Eigen::Index>(a)) *
                        t.factors[1](static_cast<Eigen::Index>(j),
                                     static_cast<Eigen::Index>(b)) *
                        t.factors[2](static_cast<Eigen::Index>(l),
                                     static_cast<Eigen::Index>(c));
        CHECK(x.at({i, j, l}) == doctest::Approx(expect).epsilon(1e-12));
      }
}

TEST_CASE("tucker with identity factors returns the core") {
  TuckerTensor t;
  t.core = random_tensor({3, 4, 2}, 21);
  t.factors = {Eigen::MatrixXd::Identity(3, 3), Eigen::MatrixXd::Identity(4, 4),
               Eigen::MatrixXd::Identity(2, 2)};
  CHECK(frobenius_norm(reconstruct(t) - t.core) == 0.0);
}

TEST_CASE("a diagonal tucker core is the same model as a kruskal tensor") {
  KruskalTensor k = random_kruskal({4, 3, 5}, 2, 31);
  TuckerTensor t;
  t.core = DenseTensor({2, 2, 2});
  t.core.at({0, 0, 0}) = k.weights(0);
  t.core.at({1, 1, 1}) = k.weights(1);
  t.factors = k.factors;
  CHECK(frobenius_norm(reconstruct(t) - reconstruct(k)) < 1e-12);
}

TEST_CASE("hosvd factors are orthonormal and full ranks reconstruct exactly") {
  DenseTensor x = random_tensor({4, 5, 3}, 41);
  TuckerTensor t = hosvd(x, {4, 5, 3});
  for (const auto& f : t.factors) {
    Eigen::MatrixXd gram = f.transpose() * f;
    CHECK((gram - Eigen::MatrixXd::Identity(f.cols(), f.cols()))
              .cwiseAbs()
              .maxCoeff() < 1e-10);
  }
  CHECK(fit_error(x, reconstruct(t)) < 1e-10);
}

TEST_CASE("hosvd is exact on an exactly low-multilinear-rank tensor") {
  TuckerTensor planted;
  planted.core = random_tensor({2, 2, 2}, 51);
  planted.factors = {random_orthonormal(5, 2, 52), random_orthonormal(6, 2, 53),
                     random_orthonormal(4, 2, 54)};
  DenseTensor x = reconstruct(planted);
  TuckerTensor t = hosvd(x, {2, 2, 2});
  CHECK(frobenius_norm(x - reconstruct(t)) < 1e-10);
}

TEST_CASE("hosvd residual obeys the discarded-singular-energy bound") {
  // The bound oracle uses full SVDs of the unfoldings, independent of the
  // Gram-matrix route inside hosvd.
  for (unsigned seed = 60; seed < 70; ++seed) {
    DenseTensor x = random_tensor({5, 5, 5}, seed);
    std::vector<std::size_t> ranks{3, 3, 3};
    TuckerTensor t = hosvd(x, ranks);
    double resid2 = std::pow(frobenius_norm(x - reconstruct(t)), 2);
    double bound = 0.0;
    for (std::size_t n = 1; n <= 3; ++n) {
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(unfold(x, n));
      for (Eigen::Index i = static_cast<Eigen::Index>(ranks[n - 1]);
           i < svd.singularValues().size(); ++i)
        bound += std::pow(svd.singularValues()(i), 2);
    }
    CHECK(resid2 <= bound + 1e-12);
  }
}

TEST_CASE("hosvd validates rank arguments") {
  DenseTensor x = random_tensor({3, 3, 3}, 71);
  CHECK_THROWS_AS(hosvd(x, {4, 3, 3}), std::invalid_argument);
  CHECK_THROWS_AS(hosvd(x, {3, 3}), std::invalid_argument);
  CHECK_THROWS_AS(hosvd(x, {0, 3, 3}), std::invalid_argument);
}

TEST_CASE("hooi converges immediately on hosvd-exact input") {
  TuckerTensor planted;
  planted.core = random_tensor({2, 2, 2}, 81);
  planted.factors = {random_orthonormal(5, 2, 82), random_orthonormal(5, 2, 83),
                     random_orthonormal(5, 2, 84)};
  DenseTensor x = reconstruct(planted);
  TuckerFit fit = hooi(x, {2, 2, 2});
  CHECK(fit.converged);
  CHECK(fit.iterations == 1);
  CHECK(frobenius_norm(x - reconstruct(fit.model)) < 1e-10);
}

TEST_CASE("hooi fit is nondecreasing and at least the hosvd fit") {
  DenseTensor x = random_tensor({6, 6, 6}, 91);
  std::vector<std::size_t> ranks{2, 2, 2};
  TuckerTensor base = hosvd(x, ranks);
  TuckerFit fit = hooi(x, ranks);
  double hosvd_fit = 1.0 - fit_error(x, reconstruct(base));
  double hooi_fit = 1.0 - fit_error(x, reconstruct(fit.model));
  CHECK(hooi_fit >= hosvd_fit - 1e-12);
  for (std::size_t i = 1; i < fit.fit_trace.size(); ++i)
    CHECK(fit.fit_trace[i] >= fit.fit_trace[i - 1] - 1e-10);
}

TEST_CASE("hooi with full ranks is exact") {
  DenseTensor x = random_tensor({4, 3, 2}, 101);
  TuckerFit fit = hooi(x, {4, 3, 2});
  CHECK(fit_error(x, reconstruct(fit.model)) < 1e-10);
}

TEST_CASE("cp_als recovers an exact rank-1 tensor") {
  Eigen::VectorXd a(2), b(2), c(2);
  a << 1, 2;
  b << 1, 1;
  c << 1, -1;
  DenseTensor x = outer_rank1({a, b, c});
  CpFit fit = cp_als(x, 1);
  CHECK(fit_error(x, reconstruct(fit.model)) < 1e-8);

  KruskalTensor truth;
  truth.weights = Eigen::VectorXd::Constant(1, a.norm() * b.norm() * c.norm());
  truth.factors = {a.normalized(), b.normalized(), c.normalized()};
  FactorMatch match = congruence_match(fit.model, truth);
  CHECK(match.mean_congruence >= 0.999);
}

TEST_CASE("cp_als recovers well-conditioned planted rank-3 models") {
  for (unsigned seed = 1; seed <= 3; ++seed) {
    KruskalTensor truth = random_kruskal({6, 5, 4}, 3, seed);
    DenseTensor x = reconstruct(truth);
    CpFit fit = cp_als(x, 3);
    FactorMatch match = congruence_match(fit.model, truth);
    CHECK(match.mean_congruence >= 0.99);
    CHECK(fit.fit_trace.back() > 0.999);
  }
}

TEST_CASE("cp_als output is in canonical form") {
  DenseTensor x = random_tensor({5, 4, 3}, 111);
  CpFit fit = cp_als(x, 3, {.max_iter = 50});
  const KruskalTensor& k = fit.model;
  for (Eigen::Index r = 0; r < k.weights.size(); ++r) {
    CHECK(k.weights(r) >= 0.0);
    if (r > 0) CHECK(k.weights(r) <= k.weights(r - 1));
  }
  for (const auto& f : k.factors)
    for (Eigen::Index r = 0; r < f.cols(); ++r)
      CHECK(f.col(r).norm() == doctest::Approx(1.0).epsilon(1e-12));
  // Largest-magnitude entry positive in every mode but the last.
  for (std::size_t n = 0; n + 1 < k.factors.size(); ++n)
    for (Eigen::Index r = 0; r < k.factors[n].cols(); ++r) {
      Eigen::Index imax;
      k.factors[n].col(r).cwiseAbs().maxCoeff(&imax);
      CHECK(k.factors[n](imax, r) > 0.0);
    }
}

TEST_CASE("cp_als fit trace is nondecreasing") {
  DenseTensor x = random_tensor({5, 5, 5}, 121);
  CpFit fit = cp_als(x, 2, {.max_iter = 100});
  for (std::size_t i = 1; i < fit.fit_trace.size(); ++i)
    CHECK(fit.fit_trace[i] >= fit.fit_trace[i - 1] - 1e-10);
}

TEST_CASE("scaling the input scales the weights and nothing else") {
  KruskalTensor truth = random_kruskal({5, 4, 3}, 2, 17);
  DenseTensor x = reconstruct(truth);
  CpFit base = cp_als(x, 2);
  CpFit scaled = cp_als(x * 3.0, 2);
  CHECK((scaled.model.weights - 3.0 * base.model.weights).norm() < 1e-8);
  for (std::size_t n = 0; n < 3; ++n)
    CHECK((scaled.model.factors[n] - base.model.factors[n]).cwiseAbs().maxCoeff() <
          1e-10);
}

TEST_CASE("cp_als input validation") {
  DenseTensor x = random_tensor({3, 3, 3}, 131);
  CHECK_THROWS_AS(cp_als(x, 0), std::invalid_argument);
}

TEST_CASE("cp_nonneg factors a nonnegative product exactly") {
  Eigen::VectorXd a(3), b(4), c(2);
  a << 0.2, 1.0, 0.5;
  b << 1.0, 0.1, 0.7, 0.3;
  c << 0.9, 0.4;
  DenseTensor x = outer_rank1({a, b, c});
  CpFit fit = cp_nonneg(x, 1, {.max_iter = 2000, .tol = 1e-14});
  CHECK(fit_error(x, reconstruct(fit.model)) < 1e-6);
  for (const auto& f : fit.model.factors) CHECK(f.minCoeff() >= 0.0);
}

TEST_CASE("cp_nonneg objective is nonincreasing and rejects negative input") {
  std::mt19937_64 rng(141);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  DenseTensor x({5, 4, 3});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = uni(rng);
  CpFit fit = cp_nonneg(x, 3, {.max_iter = 200});
  for (std::size_t i = 1; i < fit.fit_trace.size(); ++i)
    CHECK(fit.fit_trace[i] >= fit.fit_trace[i - 1] - 1e-10);

  x[0] = -0.5;
  CHECK_THROWS_AS(cp_nonneg(x, 2), std::invalid_argument);
}

TEST_CASE("kruskal rank by exhaustive subsets") {
  CHECK(kruskal_rank(Eigen::MatrixXd::Identity(3, 3)) == 3);

  Eigen::MatrixXd dup(3, 3);
  dup << 1, 1, 0, 0, 0, 1, 2, 2, 0;
  CHECK(kruskal_rank(dup) == 1);

  Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(3, 2);
  CHECK(kruskal_rank(zero) == 0);

  CHECK_THROWS_AS(kruskal_rank(random_matrix(4, 9, 151)), std::invalid_argument);
}

TEST_CASE("kruskal rank of a generic matrix matches a rank oracle") {
  // Oracle: every k-subset checked with a pivoted-LU rank, a different route
  // than the SVD used inside kruskal_rank.
  Eigen::MatrixXd m = random_matrix(4, 3, 161);
  CHECK(kruskal_rank(m) == 3);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
  CHECK(static_cast<std::size_t>(lu.rank()) == 3);

  // A 2x3 matrix cannot have 3 independent columns.
  Eigen::MatrixXd wide = random_matrix(2, 3, 162);
  CHECK(kruskal_rank(wide) == 2);
}

TEST_CASE("uniqueness check compares kruskal-rank sum with 2R+(N-1)") {
  std::vector<Eigen::MatrixXd> generic{random_matrix(3, 2, 171),
                                       random_matrix(4, 2, 172),
                                       random_matrix(5, 2, 173)};
  UniquenessCheck ok = cp_uniqueness_check(generic);
  CHECK(ok.kappa_sum == 6);
  CHECK(ok.threshold == 6);
  CHECK(ok.satisfied);

  Eigen::MatrixXd dup(3, 2);
  dup.col(0) = random_matrix(3, 1, 174);
  dup.col(1) = 2.0 * dup.col(0);
  std::vector<Eigen::MatrixXd> bad{dup, random_matrix(4, 2, 175),
                                   random_matrix(5, 2, 176)};
  UniquenessCheck fail = cp_uniqueness_check(bad);
  CHECK(fail.kappa_sum == 5);
  CHECK_FALSE(fail.satisfied);

  std::vector<Eigen::MatrixXd> rank1{random_matrix(3, 1, 177),
                                     random_matrix(4, 1, 178),
                                     random_matrix(2, 1, 179)};
  CHECK(cp_uniqueness_check(rank1).satisfied);

  std::vector<Eigen::MatrixXd> mismatched{random_matrix(3, 2, 180),
                                          random_matrix(3, 3, 181)};
  CHECK_THROWS_AS(cp_uniqueness_check(mismatched), std::invalid_argument);
}

TEST_CASE("congruence match is invariant to permutation, sign, and scale") {
  KruskalTensor truth = random_kruskal({5, 4, 3}, 3, 191);
  FactorMatch self = congruence_match(truth, truth);
  CHECK(self.mean_congruence == doctest::Approx(1.0).epsilon(1e-12));

  KruskalTensor shuffled = truth;
  std::vector<Eigen::Index> perm{2, 0, 1};
  for (std::size_t n = 0; n < 3; ++n)
    for (Eigen::Index r = 0; r < 3; ++r)
      shuffled.factors[n].col(r) = truth.factors[n].col(perm[static_cast<std::size_t>(r)]);
  for (Eigen::Index r = 0; r < 3; ++r)
    shuffled.weights(r) = 2.0 * truth.weights(perm[static_cast<std::size_t>(r)]);
  // Flip signs in two modes of one column; the component is unchanged.
  shuffled.factors[0].col(1) = -shuffled.factors[0].col(1);
  shuffled.factors[2].col(1) = -shuffled.factors[2].col(1);

  FactorMatch match = congruence_match(shuffled, truth);
  CHECK(match.mean_congruence == doctest::Approx(1.0).epsilon(1e-12));
  for (Eigen::Index r = 0; r < 3; ++r) {
    CHECK(match.permutation[static_cast<std::size_t>(r)] ==
          static_cast<std::size_t>(perm[static_cast<std::size_t>(r)]));
    CHECK(match.scales(r) == doctest::Approx(2.0).epsilon(1e-12));
  }
}

TEST_CASE("independent random models have visibly lower congruence") {
  KruskalTensor a = random_kruskal({6, 6, 6}, 3, 201);
  KruskalTensor b = random_kruskal({6, 6, 6}, 3, 301);
  FactorMatch match = congruence_match(a, b);
  CHECK(match.mean_congruence < 0.9);
}

TEST_CASE("mode singular values expose per-mode rank decay") {
  TuckerTensor planted;
  planted.core = random_tensor({2, 3, 2}, 211);
  planted.factors = {random_orthonormal(6, 2, 212), random_orthonormal(6, 3, 213),
                     random_orthonormal(6, 2, 214)};
  DenseTensor x = reconstruct(planted);
  auto sv = mode_singular_values(x);
  REQUIRE(sv.size() == 3);
  CHECK(sv[0](2) < 1e-10 * sv[0](0));
  CHECK(sv[1](3) < 1e-10 * sv[1](0));
  CHECK(sv[2](2) < 1e-10 * sv[2](0));
}
