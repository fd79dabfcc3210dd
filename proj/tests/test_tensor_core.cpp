#include <doctest.h>

#include <random>
#include <vector>

#include "tenslink/tensor.hpp"

using namespace tenslink;

namespace {

DenseTensor random_tensor(const std::vector<std::size_t>& shape, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  DenseTensor x(shape);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = dist(rng);
  return x;
}

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

}  // namespace

TEST_CASE("flat storage is colexicographic") {
  DenseTensor x({2, 3, 2});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  CHECK(x.at({0, 0, 0}) == 0.0);
  CHECK(x.at({1, 0, 0}) == 1.0);
  CHECK(x.at({0, 1, 0}) == 2.0);
  CHECK(x.at({1, 2, 0}) == 5.0);
  CHECK(x.at({0, 0, 1}) == 6.0);
  CHECK(x.at({1, 2, 1}) == 11.0);
  for (std::size_t f = 0; f < x.size(); ++f)
    CHECK(x.flat_index(x.multi_index(f)) == f);
}

TEST_CASE("unfoldings of the 2x2x2 tensor with entries 1..8") {
  DenseTensor x({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});

  Eigen::MatrixXd m1 = unfold(x, 1);
  Eigen::MatrixXd e1(2, 4);
  e1 << 1, 3, 5, 7, 2, 4, 6, 8;
  CHECK((m1 - e1).norm() == 0.0);

  Eigen::MatrixXd m2 = unfold(x, 2);
  Eigen::MatrixXd e2(2, 4);
  e2 << 1, 2, 5, 6, 3, 4, 7, 8;
  CHECK((m2 - e2).norm() == 0.0);

  Eigen::MatrixXd m3 = unfold(x, 3);
  Eigen::MatrixXd e3(2, 4);
  e3 << 1, 2, 3, 4, 5, 6, 7, 8;
  CHECK((m3 - e3).norm() == 0.0);
}

TEST_CASE("fold inverts unfold in every mode") {
  const std::vector<std::size_t> shape{3, 4, 2, 5};
  DenseTensor x = random_tensor(shape, 11);
  for (std::size_t n = 1; n <= 4; ++n) {
    DenseTensor back = fold(unfold(x, n), n, shape);
    REQUIRE(back.same_shape(x));
    double diff = frobenius_norm(back - x);
    CHECK(diff == 0.0);
  }
}

TEST_CASE("unfolding columns are mode fibers") {
  DenseTensor x = random_tensor({3, 4, 5}, 7);
  Eigen::MatrixXd m2 = unfold(x, 2);
  // Column index runs colexicographically over (i1, i3).
  for (std::size_t i3 = 0; i3 < 5; ++i3)
    for (std::size_t i1 = 0; i1 < 3; ++i1) {
      Eigen::Index col = static_cast<Eigen::Index>(i1 + 3 * i3);
      for (std::size_t i2 = 0; i2 < 4; ++i2)
        CHECK(m2(static_cast<Eigen::Index>(i2), col) == x.at({i1, i2, i3}));
    }
}

TEST_CASE("mode-n product matches the entrywise contraction") {
  DenseTensor x = random_tensor({3, 4, 2}, 21);
  Eigen::MatrixXd b = random_matrix(5, 4, 22);
  DenseTensor y = mode_n_product(x, b, 2);
  REQUIRE(y.shape() == std::vector<std::size_t>{3, 5, 2});
  for (std::size_t i1 = 0; i1 < 3; ++i1)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t i3 = 0; i3 < 2; ++i3) {
        double expect = 0.0;
        for (std::size_t i2 = 0; i2 < 4; ++i2)
          expect += b(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i2)) *
                    x.at({i1, i2, i3});
        CHECK(y.at({i1, j, i3}) == doctest::Approx(expect).epsilon(1e-13));
      }
}

TEST_CASE("mode products along distinct modes commute") {
  DenseTensor x = random_tensor({4, 3, 5}, 31);
  Eigen::MatrixXd a = random_matrix(2, 4, 32);
  Eigen::MatrixXd c = random_matrix(6, 5, 33);
  DenseTensor ab = mode_n_product(mode_n_product(x, a, 1), c, 3);
  DenseTensor ba = mode_n_product(mode_n_product(x, c, 3), a, 1);
  CHECK(frobenius_norm(ab - ba) < 1e-12);
}

TEST_CASE("successive products along one mode compose") {
  DenseTensor x = random_tensor({4, 3, 2}, 41);
  Eigen::MatrixXd a = random_matrix(5, 3, 42);
  Eigen::MatrixXd b = random_matrix(2, 5, 43);
  DenseTensor lhs = mode_n_product(mode_n_product(x, a, 2), b, 2);
  DenseTensor rhs = mode_n_product(x, Eigen::MatrixXd(b * a), 2);
  CHECK(frobenius_norm(lhs - rhs) < 1e-12);
}

TEST_CASE("kronecker entries follow the block index formula") {
  Eigen::MatrixXd a = random_matrix(3, 2, 51);
  Eigen::MatrixXd b = random_matrix(2, 4, 52);
  Eigen::MatrixXd c = kronecker(a, b);
  REQUIRE(c.rows() == 6);
  REQUIRE(c.cols() == 8);
  for (Eigen::Index i1 = 0; i1 < 3; ++i1)
    for (Eigen::Index j1 = 0; j1 < 2; ++j1)
      for (Eigen::Index i2 = 0; i2 < 2; ++i2)
        for (Eigen::Index j2 = 0; j2 < 4; ++j2)
          CHECK(c(i1 * 2 + i2, j1 * 4 + j2) == a(i1, j1) * b(i2, j2));
}

TEST_CASE("khatri-rao columns are kronecker products of matching columns") {
  Eigen::MatrixXd a = random_matrix(3, 4, 61);
  Eigen::MatrixXd b = random_matrix(5, 4, 62);
  Eigen::MatrixXd kr = khatri_rao(a, b);
  REQUIRE(kr.rows() == 15);
  REQUIRE(kr.cols() == 4);
  for (Eigen::Index r = 0; r < 4; ++r) {
    Eigen::MatrixXd col = kronecker(a.col(r), b.col(r));
    CHECK((kr.col(r) - col.col(0)).norm() == 0.0);
  }
  CHECK_THROWS_AS(khatri_rao(a, random_matrix(5, 3, 63)), std::invalid_argument);
}

TEST_CASE("rank-1 outer product entries multiply coordinates") {
  std::vector<Eigen::VectorXd> vs;
  vs.push_back(Eigen::VectorXd::LinSpaced(3, 1.0, 3.0));
  vs.push_back(Eigen::VectorXd::LinSpaced(2, 4.0, 5.0));
  vs.push_back(Eigen::VectorXd::LinSpaced(4, -1.0, 2.0));
  DenseTensor x = outer_rank1(vs);
  REQUIRE(x.shape() == std::vector<std::size_t>{3, 2, 4});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t k = 0; k < 4; ++k)
        CHECK(x.at({i, j, k}) == vs[0](static_cast<Eigen::Index>(i)) *
                                     vs[1](static_cast<Eigen::Index>(j)) *
                                     vs[2](static_cast<Eigen::Index>(k)));
}

TEST_CASE("sum of rank-1 terms unfolds through the khatri-rao product") {
  const std::size_t I1 = 4, I2 = 3, I3 = 5, R = 3;
  Eigen::MatrixXd b1 = random_matrix(I1, R, 71);
  Eigen::MatrixXd b2 = random_matrix(I2, R, 72);
  Eigen::MatrixXd b3 = random_matrix(I3, R, 73);
  Eigen::VectorXd lambda(R);
  lambda << 2.0, 0.5, 1.5;

  DenseTensor x({I1, I2, I3});
  for (std::size_t r = 0; r < R; ++r) {
    std::vector<Eigen::VectorXd> vs{b1.col(static_cast<Eigen::Index>(r)),
                                    b2.col(static_cast<Eigen::Index>(r)),
                                    b3.col(static_cast<Eigen::Index>(r))};
    x += outer_rank1(vs) * lambda(static_cast<Eigen::Index>(r));
  }

  Eigen::MatrixXd d = lambda.asDiagonal();
  Eigen::MatrixXd m1 = b1 * d * khatri_rao(b3, b2).transpose();
  Eigen::MatrixXd m2 = b2 * d * khatri_rao(b3, b1).transpose();
  Eigen::MatrixXd m3 = b3 * d * khatri_rao(b2, b1).transpose();
  CHECK((unfold(x, 1) - m1).norm() < 1e-12);
  CHECK((unfold(x, 2) - m2).norm() < 1e-12);
  CHECK((unfold(x, 3) - m3).norm() < 1e-12);
}

TEST_CASE("frobenius norm is invariant under unfolding") {
  DenseTensor x = random_tensor({3, 2, 4, 2}, 81);
  double norm = frobenius_norm(x);
  for (std::size_t n = 1; n <= 4; ++n)
    CHECK(unfold(x, n).norm() == doctest::Approx(norm).epsilon(1e-14));
}

TEST_CASE("matrix round trip preserves layout") {
  Eigen::MatrixXd m = random_matrix(4, 6, 91);
  DenseTensor x = DenseTensor::from_matrix(m);
  REQUIRE(x.shape() == std::vector<std::size_t>{4, 6});
  CHECK((x.as_matrix() - m).norm() == 0.0);
  // An order-2 tensor's mode-1 unfolding is the matrix itself.
  CHECK((unfold(x, 1) - m).norm() == 0.0);
  CHECK((unfold(x, 2) - m.transpose()).norm() == 0.0);
}

TEST_CASE("stacking blocks and slicing them back") {
  std::vector<DenseTensor> blocks;
  for (unsigned k = 0; k < 3; ++k) blocks.push_back(random_tensor({2, 3}, 100 + k));
  DenseTensor x = stack_blocks(blocks);
  REQUIRE(x.shape() == std::vector<std::size_t>{2, 3, 3});
  for (std::size_t k = 0; k < 3; ++k)
    CHECK(frobenius_norm(slice_last_mode(x, k) - blocks[k]) == 0.0);
  CHECK_THROWS_AS(slice_last_mode(x, 3), std::invalid_argument);
  blocks.push_back(random_tensor({3, 2}, 104));
  CHECK_THROWS_AS(stack_blocks(blocks), std::invalid_argument);
}

TEST_CASE("masked tensors zero unobserved entries") {
  DenseTensor x({2, 2}, {1, 2, 3, 4});
  ObservationMask mask({2, 2}, std::vector<std::uint8_t>{1, 0, 1, 0});
  MaskedTensor mt(x, mask);
  CHECK(mt.values[0] == 1.0);
  CHECK(mt.values[1] == 0.0);
  CHECK(mt.values[2] == 3.0);
  CHECK(mt.values[3] == 0.0);
  CHECK(mt.count_observed() == 2);
  CHECK(mt.observed_fraction() == doctest::Approx(0.5));
  CHECK_THROWS_AS(MaskedTensor(x, ObservationMask({2, 3})), std::invalid_argument);
}

TEST_CASE("shape and argument validation") {
  CHECK_THROWS_AS(DenseTensor({2, 0, 3}), std::invalid_argument);
  CHECK_THROWS_AS(DenseTensor(std::vector<std::size_t>{}), std::invalid_argument);
  CHECK_THROWS_AS(DenseTensor({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);

  DenseTensor x({2, 3});
  CHECK_THROWS_AS(unfold(x, 0), std::invalid_argument);
  CHECK_THROWS_AS(unfold(x, 3), std::invalid_argument);
  CHECK_THROWS_AS(x.at({2, 0}), std::invalid_argument);
  CHECK_THROWS_AS(mode_n_product(x, Eigen::MatrixXd::Zero(2, 4), 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(fold(Eigen::MatrixXd::Zero(2, 4), 1, {2, 3}),
                  std::invalid_argument);
  CHECK_THROWS_AS(x + DenseTensor({3, 2}), std::invalid_argument);
}
