#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace tenslink {

/// Dense N-way real tensor with colexicographic flat storage (first index
/// varies fastest).  All scalars are double.  Mode indices are 1-based in
/// every public signature, matching the usual multilinear-algebra notation;
/// element accessors take 0-based multi-indices.
class DenseTensor {
public:
  DenseTensor() = default;

  /// Zero tensor of the given shape.  Every mode size must be positive.
  explicit DenseTensor(std::vector<std::size_t> shape);

  /// Tensor from flat colexicographic data; data.size() must equal the
  /// product of the mode sizes.
  DenseTensor(std::vector<std::size_t> shape, std::vector<double> data);

  /// Order-2 tensor sharing the layout of an Eigen (column-major) matrix.
  static DenseTensor from_matrix(const Eigen::MatrixXd& m);

  /// View of an order-2 tensor as a matrix.
  Eigen::MatrixXd as_matrix() const;

  std::size_t order() const { return shape_.size(); }
  const std::vector<std::size_t>& shape() const { return shape_; }

  /// Size of mode n (1-based).
  std::size_t dim(std::size_t n) const;

  std::size_t size() const { return data_.size(); }

  double operator[](std::size_t flat) const { return data_[flat]; }
  double& operator[](std::size_t flat) { return data_[flat]; }

  /// Element access by 0-based multi-index.
  double at(const std::vector<std::size_t>& index) const;
  double& at(const std::vector<std::size_t>& index);

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  /// Flat colexicographic offset of a 0-based multi-index.
  std::size_t flat_index(const std::vector<std::size_t>& index) const;

  /// Inverse of flat_index.
  std::vector<std::size_t> multi_index(std::size_t flat) const;

  bool same_shape(const DenseTensor& other) const { return shape_ == other.shape_; }

  DenseTensor& operator+=(const DenseTensor& other);
  DenseTensor& operator-=(const DenseTensor& other);
  DenseTensor& operator*=(double s);
  DenseTensor operator+(const DenseTensor& other) const;
  DenseTensor operator-(const DenseTensor& other) const;
  DenseTensor operator*(double s) const;

private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Boolean observation pattern paired with a tensor of the same shape.
class ObservationMask {
public:
  ObservationMask() = default;
  explicit ObservationMask(std::vector<std::size_t> shape, bool value = false);
  ObservationMask(std::vector<std::size_t> shape, std::vector<std::uint8_t> flags);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return flags_.size(); }
  bool operator[](std::size_t flat) const { return flags_[flat] != 0; }
  void set(std::size_t flat, bool value) { flags_[flat] = value ? 1 : 0; }
  const std::vector<std::uint8_t>& flags() const { return flags_; }

  std::size_t count_observed() const;

private:
  std::vector<std::size_t> shape_;
  std::vector<std::uint8_t> flags_;
};

/// Tensor with an observation mask; unobserved entries hold 0 by convention
/// and are never read as data.
struct MaskedTensor {
  DenseTensor values;
  ObservationMask mask;

  MaskedTensor() = default;
  MaskedTensor(DenseTensor v, ObservationMask m);

  std::size_t count_observed() const { return mask.count_observed(); }
  double observed_fraction() const;
};

/// Mode-n matricization: an I_n x (prod of the other mode sizes) matrix whose
/// columns are the mode-n fibers in colexicographic order of the remaining
/// indices.  n is 1-based.
Eigen::MatrixXd unfold(const DenseTensor& x, std::size_t n);

/// Inverse of unfold for the given mode and target shape.
DenseTensor fold(const Eigen::MatrixXd& m, std::size_t n,
                 const std::vector<std::size_t>& shape);

/// Mode-n product x ×_n b for b of size J x I_n; satisfies
/// unfold(result, n) = b * unfold(x, n).
DenseTensor mode_n_product(const DenseTensor& x, const Eigen::MatrixXd& b,
                           std::size_t n);

/// Column-wise Kronecker product of two matrices with equal column counts.
Eigen::MatrixXd khatri_rao(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Kronecker product; entry ((i1-1)*I2+i2, (j1-1)*J2+j2) = a(i1,j1)*b(i2,j2)
/// with 1-based indices.
Eigen::MatrixXd kronecker(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Rank-1 tensor b1 ∘ b2 ∘ ... ∘ bN with entry (i1..iN) = prod_n bn(in).
DenseTensor outer_rank1(const std::vector<Eigen::VectorXd>& vectors);

double frobenius_norm(const DenseTensor& x);

/// Stack same-shape blocks along a new trailing mode; slice k of the result
/// equals block k.
DenseTensor stack_blocks(const std::vector<DenseTensor>& blocks);

/// Extract slice k (0-based) of the trailing mode.
DenseTensor slice_last_mode(const DenseTensor& x, std::size_t k);

}  // namespace tenslink
