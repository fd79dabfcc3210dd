#include "tenslink/tensor.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace tenslink {

namespace {

std::size_t checked_product(const std::vector<std::size_t>& shape) {
  if (shape.empty())
    throw std::invalid_argument("tensor shape must have at least one mode");
  std::size_t total = 1;
  for (std::size_t s : shape) {
    if (s == 0) throw std::invalid_argument("tensor mode sizes must be positive");
    if (s > std::numeric_limits<std::size_t>::max() / total)
      throw std::invalid_argument("tensor shape overflows size_t");
    total *= s;
  }
  return total;
}

void check_mode(std::size_t n, std::size_t order) {
  if (n < 1 || n > order)
    throw std::invalid_argument("mode index " + std::to_string(n) +
                                " out of range 1.." + std::to_string(order));
}

}  // namespace

DenseTensor::DenseTensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(checked_product(shape_), 0.0) {}

DenseTensor::DenseTensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != checked_product(shape_))
    throw std::invalid_argument("tensor data length does not match shape");
}

DenseTensor DenseTensor::from_matrix(const Eigen::MatrixXd& m) {
  std::vector<std::size_t> shape{static_cast<std::size_t>(m.rows()),
                                 static_cast<std::size_t>(m.cols())};
  std::vector<double> data(m.data(), m.data() + m.size());
  return DenseTensor(std::move(shape), std::move(data));
}

Eigen::MatrixXd DenseTensor::as_matrix() const {
  if (order() != 2)
    throw std::invalid_argument("as_matrix requires an order-2 tensor");
  return Eigen::Map<const Eigen::MatrixXd>(data_.data(),
                                           static_cast<Eigen::Index>(shape_[0]),
                                           static_cast<Eigen::Index>(shape_[1]));
}

std::size_t DenseTensor::dim(std::size_t n) const {
  check_mode(n, order());
  return shape_[n - 1];
}

std::size_t DenseTensor::flat_index(const std::vector<std::size_t>& index) const {
  if (index.size() != shape_.size())
    throw std::invalid_argument("multi-index order does not match tensor order");
  std::size_t flat = 0;
  std::size_t stride = 1;
  for (std::size_t n = 0; n < shape_.size(); ++n) {
    if (index[n] >= shape_[n])
      throw std::invalid_argument("multi-index out of bounds in mode " +
                                  std::to_string(n + 1));
    flat += index[n] * stride;
    stride *= shape_[n];
  }
  return flat;
}

std::vector<std::size_t> DenseTensor::multi_index(std::size_t flat) const {
  if (flat >= data_.size()) throw std::invalid_argument("flat index out of bounds");
  std::vector<std::size_t> index(shape_.size());
  for (std::size_t n = 0; n < shape_.size(); ++n) {
    index[n] = flat % shape_[n];
    flat /= shape_[n];
  }
  return index;
}

double DenseTensor::at(const std::vector<std::size_t>& index) const {
  return data_[flat_index(index)];
}

double& DenseTensor::at(const std::vector<std::size_t>& index) {
  return data_[flat_index(index)];
}

DenseTensor& DenseTensor::operator+=(const DenseTensor& other) {
  if (!same_shape(other)) throw std::invalid_argument("shape mismatch in tensor sum");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

DenseTensor& DenseTensor::operator-=(const DenseTensor& other) {
  if (!same_shape(other))
    throw std::invalid_argument("shape mismatch in tensor difference");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

DenseTensor& DenseTensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

DenseTensor DenseTensor::operator+(const DenseTensor& other) const {
  DenseTensor out = *this;
  out += other;
  return out;
}

DenseTensor DenseTensor::operator-(const DenseTensor& other) const {
  DenseTensor out = *this;
  out -= other;
  return out;
}

DenseTensor DenseTensor::operator*(double s) const {
  DenseTensor out = *this;
  out *= s;
  return out;
}

ObservationMask::ObservationMask(std::vector<std::size_t> shape, bool value)
    : shape_(std::move(shape)),
      flags_(checked_product(shape_), value ? 1 : 0) {}

ObservationMask::ObservationMask(std::vector<std::size_t> shape,
                                 std::vector<std::uint8_t> flags)
    : shape_(std::move(shape)), flags_(std::move(flags)) {
  if (flags_.size() != checked_product(shape_))
    throw std::invalid_argument("mask length does not match shape");
  for (std::uint8_t& f : flags_) f = f ? 1 : 0;
}

std::size_t ObservationMask::count_observed() const {
  std::size_t c = 0;
  for (std::uint8_t f : flags_) c += f;
  return c;
}

MaskedTensor::MaskedTensor(DenseTensor v, ObservationMask m)
    : values(std::move(v)), mask(std::move(m)) {
  if (values.shape() != mask.shape())
    throw std::invalid_argument("mask shape does not match tensor shape");
  for (std::size_t i = 0; i < values.size(); ++i)
    if (!mask[i]) values[i] = 0.0;
}

double MaskedTensor::observed_fraction() const {
  return static_cast<double>(mask.count_observed()) /
         static_cast<double>(mask.size());
}

Eigen::MatrixXd unfold(const DenseTensor& x, std::size_t n) {
  check_mode(n, x.order());
  const auto& shape = x.shape();
  const std::size_t in = shape[n - 1];
  const std::size_t cols = x.size() / in;
  Eigen::MatrixXd m(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(cols));

  // Stride of mode n in the flat layout, and sizes of the index blocks below
  // and above it.  A flat offset f decomposes as f = lo + i_n*stride + hi*stride*in
  // with lo < stride; the column index is lo + hi*stride.
  std::size_t stride = 1;
  for (std::size_t k = 0; k + 1 < n; ++k) stride *= shape[k];
  const std::size_t above = x.size() / (stride * in);

  for (std::size_t hi = 0; hi < above; ++hi)
    for (std::size_t i = 0; i < in; ++i)
      for (std::size_t lo = 0; lo < stride; ++lo)
        m(static_cast<Eigen::Index>(i),
          static_cast<Eigen::Index>(lo + hi * stride)) =
            x[lo + i * stride + hi * stride * in];
  return m;
}

DenseTensor fold(const Eigen::MatrixXd& m, std::size_t n,
                 const std::vector<std::size_t>& shape) {
  const std::size_t total = checked_product(shape);
  check_mode(n, shape.size());
  const std::size_t in = shape[n - 1];
  if (static_cast<std::size_t>(m.rows()) != in ||
      static_cast<std::size_t>(m.size()) != total)
    throw std::invalid_argument("matrix dimensions do not match fold target shape");

  DenseTensor x(shape);
  std::size_t stride = 1;
  for (std::size_t k = 0; k + 1 < n; ++k) stride *= shape[k];
  const std::size_t above = total / (stride * in);

  for (std::size_t hi = 0; hi < above; ++hi)
    for (std::size_t i = 0; i < in; ++i)
      for (std::size_t lo = 0; lo < stride; ++lo)
        x[lo + i * stride + hi * stride * in] =
            m(static_cast<Eigen::Index>(i),
              static_cast<Eigen::Index>(lo + hi * stride));
  return x;
}

DenseTensor mode_n_product(const DenseTensor& x, const Eigen::MatrixXd& b,
                           std::size_t n) {
  check_mode(n, x.order());
  if (static_cast<std::size_t>(b.cols()) != x.dim(n))
    throw std::invalid_argument("matrix column count does not match mode size");
  Eigen::MatrixXd prod = b * unfold(x, n);
  std::vector<std::size_t> shape = x.shape();
  shape[n - 1] = static_cast<std::size_t>(b.rows());
  return fold(prod, n, shape);
}

Eigen::MatrixXd khatri_rao(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("Khatri-Rao factors must share the column count");
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.cols(); ++r)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      out.block(i * b.rows(), r, b.rows(), 1) = a(i, r) * b.col(r);
  return out;
}

Eigen::MatrixXd kronecker(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

DenseTensor outer_rank1(const std::vector<Eigen::VectorXd>& vectors) {
  if (vectors.empty())
    throw std::invalid_argument("outer product needs at least one vector");
  std::vector<std::size_t> shape;
  shape.reserve(vectors.size());
  for (const auto& v : vectors) {
    if (v.size() == 0) throw std::invalid_argument("outer product vectors must be nonempty");
    shape.push_back(static_cast<std::size_t>(v.size()));
  }
  DenseTensor x(shape);
  std::vector<std::size_t> index(shape.size(), 0);
  for (std::size_t f = 0; f < x.size(); ++f) {
    double v = 1.0;
    for (std::size_t n = 0; n < shape.size(); ++n)
      v *= vectors[n](static_cast<Eigen::Index>(index[n]));
    x[f] = v;
    for (std::size_t n = 0; n < shape.size(); ++n) {
      if (++index[n] < shape[n]) break;
      index[n] = 0;
    }
  }
  return x;
}

double frobenius_norm(const DenseTensor& x) {
  double ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) ss += x[i] * x[i];
  return std::sqrt(ss);
}

DenseTensor stack_blocks(const std::vector<DenseTensor>& blocks) {
  if (blocks.empty()) throw std::invalid_argument("cannot stack zero blocks");
  const auto& base = blocks.front().shape();
  for (const auto& b : blocks)
    if (b.shape() != base)
      throw std::invalid_argument("all stacked blocks must share a shape");
  std::vector<std::size_t> shape = base;
  shape.push_back(blocks.size());
  DenseTensor x(shape);
  const std::size_t block_size = blocks.front().size();
  for (std::size_t k = 0; k < blocks.size(); ++k)
    std::copy(blocks[k].data().begin(), blocks[k].data().end(),
              x.data().begin() + static_cast<std::ptrdiff_t>(k * block_size));
  return x;
}

DenseTensor slice_last_mode(const DenseTensor& x, std::size_t k) {
  if (x.order() < 2)
    throw std::invalid_argument("slicing requires order at least 2");
  const std::size_t last = x.shape().back();
  if (k >= last) throw std::invalid_argument("slice index out of bounds");
  std::vector<std::size_t> shape(x.shape().begin(), x.shape().end() - 1);
  const std::size_t block_size = x.size() / last;
  std::vector<double> data(x.data().begin() + static_cast<std::ptrdiff_t>(k * block_size),
                           x.data().begin() + static_cast<std::ptrdiff_t>((k + 1) * block_size));
  return DenseTensor(std::move(shape), std::move(data));
}

}  // namespace tenslink
