#include "tenslink/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

namespace tenslink {

namespace {

constexpr char kTensorMagic[9] = "TNSLINK1";
constexpr char kMaskedMagic[9] = "TNSMASK1";
constexpr char kKruskalMagic[9] = "TNSKRUS1";
constexpr char kTuckerMagic[9] = "TNSTUCK1";
constexpr char kCifaMagic[9] = "TNSCIFA1";

class Writer {
 public:
  explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open '" + path + "' for writing");
  }

  void magic(const char* m) { out_.write(m, 8); }

  void u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }

  void u32(std::uint32_t v) {
    char bytes[4];
    for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out_.write(bytes, 4);
  }

  void f64(double v) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
    out_.write(bytes, 8);
  }

  void dim(std::size_t v) {
    if (v > std::numeric_limits<std::uint32_t>::max()) {
      throw IoError("mode size too large for the container format");
    }
    u32(static_cast<std::uint32_t>(v));
  }

  void matrix(const Eigen::MatrixXd& m) {
    dim(static_cast<std::size_t>(m.rows()));
    dim(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) f64(m(r, c));
    }
  }

  void tensor_payload(const DenseTensor& x) {
    dim(x.order());
    for (std::size_t n = 1; n <= x.order(); ++n) dim(x.dim(n));
    for (double v : x.data()) f64(v);
  }

  void close() {
    out_.flush();
    if (!out_) throw IoError("write to '" + path_ + "' failed");
    out_.close();
  }

 private:
  std::string path_;
  std::ofstream out_;
};

class Cursor {
 public:
  Cursor(const std::string& path, std::vector<unsigned char> bytes)
      : path_(path), bytes_(std::move(bytes)) {}

  static Cursor open(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read from '" + path + "' failed");
    return Cursor(path, std::move(bytes));
  }

  void need(std::size_t count, const std::string& what) {
    if (offset_ + count > bytes_.size()) {
      throw IoError("truncated file '" + path_ + "': need " + std::to_string(count) +
                    " byte(s) for " + what + " at byte offset " +
                    std::to_string(offset_) + ", only " +
                    std::to_string(bytes_.size() - offset_) + " remain");
    }
  }

  void magic(const char* expected, const std::string& kind) {
    need(8, "magic");
    if (std::memcmp(bytes_.data() + offset_, expected, 8) != 0) {
      throw IoError("'" + path_ + "' is not a " + kind +
                    " container (magic mismatch)");
    }
    offset_ += 8;
  }

  std::uint8_t u8(const std::string& what) {
    need(1, what);
    return bytes_[offset_++];
  }

  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(bytes_[offset_ + static_cast<std::size_t>(i)])
           << (8 * i);
    }
    offset_ += 4;
    return v;
  }

  double f64(const std::string& what) {
    need(8, what);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
      bits |= static_cast<std::uint64_t>(bytes_[offset_ + static_cast<std::size_t>(i)])
              << (8 * i);
    }
    offset_ += 8;
    return std::bit_cast<double>(bits);
  }

  std::vector<double> f64_block(std::size_t count, const std::string& what) {
    if (count > std::numeric_limits<std::size_t>::max() / 8) {
      throw IoError("'" + path_ + "': " + what + " size overflows");
    }
    need(count * 8, what);
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = f64(what);
    return out;
  }

  Eigen::MatrixXd matrix(const std::string& what) {
    const std::uint32_t rows = u32(what + " row count");
    const std::uint32_t cols = u32(what + " column count");
    const std::size_t count = static_cast<std::size_t>(rows) * cols;
    std::vector<double> data = f64_block(count, what + " values");
    Eigen::MatrixXd m(rows, cols);
    std::size_t i = 0;
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = data[i++];
    }
    return m;
  }

  std::vector<std::size_t> shape(const std::string& what) {
    const std::uint32_t order = u32(what + " order");
    if (order == 0) throw IoError("'" + path_ + "': " + what + " has empty shape");
    std::vector<std::size_t> dims(order);
    for (std::uint32_t n = 0; n < order; ++n) {
      dims[n] = u32(what + " mode size");
      if (dims[n] == 0) {
        throw IoError("'" + path_ + "': " + what + " has a zero mode size");
      }
    }
    return dims;
  }

  std::size_t checked_count(const std::vector<std::size_t>& dims,
                            const std::string& what) {
    std::size_t prod = 1;
    for (std::size_t d : dims) {
      if (prod > std::numeric_limits<std::size_t>::max() / d) {
        throw IoError("'" + path_ + "': " + what + " shape overflows");
      }
      prod *= d;
    }
    return prod;
  }

  DenseTensor tensor_payload(const std::string& what) {
    std::vector<std::size_t> dims = shape(what);
    const std::size_t count = checked_count(dims, what);
    std::vector<double> data = f64_block(count, what + " values");
    return DenseTensor(std::move(dims), std::move(data));
  }

  std::vector<std::uint8_t> mask_bits(std::size_t count) {
    const std::size_t bytes = (count + 7) / 8;
    need(bytes, "observation mask");
    std::vector<std::uint8_t> flags(count);
    for (std::size_t i = 0; i < count; ++i) {
      flags[i] = (bytes_[offset_ + i / 8] >> (i % 8)) & 1;
    }
    offset_ += bytes;
    return flags;
  }

  void finish() {
    if (offset_ != bytes_.size()) {
      throw IoError("'" + path_ + "' has " + std::to_string(bytes_.size() - offset_) +
                    " trailing byte(s) at byte offset " + std::to_string(offset_));
    }
  }

 private:
  std::string path_;
  std::vector<unsigned char> bytes_;
  std::size_t offset_ = 0;
};

void write_mask_bits(Writer& w, const ObservationMask& mask) {
  const std::size_t count = mask.size();
  const std::size_t bytes = (count + 7) / 8;
  for (std::size_t b = 0; b < bytes; ++b) {
    std::uint8_t packed = 0;
    for (std::size_t bit = 0; bit < 8; ++bit) {
      const std::size_t i = b * 8 + bit;
      if (i < count && mask[i]) packed |= static_cast<std::uint8_t>(1u << bit);
    }
    w.u8(packed);
  }
}

}  // namespace

void write_tensor(const std::string& path, const DenseTensor& x) {
  Writer w(path);
  w.magic(kTensorMagic);
  w.tensor_payload(x);
  w.close();
}

DenseTensor read_tensor(const std::string& path) {
  Cursor c = Cursor::open(path);
  c.magic(kTensorMagic, "tensor");
  DenseTensor x = c.tensor_payload("tensor");
  c.finish();
  return x;
}

void write_masked(const std::string& path, const MaskedTensor& x) {
  Writer w(path);
  w.magic(kMaskedMagic);
  w.tensor_payload(x.values);
  write_mask_bits(w, x.mask);
  w.close();
}

MaskedTensor read_masked(const std::string& path) {
  Cursor c = Cursor::open(path);
  c.magic(kMaskedMagic, "masked tensor");
  DenseTensor values = c.tensor_payload("masked tensor");
  std::vector<std::uint8_t> flags = c.mask_bits(values.size());
  c.finish();
  ObservationMask mask(values.shape(), std::move(flags));
  return MaskedTensor(std::move(values), std::move(mask));
}

void write_kruskal(const std::string& path, const KruskalTensor& k) {
  if (k.factors.empty()) throw std::invalid_argument("model has no factors");
  for (const auto& f : k.factors) {
    if (static_cast<std::size_t>(f.cols()) != k.rank()) {
      throw std::invalid_argument("factor column count does not match the rank");
    }
  }
  Writer w(path);
  w.magic(kKruskalMagic);
  w.u32(static_cast<std::uint32_t>(k.order()));
  w.u32(static_cast<std::uint32_t>(k.rank()));
  for (const auto& f : k.factors) w.dim(static_cast<std::size_t>(f.rows()));
  for (Eigen::Index r = 0; r < k.weights.size(); ++r) w.f64(k.weights(r));
  for (const auto& f : k.factors) {
    for (Eigen::Index col = 0; col < f.cols(); ++col) {
      for (Eigen::Index row = 0; row < f.rows(); ++row) w.f64(f(row, col));
    }
  }
  w.close();
}

KruskalTensor read_kruskal(const std::string& path) {
  Cursor c = Cursor::open(path);
  c.magic(kKruskalMagic, "rank-one model");
  const std::uint32_t order = c.u32("order");
  if (order == 0) throw IoError("'" + path + "': model has empty shape");
  const std::uint32_t rank = c.u32("rank");
  std::vector<std::size_t> dims(order);
  for (std::uint32_t n = 0; n < order; ++n) {
    dims[n] = c.u32("mode size");
    if (dims[n] == 0) throw IoError("'" + path + "': zero mode size");
  }
  KruskalTensor k;
  k.weights.resize(rank);
  for (std::uint32_t r = 0; r < rank; ++r) k.weights(r) = c.f64("weight");
  k.factors.reserve(order);
  for (std::uint32_t n = 0; n < order; ++n) {
    std::vector<double> data =
        c.f64_block(dims[n] * rank, "factor values");
    Eigen::MatrixXd f(static_cast<Eigen::Index>(dims[n]),
                      static_cast<Eigen::Index>(rank));
    std::size_t i = 0;
    for (Eigen::Index col = 0; col < f.cols(); ++col) {
      for (Eigen::Index row = 0; row < f.rows(); ++row) f(row, col) = data[i++];
    }
    k.factors.push_back(std::move(f));
  }
  c.finish();
  return k;
}

void write_tucker(const std::string& path, const TuckerTensor& t) {
  if (t.factors.empty()) throw std::invalid_argument("model has no factors");
  if (t.core.order() != t.order()) {
    throw std::invalid_argument("core order does not match the factor count");
  }
  for (std::size_t n = 0; n < t.order(); ++n) {
    if (static_cast<std::size_t>(t.factors[n].cols()) != t.core.dim(n + 1)) {
      throw std::invalid_argument("factor column count does not match the core");
    }
  }
  Writer w(path);
  w.magic(kTuckerMagic);
  w.u32(static_cast<std::uint32_t>(t.order()));
  for (const auto& f : t.factors) w.dim(static_cast<std::size_t>(f.rows()));
  for (std::size_t n = 1; n <= t.core.order(); ++n) w.dim(t.core.dim(n));
  for (double v : t.core.data()) w.f64(v);
  for (const auto& f : t.factors) {
    for (Eigen::Index col = 0; col < f.cols(); ++col) {
      for (Eigen::Index row = 0; row < f.rows(); ++row) w.f64(f(row, col));
    }
  }
  w.close();
}

TuckerTensor read_tucker(const std::string& path) {
  Cursor c = Cursor::open(path);
  c.magic(kTuckerMagic, "core-factor model");
  const std::uint32_t order = c.u32("order");
  if (order == 0) throw IoError("'" + path + "': model has empty shape");
  std::vector<std::size_t> dims(order), ranks(order);
  for (std::uint32_t n = 0; n < order; ++n) {
    dims[n] = c.u32("mode size");
    if (dims[n] == 0) throw IoError("'" + path + "': zero mode size");
  }
  for (std::uint32_t n = 0; n < order; ++n) {
    ranks[n] = c.u32("core rank");
    if (ranks[n] == 0) throw IoError("'" + path + "': zero core rank");
  }
  TuckerTensor t;
  const std::size_t core_count = c.checked_count(ranks, "core");
  t.core = DenseTensor(ranks, c.f64_block(core_count, "core values"));
  t.factors.reserve(order);
  for (std::uint32_t n = 0; n < order; ++n) {
    std::vector<double> data = c.f64_block(dims[n] * ranks[n], "factor values");
    Eigen::MatrixXd f(static_cast<Eigen::Index>(dims[n]),
                      static_cast<Eigen::Index>(ranks[n]));
    std::size_t i = 0;
    for (Eigen::Index col = 0; col < f.cols(); ++col) {
      for (Eigen::Index row = 0; row < f.rows(); ++row) f(row, col) = data[i++];
    }
    t.factors.push_back(std::move(f));
  }
  c.finish();
  return t;
}

void write_cifa(const std::string& path, const CifaModel& m) {
  const std::size_t blocks = m.individual_bases.size();
  if (m.block_residuals.size() != blocks) {
    throw std::invalid_argument("per-block field lengths disagree");
  }
  Writer w(path);
  w.magic(kCifaMagic);
  w.u8(m.tensor_case ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(blocks));
  w.u32(static_cast<std::uint32_t>(m.common_count));
  w.matrix(m.common_basis);
  for (std::size_t k = 0; k < blocks; ++k) {
    w.matrix(m.individual_bases[k]);
    if (!m.tensor_case) {
      w.matrix(m.common_mixing[k]);
      w.matrix(m.individual_mixing[k]);
    } else {
      const bool has_common = m.common_count > 0;
      w.u8(has_common ? 1 : 0);
      if (has_common) w.tensor_payload(m.common_cores[k]);
      const bool has_individual = m.individual_bases[k].cols() > 0;
      w.u8(has_individual ? 1 : 0);
      if (has_individual) w.tensor_payload(m.individual_cores[k]);
      w.u32(static_cast<std::uint32_t>(m.side_factors[k].size()));
      for (const auto& f : m.side_factors[k]) w.matrix(f);
    }
    w.f64(m.block_residuals[k]);
  }
  w.close();
}

CifaModel read_cifa(const std::string& path) {
  Cursor c = Cursor::open(path);
  c.magic(kCifaMagic, "common/individual split model");
  CifaModel m;
  m.tensor_case = c.u8("model kind") != 0;
  const std::uint32_t blocks = c.u32("block count");
  m.common_count = c.u32("common count");
  m.common_basis = c.matrix("common basis");
  m.individual_bases.resize(blocks);
  m.block_residuals.resize(blocks);
  if (!m.tensor_case) {
    m.common_mixing.resize(blocks);
    m.individual_mixing.resize(blocks);
  } else {
    m.common_cores.resize(blocks);
    m.individual_cores.resize(blocks);
    m.side_factors.resize(blocks);
  }
  for (std::uint32_t k = 0; k < blocks; ++k) {
    m.individual_bases[k] = c.matrix("individual basis");
    if (!m.tensor_case) {
      m.common_mixing[k] = c.matrix("common mixing");
      m.individual_mixing[k] = c.matrix("individual mixing");
    } else {
      if (c.u8("common core flag") != 0) {
        m.common_cores[k] = c.tensor_payload("common core");
      }
      if (c.u8("individual core flag") != 0) {
        m.individual_cores[k] = c.tensor_payload("individual core");
      }
      const std::uint32_t sides = c.u32("side factor count");
      m.side_factors[k].reserve(sides);
      for (std::uint32_t s = 0; s < sides; ++s) {
        m.side_factors[k].push_back(c.matrix("side factor"));
      }
    }
    m.block_residuals[k] = c.f64("block residual");
  }
  c.finish();
  return m;
}

}  // namespace tenslink
