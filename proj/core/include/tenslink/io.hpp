#pragma once

#include <stdexcept>
#include <string>

#include "tenslink/decomp.hpp"
#include "tenslink/linked.hpp"
#include "tenslink/tensor.hpp"

namespace tenslink {

/// File-level failure: missing file, bad magic, truncation (the message names
/// the byte offset), shape overflow, or trailing garbage.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense tensor container (".tns"): 8-byte magic "TNSLINK1", u32 little-endian
/// order N, N u32 mode sizes, then the values as little-endian f64 in
/// colexicographic (first-index-fastest) order.
void write_tensor(const std::string& path, const DenseTensor& x);
DenseTensor read_tensor(const std::string& path);

/// Masked tensor container (".mtns"): the ".tns" payload under magic
/// "TNSMASK1", followed by the observation flags bit-packed in colex order,
/// least-significant bit first within each byte.
void write_masked(const std::string& path, const MaskedTensor& x);
MaskedTensor read_masked(const std::string& path);

/// Weighted rank-one model (".kdt"): magic "TNSKRUS1", u32 order N, u32 rank
/// R, N u32 mode sizes, R f64 weights, then each factor matrix column-major
/// as f64.
void write_kruskal(const std::string& path, const KruskalTensor& k);
KruskalTensor read_kruskal(const std::string& path);

/// Core-plus-factors model (".tkt"): magic "TNSTUCK1", u32 order N, N u32
/// mode sizes, N u32 core ranks, the core values colex, then each factor
/// matrix column-major as f64.
void write_tucker(const std::string& path, const TuckerTensor& t);
TuckerTensor read_tucker(const std::string& path);

/// Common/individual split model (".cifa"): magic "TNSCIFA1", a partition
/// header (u8 kind: 0 matrix / 1 tensor, u32 block count, u32 common count),
/// the shared basis, then per block the individual basis plus either the two
/// mixing matrices (matrix kind) or the cores and side factors (tensor kind),
/// each f64 little-endian, and the block residual.
void write_cifa(const std::string& path, const CifaModel& m);
CifaModel read_cifa(const std::string& path);

}  // namespace tenslink
