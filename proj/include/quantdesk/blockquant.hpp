// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "quantdesk/numerics.hpp"
#include "quantdesk/tensor.hpp"

namespace quantdesk {

// Micro-block layout over a 2D tensor. OneD blocks run along one axis
// (axis 1 = within a row, axis 0 = down a column); TwoD covers the matrix
// with tiles. Ragged final blocks are allowed and scaled independently.
struct BlockLayout {
  enum class Kind : uint8_t { OneD, TwoD };
  Kind kind = Kind::OneD;
  int axis = 1;            // OneD only
  int64_t block_len = 16;  // OneD only
  int64_t tile_rows = 16;  // TwoD only
  int64_t tile_cols = 16;  // TwoD only

  static BlockLayout one_d(int axis = 1, int64_t block_len = 16);
  static BlockLayout two_d(int64_t tile_rows = 16, int64_t tile_cols = 16);
};

// Per-block scale selection: direct amax/6, or an MSE sweep over a
// multiplicative range around the amax scale. The sweep's candidate set
// always contains the amax scale (sweep_hi = 1.0 by default), so sweeping can
// never do worse than amax on the swept metric.
struct ScaleSelection {
  enum class Kind : uint8_t { AmaxDirect, MseSweep };
  Kind kind = Kind::AmaxDirect;
  int candidate_count = 32;
  double sweep_lo = 0.5;
  double sweep_hi = 1.0;

  static ScaleSelection amax_direct();
  static ScaleSelection mse_sweep(int candidate_count = 32, double sweep_lo = 0.5,
                                  double sweep_hi = 1.0);
};

// Block-scaled 4-bit container: E2M1 element codes (one per byte, low
// nibble), one E4M3 code per block, and a binary32 global scale.
struct MicroBlockTensor {
  int64_t rows = 0;
  int64_t cols = 0;
  BlockLayout layout;
  std::vector<uint8_t> codes;         // row-major, one element code per byte
  std::vector<uint8_t> block_scales;  // E4M3 code per block, block order
  float global_scale = 1.0f;
  bool zero_tensor = false;

  int64_t block_count() const { return static_cast<int64_t>(block_scales.size()); }
};

struct GlobalScale {
  float value = 1.0f;
  bool zero_tensor = false;
};

// amax(tensor) / (6 * 448), clamped below by the smallest positive binary32
// normal. This guarantees every per-block amax scale is representable in
// E4M3 (amax_block/6 <= amax/6 = 448 * global). All-zero tensors get scale
// 1.0 with the zero flag set.
GlobalScale calibrate_global_scale(const Matrix& tensor);

MicroBlockTensor quantize(const Matrix& tensor, const BlockLayout& layout,
                          const ScaleSelection& selection, const RoundingMode& mode);

Matrix dequantize(const MicroBlockTensor& q);

// Flat element indices of every block induced by (rows, cols, layout), in
// block order: OneD blocks in row-major order of their starting element,
// TwoD tiles in row-major tile order.
std::vector<std::vector<int64_t>> enumerate_blocks(int64_t rows, int64_t cols,
                                                   const BlockLayout& layout);

// Randomized Hadamard transform: per contiguous length-b segment along the
// chosen axis, y = (1/sqrt(b)) * H_b * diag(signs) * x. The transform is
// orthogonal, so rht_invert composes the exact inverse.
struct RhtConfig {
  int64_t block_size = 16;  // power of two
  int axis = 1;
  std::vector<double> signs;  // +/-1, length block_size

  static RhtConfig random(int64_t block_size, PhiloxKey key, uint64_t call_id = 0, int axis = 1);
  static RhtConfig with_signs(std::vector<double> signs, int axis = 1);
};

Matrix rht_apply(const Matrix& m, const RhtConfig& cfg);
Matrix rht_invert(const Matrix& m, const RhtConfig& cfg);

// Fraction of elements that were nonzero in `original` and decode to exactly
// zero in `q`.
double underflow_rate(const Matrix& original, const MicroBlockTensor& q);

// Per-block mean squared reconstruction error, in block order.
std::vector<double> block_mse(const Matrix& original, const MicroBlockTensor& q);

}  // namespace quantdesk
