// SPDX-License-Identifier: Apache-2.0
#include "quantdesk/blockquant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace quantdesk {

BlockLayout BlockLayout::one_d(int axis, int64_t block_len) {
  if (axis != 0 && axis != 1) throw std::invalid_argument("BlockLayout: axis must be 0 or 1");
  if (block_len < 1) throw std::invalid_argument("BlockLayout: block_len must be >= 1");
  BlockLayout l;
  l.kind = Kind::OneD;
  l.axis = axis;
  l.block_len = block_len;
  return l;
}

BlockLayout BlockLayout::two_d(int64_t tile_rows, int64_t tile_cols) {
  if (tile_rows < 1 || tile_cols < 1)
    throw std::invalid_argument("BlockLayout: tile dimensions must be >= 1");
  BlockLayout l;
  l.kind = Kind::TwoD;
  l.tile_rows = tile_rows;
  l.tile_cols = tile_cols;
  return l;
}

ScaleSelection ScaleSelection::amax_direct() { return ScaleSelection{}; }

ScaleSelection ScaleSelection::mse_sweep(int candidate_count, double sweep_lo, double sweep_hi) {
  if (candidate_count < 2) throw std::invalid_argument("ScaleSelection: need >= 2 candidates");
  if (!(sweep_lo > 0.0) || !(sweep_hi >= sweep_lo))
    throw std::invalid_argument("ScaleSelection: invalid sweep range");
  ScaleSelection s;
  s.kind = Kind::MseSweep;
  s.candidate_count = candidate_count;
  s.sweep_lo = sweep_lo;
  s.sweep_hi = sweep_hi;
  return s;
}

std::vector<std::vector<int64_t>> enumerate_blocks(int64_t rows, int64_t cols,
                                                   const BlockLayout& layout) {
  std::vector<std::vector<int64_t>> blocks;
  if (layout.kind == BlockLayout::Kind::OneD) {
    if (layout.axis == 1) {
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c0 = 0; c0 < cols; c0 += layout.block_len) {
          const int64_t c1 = std::min(cols, c0 + layout.block_len);
          std::vector<int64_t> idx;
          idx.reserve(static_cast<size_t>(c1 - c0));
          for (int64_t c = c0; c < c1; ++c) idx.push_back(r * cols + c);
          blocks.push_back(std::move(idx));
        }
      }
    } else {
      for (int64_t r0 = 0; r0 < rows; r0 += layout.block_len) {
        const int64_t r1 = std::min(rows, r0 + layout.block_len);
        for (int64_t c = 0; c < cols; ++c) {
          std::vector<int64_t> idx;
          idx.reserve(static_cast<size_t>(r1 - r0));
          for (int64_t r = r0; r < r1; ++r) idx.push_back(r * cols + c);
          blocks.push_back(std::move(idx));
        }
      }
    }
  } else {
    for (int64_t r0 = 0; r0 < rows; r0 += layout.tile_rows) {
      const int64_t r1 = std::min(rows, r0 + layout.tile_rows);
      for (int64_t c0 = 0; c0 < cols; c0 += layout.tile_cols) {
        const int64_t c1 = std::min(cols, c0 + layout.tile_cols);
        std::vector<int64_t> idx;
        idx.reserve(static_cast<size_t>((r1 - r0) * (c1 - c0)));
        for (int64_t r = r0; r < r1; ++r)
          for (int64_t c = c0; c < c1; ++c) idx.push_back(r * cols + c);
        blocks.push_back(std::move(idx));
      }
    }
  }
  return blocks;
}

GlobalScale calibrate_global_scale(const Matrix& tensor) {
  if (tensor.size() == 0) throw std::invalid_argument("calibrate_global_scale: empty tensor");
  if (!all_finite(tensor)) throw std::invalid_argument("calibrate_global_scale: non-finite input");
  const double a = amax(tensor);
  if (a == 0.0) return GlobalScale{1.0f, true};
  const double raw = a / (kE2M1Max * kE4M3Max);
  const float clamped =
      std::max(static_cast<float>(raw), std::numeric_limits<float>::min());
  return GlobalScale{clamped, false};
}

namespace {

struct BlockEncoding {
  uint8_t scale_code = 0;
  double mse = 0.0;
};

// Reconstruction MSE of one block under a fixed stored scale, evaluated with
// deterministic RTNE element rounding.
double block_mse_for_scale(const Matrix& t, const std::vector<int64_t>& idx, double eff_scale) {
  double acc = 0.0;
  const RoundingMode rtne = RoundingMode::nearest_even();
  for (int64_t flat : idx) {
    const double x = t.data[static_cast<size_t>(flat)];
    double recon = 0.0;
    if (eff_scale != 0.0) recon = decode_e2m1(encode_e2m1(x / eff_scale, rtne)) * eff_scale;
    acc += (x - recon) * (x - recon);
  }
  return acc / static_cast<double>(idx.size());
}

BlockEncoding choose_block_scale(const Matrix& t, const std::vector<int64_t>& idx,
                                 double global_scale, const ScaleSelection& selection) {
  double block_amax = 0.0;
  for (int64_t flat : idx) block_amax = std::max(block_amax, std::fabs(t.data[static_cast<size_t>(flat)]));
  if (block_amax == 0.0) return BlockEncoding{0, 0.0};

  const double amax_scale = block_amax / kE2M1Max;
  const RoundingMode rtne = RoundingMode::nearest_even();

  if (selection.kind == ScaleSelection::Kind::AmaxDirect) {
    const uint8_t code = encode_e4m3(amax_scale / global_scale, rtne).bits;
    const double eff = decode_e4m3(CodeE4M3{code}) * global_scale;
    return BlockEncoding{code, block_mse_for_scale(t, idx, eff)};
  }

  // Sweep candidate scales; distinct candidates can collapse onto the same
  // E4M3 code, which is fine. Ties keep the first (largest-scale) winner.
  BlockEncoding best;
  bool have_best = false;
  for (int i = 0; i < selection.candidate_count; ++i) {
    const double f =
        (selection.candidate_count == 1)
            ? selection.sweep_hi
            : selection.sweep_hi + (selection.sweep_lo - selection.sweep_hi) *
                                       (static_cast<double>(i) /
                                        static_cast<double>(selection.candidate_count - 1));
    const uint8_t code = encode_e4m3(amax_scale * f / global_scale, rtne).bits;
    const double eff = decode_e4m3(CodeE4M3{code}) * global_scale;
    const double mse = block_mse_for_scale(t, idx, eff);
    if (!have_best || mse < best.mse) {
      best = BlockEncoding{code, mse};
      have_best = true;
    }
  }
  return best;
}

}  // namespace

MicroBlockTensor quantize(const Matrix& tensor, const BlockLayout& layout,
                          const ScaleSelection& selection, const RoundingMode& mode) {
  if (!all_finite(tensor)) throw std::invalid_argument("quantize: non-finite input");
  const GlobalScale global = calibrate_global_scale(tensor);

  MicroBlockTensor q;
  q.rows = tensor.rows;
  q.cols = tensor.cols;
  q.layout = layout;
  q.global_scale = global.value;
  q.zero_tensor = global.zero_tensor;
  q.codes.assign(static_cast<size_t>(tensor.size()), 0);

  const auto blocks = enumerate_blocks(tensor.rows, tensor.cols, layout);
  q.block_scales.reserve(blocks.size());
  for (const auto& idx : blocks) {
    const BlockEncoding enc = choose_block_scale(tensor, idx, global.value, selection);
    q.block_scales.push_back(enc.scale_code);
    const double eff = decode_e4m3(CodeE4M3{enc.scale_code}) * static_cast<double>(global.value);
    if (eff == 0.0) continue;  // zero-scale block: all element codes stay 0
    for (int64_t flat : idx) {
      const double x = tensor.data[static_cast<size_t>(flat)];
      q.codes[static_cast<size_t>(flat)] =
          encode_e2m1(x / eff, mode.at(static_cast<uint64_t>(flat))).bits;
    }
  }
  return q;
}

Matrix dequantize(const MicroBlockTensor& q) {
  Matrix out(q.rows, q.cols);
  const auto blocks = enumerate_blocks(q.rows, q.cols, q.layout);
  if (blocks.size() != q.block_scales.size())
    throw std::invalid_argument("dequantize: scale count does not match layout");
  for (size_t b = 0; b < blocks.size(); ++b) {
    const double eff =
        decode_e4m3(CodeE4M3{q.block_scales[b]}) * static_cast<double>(q.global_scale);
    for (int64_t flat : blocks[b]) {
      const double elem = decode_e2m1(CodeE2M1{q.codes[static_cast<size_t>(flat)]});
      out.data[static_cast<size_t>(flat)] = (eff == 0.0) ? 0.0 : elem * eff;
    }
  }
  return out;
}

RhtConfig RhtConfig::random(int64_t block_size, PhiloxKey key, uint64_t call_id, int axis) {
  RhtConfig cfg;
  cfg.block_size = block_size;
  cfg.axis = axis;
  cfg.signs.resize(static_cast<size_t>(block_size));
  for (int64_t i = 0; i < block_size; ++i) {
    const PhiloxCounter ctr = PhiloxCounter::from_pair(call_id, static_cast<uint64_t>(i));
    cfg.signs[static_cast<size_t>(i)] = (philox4x32(ctr, key).w[0] & 1u) ? -1.0 : 1.0;
  }
  return cfg;
}

RhtConfig RhtConfig::with_signs(std::vector<double> signs, int axis) {
  RhtConfig cfg;
  cfg.block_size = static_cast<int64_t>(signs.size());
  cfg.axis = axis;
  cfg.signs = std::move(signs);
  return cfg;
}

namespace {

void validate_rht(const Matrix& m, const RhtConfig& cfg) {
  const int64_t b = cfg.block_size;
  if (b < 1 || (b & (b - 1)) != 0)
    throw std::invalid_argument("rht: block_size must be a power of two");
  if (static_cast<int64_t>(cfg.signs.size()) != b)
    throw std::invalid_argument("rht: sign diagonal length must equal block_size");
  const int64_t axis_len = (cfg.axis == 1) ? m.cols : m.rows;
  if (axis_len % b != 0)
    throw std::invalid_argument("rht: transformed axis length must be a multiple of block_size");
}

// In-place fast Walsh-Hadamard butterfly (Sylvester ordering).
void fwht(std::vector<double>& buf) {
  const size_t n = buf.size();
  for (size_t h = 1; h < n; h <<= 1) {
    for (size_t i = 0; i < n; i += h << 1) {
      for (size_t j = i; j < i + h; ++j) {
        const double u = buf[j];
        const double v = buf[j + h];
        buf[j] = u + v;
        buf[j + h] = u - v;
      }
    }
  }
}

template <typename LoadFn, typename StoreFn>
void transform_segments(const Matrix& m, const RhtConfig& cfg, bool inverse, LoadFn load,
                        StoreFn store) {
  const int64_t b = cfg.block_size;
  const double inv_sqrt_b = 1.0 / std::sqrt(static_cast<double>(b));
  const int64_t axis_len = (cfg.axis == 1) ? m.cols : m.rows;
  const int64_t other_len = (cfg.axis == 1) ? m.rows : m.cols;
  std::vector<double> buf(static_cast<size_t>(b));
  for (int64_t o = 0; o < other_len; ++o) {
    for (int64_t s0 = 0; s0 < axis_len; s0 += b) {
      for (int64_t i = 0; i < b; ++i) {
        double v = load(o, s0 + i);
        if (!inverse) v *= cfg.signs[static_cast<size_t>(i)];
        buf[static_cast<size_t>(i)] = v;
      }
      fwht(buf);
      for (int64_t i = 0; i < b; ++i) {
        double v = buf[static_cast<size_t>(i)] * inv_sqrt_b;
        if (inverse) v *= cfg.signs[static_cast<size_t>(i)];
        store(o, s0 + i, v);
      }
    }
  }
}

Matrix rht_run(const Matrix& m, const RhtConfig& cfg, bool inverse) {
  validate_rht(m, cfg);
  Matrix out(m.rows, m.cols);
  if (cfg.axis == 1) {
    transform_segments(
        m, cfg, inverse, [&](int64_t o, int64_t s) { return m.at(o, s); },
        [&](int64_t o, int64_t s, double v) { out.at(o, s) = v; });
  } else {
    transform_segments(
        m, cfg, inverse, [&](int64_t o, int64_t s) { return m.at(s, o); },
        [&](int64_t o, int64_t s, double v) { out.at(s, o) = v; });
  }
  return out;
}

}  // namespace

Matrix rht_apply(const Matrix& m, const RhtConfig& cfg) { return rht_run(m, cfg, false); }

Matrix rht_invert(const Matrix& m, const RhtConfig& cfg) { return rht_run(m, cfg, true); }

double underflow_rate(const Matrix& original, const MicroBlockTensor& q) {
  if (original.rows != q.rows || original.cols != q.cols)
    throw std::invalid_argument("underflow_rate: shape mismatch");
  const Matrix recon = dequantize(q);
  int64_t nonzero = 0, underflowed = 0;
  for (int64_t i = 0; i < original.size(); ++i) {
    if (original.data[static_cast<size_t>(i)] != 0.0) {
      ++nonzero;
      if (recon.data[static_cast<size_t>(i)] == 0.0) ++underflowed;
    }
  }
  if (nonzero == 0) return 0.0;
  return static_cast<double>(underflowed) / static_cast<double>(nonzero);
}

std::vector<double> block_mse(const Matrix& original, const MicroBlockTensor& q) {
  if (original.rows != q.rows || original.cols != q.cols)
    throw std::invalid_argument("block_mse: shape mismatch");
  const Matrix recon = dequantize(q);
  const auto blocks = enumerate_blocks(q.rows, q.cols, q.layout);
  std::vector<double> out;
  out.reserve(blocks.size());
  for (const auto& idx : blocks) {
    double acc = 0.0;
    for (int64_t flat : idx) {
      const double d =
          original.data[static_cast<size_t>(flat)] - recon.data[static_cast<size_t>(flat)];
      acc += d * d;
    }
    out.push_back(acc / static_cast<double>(idx.size()));
  }
  return out;
}

}  // namespace quantdesk
