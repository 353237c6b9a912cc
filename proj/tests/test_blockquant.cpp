// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "quantdesk/blockquant.hpp"

using namespace quantdesk;

namespace {

Matrix row_matrix(std::vector<double> v) {
  const int64_t n = static_cast<int64_t>(v.size());
  return Matrix(1, n, std::move(v));
}

Matrix random_matrix(int64_t rows, int64_t cols, PhiloxKey key, double scale = 1.0) {
  Matrix m(rows, cols);
  PhiloxStream rng(key);
  for (double& v : m.data) v = scale * rng.next_normal();
  return m;
}

const RoundingMode kRtne = RoundingMode::nearest_even();

}  // namespace

TEST_CASE("global scale calibration") {
  Matrix t = row_matrix({2688.0, 1.0, -3.0, 0.0});
  const GlobalScale g = calibrate_global_scale(t);
  CHECK(g.value == 1.0f);
  CHECK_FALSE(g.zero_tensor);

  Matrix zeros(3, 5);
  const GlobalScale gz = calibrate_global_scale(zeros);
  CHECK(gz.value == 1.0f);
  CHECK(gz.zero_tensor);

  Matrix t2 = row_matrix({268.8});
  const GlobalScale g2 = calibrate_global_scale(t2);
  CHECK(std::fabs(static_cast<double>(g2.value) - 0.1) < 1e-8);

  Matrix tiny = row_matrix({1e-40});
  CHECK(calibrate_global_scale(tiny).value >= std::numeric_limits<float>::min());

  Matrix bad = row_matrix({1.0, INFINITY});
  CHECK_THROWS_AS(calibrate_global_scale(bad), std::invalid_argument);
  CHECK_THROWS_AS(calibrate_global_scale(Matrix{}), std::invalid_argument);
}

TEST_CASE("uniform max-magnitude block reconstructs to binary32 rounding of the scale chain") {
  // amax = 6 gives global = fl32(1/448); the stored E4M3 scale decodes to
  // 448, so reconstruction error is exactly the binary32 rounding of the
  // global scale (about 6e-8 relative), not bit-exact.
  Matrix t(1, 16);
  for (double& v : t.data) v = 6.0;
  const MicroBlockTensor q = quantize(t, BlockLayout::one_d(1), {}, kRtne);
  CHECK(q.block_count() == 1);
  CHECK(decode_e4m3(CodeE4M3{q.block_scales[0]}) == 448.0);
  for (uint8_t c : q.codes) CHECK(decode_e2m1(CodeE2M1{c}) == 6.0);
  const Matrix r = dequantize(q);
  for (double v : r.data) CHECK(std::fabs(v - 6.0) <= 6.0 * 0x1.0p-22);
}

TEST_CASE("exact closure on values representable under the induced scales") {
  // Two blocks: amax 2688 pins the global scale at exactly 1.0, so block
  // scales 448 and 1 are exact E4M3 codes and every element below is
  // code * scale exactly.
  Matrix t(2, 16);
  const std::vector<double> codes = {0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0};
  for (int64_t j = 0; j < 16; ++j) {
    t.at(0, j) = codes[static_cast<size_t>(j % 8)] * 448.0 * (j < 8 ? 1.0 : -1.0);
    t.at(1, j) = codes[static_cast<size_t>(j % 8)] * (j < 8 ? 1.0 : -1.0);
  }
  t.at(0, 7) = 2688.0;
  const MicroBlockTensor q = quantize(t, BlockLayout::one_d(1), {}, kRtne);
  CHECK(q.global_scale == 1.0f);
  const Matrix r = dequantize(q);
  for (int64_t i = 0; i < t.size(); ++i)
    CHECK(r.data[static_cast<size_t>(i)] == t.data[static_cast<size_t>(i)]);
}

TEST_CASE("all-zero tensor and all-zero blocks reconstruct exactly to zero") {
  Matrix t(2, 16);
  for (int64_t j = 0; j < 16; ++j) t.at(0, j) = (j % 3 == 0) ? 2.5 : -1.25;
  const MicroBlockTensor q = quantize(t, BlockLayout::one_d(1), {}, kRtne);
  const Matrix r = dequantize(q);
  for (int64_t j = 0; j < 16; ++j) CHECK(r.at(1, j) == 0.0);
  CHECK(underflow_rate(t, q) == 0.0);

  Matrix zeros(4, 16);
  const MicroBlockTensor qz = quantize(zeros, BlockLayout::one_d(1), {}, kRtne);
  CHECK(qz.zero_tensor);
  const Matrix rz = dequantize(qz);
  for (double v : rz.data) CHECK(v == 0.0);
}

TEST_CASE("small elements against a dominant one underflow to zero") {
  std::vector<double> v(16, 0.01);
  v[0] = 6.0;
  Matrix t = row_matrix(v);
  const MicroBlockTensor q = quantize(t, BlockLayout::one_d(1), {}, kRtne);
  const Matrix r = dequantize(q);
  CHECK(std::fabs(r.at(0, 0) - 6.0) < 1e-6);
  for (int64_t j = 1; j < 16; ++j) CHECK(r.at(0, j) == 0.0);
  CHECK(underflow_rate(t, q) == doctest::Approx(15.0 / 16.0));
}

TEST_CASE("per-element RTNE error is bounded by half the local code gap") {
  const Matrix t = random_matrix(8, 32, PhiloxKey{21, 0});
  const MicroBlockTensor q = quantize(t, BlockLayout::one_d(1), {}, kRtne);
  const Matrix r = dequantize(q);
  const auto blocks = enumerate_blocks(t.rows, t.cols, q.layout);
  const std::vector<double> grid = {0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0};
  for (size_t b = 0; b < blocks.size(); ++b) {
    const double eff =
        decode_e4m3(CodeE4M3{q.block_scales[b]}) * static_cast<double>(q.global_scale);
    for (int64_t flat : blocks[b]) {
      const double x = t.data[static_cast<size_t>(flat)];
      const double err = std::fabs(x - r.data[static_cast<size_t>(flat)]);
      const double a = std::fabs(x) / eff;
      double gap = 2.0;  // top gap (4 -> 6)
      for (size_t g = 0; g + 1 < grid.size(); ++g)
        if (grid[g] <= a && a <= grid[g + 1]) gap = grid[g + 1] - grid[g];
      CHECK(err <= 0.5 * gap * eff * (1.0 + 1e-12));
    }
  }
}

TEST_CASE("scale dominance: the block max reconstructs within E4M3 scale rounding") {
  const Matrix t = random_matrix(4, 64, PhiloxKey{22, 0}, 3.0);
  const MicroBlockTensor q = quantize(t, BlockLayout::one_d(1), {}, kRtne);
  const Matrix r = dequantize(q);
  const auto blocks = enumerate_blocks(t.rows, t.cols, q.layout);
  for (const auto& idx : blocks) {
    int64_t arg = idx[0];
    for (int64_t flat : idx)
      if (std::fabs(t.data[static_cast<size_t>(flat)]) >
          std::fabs(t.data[static_cast<size_t>(arg)]))
        arg = flat;
    const double x = t.data[static_cast<size_t>(arg)];
    if (x == 0.0) continue;
    const double rel = std::fabs(r.data[static_cast<size_t>(arg)] - x) / std::fabs(x);
    CHECK(rel <= 0x1.0p-4 * (1.0 + 1e-6));
  }
}

TEST_CASE("mse sweep never loses to direct amax scaling") {
  for (uint32_t seed = 0; seed < 200; ++seed) {
    Matrix t = random_matrix(1, 16, PhiloxKey{seed, 777});
    // occasional outlier blocks, where sweeping actually matters
    if (seed % 3 == 0) t.at(0, static_cast<int64_t>(seed % 16)) *= 50.0;
    const MicroBlockTensor qa =
        quantize(t, BlockLayout::one_d(1), ScaleSelection::amax_direct(), kRtne);
    const MicroBlockTensor qm =
        quantize(t, BlockLayout::one_d(1), ScaleSelection::mse_sweep(), kRtne);
    const double ma = block_mse(t, qa)[0];
    const double mm = block_mse(t, qm)[0];
    CHECK(mm <= ma + 1e-18);
  }
}

TEST_CASE("layout neutrality on constant data") {
  Matrix t(32, 32);
  for (double& v : t.data) v = 1.7;
  const Matrix r1 = dequantize(quantize(t, BlockLayout::one_d(1), {}, kRtne));
  const Matrix r2 = dequantize(quantize(t, BlockLayout::two_d(), {}, kRtne));
  for (int64_t i = 0; i < t.size(); ++i)
    CHECK(r1.data[static_cast<size_t>(i)] == r2.data[static_cast<size_t>(i)]);
}

TEST_CASE("ragged final blocks are scaled independently") {
  Matrix t(3, 20);
  PhiloxStream rng(PhiloxKey{5, 5});
  for (double& v : t.data) v = rng.next_normal();
  const BlockLayout layout = BlockLayout::one_d(1);
  const auto blocks = enumerate_blocks(t.rows, t.cols, layout);
  CHECK(blocks.size() == 6);  // per row: one 16-block + one 4-block
  CHECK(blocks[1].size() == 4);
  const MicroBlockTensor q = quantize(t, layout, {}, kRtne);
  CHECK(q.block_count() == 6);
  CHECK(dequantize(q).same_shape(t));

  const auto tiles = enumerate_blocks(33, 20, BlockLayout::two_d(16, 16));
  CHECK(tiles.size() == 6);  // 3 x 2 tile grid with ragged edges
}

TEST_CASE("2D tiles spanning high and low magnitude channels underflow more than 1D") {
  PhiloxStream rng(PhiloxKey{9, 1});
  Matrix t(32, 32);
  const double ratio = 32.0;
  for (int64_t c = 0; c < t.cols; ++c) {
    const double mag = (c % 2 == 0) ? 1.0 : 1.0 / ratio;
    for (int64_t r = 0; r < t.rows; ++r) {
      const double u = 0.3 + 0.7 * rng.next_unit();
      t.at(r, c) = (rng.next_unit() < 0.5 ? -1.0 : 1.0) * u * mag;
    }
  }
  const double u1 = underflow_rate(t, quantize(t, BlockLayout::one_d(0), {}, kRtne));
  const double u2 = underflow_rate(t, quantize(t, BlockLayout::two_d(), {}, kRtne));
  CHECK(u1 == 0.0);
  CHECK(u2 > 0.0);
}

TEST_CASE("no underflow when every block element clears the zero threshold") {
  PhiloxStream rng(PhiloxKey{10, 2});
  Matrix t(8, 16);
  for (double& v : t.data) {
    const double u = 0.3 + 0.7 * rng.next_unit();  // magnitudes within 3.3x of block amax
    v = (rng.next_unit() < 0.5 ? -1.0 : 1.0) * u;
  }
  const MicroBlockTensor q = quantize(t, BlockLayout::one_d(1), {}, kRtne);
  CHECK(underflow_rate(t, q) == 0.0);
}

TEST_CASE("stochastic quantization is bit-identical across runs") {
  const Matrix t = random_matrix(16, 32, PhiloxKey{31, 4});
  const RoundingMode sr = RoundingMode::stochastic(PhiloxKey{1, 2}, /*call_id=*/9);
  const MicroBlockTensor a = quantize(t, BlockLayout::one_d(1), {}, sr);
  const MicroBlockTensor b = quantize(t, BlockLayout::one_d(1), {}, sr);
  CHECK(a.codes == b.codes);
  CHECK(a.block_scales == b.block_scales);
  CHECK(a.global_scale == b.global_scale);
}

TEST_CASE("rht first Hadamard column and exact inversion") {
  const RhtConfig cfg = RhtConfig::with_signs({1.0, 1.0}, /*axis=*/1);
  const Matrix m = row_matrix({1.0, 0.0});
  const Matrix y = rht_apply(m, cfg);
  CHECK(y.at(0, 0) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
  CHECK(y.at(0, 1) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));

  const Matrix big = random_matrix(8, 64, PhiloxKey{41, 0});
  for (int axis : {0, 1}) {
    const RhtConfig rcfg = RhtConfig::random(8, PhiloxKey{3, 9}, /*call_id=*/5, axis);
    const Matrix fwd = rht_apply(big, rcfg);
    const Matrix back = rht_invert(fwd, rcfg);
    for (int64_t i = 0; i < big.size(); ++i)
      CHECK(back.data[static_cast<size_t>(i)] ==
            doctest::Approx(big.data[static_cast<size_t>(i)]).epsilon(1e-12));
    CHECK(frobenius_norm(fwd) == doctest::Approx(frobenius_norm(big)).epsilon(1e-9));
  }
}

TEST_CASE("rht orthogonality at several block sizes") {
  for (int64_t b : {2, 16, 64, 128}) {
    const RhtConfig cfg = RhtConfig::random(b, PhiloxKey{8, 8}, static_cast<uint64_t>(b), 1);
    Matrix eye(b, b);
    for (int64_t i = 0; i < b; ++i) eye.at(i, i) = 1.0;
    // rows of T = rht(eye) are images of basis vectors; T T^T must be I
    const Matrix t = rht_apply(eye, cfg);
    const Matrix gram = matmul_bt(t, t);
    for (int64_t i = 0; i < b; ++i)
      for (int64_t j = 0; j < b; ++j)
        CHECK(std::fabs(gram.at(i, j) - (i == j ? 1.0 : 0.0)) < 1e-12);
  }
}

TEST_CASE("rht preserves dot products under a shared sign diagonal") {
  const RhtConfig cfg = RhtConfig::random(32, PhiloxKey{14, 3}, 0, 1);
  const Matrix a = random_matrix(1, 32, PhiloxKey{15, 0});
  const Matrix b = random_matrix(1, 32, PhiloxKey{16, 0});
  double dot = 0.0, dot_t = 0.0;
  const Matrix at = rht_apply(a, cfg), bt = rht_apply(b, cfg);
  for (int64_t i = 0; i < 32; ++i) {
    dot += a.at(0, i) * b.at(0, i);
    dot_t += at.at(0, i) * bt.at(0, i);
  }
  CHECK(dot_t == doctest::Approx(dot).epsilon(1e-9));
}

TEST_CASE("rht rejects incompatible axis lengths and bad configs") {
  const Matrix m = random_matrix(4, 12, PhiloxKey{1, 1});
  CHECK_THROWS_AS(rht_apply(m, RhtConfig::random(8, PhiloxKey{}, 0, 1)), std::invalid_argument);
  CHECK_THROWS_AS(rht_apply(m, RhtConfig::with_signs({1.0, -1.0, 1.0}, 1)), std::invalid_argument);
}

TEST_CASE("container audit quantities") {
  const Matrix t = random_matrix(16, 48, PhiloxKey{77, 0});
  for (const BlockLayout& layout :
       {BlockLayout::one_d(1), BlockLayout::one_d(0), BlockLayout::two_d(16, 16)}) {
    const MicroBlockTensor q = quantize(t, layout, {}, kRtne);
    CHECK(q.block_count() ==
          static_cast<int64_t>(enumerate_blocks(t.rows, t.cols, layout).size()));
    const Matrix r = dequantize(q);
    CHECK(r.same_shape(t));
    // every decoded element obeys the 6 * scale * global bound
    const auto blocks = enumerate_blocks(t.rows, t.cols, layout);
    for (size_t b = 0; b < blocks.size(); ++b) {
      const double eff =
          decode_e4m3(CodeE4M3{q.block_scales[b]}) * static_cast<double>(q.global_scale);
      for (int64_t flat : blocks[b])
        CHECK(std::fabs(r.data[static_cast<size_t>(flat)]) <= 6.0 * eff);
    }
  }
}

TEST_CASE("non-finite elements are rejected") {
  Matrix t = row_matrix({1.0, std::nan("")});
  CHECK_THROWS_AS(quantize(t, BlockLayout::one_d(1), {}, kRtne), std::invalid_argument);
}
