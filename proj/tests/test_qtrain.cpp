// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "quantdesk/qtrain.hpp"

using namespace quantdesk;

namespace {

Matrix random_matrix(int64_t rows, int64_t cols, PhiloxKey key, double scale = 1.0) {
  Matrix m(rows, cols);
  PhiloxStream rng(key);
  for (double& v : m.data) v = scale * rng.next_normal();
  return m;
}

bool equal(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) return false;
  for (int64_t i = 0; i < a.size(); ++i)
    if (a.data[static_cast<size_t>(i)] != b.data[static_cast<size_t>(i)]) return false;
  return true;
}

bool row_zero(const Matrix& m, int64_t r) {
  for (int64_t c = 0; c < m.cols; ++c)
    if (m.at(r, c) != 0.0) return false;
  return true;
}

}  // namespace

TEST_CASE("all-exact recipe reproduces the reference step") {
  const Matrix x = random_matrix(32, 16, PhiloxKey{1, 0});
  const Matrix w = random_matrix(8, 16, PhiloxKey{2, 0});
  const Matrix g = random_matrix(32, 8, PhiloxKey{3, 0});
  const LinearStepResult res = linear_step(x, w, g, PassRecipe::all_exact());
  CHECK(equal(res.y, res.y_exact));
  CHECK(equal(res.dx, res.dx_exact));
  CHECK(equal(res.dw, res.dw_exact));
  CHECK(res.diagnostics.new_zero_fraction_dw == 0.0);
  for (const auto& [op, rate] : res.diagnostics.underflow_by_operand) {
    INFO(op);
    CHECK(rate == 0.0);
  }
  CHECK(res.diagnostics.w_output_channel_norms.size() == 8);
  CHECK(res.diagnostics.w_input_channel_norms.size() == 16);
}

TEST_CASE("shape and finiteness validation") {
  const Matrix x = random_matrix(8, 4, PhiloxKey{4, 0});
  const Matrix w = random_matrix(6, 4, PhiloxKey{5, 0});
  const Matrix g_bad = random_matrix(8, 5, PhiloxKey{6, 0});
  CHECK_THROWS_AS(linear_step(x, w, g_bad, PassRecipe::all_exact()), std::invalid_argument);
  Matrix g(8, 6);
  g.at(0, 0) = INFINITY;
  CHECK_THROWS_AS(linear_step(x, w, g, PassRecipe::all_exact()), std::invalid_argument);
}

TEST_CASE("attenuated output channel: weight underflow in dgrad, dw zeros in that row") {
  // Output channel 5 attenuated in both the weights and the upstream
  // gradient, mirroring the aligned low-norm channel pattern. The 2D weight
  // tiles mix the tiny row with full-magnitude rows, and the per-channel
  // gradient blocks underflow at the E4M3 block-scale level.
  Matrix x = random_matrix(64, 32, PhiloxKey{7, 0});
  Matrix w = random_matrix(32, 32, PhiloxKey{8, 0});
  Matrix g = random_matrix(64, 32, PhiloxKey{9, 0});
  const int64_t ch = 5;
  for (int64_t c = 0; c < w.cols; ++c) w.at(ch, c) *= 1e-6;
  for (int64_t r = 0; r < g.rows; ++r) g.at(r, ch) *= 1e-6;

  const PassRecipe recipe = PassRecipe::default_nvfp4(PhiloxKey{100, 200});
  const LinearStepResult res = linear_step(x, w, g, recipe);

  CHECK(res.diagnostics.underflow_by_operand.at("dgrad.w") > 0.0);
  CHECK(res.diagnostics.zero_fraction_dw > 0.0);
  CHECK(res.diagnostics.new_zero_fraction_dw > 0.0);
  CHECK_FALSE(res.diagnostics.degenerate_dw);

  CHECK(row_zero(res.dw, ch));
  CHECK_FALSE(row_zero(res.dw_exact, ch));
  int64_t other_zero_rows = 0;
  for (int64_t r = 0; r < res.dw.rows; ++r)
    if (r != ch && row_zero(res.dw, r)) ++other_zero_rows;
  CHECK(other_zero_rows == 0);  // the zeros concentrate in the attenuated channel
}

TEST_CASE("rht strictly reduces wgrad-operand underflow on spiky inputs") {
  // One outlier per 16-token block in every column of the wgrad x operand.
  Matrix x(64, 32);
  PhiloxStream rng(PhiloxKey{10, 0});
  for (int64_t r = 0; r < x.rows; ++r)
    for (int64_t c = 0; c < x.cols; ++c)
      x.at(r, c) = (rng.next_unit() < 0.5 ? -1.0 : 1.0) * (0.5 + 0.5 * rng.next_unit());
  for (int64_t b = 0; b < 4; ++b)
    for (int64_t c = 0; c < x.cols; ++c) x.at(16 * b + (c % 16), c) *= 100.0;
  const Matrix w = random_matrix(16, 32, PhiloxKey{11, 0});
  const Matrix g = random_matrix(64, 16, PhiloxKey{12, 0});

  PassRecipe with_rht = PassRecipe::default_nvfp4(PhiloxKey{13, 0});
  PassRecipe no_rht = with_rht;
  no_rht.wgrad_rht = false;
  const double u_with =
      linear_step(x, w, g, with_rht).diagnostics.underflow_by_operand.at("wgrad.x");
  const double u_without =
      linear_step(x, w, g, no_rht).diagnostics.underflow_by_operand.at("wgrad.x");
  CHECK(u_without > 0.0);
  CHECK(u_with < u_without);
}

TEST_CASE("monotone precision: finer operand formats never increase underflow") {
  Matrix x(64, 32);
  PhiloxStream rng(PhiloxKey{14, 0});
  for (double& v : x.data)
    v = (rng.next_unit() < 0.5 ? -1.0 : 1.0) * (0.01 + rng.next_unit());
  for (int64_t c = 0; c < x.cols; ++c) x.at(static_cast<int64_t>(c) % 64, c) *= 60.0;
  const Matrix w = random_matrix(16, 32, PhiloxKey{15, 0});
  const Matrix g = random_matrix(64, 16, PhiloxKey{16, 0});

  auto underflow_for = [&](OperandFormat fmt) {
    PassRecipe r = PassRecipe::all_exact();
    r.wgrad_x = fmt;
    return linear_step(x, w, g, r).diagnostics.underflow_by_operand.at("wgrad.x");
  };
  const double u4 = underflow_for(OperandFormat::nvfp4(BlockLayout::one_d(0)));
  const double u8 = underflow_for(OperandFormat::mxfp8(0));
  const double u16 = underflow_for(OperandFormat::binary16());
  const double ue = underflow_for(OperandFormat::exact());
  CHECK(u4 >= u8);
  CHECK(u8 >= u16);
  CHECK(u16 >= ue);
  CHECK(ue == 0.0);
  CHECK(u4 > 0.0);
}

TEST_CASE("stochastic rounding keeps the mean weight gradient unbiased") {
  const Matrix x = random_matrix(32, 16, PhiloxKey{17, 0});
  const Matrix w = random_matrix(8, 16, PhiloxKey{18, 0});
  // Pin every 16-token gradient block's amax at 3.0 so the stored block
  // scale never rounds the max element past the saturation point; inside the
  // blocks SR is exactly unbiased.
  Matrix g(32, 8);
  {
    PhiloxStream rng(PhiloxKey{19, 0});
    for (double& v : g.data) v = 1.8 * (rng.next_unit() - 0.5);
    for (int64_t b = 0; b < 2; ++b)
      for (int64_t c = 0; c < g.cols; ++c) g.at(16 * b + (c * 3) % 16, c) = 3.0;
  }

  auto recipe_for = [&](bool sr, uint64_t step) {
    PassRecipe r = PassRecipe::all_exact();
    r.wgrad_g = OperandFormat::nvfp4(BlockLayout::one_d(0), {}, sr);
    r.key = PhiloxKey{500, 600};
    r.step_id = step;
    return r;
  };

  const Matrix dw_exact = linear_step(x, w, g, PassRecipe::all_exact()).dw_exact;

  // RTNE: deterministic and biased; every trial gives the same dw.
  const Matrix dw_rtne = linear_step(x, w, g, recipe_for(false, 0)).dw;
  CHECK(equal(dw_rtne, linear_step(x, w, g, recipe_for(false, 1)).dw));
  double rtne_bias = 0.0;
  for (int64_t i = 0; i < dw_rtne.size(); ++i)
    rtne_bias = std::max(rtne_bias, std::fabs(dw_rtne.data[static_cast<size_t>(i)] -
                                              dw_exact.data[static_cast<size_t>(i)]));
  CHECK(rtne_bias > 0.0);

  // SR: the ensemble mean approaches the exact dw within 3 sigma.
  const int trials = 400;
  Matrix mean(dw_exact.rows, dw_exact.cols);
  Matrix m2(dw_exact.rows, dw_exact.cols);
  for (int t = 0; t < trials; ++t) {
    const Matrix dw = linear_step(x, w, g, recipe_for(true, static_cast<uint64_t>(t))).dw;
    for (int64_t i = 0; i < dw.size(); ++i) {
      const double v = dw.data[static_cast<size_t>(i)];
      mean.data[static_cast<size_t>(i)] += v;
      m2.data[static_cast<size_t>(i)] += v * v;
    }
  }
  int outside = 0;
  for (int64_t i = 0; i < mean.size(); ++i) {
    const double mu = mean.data[static_cast<size_t>(i)] / trials;
    const double var =
        std::max(0.0, m2.data[static_cast<size_t>(i)] / trials - mu * mu) * trials / (trials - 1);
    const double sem = std::sqrt(var / trials);
    if (std::fabs(mu - dw_exact.data[static_cast<size_t>(i)]) > 3.0 * std::max(sem, 1e-12))
      ++outside;
  }
  // 3 sigma per element: exceedances must stay rare
  CHECK(static_cast<double>(outside) / static_cast<double>(mean.size()) < 0.02);
}

TEST_CASE("default recipe quantizes the weight identically in fprop and dgrad") {
  const Matrix w = random_matrix(32, 32, PhiloxKey{21, 0});
  const PassRecipe recipe = PassRecipe::default_nvfp4(PhiloxKey{22, 0});
  // With identity activations/gradients, y = w_q(fprop)^T and dx = w_q(dgrad).
  Matrix eye(32, 32);
  for (int64_t i = 0; i < 32; ++i) eye.at(i, i) = 1.0;
  const LinearStepResult res = linear_step(eye, w, eye, recipe);
  for (int64_t i = 0; i < 32; ++i)
    for (int64_t j = 0; j < 32; ++j) CHECK(res.dx.at(i, j) == res.y.at(j, i));
}

TEST_CASE("two-layer chain: random init has near-zero norm alignment") {
  const int64_t width = 256;
  const Matrix x = random_matrix(16, width, PhiloxKey{23, 0});
  const Matrix w1 = random_matrix(width, width, PhiloxKey{24, 0});
  const Matrix w2 = random_matrix(width, width, PhiloxKey{25, 0});
  const Matrix g = random_matrix(16, width, PhiloxKey{26, 0});
  const ChainResult res = two_layer_chain(x, w1, w2, g, PassRecipe::all_exact());
  CHECK(std::fabs(res.diagnostics.alignment_correlation) < 0.1);
  CHECK(res.diagnostics.dw1_zero_rows.empty());
  CHECK(res.diagnostics.dw2_zero_cols.empty());
}

TEST_CASE("two-layer chain: aligned low-norm channels dominate the grown dw zeros") {
  const int64_t n = 48, d0 = 32, d1 = 64, d2 = 32;
  Matrix x = random_matrix(n, d0, PhiloxKey{27, 0});
  Matrix w1 = random_matrix(d1, d0, PhiloxKey{28, 0});
  Matrix w2 = random_matrix(d2, d1, PhiloxKey{29, 0});
  Matrix g = random_matrix(n, d2, PhiloxKey{30, 0});
  // 25% of FC1 output channels near zero, aligned with FC2 input channels.
  const int64_t low = d1 / 4;
  for (int64_t r = 0; r < low; ++r)
    for (int64_t c = 0; c < d0; ++c) w1.at(r, c) *= 1e-6;
  for (int64_t c = 0; c < low; ++c)
    for (int64_t r = 0; r < d2; ++r) w2.at(r, c) *= 1e-6;

  const ChainResult res =
      two_layer_chain(x, w1, w2, g, PassRecipe::default_nvfp4(PhiloxKey{31, 0}));
  CHECK(res.diagnostics.alignment_correlation > 0.5);

  REQUIRE(!res.diagnostics.dw1_zero_rows.empty());
  for (int64_t r : res.diagnostics.dw1_zero_rows) CHECK(r < low);
  CHECK(static_cast<int64_t>(res.diagnostics.dw1_zero_rows.size()) == low);
  CHECK(res.diagnostics.dw1_zeros_from_fc2_dgrad == 1.0);

  REQUIRE(!res.diagnostics.dw2_zero_cols.empty());
  for (int64_t c : res.diagnostics.dw2_zero_cols) CHECK(c < low);
  CHECK(res.diagnostics.dw2_zeros_from_fc1_fprop == 1.0);
}

TEST_CASE("zero upstream gradient is a degenerate all-zero dw") {
  const Matrix x = random_matrix(16, 16, PhiloxKey{32, 0});
  const Matrix w1 = random_matrix(16, 16, PhiloxKey{33, 0});
  const Matrix w2 = random_matrix(16, 16, PhiloxKey{34, 0});
  Matrix g(16, 16);
  const ChainResult res =
      two_layer_chain(x, w1, w2, g, PassRecipe::default_nvfp4(PhiloxKey{35, 0}));
  CHECK(res.fc2.diagnostics.zero_fraction_dw == 1.0);
  CHECK(res.fc2.diagnostics.degenerate_dw);
  CHECK(res.fc1.diagnostics.zero_fraction_dw == 1.0);
  CHECK(res.fc1.diagnostics.degenerate_dw);
}

TEST_CASE("diagnostics are bit-identical across reruns with one seed") {
  const Matrix x = random_matrix(32, 32, PhiloxKey{36, 0});
  const Matrix w = random_matrix(32, 32, PhiloxKey{37, 0});
  const Matrix g = random_matrix(32, 32, PhiloxKey{38, 0});
  const PassRecipe recipe = PassRecipe::default_nvfp4(PhiloxKey{39, 0}, /*step_id=*/7);
  const LinearStepResult a = linear_step(x, w, g, recipe);
  const LinearStepResult b = linear_step(x, w, g, recipe);
  CHECK(equal(a.y, b.y));
  CHECK(equal(a.dx, b.dx));
  CHECK(equal(a.dw, b.dw));
  CHECK(a.diagnostics.underflow_by_operand == b.diagnostics.underflow_by_operand);
}
