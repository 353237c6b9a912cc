// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "quantdesk/blockquant.hpp"

namespace quantdesk {

// One GEMM operand's emulated storage format. "Exact" leaves the operand in
// double. Nvfp4 is the block-scaled 4-bit container; Mxfp8 is an emulation
// stand-in (E4M3 elements, 1D blocks of 32, binary32 per-block scale), not a
// claim about any particular 8-bit spec. Binary16 rounds elementwise.
struct OperandFormat {
  enum class Kind : uint8_t { Exact, Nvfp4, Mxfp8, Binary16 };
  Kind kind = Kind::Exact;
  BlockLayout layout = BlockLayout::one_d(1);
  ScaleSelection selection{};
  bool stochastic = false;  // SR element rounding (gradient tensors in the default recipe)

  static OperandFormat exact();
  static OperandFormat nvfp4(BlockLayout layout, ScaleSelection selection = {},
                             bool stochastic = false);
  static OperandFormat mxfp8(int axis = 1);
  static OperandFormat binary16(bool stochastic = false);
};

// Formats for the six operands of the three GEMMs of one linear-layer step
// (y = x * w^T, dx = g * w, dw = g^T * x), plus the wgrad-side randomized
// Hadamard transform switch. The default recipe quantizes weights with 2D
// tiles (shared by fprop and dgrad), activations and gradients with 1D blocks
// along each GEMM's reduction axis, applies the RHT to both wgrad inputs
// along the token axis, and uses stochastic rounding on gradient operands.
struct PassRecipe {
  OperandFormat fprop_x, fprop_w, dgrad_g, dgrad_w, wgrad_g, wgrad_x;
  bool wgrad_rht = false;
  int64_t rht_block = 16;
  PhiloxKey key{};      // master key for SR draws and RHT signs
  uint64_t step_id = 0; // varies SR streams across steps/trials

  static PassRecipe all_exact();
  static PassRecipe default_nvfp4(PhiloxKey key, uint64_t step_id = 0);
};

struct StepDiagnostics {
  // Fraction of dw elements that are exactly zero in the quantized step.
  double zero_fraction_dw = 0.0;
  // Fraction of dw elements exactly zero in the quantized step but nonzero in
  // the exact step (the "grown" zeros).
  double new_zero_fraction_dw = 0.0;
  bool degenerate_dw = false;  // exact dw is identically zero
  std::map<std::string, double> underflow_by_operand;
  std::vector<double> w_output_channel_norms;  // L2 of w rows
  std::vector<double> w_input_channel_norms;   // L2 of w cols
};

struct LinearStepResult {
  Matrix y, dx, dw;                    // quantized-recipe results
  Matrix y_exact, dx_exact, dw_exact;  // all-exact reference
  StepDiagnostics diagnostics;
};

// x: [n, in], w: [out, in], g_out: [n, out].
LinearStepResult linear_step(const Matrix& x, const Matrix& w, const Matrix& g_out,
                             const PassRecipe& recipe);

struct ChainDiagnostics {
  StepDiagnostics fc1, fc2;
  // Pearson correlation between FC1 output-channel norms (w1 rows) and FC2
  // input-channel norms (w2 cols).
  double alignment_correlation = 0.0;
  // Rows of dw1 that are entirely zero in the quantized step but not exactly,
  // and the fraction of those attributable to a zeroed dgrad-of-FC2 channel.
  std::vector<int64_t> dw1_zero_rows;
  double dw1_zeros_from_fc2_dgrad = 0.0;
  // Columns of dw2 that are entirely zero but not exactly, and the fraction
  // attributable to a zeroed fprop-of-FC1 output channel.
  std::vector<int64_t> dw2_zero_cols;
  double dw2_zeros_from_fc1_fprop = 0.0;
};

struct ChainResult {
  LinearStepResult fc1, fc2;
  ChainDiagnostics diagnostics;
};

// FC1: h = x * w1^T, FC2: y = h * w2^T; backprop of g_out through both.
ChainResult two_layer_chain(const Matrix& x, const Matrix& w1, const Matrix& w2,
                            const Matrix& g_out, const PassRecipe& recipe);

}  // namespace quantdesk
