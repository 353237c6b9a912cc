// SPDX-License-Identifier: Apache-2.0
#include "quantdesk/qtrain.hpp"

#include <cmath>
#include <stdexcept>

namespace quantdesk {

OperandFormat OperandFormat::exact() { return OperandFormat{}; }

OperandFormat OperandFormat::nvfp4(BlockLayout layout, ScaleSelection selection, bool stochastic) {
  OperandFormat f;
  f.kind = Kind::Nvfp4;
  f.layout = layout;
  f.selection = selection;
  f.stochastic = stochastic;
  return f;
}

OperandFormat OperandFormat::mxfp8(int axis) {
  OperandFormat f;
  f.kind = Kind::Mxfp8;
  f.layout = BlockLayout::one_d(axis, 32);
  return f;
}

OperandFormat OperandFormat::binary16(bool stochastic) {
  OperandFormat f;
  f.kind = Kind::Binary16;
  f.stochastic = stochastic;
  return f;
}

PassRecipe PassRecipe::all_exact() { return PassRecipe{}; }

PassRecipe PassRecipe::default_nvfp4(PhiloxKey key, uint64_t step_id) {
  PassRecipe r;
  // fprop reduces over the input dim (axis 1 of x and w); dgrad over the
  // output dim (axis 1 of g); wgrad over the token dim (axis 0 of g and x).
  r.fprop_x = OperandFormat::nvfp4(BlockLayout::one_d(1));
  r.fprop_w = OperandFormat::nvfp4(BlockLayout::two_d());
  r.dgrad_g = OperandFormat::nvfp4(BlockLayout::one_d(1), {}, /*stochastic=*/true);
  r.dgrad_w = OperandFormat::nvfp4(BlockLayout::two_d());
  r.wgrad_g = OperandFormat::nvfp4(BlockLayout::one_d(0), {}, /*stochastic=*/true);
  r.wgrad_x = OperandFormat::nvfp4(BlockLayout::one_d(0));
  r.wgrad_rht = true;
  r.key = key;
  r.step_id = step_id;
  return r;
}

namespace {

// Operand slots inside one step's SR counter schedule.
enum OpSlot : uint64_t {
  kFpropX = 0,
  kFpropW = 1,
  kDgradG = 2,
  kDgradW = 3,
  kWgradG = 4,
  kWgradX = 5,
  kRhtSigns = 6,
  kSlotsPerStep = 16,
};

struct QuantizedOperand {
  Matrix values;
  double underflow = 0.0;
};

double count_underflow(const Matrix& original, const Matrix& recon) {
  int64_t nonzero = 0, zeroed = 0;
  for (int64_t i = 0; i < original.size(); ++i) {
    if (original.data[static_cast<size_t>(i)] != 0.0) {
      ++nonzero;
      if (recon.data[static_cast<size_t>(i)] == 0.0) ++zeroed;
    }
  }
  return nonzero == 0 ? 0.0 : static_cast<double>(zeroed) / static_cast<double>(nonzero);
}

QuantizedOperand quantize_operand(const Matrix& m, const OperandFormat& fmt, PhiloxKey key,
                                  uint64_t call_id) {
  if (!all_finite(m)) throw std::invalid_argument("quantize_operand: non-finite operand");
  QuantizedOperand out;
  switch (fmt.kind) {
    case OperandFormat::Kind::Exact:
      out.values = m;
      out.underflow = 0.0;
      return out;
    case OperandFormat::Kind::Nvfp4: {
      const RoundingMode mode = fmt.stochastic ? RoundingMode::stochastic(key, call_id)
                                               : RoundingMode::nearest_even();
      const MicroBlockTensor q = quantize(m, fmt.layout, fmt.selection, mode);
      out.values = dequantize(q);
      out.underflow = count_underflow(m, out.values);
      return out;
    }
    case OperandFormat::Kind::Mxfp8: {
      const RoundingMode base = fmt.stochastic ? RoundingMode::stochastic(key, call_id)
                                               : RoundingMode::nearest_even();
      out.values = Matrix(m.rows, m.cols);
      for (const auto& idx : enumerate_blocks(m.rows, m.cols, fmt.layout)) {
        double block_amax = 0.0;
        for (int64_t flat : idx)
          block_amax = std::max(block_amax, std::fabs(m.data[static_cast<size_t>(flat)]));
        if (block_amax == 0.0) continue;
        const double scale = static_cast<float>(block_amax / kE4M3Max);
        for (int64_t flat : idx) {
          const double x = m.data[static_cast<size_t>(flat)];
          const CodeE4M3 c = encode_e4m3(x / scale, base.at(static_cast<uint64_t>(flat)));
          out.values.data[static_cast<size_t>(flat)] = decode_e4m3(c) * scale;
        }
      }
      out.underflow = count_underflow(m, out.values);
      return out;
    }
    case OperandFormat::Kind::Binary16: {
      const RoundingMode base = fmt.stochastic ? RoundingMode::stochastic(key, call_id)
                                               : RoundingMode::nearest_even();
      out.values = Matrix(m.rows, m.cols);
      for (int64_t i = 0; i < m.size(); ++i)
        out.values.data[static_cast<size_t>(i)] = round_binary16(
            m.data[static_cast<size_t>(i)], base.at(static_cast<uint64_t>(i)));
      out.underflow = count_underflow(m, out.values);
      return out;
    }
  }
  throw std::logic_error("quantize_operand: unknown format kind");
}

struct StepTensors {
  Matrix y, dx, dw;
  std::map<std::string, double> underflow;
};

// One quantized linear step; base_call is the first counter slot for this
// step so that chained layers get disjoint SR streams.
StepTensors run_step(const Matrix& x, const Matrix& w, const Matrix& g, const PassRecipe& recipe,
                     uint64_t base_call) {
  StepTensors out;
  const auto xq = quantize_operand(x, recipe.fprop_x, recipe.key, base_call + kFpropX);
  const auto wq = quantize_operand(w, recipe.fprop_w, recipe.key, base_call + kFpropW);
  out.y = matmul_bt(xq.values, wq.values);
  out.underflow["fprop.x"] = xq.underflow;
  out.underflow["fprop.w"] = wq.underflow;

  const auto gq = quantize_operand(g, recipe.dgrad_g, recipe.key, base_call + kDgradG);
  const auto wq2 = quantize_operand(w, recipe.dgrad_w, recipe.key, base_call + kDgradW);
  out.dx = matmul(gq.values, wq2.values);
  out.underflow["dgrad.g"] = gq.underflow;
  out.underflow["dgrad.w"] = wq2.underflow;

  Matrix g_w = g, x_w = x;
  if (recipe.wgrad_rht) {
    const RhtConfig rht =
        RhtConfig::random(recipe.rht_block, recipe.key, base_call + kRhtSigns, /*axis=*/0);
    g_w = rht_apply(g_w, rht);
    x_w = rht_apply(x_w, rht);
  }
  const auto gwq = quantize_operand(g_w, recipe.wgrad_g, recipe.key, base_call + kWgradG);
  const auto xwq = quantize_operand(x_w, recipe.wgrad_x, recipe.key, base_call + kWgradX);
  out.dw = matmul_at(gwq.values, xwq.values);
  out.underflow["wgrad.g"] = gwq.underflow;
  out.underflow["wgrad.x"] = xwq.underflow;
  return out;
}

StepDiagnostics make_diagnostics(const Matrix& w, const StepTensors& step, const Matrix& dw_exact) {
  StepDiagnostics d;
  d.underflow_by_operand = step.underflow;
  d.w_output_channel_norms = row_norms(w);
  d.w_input_channel_norms = col_norms(w);
  int64_t zeros = 0, new_zeros = 0, exact_nonzero = 0;
  for (int64_t i = 0; i < step.dw.size(); ++i) {
    const bool qz = step.dw.data[static_cast<size_t>(i)] == 0.0;
    const bool ez = dw_exact.data[static_cast<size_t>(i)] == 0.0;
    if (qz) ++zeros;
    if (!ez) {
      ++exact_nonzero;
      if (qz) ++new_zeros;
    }
  }
  const double n = static_cast<double>(step.dw.size());
  d.zero_fraction_dw = n == 0 ? 0.0 : static_cast<double>(zeros) / n;
  d.new_zero_fraction_dw =
      exact_nonzero == 0 ? 0.0 : static_cast<double>(new_zeros) / static_cast<double>(exact_nonzero);
  d.degenerate_dw = exact_nonzero == 0;
  return d;
}

void validate_step_shapes(const Matrix& x, const Matrix& w, const Matrix& g) {
  if (x.cols != w.cols) throw std::invalid_argument("linear_step: x/w input dims differ");
  if (g.rows != x.rows) throw std::invalid_argument("linear_step: x/g token dims differ");
  if (g.cols != w.rows) throw std::invalid_argument("linear_step: g/w output dims differ");
  if (!all_finite(x) || !all_finite(w) || !all_finite(g))
    throw std::invalid_argument("linear_step: non-finite operands");
}

}  // namespace

LinearStepResult linear_step(const Matrix& x, const Matrix& w, const Matrix& g_out,
                             const PassRecipe& recipe) {
  validate_step_shapes(x, w, g_out);
  LinearStepResult res;
  res.y_exact = matmul_bt(x, w);
  res.dx_exact = matmul(g_out, w);
  res.dw_exact = matmul_at(g_out, x);

  const StepTensors step = run_step(x, w, g_out, recipe, recipe.step_id * kSlotsPerStep);
  res.y = step.y;
  res.dx = step.dx;
  res.dw = step.dw;
  res.diagnostics = make_diagnostics(w, step, res.dw_exact);
  return res;
}

namespace {

// Channel c of m (a column) is exactly zero.
bool column_is_zero(const Matrix& m, int64_t c) {
  for (int64_t r = 0; r < m.rows; ++r)
    if (m.at(r, c) != 0.0) return false;
  return true;
}

bool row_is_zero(const Matrix& m, int64_t r) {
  for (int64_t c = 0; c < m.cols; ++c)
    if (m.at(r, c) != 0.0) return false;
  return true;
}

}  // namespace

ChainResult two_layer_chain(const Matrix& x, const Matrix& w1, const Matrix& w2,
                            const Matrix& g_out, const PassRecipe& recipe) {
  validate_step_shapes(x, w1, Matrix(x.rows, w1.rows));
  validate_step_shapes(Matrix(x.rows, w1.rows), w2, g_out);

  // All-exact reference through the chain.
  const Matrix h_exact = matmul_bt(x, w1);
  const Matrix gh_exact = matmul(g_out, w2);
  const Matrix dw2_exact = matmul_at(g_out, h_exact);
  const Matrix dw1_exact = matmul_at(gh_exact, x);

  // Quantized pipeline: FC2 consumes the quantized-path activations and FC1's
  // wgrad consumes the quantized-path upstream gradient.
  PassRecipe r1 = recipe;
  r1.step_id = recipe.step_id * 2;
  PassRecipe r2 = recipe;
  r2.step_id = recipe.step_id * 2 + 1;

  const StepTensors s1_fwd = run_step(x, w1, Matrix(x.rows, w1.rows), r1,
                                      r1.step_id * kSlotsPerStep);
  const Matrix& h_q = s1_fwd.y;
  const StepTensors s2 = run_step(h_q, w2, g_out, r2, r2.step_id * kSlotsPerStep);
  const Matrix& gh_q = s2.dx;
  const StepTensors s1 = run_step(x, w1, gh_q, r1, r1.step_id * kSlotsPerStep);

  ChainResult res;
  res.fc1.y = s1.y;
  res.fc1.dx = s1.dx;
  res.fc1.dw = s1.dw;
  res.fc1.y_exact = h_exact;
  res.fc1.dx_exact = matmul(gh_exact, w1);
  res.fc1.dw_exact = dw1_exact;
  res.fc1.diagnostics = make_diagnostics(w1, s1, dw1_exact);

  res.fc2.y = s2.y;
  res.fc2.dx = s2.dx;
  res.fc2.dw = s2.dw;
  res.fc2.y_exact = matmul_bt(h_exact, w2);
  res.fc2.dx_exact = gh_exact;
  res.fc2.dw_exact = dw2_exact;
  res.fc2.diagnostics = make_diagnostics(w2, s2, dw2_exact);

  ChainDiagnostics& d = res.diagnostics;
  d.fc1 = res.fc1.diagnostics;
  d.fc2 = res.fc2.diagnostics;
  d.alignment_correlation = pearson_correlation(row_norms(w1), col_norms(w2));

  // Attribution of grown dw zeros. A dw1 row r collapses when the upstream
  // gradient channel r (dgrad output of FC2) is zero in the quantized path; a
  // dw2 column c collapses when the FC1 output channel c is zero in the
  // quantized forward.
  int64_t attributed1 = 0;
  for (int64_t r = 0; r < s1.dw.rows; ++r) {
    if (row_is_zero(s1.dw, r) && !row_is_zero(dw1_exact, r)) {
      d.dw1_zero_rows.push_back(r);
      if (column_is_zero(gh_q, r) && !column_is_zero(gh_exact, r)) ++attributed1;
    }
  }
  if (!d.dw1_zero_rows.empty())
    d.dw1_zeros_from_fc2_dgrad =
        static_cast<double>(attributed1) / static_cast<double>(d.dw1_zero_rows.size());

  int64_t attributed2 = 0;
  for (int64_t c = 0; c < s2.dw.cols; ++c) {
    if (column_is_zero(s2.dw, c) && !column_is_zero(dw2_exact, c)) {
      d.dw2_zero_cols.push_back(c);
      if (column_is_zero(h_q, c) && !column_is_zero(h_exact, c)) ++attributed2;
    }
  }
  if (!d.dw2_zero_cols.empty())
    d.dw2_zeros_from_fc1_fprop =
        static_cast<double>(attributed2) / static_cast<double>(d.dw2_zero_cols.size());

  return res;
}

}  // namespace quantdesk
