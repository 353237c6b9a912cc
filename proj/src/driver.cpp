// SPDX-License-Identifier: Apache-2.0
#include "quantdesk/driver.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "quantdesk/autoquant.hpp"
#include "quantdesk/blockquant.hpp"
#include "quantdesk/io.hpp"
#include "quantdesk/merge.hpp"
#include "quantdesk/moe.hpp"
#include "quantdesk/qtrain.hpp"
#include "quantdesk/specdec.hpp"
#include "quantdesk/ssmsim.hpp"

namespace quantdesk {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Shortest round-trip decimal for doubles, for CSV cells.
std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

struct RunContext {
  fs::path out;
  uint64_t seed = 0;
  uint32_t sub_id = 0;
  json params;
  std::vector<std::string> outputs;

  PhiloxKey key(uint64_t call_index) const { return derive_key(seed, sub_id, call_index); }

  void write_text(const std::string& name, const std::string& text) {
    std::ofstream f(out / name, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open output file '" + name + "'");
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    outputs.push_back(name);
  }

  void write_json(const std::string& name, const json& j) { write_text(name, j.dump(2) + "\n"); }

  void note_output(const std::string& name) { outputs.push_back(name); }
};

// ---------------------------------------------------------------------------
// Shared param helpers
// ---------------------------------------------------------------------------

BlockLayout layout_from_params(const json& j) {
  const std::string kind = j.value("kind", "1d");
  if (kind == "1d") return BlockLayout::one_d(j.value("axis", 1), j.value("block_len", int64_t{16}));
  if (kind == "2d")
    return BlockLayout::two_d(j.value("tile_rows", int64_t{16}), j.value("tile_cols", int64_t{16}));
  throw std::invalid_argument("layout.kind must be '1d' or '2d'");
}

ScaleSelection selection_from_params(const json& j) {
  const std::string kind = j.value("kind", "amax");
  if (kind == "amax") return ScaleSelection::amax_direct();
  if (kind == "mse_sweep")
    return ScaleSelection::mse_sweep(j.value("candidates", 32), j.value("sweep_lo", 0.5),
                                     j.value("sweep_hi", 1.0));
  throw std::invalid_argument("selection.kind must be 'amax' or 'mse_sweep'");
}

Matrix synthetic_normal(int64_t rows, int64_t cols, PhiloxKey key) {
  Matrix m(rows, cols);
  PhiloxStream rng(key);
  for (double& v : m.data) v = rng.next_normal();
  return m;
}

Matrix load_or_synthesize(const RunContext& ctx, const json& params, uint64_t call_index) {
  if (params.contains("input")) return read_tensor(params.at("input").get<std::string>());
  if (params.contains("synthetic")) {
    const json& s = params.at("synthetic");
    return synthetic_normal(s.at("rows").get<int64_t>(), s.at("cols").get<int64_t>(),
                            ctx.key(call_index));
  }
  throw std::invalid_argument("need either 'input' (tensor file) or 'synthetic' {rows, cols}");
}

// ---------------------------------------------------------------------------
// quantize
// ---------------------------------------------------------------------------

void run_quantize(RunContext& ctx) {
  const Matrix t = load_or_synthesize(ctx, ctx.params, 0);
  const BlockLayout layout = layout_from_params(ctx.params.value("layout", json::object()));
  const ScaleSelection selection =
      selection_from_params(ctx.params.value("selection", json::object()));
  const std::string rounding = ctx.params.value("rounding", "rtne");
  RoundingMode mode = RoundingMode::nearest_even();
  if (rounding == "sr")
    mode = RoundingMode::stochastic(ctx.key(1));
  else if (rounding != "rtne")
    throw std::invalid_argument("rounding must be 'rtne' or 'sr'");

  const MicroBlockTensor q = quantize(t, layout, selection, mode);
  write_container(q, (ctx.out / "container.qdt").string());
  ctx.note_output("container.qdt");

  const Matrix recon = dequantize(q);
  double max_err = 0.0, mse = 0.0;
  for (int64_t i = 0; i < t.size(); ++i) {
    const double d = t.data[static_cast<size_t>(i)] - recon.data[static_cast<size_t>(i)];
    max_err = std::max(max_err, std::fabs(d));
    mse += d * d;
  }
  mse /= static_cast<double>(t.size());
  ctx.write_json("report.json",
                 json{{"subcommand", "quantize"},
                      {"shape", {t.rows, t.cols}},
                      {"block_count", q.block_count()},
                      {"global_scale_bits", std::bit_cast<uint32_t>(q.global_scale)},
                      {"zero_tensor", q.zero_tensor},
                      {"underflow_rate", underflow_rate(t, q)},
                      {"max_abs_error", max_err},
                      {"mse", mse}});
}

// ---------------------------------------------------------------------------
// underflow-sweep: constructed high/low channel suite, 2D tiles vs 1D
// per-channel blocks over the same data.
// ---------------------------------------------------------------------------

void run_underflow_sweep(RunContext& ctx) {
  const int64_t instances = ctx.params.value("instances", int64_t{1000});
  const int64_t rows = ctx.params.value("rows", int64_t{32});
  const int64_t cols = ctx.params.value("cols", int64_t{32});
  const double ratio_min = ctx.params.value("ratio_min", 24.0);
  const double ratio_max = ctx.params.value("ratio_max", 64.0);
  if (instances < 1 || rows < 1 || cols < 2) throw std::invalid_argument("invalid sweep shape");
  if (ratio_min < 1.0 || ratio_max < ratio_min) throw std::invalid_argument("invalid ratio range");

  std::string csv = "instance,ratio,underflow_1d,underflow_2d\n";
  int64_t higher_2d = 0;
  double sum_1d = 0.0, sum_2d = 0.0;
  const RoundingMode rtne = RoundingMode::nearest_even();
  for (int64_t inst = 0; inst < instances; ++inst) {
    PhiloxStream rng(ctx.key(static_cast<uint64_t>(inst)));
    const double ratio = ratio_min + (ratio_max - ratio_min) * rng.next_unit();
    // Alternating high/low magnitude channels (columns); every 2D tile mixes
    // both bands, 1D per-channel blocks never do.
    Matrix t(rows, cols);
    for (int64_t c = 0; c < cols; ++c) {
      const double mag = (c % 2 == 0) ? 1.0 : 1.0 / ratio;
      for (int64_t r = 0; r < rows; ++r) {
        const double u = 0.3 + 0.7 * rng.next_unit();
        const double s = rng.next_unit() < 0.5 ? -1.0 : 1.0;
        t.at(r, c) = s * u * mag;
      }
    }
    const double u1 = underflow_rate(t, quantize(t, BlockLayout::one_d(0), {}, rtne));
    const double u2 = underflow_rate(t, quantize(t, BlockLayout::two_d(), {}, rtne));
    if (u2 > u1) ++higher_2d;
    sum_1d += u1;
    sum_2d += u2;
    csv += std::to_string(inst) + "," + fmt_double(ratio) + "," + fmt_double(u1) + "," +
           fmt_double(u2) + "\n";
  }
  ctx.write_text("sweep.csv", csv);
  ctx.write_json("report.json",
                 json{{"subcommand", "underflow-sweep"},
                      {"instances", instances},
                      {"fraction_2d_higher",
                       static_cast<double>(higher_2d) / static_cast<double>(instances)},
                      {"mean_underflow_1d", sum_1d / static_cast<double>(instances)},
                      {"mean_underflow_2d", sum_2d / static_cast<double>(instances)}});
}

// ---------------------------------------------------------------------------
// qtrain-step
// ---------------------------------------------------------------------------

void run_qtrain_step(RunContext& ctx) {
  const int64_t n = ctx.params.value("tokens", int64_t{64});
  const int64_t d_in = ctx.params.value("in_dim", int64_t{64});
  const int64_t d_out = ctx.params.value("out_dim", int64_t{64});
  const double low_fraction = ctx.params.value("low_channel_fraction", 0.0);
  const double low_scale = ctx.params.value("low_channel_scale", 1e-6);

  Matrix x = ctx.params.contains("x") ? read_tensor(ctx.params.at("x").get<std::string>())
                                      : synthetic_normal(n, d_in, ctx.key(0));
  Matrix w = ctx.params.contains("w") ? read_tensor(ctx.params.at("w").get<std::string>())
                                      : synthetic_normal(d_out, d_in, ctx.key(1));
  Matrix g = ctx.params.contains("g") ? read_tensor(ctx.params.at("g").get<std::string>())
                                      : synthetic_normal(n, d_out, ctx.key(2));
  // Optionally attenuate a leading fraction of output channels (w rows and
  // the matching g columns), the constructed low-norm channel scenario.
  const int64_t low_rows = static_cast<int64_t>(std::floor(low_fraction * static_cast<double>(w.rows)));
  for (int64_t r = 0; r < low_rows; ++r) {
    for (int64_t c = 0; c < w.cols; ++c) w.at(r, c) *= low_scale;
    for (int64_t t = 0; t < g.rows; ++t) g.at(t, r) *= low_scale;
  }

  const std::string recipe_name = ctx.params.value("recipe", "default");
  PassRecipe recipe;
  if (recipe_name == "default")
    recipe = PassRecipe::default_nvfp4(ctx.key(3), ctx.params.value("step_id", uint64_t{0}));
  else if (recipe_name == "exact")
    recipe = PassRecipe::all_exact();
  else
    throw std::invalid_argument("recipe must be 'default' or 'exact'");

  const LinearStepResult res = linear_step(x, w, g, recipe);
  json underflow = json::object();
  for (const auto& [op, rate] : res.diagnostics.underflow_by_operand) underflow[op] = rate;
  int64_t zero_rows = 0;
  for (int64_t r = 0; r < res.dw.rows; ++r) {
    bool all_zero = true;
    for (int64_t c = 0; c < res.dw.cols && all_zero; ++c) all_zero = res.dw.at(r, c) == 0.0;
    if (all_zero) ++zero_rows;
  }
  ctx.write_json("report.json", json{{"subcommand", "qtrain-step"},
                                     {"recipe", recipe_name},
                                     {"shape", {n, d_in, d_out}},
                                     {"zero_fraction_dw", res.diagnostics.zero_fraction_dw},
                                     {"new_zero_fraction_dw", res.diagnostics.new_zero_fraction_dw},
                                     {"degenerate_dw", res.diagnostics.degenerate_dw},
                                     {"dw_zero_rows", zero_rows},
                                     {"underflow_by_operand", underflow}});
}

// ---------------------------------------------------------------------------
// moe-cost
// ---------------------------------------------------------------------------

json cost_to_json(const CostReport& r) {
  return json{{"routed_weight_elements_per_token", r.routed_weight_elements_per_token},
              {"alltoall_elements_per_token", r.alltoall_elements_per_token},
              {"dense_latent_projection_flops_per_token", r.dense_latent_projection_flops_per_token},
              {"log10_combinations", r.log10_combinations}};
}

void run_moe_cost(RunContext& ctx) {
  MoeConfig cfg;
  cfg.d = ctx.params.at("d").get<int64_t>();
  cfg.latent = ctx.params.value("latent", cfg.d);
  cfg.experts = ctx.params.at("experts").get<int64_t>();
  cfg.top_k = ctx.params.at("top_k").get<int64_t>();
  cfg.expert_inner = ctx.params.at("expert_inner").get<int64_t>();
  cfg.shared_inner = ctx.params.value("shared_inner", int64_t{0});
  cfg.matrices_per_expert = ctx.params.value("matrices_per_expert", 2);
  cfg.validate();

  json report{{"subcommand", "moe-cost"},
              {"config",
               {{"d", cfg.d},
                {"latent", cfg.latent},
                {"experts", cfg.experts},
                {"top_k", cfg.top_k},
                {"expert_inner", cfg.expert_inner},
                {"matrices_per_expert", cfg.matrices_per_expert},
                {"alpha", cfg.alpha()}}},
              {"cost", cost_to_json(cost_report(cfg))}};

  if (!cfg.is_latent() && ctx.params.contains("alpha_grid")) {
    json variants = json::array();
    for (const auto& a : ctx.params.at("alpha_grid")) {
      const int64_t alpha = a.get<int64_t>();
      const MoeConfig v = latent_variant(cfg, alpha);
      variants.push_back(json{{"alpha", alpha},
                              {"latent", v.latent},
                              {"experts", v.experts},
                              {"top_k", v.top_k},
                              {"cost", cost_to_json(cost_report(v))}});
    }
    report["latent_variants"] = variants;
  }
  ctx.write_json("report.json", report);
}

// ---------------------------------------------------------------------------
// autoquant-solve
// ---------------------------------------------------------------------------

AssignmentProblem problem_from_json(const json& j) {
  AssignmentProblem p;
  for (const auto& nj : j.at("nodes")) {
    OperatorNode n;
    n.id = nj.at("id").get<std::string>();
    for (const auto& cj : nj.at("candidates")) {
      FormatCandidate c;
      c.format = cj.at("format").get<std::string>();
      c.sensitivity = cj.at("sensitivity").get<double>();
      c.cost = cj.value("cost", 0.0);
      n.candidates.push_back(std::move(c));
    }
    if (nj.contains("group")) n.group = nj.at("group").get<std::string>();
    p.nodes.push_back(std::move(n));
  }
  for (const auto& gj : j.value("groups", json::array())) {
    GroupConstraint g;
    g.id = gj.at("id").get<std::string>();
    const std::string kind = gj.value("kind", "fusion");
    if (kind == "fusion")
      g.kind = GroupConstraint::Kind::Fusion;
    else if (kind == "moe_sparse_experts")
      g.kind = GroupConstraint::Kind::MoeSparseExperts;
    else
      throw std::invalid_argument("group kind must be 'fusion' or 'moe_sparse_experts'");
    g.members = gj.at("members").get<std::vector<std::string>>();
    for (const auto& [fmt, s] : gj.value("sensitivity", json::object()).items())
      g.group_sensitivity[fmt] = s.get<double>();
    p.groups.push_back(std::move(g));
  }
  p.budget = j.at("budget").get<double>();
  const std::string unit = j.value("cost_unit", "flops");
  if (unit == "flops")
    p.cost_unit = CostUnit::Flops;
  else if (unit == "effective_bits")
    p.cost_unit = CostUnit::EffectiveBits;
  else
    throw std::invalid_argument("cost_unit must be 'flops' or 'effective_bits'");
  for (const auto& [id, n] : j.value("params_per_node", json::object()).items())
    p.params_per_node[id] = n.get<int64_t>();
  p.cost_step = j.value("cost_step", unit == "effective_bits" ? 0.25 : 1.0);
  return p;
}

void run_autoquant_solve(RunContext& ctx) {
  json pj = ctx.params;
  if (ctx.params.contains("problem")) {
    std::ifstream f(ctx.params.at("problem").get<std::string>());
    if (!f) throw std::runtime_error("cannot open problem file");
    pj = json::parse(f);
  }
  const AssignmentProblem problem = problem_from_json(pj);
  const Assignment a = solve(problem);

  json report{{"subcommand", "autoquant-solve"}, {"feasible", a.feasible}};
  if (!a.feasible) {
    report["min_achievable_cost"] = a.min_achievable_cost;
    ctx.write_json("assignment.json", report);
    throw std::runtime_error("infeasible budget: minimal achievable cost is " +
                             fmt_double(a.min_achievable_cost));
  }
  report["assignment"] = a.format_by_unit;
  report["total_sensitivity"] = a.total_sensitivity;
  report["total_cost"] = a.total_cost;
  if (problem.cost_unit == CostUnit::EffectiveBits) {
    std::map<std::string, int64_t> params_per_unit;
    for (const auto& u : decision_units(problem)) {
      const auto& c = u.candidates.front();
      params_per_unit[u.id] =
          static_cast<int64_t>(std::llround(c.cost / static_cast<double>(format_bits(c.format))));
    }
    report["effective_bits"] = effective_bits(a.format_by_unit, params_per_unit);
  }
  ctx.write_json("assignment.json", report);
}

// ---------------------------------------------------------------------------
// ssm-sim
// ---------------------------------------------------------------------------

RecurrenceSpec spec_from_json(const json& j, RunContext& ctx) {
  const std::string kind = j.value("kind", "accumulation");
  if (kind == "accumulation") {
    return RecurrenceSpec::accumulation(j.value("steps", int64_t{10000}), j.value("dim", int64_t{1}),
                                        j.value("c", 1.0 + 0x1.0p-12),
                                        j.value("first_drive", 16384.0));
  }
  if (kind == "random") {
    const int64_t steps = j.value("steps", int64_t{200});
    const int64_t dim = j.value("dim", int64_t{4});
    PhiloxStream rng(ctx.key(10));
    RecurrenceSpec s;
    s.steps = steps;
    s.state_dim = dim;
    for (int64_t t = 0; t < steps; ++t) {
      std::vector<double> a(static_cast<size_t>(dim));
      for (double& v : a) v = 0.9 + 0.1 * rng.next_unit();
      s.decay.push_back(std::move(a));
      std::vector<double> u(static_cast<size_t>(dim));
      for (double& v : u) v = rng.next_normal();
      s.input.push_back(std::move(u));
    }
    return s;
  }
  throw std::invalid_argument("spec.kind must be 'accumulation' or 'random'");
}

CacheRecipe recipe_from_json(const json& j, RunContext& ctx) {
  const std::string kind = j.value("kind", "exact");
  if (kind == "exact") return CacheRecipe::exact();
  if (kind == "fp16_rtne") return CacheRecipe::binary16_rtne();
  if (kind == "fp16_sr")
    return CacheRecipe::binary16_sr(ctx.key(11), j.value("philox_rounds", 5));
  if (kind == "int16_block")
    return CacheRecipe::int16_block_scale(j.value("block_len", int64_t{128}));
  throw std::invalid_argument("recipe.kind must be exact|fp16_rtne|fp16_sr|int16_block");
}

void run_ssm_sim(RunContext& ctx) {
  const RecurrenceSpec spec = spec_from_json(ctx.params.value("spec", json::object()), ctx);
  const CacheRecipe recipe = recipe_from_json(ctx.params.value("recipe", json::object()), ctx);
  const int64_t trials = ctx.params.value("trials", int64_t{1});
  const int64_t stride = ctx.params.value("sample_stride", std::max<int64_t>(1, spec.steps / 100));

  const RecurrenceTrace trace = simulate(spec, recipe);
  double max_err = 0.0, max_identity_residual = 0.0;
  const int64_t t_last = spec.steps - 1;
  for (int64_t t = 0; t < spec.steps; ++t) {
    for (int64_t i = 0; i < spec.state_dim; ++i) {
      const double d = trace.quantized_states[static_cast<size_t>(t)][static_cast<size_t>(i)] -
                       trace.exact_states[static_cast<size_t>(t)][static_cast<size_t>(i)];
      max_err = std::max(max_err, std::fabs(d));
    }
  }
  const std::vector<double> predicted = predict_error(trace, spec, t_last);
  for (int64_t i = 0; i < spec.state_dim; ++i) {
    const double actual = trace.quantized_states[static_cast<size_t>(t_last)][static_cast<size_t>(i)] -
                          trace.exact_states[static_cast<size_t>(t_last)][static_cast<size_t>(i)];
    max_identity_residual =
        std::max(max_identity_residual, std::fabs(predicted[static_cast<size_t>(i)] - actual));
  }

  const DriftStats stats = drift_stats(spec, recipe, trials, stride);
  std::string csv = "step,mean_error,std_error\n";
  for (size_t s = 0; s < stats.step.size(); ++s)
    csv += std::to_string(stats.step[s]) + "," + fmt_double(stats.mean_error[s]) + "," +
           fmt_double(stats.std_error[s]) + "\n";
  ctx.write_text("drift.csv", csv);
  ctx.write_json("report.json", json{{"subcommand", "ssm-sim"},
                                     {"steps", spec.steps},
                                     {"state_dim", spec.state_dim},
                                     {"trials", trials},
                                     {"unstable", spec.unstable()},
                                     {"max_abs_state_error", max_err},
                                     {"unrolled_identity_residual", max_identity_residual},
                                     {"final_mean_error", stats.mean_error.back()},
                                     {"final_std_error", stats.std_error.back()}});
}

// ---------------------------------------------------------------------------
// specdec-sim
// ---------------------------------------------------------------------------

void run_specdec_sim(RunContext& ctx) {
  const int64_t vocab = ctx.params.value("vocab", int64_t{4});
  const int64_t window = ctx.params.value("window", int64_t{1});
  const int64_t draft_len = ctx.params.value("draft_len", int64_t{7});
  const int64_t steps = ctx.params.value("steps", int64_t{2000});
  const double lambda = ctx.params.value("drafter_lambda", 0.25);
  const std::string mode_name = ctx.params.value("mode", "greedy");
  VerifyMode mode;
  if (mode_name == "greedy")
    mode = VerifyMode::Greedy;
  else if (mode_name == "lossless")
    mode = VerifyMode::LosslessSampling;
  else
    throw std::invalid_argument("mode must be 'greedy' or 'lossless'");

  const ToyLm target = ToyLm::random(vocab, window, ctx.key(0));
  const ToyLm drafter = target.mix_with_uniform(lambda);
  PhiloxStream rng(ctx.key(1));
  const GenerationResult gen = simulate_generation(target, drafter, draft_len, steps, mode, rng);

  const std::vector<double> rates = acceptance_by_index(gen.events);
  std::string csv = "draft_index,acceptance_rate\n";
  for (size_t k = 0; k < rates.size(); ++k)
    csv += std::to_string(k) + "," + fmt_double(rates[k]) + "\n";
  ctx.write_text("rates.csv", csv);
  ctx.write_json("report.json", json{{"subcommand", "specdec-sim"},
                                     {"mode", mode_name},
                                     {"vocab", vocab},
                                     {"draft_len", draft_len},
                                     {"steps", steps},
                                     {"drafter_lambda", lambda},
                                     {"acceptance_length", acceptance_length(gen.events)},
                                     {"tokens_emitted", gen.tokens.size()}});
}

// ---------------------------------------------------------------------------
// merge
// ---------------------------------------------------------------------------

void run_merge(RunContext& ctx) {
  const auto paths = ctx.params.at("inputs").get<std::vector<std::string>>();
  const auto tokens = ctx.params.at("token_counts").get<std::vector<int64_t>>();
  if (paths.size() != tokens.size())
    throw std::invalid_argument("inputs and token_counts must have equal length");
  std::vector<CheckpointMeta> metas;
  std::vector<Matrix> checkpoints;
  for (size_t i = 0; i < paths.size(); ++i) {
    metas.push_back(CheckpointMeta{tokens[i], paths[i]});
    checkpoints.push_back(read_tensor(paths[i]));
  }
  const json sj = ctx.params.value("schedule", json::object());
  const std::string kind = sj.value("kind", "uniform");
  MergeSchedule schedule;
  if (kind == "uniform")
    schedule = MergeSchedule::uniform();
  else if (kind == "minus_sqrt")
    schedule = MergeSchedule::minus_sqrt(sj.value("window_tokens", 0.0),
                                         sj.value("peak_lr", 4.5e-4), sj.value("min_lr", 4.5e-6));
  else
    throw std::invalid_argument("schedule.kind must be 'uniform' or 'minus_sqrt'");

  const std::vector<double> w = coefficients(schedule, metas);
  const Matrix merged = merge(checkpoints, w);
  write_tensor(merged, (ctx.out / "merged.qdt").string());
  ctx.note_output("merged.qdt");
  ctx.write_json("report.json", json{{"subcommand", "merge"},
                                     {"schedule", kind},
                                     {"token_counts", tokens},
                                     {"coefficients", w}});
}

}  // namespace

PhiloxKey derive_key(uint64_t seed, uint32_t sub_id, uint64_t call_index) {
  const PhiloxCounter ctr{sub_id, static_cast<uint32_t>(call_index),
                          static_cast<uint32_t>(call_index >> 32), 0};
  const PhiloxBlock b = philox4x32(ctr, PhiloxKey::from_seed(seed));
  return PhiloxKey{b.w[0], b.w[1]};
}

uint32_t subcommand_id(const std::string& subcommand) {
  static const std::map<std::string, uint32_t> ids = {
      {"quantize", 1},     {"underflow-sweep", 2}, {"qtrain-step", 3}, {"moe-cost", 4},
      {"autoquant-solve", 5}, {"ssm-sim", 6},      {"specdec-sim", 7}, {"merge", 8}};
  const auto it = ids.find(subcommand);
  if (it == ids.end()) throw std::invalid_argument("unknown subcommand '" + subcommand + "'");
  return it->second;
}

int run(const RunConfig& config) {
  try {
    RunContext ctx;
    ctx.sub_id = subcommand_id(config.subcommand);
    ctx.seed = config.seed;
    if (config.out_dir.empty()) throw std::invalid_argument("output directory is required");
    ctx.out = config.out_dir;
    fs::create_directories(ctx.out);
    ctx.params = json::parse(config.params_json);

    if (config.subcommand == "quantize")
      run_quantize(ctx);
    else if (config.subcommand == "underflow-sweep")
      run_underflow_sweep(ctx);
    else if (config.subcommand == "qtrain-step")
      run_qtrain_step(ctx);
    else if (config.subcommand == "moe-cost")
      run_moe_cost(ctx);
    else if (config.subcommand == "autoquant-solve")
      run_autoquant_solve(ctx);
    else if (config.subcommand == "ssm-sim")
      run_ssm_sim(ctx);
    else if (config.subcommand == "specdec-sim")
      run_specdec_sim(ctx);
    else if (config.subcommand == "merge")
      run_merge(ctx);

    std::sort(ctx.outputs.begin(), ctx.outputs.end());
    json manifest{{"subcommand", config.subcommand},
                  {"seed", config.seed},
                  {"params", ctx.params},
                  {"outputs", json::array()}};
    for (const auto& name : ctx.outputs) {
      const auto bytes = fs::file_size(ctx.out / name);
      manifest["outputs"].push_back(json{{"name", name}, {"bytes", bytes}});
    }
    std::ofstream mf(ctx.out / "manifest.json", std::ios::binary | std::ios::trunc);
    mf << manifest.dump(2) << "\n";
    return 0;
  } catch (const std::exception& e) {
    const json err{{"error", {{"subcommand", config.subcommand}, {"message", e.what()}}}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
}

}  // namespace quantdesk
