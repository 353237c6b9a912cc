// SPDX-License-Identifier: Apache-2.0
#include "quantdesk/ssmsim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace quantdesk {

RecurrenceSpec RecurrenceSpec::accumulation(int64_t steps, int64_t state_dim, double c,
                                            double first_drive) {
  RecurrenceSpec s;
  s.steps = steps;
  s.state_dim = state_dim;
  s.decay.assign(static_cast<size_t>(steps), std::vector<double>{1.0});
  s.input.assign(static_cast<size_t>(steps),
                 std::vector<double>(static_cast<size_t>(state_dim), c));
  if (steps > 0)
    s.input.front().assign(static_cast<size_t>(state_dim), first_drive);
  return s;
}

void RecurrenceSpec::validate() const {
  if (steps < 1 || state_dim < 1)
    throw std::invalid_argument("RecurrenceSpec: steps and state_dim must be positive");
  if (static_cast<int64_t>(decay.size()) != steps ||
      static_cast<int64_t>(input.size()) != steps)
    throw std::invalid_argument("RecurrenceSpec: decay/input must have one entry per step");
  if (!input_map.empty() && static_cast<int64_t>(input_map.size()) != steps)
    throw std::invalid_argument("RecurrenceSpec: input_map must be empty or per-step");
  for (int64_t t = 0; t < steps; ++t) {
    const auto& a = decay[static_cast<size_t>(t)];
    if (a.size() != 1 && static_cast<int64_t>(a.size()) != state_dim)
      throw std::invalid_argument("RecurrenceSpec: decay entries must be scalar or state_dim");
    for (double v : a)
      if (!std::isfinite(v)) throw std::invalid_argument("RecurrenceSpec: non-finite decay");
    if (input_map.empty()) {
      if (static_cast<int64_t>(input[static_cast<size_t>(t)].size()) != state_dim)
        throw std::invalid_argument("RecurrenceSpec: drive entries must be state_dim");
    } else {
      const Matrix& b = input_map[static_cast<size_t>(t)];
      if (b.rows != state_dim ||
          b.cols != static_cast<int64_t>(input[static_cast<size_t>(t)].size()))
        throw std::invalid_argument("RecurrenceSpec: input_map shape mismatch");
    }
    for (double v : input[static_cast<size_t>(t)])
      if (!std::isfinite(v)) throw std::invalid_argument("RecurrenceSpec: non-finite input");
  }
}

bool RecurrenceSpec::unstable(double eps) const {
  for (const auto& a : decay)
    for (double v : a)
      if (std::fabs(v) > 1.0 + eps) return true;
  return false;
}

double RecurrenceSpec::decay_at(int64_t t, int64_t i) const {
  const auto& a = decay[static_cast<size_t>(t)];
  return a.size() == 1 ? a[0] : a[static_cast<size_t>(i)];
}

std::vector<double> RecurrenceSpec::drive_at(int64_t t) const {
  if (input_map.empty()) return input[static_cast<size_t>(t)];
  const Matrix& b = input_map[static_cast<size_t>(t)];
  const auto& x = input[static_cast<size_t>(t)];
  std::vector<double> u(static_cast<size_t>(state_dim), 0.0);
  for (int64_t i = 0; i < b.rows; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < b.cols; ++j) acc += b.at(i, j) * x[static_cast<size_t>(j)];
    u[static_cast<size_t>(i)] = acc;
  }
  return u;
}

CacheRecipe CacheRecipe::exact() { return CacheRecipe{}; }

CacheRecipe CacheRecipe::binary16_rtne() {
  CacheRecipe r;
  r.kind = Kind::Binary16Rtne;
  return r;
}

CacheRecipe CacheRecipe::binary16_sr(PhiloxKey key, int philox_rounds, uint64_t trial_id) {
  CacheRecipe r;
  r.kind = Kind::Binary16Sr;
  r.key = key;
  r.philox_rounds = philox_rounds;
  r.trial_id = trial_id;
  return r;
}

CacheRecipe CacheRecipe::int16_block_scale(int64_t block_len) {
  if (block_len < 1) throw std::invalid_argument("CacheRecipe: block_len must be >= 1");
  CacheRecipe r;
  r.kind = Kind::Int16BlockScale;
  r.block_len = block_len;
  return r;
}

namespace {

// Stores one state vector per the recipe. SR counters are scheduled as
// (call_id = trial_id, element = step << 32 | index) so trials, steps, and
// elements all get disjoint Philox blocks.
void store_state(std::vector<double>& h, const CacheRecipe& recipe, int64_t step) {
  switch (recipe.kind) {
    case CacheRecipe::Kind::Exact:
      return;
    case CacheRecipe::Kind::Binary16Rtne: {
      const RoundingMode m = RoundingMode::nearest_even();
      for (double& v : h) v = round_binary16(v, m);
      return;
    }
    case CacheRecipe::Kind::Binary16Sr: {
      const RoundingMode base =
          RoundingMode::stochastic(recipe.key, recipe.trial_id, recipe.philox_rounds);
      for (size_t i = 0; i < h.size(); ++i) {
        const uint64_t element = (static_cast<uint64_t>(step) << 32) | static_cast<uint64_t>(i);
        h[i] = round_binary16(h[i], base.at(element));
      }
      return;
    }
    case CacheRecipe::Kind::Int16BlockScale: {
      // Symmetric int16: scale = block amax / 32767 (held in binary32),
      // round half away from zero, clamp to +/-32767.
      const size_t n = h.size();
      for (size_t b0 = 0; b0 < n; b0 += static_cast<size_t>(recipe.block_len)) {
        const size_t b1 = std::min(n, b0 + static_cast<size_t>(recipe.block_len));
        double block_amax = 0.0;
        for (size_t i = b0; i < b1; ++i) block_amax = std::max(block_amax, std::fabs(h[i]));
        if (block_amax == 0.0) continue;
        const double scale = static_cast<float>(block_amax / 32767.0);
        for (size_t i = b0; i < b1; ++i) {
          double q = std::round(h[i] / scale);  // round half away from zero
          q = std::clamp(q, -32767.0, 32767.0);
          h[i] = q * scale;
        }
      }
      return;
    }
  }
}

}  // namespace

RecurrenceTrace simulate(const RecurrenceSpec& spec, const CacheRecipe& recipe) {
  spec.validate();
  RecurrenceTrace trace;
  trace.exact_states.reserve(static_cast<size_t>(spec.steps));
  trace.quantized_states.reserve(static_cast<size_t>(spec.steps));
  trace.errors.reserve(static_cast<size_t>(spec.steps));

  std::vector<double> h(static_cast<size_t>(spec.state_dim), 0.0);
  std::vector<double> hq = h;
  for (int64_t t = 0; t < spec.steps; ++t) {
    const std::vector<double> u = spec.drive_at(t);
    std::vector<double> pre(static_cast<size_t>(spec.state_dim));
    for (int64_t i = 0; i < spec.state_dim; ++i) {
      const double a = spec.decay_at(t, i);
      h[static_cast<size_t>(i)] = a * h[static_cast<size_t>(i)] + u[static_cast<size_t>(i)];
      pre[static_cast<size_t>(i)] = a * hq[static_cast<size_t>(i)] + u[static_cast<size_t>(i)];
    }
    hq = pre;
    store_state(hq, recipe, t);
    for (double v : hq)
      if (!std::isfinite(v))
        throw std::runtime_error("simulate: non-finite state at step " + std::to_string(t));
    std::vector<double> e(static_cast<size_t>(spec.state_dim));
    for (int64_t i = 0; i < spec.state_dim; ++i)
      e[static_cast<size_t>(i)] = hq[static_cast<size_t>(i)] - pre[static_cast<size_t>(i)];
    trace.exact_states.push_back(h);
    trace.quantized_states.push_back(hq);
    trace.errors.push_back(std::move(e));
  }
  return trace;
}

std::vector<double> predict_error(const RecurrenceTrace& trace, const RecurrenceSpec& spec,
                                  int64_t t) {
  if (t < 0 || t >= static_cast<int64_t>(trace.errors.size()))
    throw std::out_of_range("predict_error: step index out of range");
  // p_t = e_t + a_t (*) p_{t-1}, evaluated forward, equals the unrolled sum.
  std::vector<double> p(static_cast<size_t>(spec.state_dim), 0.0);
  for (int64_t s = 0; s <= t; ++s) {
    for (int64_t i = 0; i < spec.state_dim; ++i) {
      const double a = spec.decay_at(s, i);
      p[static_cast<size_t>(i)] =
          a * p[static_cast<size_t>(i)] + trace.errors[static_cast<size_t>(s)][static_cast<size_t>(i)];
    }
  }
  return p;
}

DriftStats drift_stats(const RecurrenceSpec& spec, CacheRecipe recipe, int64_t trials,
                       int64_t sample_stride) {
  if (trials < 1) throw std::invalid_argument("drift_stats: trials must be >= 1");
  if (sample_stride < 1) throw std::invalid_argument("drift_stats: sample_stride must be >= 1");
  spec.validate();

  std::vector<int64_t> sampled;
  for (int64_t t = sample_stride - 1; t < spec.steps; t += sample_stride) sampled.push_back(t);
  if (sampled.empty() || sampled.back() != spec.steps - 1) sampled.push_back(spec.steps - 1);

  const size_t n_samples = sampled.size();
  std::vector<double> sum(n_samples, 0.0), sum_sq(n_samples, 0.0);
  const int64_t pooled = trials * spec.state_dim;

  for (int64_t trial = 0; trial < trials; ++trial) {
    CacheRecipe r = recipe;
    r.trial_id = recipe.trial_id + static_cast<uint64_t>(trial);
    const RecurrenceTrace trace = simulate(spec, r);
    for (size_t s = 0; s < n_samples; ++s) {
      const auto& hq = trace.quantized_states[static_cast<size_t>(sampled[s])];
      const auto& h = trace.exact_states[static_cast<size_t>(sampled[s])];
      for (int64_t i = 0; i < spec.state_dim; ++i) {
        const double d = hq[static_cast<size_t>(i)] - h[static_cast<size_t>(i)];
        sum[s] += d;
        sum_sq[s] += d * d;
      }
    }
  }

  DriftStats stats;
  for (size_t s = 0; s < n_samples; ++s) {
    stats.step.push_back(sampled[s] + 1);
    const double mean = sum[s] / static_cast<double>(pooled);
    stats.mean_error.push_back(mean);
    const double var = pooled > 1 ? std::max(0.0, (sum_sq[s] - static_cast<double>(pooled) * mean * mean) /
                                                      static_cast<double>(pooled - 1))
                                  : 0.0;
    stats.std_error.push_back(std::sqrt(var));
  }
  return stats;
}

}  // namespace quantdesk
