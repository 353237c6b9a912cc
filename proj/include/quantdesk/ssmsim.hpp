// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "quantdesk/numerics.hpp"
#include "quantdesk/tensor.hpp"

namespace quantdesk {

// Diagonal (or scalar) recurrence h_t = a_t (*) h_{t-1} + b_t x_t over
// `steps` steps. Entries of `decay` may be length state_dim or length 1
// (scalar broadcast). When `input_map` is empty the drive u_t = b_t x_t is
// taken directly from `input` (length state_dim per step); otherwise
// input_map[t] is a state_dim x input_dim matrix applied to input[t].
struct RecurrenceSpec {
  int64_t steps = 0;
  int64_t state_dim = 0;
  std::vector<std::vector<double>> decay;
  std::vector<Matrix> input_map;
  std::vector<std::vector<double>> input;

  // Pure accumulation h_t = h_{t-1} + c with an optional first-step drive
  // that plants the state on a chosen plateau.
  static RecurrenceSpec accumulation(int64_t steps, int64_t state_dim, double c,
                                     double first_drive);

  void validate() const;
  // |a| > 1 + eps anywhere: the recurrence is allowed but flagged.
  bool unstable(double eps = 1e-12) const;
  double decay_at(int64_t t, int64_t i) const;
  std::vector<double> drive_at(int64_t t) const;
};

struct CacheRecipe {
  enum class Kind : uint8_t { Exact, Binary16Rtne, Binary16Sr, Int16BlockScale };
  Kind kind = Kind::Exact;
  int philox_rounds = 5;   // Binary16Sr
  PhiloxKey key{};         // Binary16Sr
  uint64_t trial_id = 0;   // Binary16Sr: separates ensemble members
  int64_t block_len = 128; // Int16BlockScale, along the state dimension

  static CacheRecipe exact();
  static CacheRecipe binary16_rtne();
  static CacheRecipe binary16_sr(PhiloxKey key, int philox_rounds = 5, uint64_t trial_id = 0);
  static CacheRecipe int16_block_scale(int64_t block_len = 128);
};

// Per-step exact states, quantized-path states, and the recorded additive
// quantization errors e_t = (stored state) - (pre-quantization state).
struct RecurrenceTrace {
  std::vector<std::vector<double>> exact_states;
  std::vector<std::vector<double>> quantized_states;
  std::vector<std::vector<double>> errors;
};

// Update arithmetic runs in double; the stored state is re-quantized per the
// recipe after every step. Throws (naming the step) if a state goes
// non-finite.
RecurrenceTrace simulate(const RecurrenceSpec& spec, const CacheRecipe& recipe);

// Evaluates the unrolled error sum_{i<=t} (prod_{j=i+1..t} a_j) e_i from the
// recorded errors. Equals h_q_t - h_t up to double roundoff for every recipe:
// the module's core oracle.
std::vector<double> predict_error(const RecurrenceTrace& trace, const RecurrenceSpec& spec,
                                  int64_t t);

struct DriftStats {
  std::vector<int64_t> step;       // sampled steps (1-based)
  std::vector<double> mean_error;  // ensemble mean of h_q - h, pooled over elements
  std::vector<double> std_error;   // ensemble standard deviation (pooled)
};

// Ensemble drift statistics. Deterministic recipes need one trial; SR trials
// differ by trial_id. Steps are sampled every `sample_stride`.
DriftStats drift_stats(const RecurrenceSpec& spec, CacheRecipe recipe, int64_t trials,
                       int64_t sample_stride = 1);

}  // namespace quantdesk
