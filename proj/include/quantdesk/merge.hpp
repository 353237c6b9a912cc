// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "quantdesk/tensor.hpp"

namespace quantdesk {

struct CheckpointMeta {
  int64_t token_count = 0;  // tokens seen when the checkpoint was saved
  std::string container;    // label or path of the parameter container
};

// Sliding-window merge coefficients. Uniform weighs checkpoints equally;
// MinusSqrtEmulation weighs checkpoint i by the decrement of the emulated
// decay eta(p) = min_lr + (peak_lr - min_lr) * (1 - sqrt(p)) across its
// interval of the window, where p is token progress through the window.
struct MergeSchedule {
  enum class Kind : uint8_t { Uniform, MinusSqrtEmulation };
  Kind kind = Kind::Uniform;
  double window_tokens = 0.0;  // decay horizon; <= 0 means span of the given checkpoints
  double peak_lr = 4.5e-4;
  double min_lr = 4.5e-6;

  static MergeSchedule uniform();
  static MergeSchedule minus_sqrt(double window_tokens = 0.0, double peak_lr = 4.5e-4,
                                  double min_lr = 4.5e-6);
};

// Nonnegative weights summing to 1, one per checkpoint (token counts must be
// strictly increasing).
std::vector<double> coefficients(const MergeSchedule& schedule,
                                 const std::vector<CheckpointMeta>& metas);

// Elementwise sum_i w_i * theta_i.
Matrix merge(const std::vector<Matrix>& checkpoints, const std::vector<double>& weights);

}  // namespace quantdesk
