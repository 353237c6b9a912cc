// SPDX-License-Identifier: Apache-2.0
#include "quantdesk/merge.hpp"

#include <cmath>
#include <stdexcept>

namespace quantdesk {

MergeSchedule MergeSchedule::uniform() { return MergeSchedule{}; }

MergeSchedule MergeSchedule::minus_sqrt(double window_tokens, double peak_lr, double min_lr) {
  if (peak_lr <= min_lr) throw std::invalid_argument("MergeSchedule: need peak_lr > min_lr");
  MergeSchedule s;
  s.kind = Kind::MinusSqrtEmulation;
  s.window_tokens = window_tokens;
  s.peak_lr = peak_lr;
  s.min_lr = min_lr;
  return s;
}

std::vector<double> coefficients(const MergeSchedule& schedule,
                                 const std::vector<CheckpointMeta>& metas) {
  const size_t n = metas.size();
  if (n == 0) throw std::invalid_argument("coefficients: empty checkpoint window");
  for (size_t i = 1; i < n; ++i)
    if (metas[i].token_count <= metas[i - 1].token_count)
      throw std::invalid_argument("coefficients: token counts must be strictly increasing");

  if (schedule.kind == MergeSchedule::Kind::Uniform || n == 1)
    return std::vector<double>(n, 1.0 / static_cast<double>(n));

  // Horizon start: last - window when a window is given, otherwise one mean
  // spacing before the first checkpoint (equally spaced checkpoints then get
  // progress i/n, the canonical shape).
  const double first = static_cast<double>(metas.front().token_count);
  const double last = static_cast<double>(metas.back().token_count);
  double start;
  if (schedule.window_tokens > 0.0) {
    start = last - schedule.window_tokens;
    if (first <= start)
      throw std::invalid_argument("coefficients: checkpoints fall outside the merge window");
  } else {
    start = first - (last - first) / static_cast<double>(n - 1);
  }
  const double span = last - start;

  // eta(p) = min + (peak - min)(1 - sqrt(p)); the decrement over interval i
  // is (peak - min)(sqrt(p_i) - sqrt(p_{i-1})), so normalized weights reduce
  // to the sqrt differences.
  std::vector<double> w(n, 0.0);
  double prev_sqrt = 0.0;
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double p = (static_cast<double>(metas[i].token_count) - start) / span;
    const double s = std::sqrt(p);
    w[i] = s - prev_sqrt;
    prev_sqrt = s;
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

Matrix merge(const std::vector<Matrix>& checkpoints, const std::vector<double>& weights) {
  if (checkpoints.empty()) throw std::invalid_argument("merge: no checkpoints");
  if (checkpoints.size() != weights.size())
    throw std::invalid_argument("merge: weight count does not match checkpoint count");
  const Matrix& first = checkpoints.front();
  for (const Matrix& c : checkpoints)
    if (!c.same_shape(first)) throw std::invalid_argument("merge: checkpoint shape mismatch");

  Matrix out(first.rows, first.cols);
  for (size_t k = 0; k < checkpoints.size(); ++k) {
    const double w = weights[k];
    for (int64_t i = 0; i < out.size(); ++i)
      out.data[static_cast<size_t>(i)] += w * checkpoints[k].data[static_cast<size_t>(i)];
  }
  return out;
}

}  // namespace quantdesk
