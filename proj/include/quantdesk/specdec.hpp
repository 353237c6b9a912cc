// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "quantdesk/numerics.hpp"

namespace quantdesk {

// Per-verification-step accounting: draft length and accepted prefix length.
struct AcceptanceEvent {
  int64_t draft_len = 0;
  int64_t accepted_prefix = 0;
};

using AcceptanceEvents = std::vector<AcceptanceEvent>;

// Longest common prefix of the draft and the target's argmax continuation.
int64_t verify_greedy(const std::vector<int64_t>& draft,
                      const std::vector<int64_t>& target_argmax);

// Mean over events of (accepted_prefix + 1): the accepted draft prefix plus
// the one token the verifier emits at the first mismatch or after a full
// accept. Always in [1, D + 1].
double acceptance_length(const AcceptanceEvents& events);

// rate[k] = fraction of events whose accepted prefix covers draft index k.
// Requires a uniform draft length; the vector is non-increasing and satisfies
// acceptance_length = 1 + sum_k rate[k].
std::vector<double> acceptance_by_index(const AcceptanceEvents& events);

// Tiny tabular LM: conditional next-token distributions keyed by the last
// `window` tokens (contexts shorter than the window are left-padded with
// token 0). Missing contexts fall back to the uniform distribution.
struct ToyLm {
  int64_t vocab = 0;
  int64_t window = 1;
  std::map<std::vector<int64_t>, std::vector<double>> table;

  // Conditional distribution sums must be 1 within 1e-12.
  void validate() const;
  std::vector<int64_t> context_key(const std::vector<int64_t>& context) const;
  std::vector<double> dist(const std::vector<int64_t>& context) const;
  int64_t argmax(const std::vector<int64_t>& context) const;
  int64_t sample(const std::vector<int64_t>& context, PhiloxStream& rng) const;

  // Random dense table over all vocab^window contexts.
  static ToyLm random(int64_t vocab, int64_t window, PhiloxKey key);
  // (1 - lambda) * this + lambda * uniform, rowwise.
  ToyLm mix_with_uniform(double lambda) const;
};

enum class VerifyMode : uint8_t { Greedy, LosslessSampling };

struct GenerationResult {
  std::vector<int64_t> tokens;  // emitted tokens, in order
  AcceptanceEvents events;
};

// Runs `steps` verification steps of draft-then-verify generation. The
// drafter samples draft tokens from its own conditionals, conditioning on its
// previously drafted tokens (recursive drafting). Greedy mode accepts the
// longest prefix matching the target argmax; LosslessSampling applies the
// accept-with-probability min(1, p_target/p_draft) rule with residual
// resampling, which makes emitted tokens exactly target-distributed.
GenerationResult simulate_generation(const ToyLm& target, const ToyLm& drafter, int64_t draft_len,
                                     int64_t steps, VerifyMode mode, PhiloxStream& rng,
                                     std::vector<int64_t> initial_context = {});

}  // namespace quantdesk
