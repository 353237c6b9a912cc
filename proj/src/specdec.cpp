// SPDX-License-Identifier: Apache-2.0
#include "quantdesk/specdec.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace quantdesk {

int64_t verify_greedy(const std::vector<int64_t>& draft,
                      const std::vector<int64_t>& target_argmax) {
  if (draft.size() != target_argmax.size())
    throw std::invalid_argument("verify_greedy: length mismatch");
  int64_t n = 0;
  while (n < static_cast<int64_t>(draft.size()) &&
         draft[static_cast<size_t>(n)] == target_argmax[static_cast<size_t>(n)])
    ++n;
  return n;
}

double acceptance_length(const AcceptanceEvents& events) {
  if (events.empty()) throw std::invalid_argument("acceptance_length: no events");
  double acc = 0.0;
  for (const auto& e : events) {
    if (e.accepted_prefix < 0 || e.accepted_prefix > e.draft_len)
      throw std::invalid_argument("acceptance_length: accepted prefix out of range");
    acc += static_cast<double>(e.accepted_prefix + 1);
  }
  return acc / static_cast<double>(events.size());
}

std::vector<double> acceptance_by_index(const AcceptanceEvents& events) {
  if (events.empty()) throw std::invalid_argument("acceptance_by_index: no events");
  const int64_t d = events.front().draft_len;
  for (const auto& e : events)
    if (e.draft_len != d)
      throw std::invalid_argument("acceptance_by_index: mixed draft lengths");
  std::vector<double> rate(static_cast<size_t>(d), 0.0);
  for (const auto& e : events)
    for (int64_t k = 0; k < e.accepted_prefix; ++k) rate[static_cast<size_t>(k)] += 1.0;
  for (double& r : rate) r /= static_cast<double>(events.size());
  return rate;
}

void ToyLm::validate() const {
  if (vocab < 1 || window < 0) throw std::invalid_argument("ToyLm: invalid dimensions");
  for (const auto& [ctx, dist] : table) {
    if (static_cast<int64_t>(dist.size()) != vocab)
      throw std::invalid_argument("ToyLm: distribution length must equal vocab");
    double sum = 0.0;
    for (double p : dist) {
      if (p < 0.0) throw std::invalid_argument("ToyLm: negative probability");
      sum += p;
    }
    if (std::fabs(sum - 1.0) > 1e-12)
      throw std::invalid_argument("ToyLm: conditional distribution does not sum to 1");
    (void)ctx;
  }
}

std::vector<int64_t> ToyLm::context_key(const std::vector<int64_t>& context) const {
  std::vector<int64_t> key(static_cast<size_t>(window), 0);
  const int64_t n = static_cast<int64_t>(context.size());
  for (int64_t i = 0; i < window; ++i) {
    const int64_t src = n - window + i;
    if (src >= 0) key[static_cast<size_t>(i)] = context[static_cast<size_t>(src)];
  }
  return key;
}

std::vector<double> ToyLm::dist(const std::vector<int64_t>& context) const {
  const auto it = table.find(context_key(context));
  if (it != table.end()) return it->second;
  return std::vector<double>(static_cast<size_t>(vocab), 1.0 / static_cast<double>(vocab));
}

int64_t ToyLm::argmax(const std::vector<int64_t>& context) const {
  const std::vector<double> d = dist(context);
  return static_cast<int64_t>(std::max_element(d.begin(), d.end()) - d.begin());
}

int64_t ToyLm::sample(const std::vector<int64_t>& context, PhiloxStream& rng) const {
  const std::vector<double> d = dist(context);
  const double u = rng.next_unit();
  double cum = 0.0;
  for (size_t i = 0; i < d.size(); ++i) {
    cum += d[i];
    if (u < cum) return static_cast<int64_t>(i);
  }
  return static_cast<int64_t>(d.size()) - 1;
}

ToyLm ToyLm::random(int64_t vocab, int64_t window, PhiloxKey key) {
  if (vocab < 1 || window < 1) throw std::invalid_argument("ToyLm::random: invalid dimensions");
  ToyLm lm;
  lm.vocab = vocab;
  lm.window = window;
  int64_t contexts = 1;
  for (int64_t i = 0; i < window; ++i) contexts *= vocab;
  PhiloxStream rng(key, /*stream_id=*/0x70795f6c6du);
  for (int64_t c = 0; c < contexts; ++c) {
    std::vector<int64_t> ctx(static_cast<size_t>(window));
    int64_t rem = c;
    for (int64_t i = window - 1; i >= 0; --i) {
      ctx[static_cast<size_t>(i)] = rem % vocab;
      rem /= vocab;
    }
    std::vector<double> dist(static_cast<size_t>(vocab));
    double sum = 0.0;
    for (double& p : dist) {
      p = 0.05 + rng.next_unit();
      sum += p;
    }
    for (double& p : dist) p /= sum;
    lm.table[std::move(ctx)] = std::move(dist);
  }
  return lm;
}

ToyLm ToyLm::mix_with_uniform(double lambda) const {
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("mix_with_uniform: lambda must be in [0, 1]");
  ToyLm out = *this;
  const double u = 1.0 / static_cast<double>(vocab);
  for (auto& [ctx, dist] : out.table) {
    (void)ctx;
    for (double& p : dist) p = (1.0 - lambda) * p + lambda * u;
  }
  return out;
}

namespace {

// Residual distribution max(p_t - p_d, 0), normalized.
std::vector<double> residual(const std::vector<double>& pt, const std::vector<double>& pd) {
  std::vector<double> r(pt.size());
  double sum = 0.0;
  for (size_t i = 0; i < pt.size(); ++i) {
    r[i] = std::max(pt[i] - pd[i], 0.0);
    sum += r[i];
  }
  if (sum == 0.0) return pt;  // identical distributions: rejection is impossible anyway
  for (double& v : r) v /= sum;
  return r;
}

int64_t sample_dist(const std::vector<double>& d, PhiloxStream& rng) {
  const double u = rng.next_unit();
  double cum = 0.0;
  for (size_t i = 0; i < d.size(); ++i) {
    cum += d[i];
    if (u < cum) return static_cast<int64_t>(i);
  }
  return static_cast<int64_t>(d.size()) - 1;
}

}  // namespace

GenerationResult simulate_generation(const ToyLm& target, const ToyLm& drafter, int64_t draft_len,
                                     int64_t steps, VerifyMode mode, PhiloxStream& rng,
                                     std::vector<int64_t> initial_context) {
  if (target.vocab != drafter.vocab)
    throw std::invalid_argument("simulate_generation: vocab mismatch");
  if (draft_len < 1 || steps < 1)
    throw std::invalid_argument("simulate_generation: draft_len and steps must be >= 1");

  GenerationResult result;
  std::vector<int64_t> context = std::move(initial_context);

  for (int64_t step = 0; step < steps; ++step) {
    // Recursive drafting: the drafter conditions on its own draft tokens.
    std::vector<int64_t> draft;
    std::vector<int64_t> draft_ctx = context;
    draft.reserve(static_cast<size_t>(draft_len));
    for (int64_t i = 0; i < draft_len; ++i) {
      const int64_t tok = drafter.sample(draft_ctx, rng);
      draft.push_back(tok);
      draft_ctx.push_back(tok);
    }

    int64_t accepted = 0;
    std::vector<int64_t> emitted;
    if (mode == VerifyMode::Greedy) {
      std::vector<int64_t> target_tokens;
      std::vector<int64_t> verify_ctx = context;
      for (int64_t i = 0; i < draft_len; ++i) {
        target_tokens.push_back(target.argmax(verify_ctx));
        verify_ctx.push_back(draft[static_cast<size_t>(i)]);
      }
      accepted = verify_greedy(draft, target_tokens);
      emitted.assign(draft.begin(), draft.begin() + accepted);
      if (accepted < draft_len) {
        emitted.push_back(target_tokens[static_cast<size_t>(accepted)]);
      } else {
        std::vector<int64_t> full_ctx = context;
        full_ctx.insert(full_ctx.end(), draft.begin(), draft.end());
        emitted.push_back(target.argmax(full_ctx));
      }
    } else {
      std::vector<int64_t> verify_ctx = context;
      bool rejected = false;
      for (int64_t i = 0; i < draft_len; ++i) {
        const std::vector<double> pt = target.dist(verify_ctx);
        const std::vector<double> pd = drafter.dist(verify_ctx);
        const int64_t tok = draft[static_cast<size_t>(i)];
        const double ratio = pd[static_cast<size_t>(tok)] == 0.0
                                 ? 1.0
                                 : pt[static_cast<size_t>(tok)] / pd[static_cast<size_t>(tok)];
        const double u = rng.next_unit();
        if (u < std::min(1.0, ratio)) {
          ++accepted;
          emitted.push_back(tok);
          verify_ctx.push_back(tok);
        } else {
          emitted.push_back(sample_dist(residual(pt, pd), rng));
          rejected = true;
          break;
        }
      }
      if (!rejected) emitted.push_back(sample_dist(target.dist(verify_ctx), rng));
    }

    context.insert(context.end(), emitted.begin(), emitted.end());
    result.tokens.insert(result.tokens.end(), emitted.begin(), emitted.end());
    result.events.push_back(AcceptanceEvent{draft_len, accepted});
  }
  return result;
}

}  // namespace quantdesk
