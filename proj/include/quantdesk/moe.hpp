// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "quantdesk/tensor.hpp"

namespace quantdesk {

// Expert-layer dimensions. A latent variant keeps the per-token routed
// weight load and all-to-all volume of its standard baseline by scaling the
// expert count and top-k by alpha = d / latent while experts shrink to the
// latent dimension.
struct MoeConfig {
  int64_t d = 0;                   // hidden dim
  int64_t latent = 0;              // expert/routing compute dim (== d for standard MoE)
  int64_t experts = 0;             // N
  int64_t top_k = 0;               // K
  int64_t expert_inner = 0;        // m
  int64_t shared_inner = 0;        // shared-expert intermediate dim
  int matrices_per_expert = 2;     // 2 = plain FFN, 3 = gated

  double alpha() const { return static_cast<double>(d) / static_cast<double>(latent); }
  bool is_latent() const { return latent < d; }
  void validate() const;
};

// Derive the latent variant of a standard config: latent = d/alpha,
// N' = alpha*N, K' = alpha*K. alpha must divide d.
MoeConfig latent_variant(const MoeConfig& standard, int64_t alpha);
// Inverse derivation; throws when K or N is not divisible by alpha.
MoeConfig standard_counterpart(const MoeConfig& latent_cfg, int64_t alpha);

struct RouterState {
  Matrix gate;               // N x routing_dim
  std::vector<double> bias;  // length N; participates in selection only
  double bias_update_rate = 1e-3;
  double balance_coefficient = 1e-4;
};

struct RouteResult {
  std::vector<int64_t> selected;        // K expert ids, selection-score order
  std::vector<double> combine_weights;  // normalized raw sigmoid scores
  std::vector<double> scores;           // all N sigmoid scores
};

// scores = sigmoid(gate * x); selection = top-k of (score + bias) with ties
// broken toward the lowest expert id; combine weights are the selected raw
// scores normalized to sum 1 (bias never enters the weights).
RouteResult route(const std::vector<double>& x_routing, const RouterState& router, int64_t k);
// Same, starting from precomputed sigmoid scores.
RouteResult route_from_scores(const std::vector<double>& scores, const std::vector<double>& bias,
                              int64_t k);

// Expert FFN in dimension `dim`: out = w2 * silu(w1 * z), with an elementwise
// gate branch (w3 * z) when three matrices are present.
struct ExpertParams {
  Matrix w1;  // inner x dim
  Matrix w2;  // dim x inner
  Matrix w3;  // inner x dim, gated variant only (rows == 0 otherwise)
};

std::vector<double> expert_forward(const ExpertParams& e, const std::vector<double>& z);

struct MoeParams {
  std::vector<ExpertParams> experts;
  ExpertParams shared;  // dims d x shared_inner; empty w1 disables the shared expert
  Matrix w_down;        // latent x d (latent variant only)
  Matrix w_up;          // d x latent (latent variant only)
};

// Standard MoE forward: experts and routing in dimension d.
std::vector<double> forward_standard(const std::vector<double>& x, const MoeParams& params,
                                     const RouterState& router, const MoeConfig& cfg);

// Latent forward: z = w_down * x; routed experts run in the latent dim and
// the aggregated output maps back through w_up. The routing gate and the
// shared expert consume the full-dimension x.
std::vector<double> forward_latent(const std::vector<double>& x, const MoeParams& params,
                                   const RouterState& router, const MoeConfig& cfg);

// bias_i += rate * sign(mean(loads) - loads_i). Loads are per-expert token
// counts; negative loads are rejected.
RouterState update_bias_auxfree(RouterState router, const std::vector<double>& loads);

// coefficient * sum_i f_i * P_i, with f_i the fraction of tokens that
// selected expert i (sums to K when every token routes K ways) and P_i the
// mean router score. Uniform f = K/N and P = p gives coefficient * K * p.
double load_balance_loss(const std::vector<double>& routed_fraction,
                         const std::vector<double>& mean_probability, double coefficient);

struct CostReport {
  double routed_weight_elements_per_token = 0.0;  // K * matrices * latent * m
  double alltoall_elements_per_token = 0.0;       // 2 * K * latent (dispatch + combine)
  double dense_latent_projection_flops_per_token = 0.0;
  double log10_combinations = 0.0;  // log10 C(N, K)
};

CostReport cost_report(const MoeConfig& cfg);

}  // namespace quantdesk
