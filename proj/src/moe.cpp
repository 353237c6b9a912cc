// SPDX-License-Identifier: Apache-2.0
#include "quantdesk/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace quantdesk {

void MoeConfig::validate() const {
  if (d < 1 || latent < 1 || experts < 1 || expert_inner < 1)
    throw std::invalid_argument("MoeConfig: dimensions must be positive");
  if (top_k < 1 || top_k > experts) throw std::invalid_argument("MoeConfig: need 1 <= K <= N");
  if (latent > d) throw std::invalid_argument("MoeConfig: latent dim cannot exceed d");
  if (matrices_per_expert != 2 && matrices_per_expert != 3)
    throw std::invalid_argument("MoeConfig: matrices_per_expert must be 2 or 3");
}

MoeConfig latent_variant(const MoeConfig& standard, int64_t alpha) {
  standard.validate();
  if (standard.latent != standard.d)
    throw std::invalid_argument("latent_variant: baseline must be a standard config");
  if (alpha < 1 || standard.d % alpha != 0)
    throw std::invalid_argument("latent_variant: alpha must divide d");
  MoeConfig c = standard;
  c.latent = standard.d / alpha;
  c.experts = standard.experts * alpha;
  c.top_k = standard.top_k * alpha;
  c.validate();
  return c;
}

MoeConfig standard_counterpart(const MoeConfig& latent_cfg, int64_t alpha) {
  latent_cfg.validate();
  if (alpha < 1) throw std::invalid_argument("standard_counterpart: alpha must be >= 1");
  if (latent_cfg.experts % alpha != 0 || latent_cfg.top_k % alpha != 0)
    throw std::invalid_argument("standard_counterpart: N and K must be divisible by alpha");
  if (latent_cfg.latent * alpha != latent_cfg.d)
    throw std::invalid_argument("standard_counterpart: latent * alpha must equal d");
  MoeConfig c = latent_cfg;
  c.latent = latent_cfg.d;
  c.experts = latent_cfg.experts / alpha;
  c.top_k = latent_cfg.top_k / alpha;
  c.validate();
  return c;
}

namespace {

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

double silu(double t) { return t * sigmoid(t); }

std::vector<double> matvec(const Matrix& m, const std::vector<double>& v) {
  if (m.cols != static_cast<int64_t>(v.size()))
    throw std::invalid_argument("matvec: dimension mismatch");
  std::vector<double> out(static_cast<size_t>(m.rows), 0.0);
  for (int64_t i = 0; i < m.rows; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < m.cols; ++j) acc += m.at(i, j) * v[static_cast<size_t>(j)];
    out[static_cast<size_t>(i)] = acc;
  }
  return out;
}

}  // namespace

RouteResult route_from_scores(const std::vector<double>& scores, const std::vector<double>& bias,
                              int64_t k) {
  const int64_t n = static_cast<int64_t>(scores.size());
  if (bias.size() != scores.size())
    throw std::invalid_argument("route: bias length must equal expert count");
  if (k < 1 || k > n) throw std::invalid_argument("route: need 1 <= K <= N");

  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    const double sa = scores[static_cast<size_t>(a)] + bias[static_cast<size_t>(a)];
    const double sb = scores[static_cast<size_t>(b)] + bias[static_cast<size_t>(b)];
    if (sa != sb) return sa > sb;
    return a < b;  // ties toward the lowest expert id
  });

  RouteResult res;
  res.scores = scores;
  res.selected.assign(order.begin(), order.begin() + k);
  res.combine_weights.resize(static_cast<size_t>(k));
  double sum = 0.0;
  for (int64_t i = 0; i < k; ++i) sum += scores[static_cast<size_t>(res.selected[static_cast<size_t>(i)])];
  for (int64_t i = 0; i < k; ++i) {
    const double raw = scores[static_cast<size_t>(res.selected[static_cast<size_t>(i)])];
    res.combine_weights[static_cast<size_t>(i)] =
        sum == 0.0 ? 1.0 / static_cast<double>(k) : raw / sum;
  }
  return res;
}

RouteResult route(const std::vector<double>& x_routing, const RouterState& router, int64_t k) {
  const std::vector<double> logits = matvec(router.gate, x_routing);
  std::vector<double> scores(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) scores[i] = sigmoid(logits[i]);
  return route_from_scores(scores, router.bias, k);
}

std::vector<double> expert_forward(const ExpertParams& e, const std::vector<double>& z) {
  std::vector<double> inner = matvec(e.w1, z);
  if (e.w3.rows > 0) {
    const std::vector<double> gate_branch = matvec(e.w3, z);
    if (gate_branch.size() != inner.size())
      throw std::invalid_argument("expert_forward: gate branch dim mismatch");
    for (size_t i = 0; i < inner.size(); ++i) inner[i] = silu(inner[i]) * gate_branch[i];
  } else {
    for (double& v : inner) v = silu(v);
  }
  return matvec(e.w2, inner);
}

namespace {

std::vector<double> routed_output(const std::vector<double>& z, const MoeParams& params,
                                  const RouteResult& routing) {
  std::vector<double> acc(z.size(), 0.0);
  for (size_t i = 0; i < routing.selected.size(); ++i) {
    const auto& expert = params.experts.at(static_cast<size_t>(routing.selected[i]));
    const std::vector<double> y = expert_forward(expert, z);
    for (size_t j = 0; j < acc.size(); ++j) acc[j] += routing.combine_weights[i] * y[j];
  }
  return acc;
}

void add_shared(std::vector<double>& out, const MoeParams& params, const std::vector<double>& x) {
  if (params.shared.w1.rows == 0) return;
  const std::vector<double> s = expert_forward(params.shared, x);
  if (s.size() != out.size()) throw std::invalid_argument("shared expert output dim mismatch");
  for (size_t i = 0; i < out.size(); ++i) out[i] += s[i];
}

}  // namespace

std::vector<double> forward_standard(const std::vector<double>& x, const MoeParams& params,
                                     const RouterState& router, const MoeConfig& cfg) {
  cfg.validate();
  if (cfg.latent != cfg.d)
    throw std::invalid_argument("forward_standard: config must have latent == d");
  if (static_cast<int64_t>(x.size()) != cfg.d)
    throw std::invalid_argument("forward_standard: input dim mismatch");
  const RouteResult routing = route(x, router, cfg.top_k);
  std::vector<double> out = routed_output(x, params, routing);
  add_shared(out, params, x);
  return out;
}

std::vector<double> forward_latent(const std::vector<double>& x, const MoeParams& params,
                                   const RouterState& router, const MoeConfig& cfg) {
  cfg.validate();
  if (static_cast<int64_t>(x.size()) != cfg.d)
    throw std::invalid_argument("forward_latent: input dim mismatch");
  if (params.w_down.rows != cfg.latent || params.w_down.cols != cfg.d)
    throw std::invalid_argument("forward_latent: w_down must be latent x d");
  if (params.w_up.rows != cfg.d || params.w_up.cols != cfg.latent)
    throw std::invalid_argument("forward_latent: w_up must be d x latent");

  // Routing consumes the full-dimension token.
  const RouteResult routing = route(x, router, cfg.top_k);
  const std::vector<double> z = matvec(params.w_down, x);
  const std::vector<double> routed = routed_output(z, params, routing);
  std::vector<double> out = matvec(params.w_up, routed);
  add_shared(out, params, x);
  return out;
}

RouterState update_bias_auxfree(RouterState router, const std::vector<double>& loads) {
  if (loads.size() != router.bias.size())
    throw std::invalid_argument("update_bias_auxfree: loads length must equal expert count");
  double mean = 0.0;
  for (double l : loads) {
    if (l < 0.0) throw std::invalid_argument("update_bias_auxfree: negative load");
    mean += l;
  }
  mean /= static_cast<double>(loads.size());
  for (size_t i = 0; i < loads.size(); ++i) {
    const double diff = mean - loads[i];
    const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    router.bias[i] += router.bias_update_rate * sign;
  }
  return router;
}

double load_balance_loss(const std::vector<double>& routed_fraction,
                         const std::vector<double>& mean_probability, double coefficient) {
  if (routed_fraction.size() != mean_probability.size())
    throw std::invalid_argument("load_balance_loss: length mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < routed_fraction.size(); ++i)
    acc += routed_fraction[i] * mean_probability[i];
  return coefficient * acc;
}

CostReport cost_report(const MoeConfig& cfg) {
  cfg.validate();
  CostReport r;
  const double k = static_cast<double>(cfg.top_k);
  const double latent = static_cast<double>(cfg.latent);
  const double m = static_cast<double>(cfg.expert_inner);
  r.routed_weight_elements_per_token = k * cfg.matrices_per_expert * latent * m;
  r.alltoall_elements_per_token = 2.0 * k * latent;
  r.dense_latent_projection_flops_per_token =
      cfg.is_latent() ? 2.0 * static_cast<double>(cfg.d) * latent * 2.0 : 0.0;
  r.log10_combinations = (std::lgamma(static_cast<double>(cfg.experts) + 1.0) -
                          std::lgamma(static_cast<double>(cfg.top_k) + 1.0) -
                          std::lgamma(static_cast<double>(cfg.experts - cfg.top_k) + 1.0)) /
                         std::log(10.0);
  return r;
}

}  // namespace quantdesk
