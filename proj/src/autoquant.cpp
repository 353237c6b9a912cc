// SPDX-License-Identifier: Apache-2.0
#include "quantdesk/autoquant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace quantdesk {

double sensitivity(const std::vector<double>& delta_y, const std::vector<double>& grad_y) {
  if (delta_y.size() != grad_y.size())
    throw std::invalid_argument("sensitivity: length mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < delta_y.size(); ++i) {
    const double t = delta_y[i] * grad_y[i];
    acc += t * t;
  }
  return acc;
}

namespace {

std::vector<FormatCandidate> sorted_by_label(std::vector<FormatCandidate> c) {
  std::sort(c.begin(), c.end(),
            [](const FormatCandidate& a, const FormatCandidate& b) { return a.format < b.format; });
  return c;
}

void require_same_labels(const std::vector<FormatCandidate>& a,
                         const std::vector<FormatCandidate>& b, const std::string& context) {
  if (a.size() != b.size()) throw std::invalid_argument(context + ": candidate format sets differ");
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i].format != b[i].format)
      throw std::invalid_argument(context + ": candidate format sets differ");
}

}  // namespace

std::vector<FormatCandidate> aggregate_fusion(
    const std::vector<std::vector<FormatCandidate>>& members) {
  if (members.empty()) throw std::invalid_argument("aggregate_fusion: empty member list");
  std::vector<FormatCandidate> acc = sorted_by_label(members.front());
  for (size_t m = 1; m < members.size(); ++m) {
    const std::vector<FormatCandidate> cur = sorted_by_label(members[m]);
    require_same_labels(acc, cur, "aggregate_fusion");
    for (size_t i = 0; i < acc.size(); ++i) {
      acc[i].sensitivity += cur[i].sensitivity;
      acc[i].cost += cur[i].cost;
    }
  }
  return acc;
}

int format_bits(const std::string& label) {
  if (label == "nvfp4") return 4;
  if (label == "fp8") return 8;
  if (label == "bf16") return 16;
  throw std::invalid_argument("format_bits: unknown format label '" + label + "'");
}

double effective_bits(const std::map<std::string, std::string>& format_by_unit,
                      const std::map<std::string, int64_t>& params_per_unit) {
  double bits_sum = 0.0, params_sum = 0.0;
  for (const auto& [unit, format] : format_by_unit) {
    const auto it = params_per_unit.find(unit);
    if (it == params_per_unit.end())
      throw std::invalid_argument("effective_bits: missing params for unit '" + unit + "'");
    bits_sum += static_cast<double>(format_bits(format)) * static_cast<double>(it->second);
    params_sum += static_cast<double>(it->second);
  }
  if (params_sum == 0.0) throw std::invalid_argument("effective_bits: zero total params");
  return bits_sum / params_sum;
}

namespace {

int64_t effective_bits_params(const AssignmentProblem& problem, const std::string& node_id) {
  const auto it = problem.params_per_node.find(node_id);
  if (it == problem.params_per_node.end())
    throw std::invalid_argument("solve: effective-bits problem missing params for node '" +
                                node_id + "'");
  if (it->second <= 0) throw std::invalid_argument("solve: params must be positive");
  return it->second;
}

}  // namespace

std::vector<DecisionUnit> decision_units(const AssignmentProblem& problem) {
  std::map<std::string, const GroupConstraint*> group_by_id;
  for (const auto& g : problem.groups) {
    if (group_by_id.count(g.id)) throw std::invalid_argument("solve: duplicate group id " + g.id);
    group_by_id[g.id] = &g;
  }

  std::map<std::string, const OperatorNode*> node_by_id;
  for (const auto& n : problem.nodes) {
    if (n.candidates.empty())
      throw std::invalid_argument("solve: node '" + n.id + "' has no candidates");
    if (node_by_id.count(n.id)) throw std::invalid_argument("solve: duplicate node id " + n.id);
    node_by_id[n.id] = &n;
    if (n.group && !group_by_id.count(*n.group))
      throw std::invalid_argument("solve: node '" + n.id + "' names unknown group " + *n.group);
  }

  auto node_costs = [&](const OperatorNode& n) {
    std::vector<FormatCandidate> c = sorted_by_label(n.candidates);
    if (problem.cost_unit == CostUnit::EffectiveBits) {
      const double params = static_cast<double>(effective_bits_params(problem, n.id));
      for (auto& cand : c) cand.cost = static_cast<double>(format_bits(cand.format)) * params;
    }
    return c;
  };

  std::vector<DecisionUnit> units;
  for (const auto& n : problem.nodes) {
    if (!n.group) units.push_back(DecisionUnit{n.id, node_costs(n)});
  }
  for (const auto& g : problem.groups) {
    std::vector<std::vector<FormatCandidate>> member_cands;
    for (const auto& mid : g.members) {
      const auto it = node_by_id.find(mid);
      if (it == node_by_id.end())
        throw std::invalid_argument("solve: group member '" + mid + "' not found");
      if (!it->second->group || *it->second->group != g.id)
        throw std::invalid_argument("solve: node '" + mid + "' does not name group " + g.id);
      member_cands.push_back(node_costs(*it->second));
    }
    if (member_cands.empty())
      throw std::invalid_argument("solve: group '" + g.id + "' has no members");
    std::vector<FormatCandidate> agg = aggregate_fusion(member_cands);
    if (g.kind == GroupConstraint::Kind::MoeSparseExperts) {
      // Cost stays additive; sensitivity comes from the block-output
      // measurement provided on the group.
      for (auto& cand : agg) {
        const auto it = g.group_sensitivity.find(cand.format);
        if (it == g.group_sensitivity.end())
          throw std::invalid_argument("solve: group '" + g.id +
                                      "' missing block sensitivity for format " + cand.format);
        cand.sensitivity = it->second;
      }
    }
    units.push_back(DecisionUnit{g.id, std::move(agg)});
  }
  std::sort(units.begin(), units.end(),
            [](const DecisionUnit& a, const DecisionUnit& b) { return a.id < b.id; });
  for (size_t i = 1; i < units.size(); ++i)
    if (units[i].id == units[i - 1].id)
      throw std::invalid_argument("solve: unit id used by both a node and a group: " + units[i].id);
  return units;
}

std::vector<DecisionUnit> prune_dominated(const std::vector<DecisionUnit>& units) {
  std::vector<DecisionUnit> out = units;
  for (auto& u : out) {
    std::vector<FormatCandidate> kept;
    for (const auto& c : u.candidates) {
      bool dominated = false;
      for (const auto& other : u.candidates) {
        if (&other == &c) continue;
        const bool better_or_equal = other.sensitivity <= c.sensitivity && other.cost <= c.cost;
        const bool strictly_better = other.sensitivity < c.sensitivity || other.cost < c.cost;
        // Keep the lexicographically-smaller label on exact (S, C) ties so
        // tie-breaking stays stable.
        const bool tie = other.sensitivity == c.sensitivity && other.cost == c.cost;
        if (better_or_equal && (strictly_better || (tie && other.format < c.format))) {
          dominated = true;
          break;
        }
      }
      if (!dominated) kept.push_back(c);
    }
    u.candidates = std::move(kept);
  }
  return out;
}

namespace {

int64_t to_cost_units(double cost, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("solve: cost_step must be positive");
  const double scaled = cost / step;
  const double rounded = std::llround(scaled);
  if (std::fabs(scaled - rounded) > 1e-6)
    throw std::invalid_argument("solve: cost " + std::to_string(cost) +
                                " is not an integer multiple of cost_step");
  if (rounded < 0) throw std::invalid_argument("solve: negative cost");
  return static_cast<int64_t>(rounded);
}

}  // namespace

Assignment solve(const AssignmentProblem& problem) {
  const std::vector<DecisionUnit> units = decision_units(problem);
  const size_t n_units = units.size();

  double budget = problem.budget;
  if (problem.cost_unit == CostUnit::EffectiveBits) {
    double total_params = 0.0;
    for (const auto& u : units) {
      // Group params are the member sums, already reflected in aggregated
      // costs; recover them from any candidate (cost = bits * params).
      const auto& c = u.candidates.front();
      total_params += c.cost / static_cast<double>(format_bits(c.format));
    }
    budget = problem.budget * total_params;
  }

  std::vector<std::vector<int64_t>> unit_costs(n_units);
  int64_t min_total = 0;
  for (size_t u = 0; u < n_units; ++u) {
    int64_t unit_min = std::numeric_limits<int64_t>::max();
    for (const auto& c : units[u].candidates) {
      const int64_t cu = to_cost_units(c.cost, problem.cost_step);
      unit_costs[u].push_back(cu);
      unit_min = std::min(unit_min, cu);
    }
    min_total += unit_min;
  }

  Assignment result;
  result.min_achievable_cost = static_cast<double>(min_total) * problem.cost_step;
  const int64_t cap = static_cast<int64_t>(std::floor(budget / problem.cost_step + 1e-9));
  if (min_total > cap) {
    result.feasible = false;
    return result;
  }

  // Suffix DP over discretized cost: best[u][c] = minimal total sensitivity
  // achievable by units u..end with capacity c. Walking units front-to-back
  // and picking the smallest format label that attains the optimum yields the
  // lexicographically-minimal optimal assignment.
  const size_t width = static_cast<size_t>(cap) + 1;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best(n_units + 1, std::vector<double>(width, kInf));
  std::fill(best[n_units].begin(), best[n_units].end(), 0.0);
  for (size_t u = n_units; u-- > 0;) {
    for (int64_t c = 0; c <= cap; ++c) {
      double b = kInf;
      for (size_t f = 0; f < units[u].candidates.size(); ++f) {
        const int64_t cu = unit_costs[u][f];
        if (cu > c) continue;
        const double sub = best[u + 1][static_cast<size_t>(c - cu)];
        if (sub == kInf) continue;
        b = std::min(b, units[u].candidates[f].sensitivity + sub);
      }
      best[u][static_cast<size_t>(c)] = b;
    }
  }

  result.feasible = true;
  result.total_sensitivity = 0.0;
  int64_t remaining = cap;
  int64_t used = 0;
  for (size_t u = 0; u < n_units; ++u) {
    const double target = best[u][static_cast<size_t>(remaining)];
    for (size_t f = 0; f < units[u].candidates.size(); ++f) {  // label-sorted order
      const int64_t cu = unit_costs[u][f];
      if (cu > remaining) continue;
      const double sub = best[u + 1][static_cast<size_t>(remaining - cu)];
      if (sub == kInf) continue;
      if (units[u].candidates[f].sensitivity + sub == target) {
        result.format_by_unit[units[u].id] = units[u].candidates[f].format;
        result.total_sensitivity += units[u].candidates[f].sensitivity;
        remaining -= cu;
        used += cu;
        break;
      }
    }
  }
  result.total_cost = static_cast<double>(used) * problem.cost_step;
  return result;
}

}  // namespace quantdesk
