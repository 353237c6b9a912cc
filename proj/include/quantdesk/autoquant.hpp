// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace quantdesk {

// One precision choice for an operator: label plus measured sensitivity and
// deployment cost under that choice.
struct FormatCandidate {
  std::string format;
  double sensitivity = 0.0;
  double cost = 0.0;
};

struct OperatorNode {
  std::string id;
  std::vector<FormatCandidate> candidates;
  std::optional<std::string> group;
};

// Fusion groups add member sensitivities and costs per format. Sparse-expert
// groups take their sensitivity from a single block-output measurement
// (group_sensitivity) while cost still sums over members.
struct GroupConstraint {
  enum class Kind : uint8_t { Fusion, MoeSparseExperts };
  Kind kind = Kind::Fusion;
  std::string id;
  std::vector<std::string> members;
  std::map<std::string, double> group_sensitivity;  // MoeSparseExperts only
};

enum class CostUnit : uint8_t { Flops, EffectiveBits };

struct AssignmentProblem {
  std::vector<OperatorNode> nodes;
  std::vector<GroupConstraint> groups;
  double budget = 0.0;
  CostUnit cost_unit = CostUnit::Flops;
  // EffectiveBits only: weight-parameter count per node id. Costs become
  // bits(format) * params and the budget is interpreted as an effective
  // bits-per-parameter budget (e.g. 4.75).
  std::map<std::string, int64_t> params_per_node;
  // Costs are divided by this step and must land on integers (within 1e-6);
  // the dynamic program is exact under that condition and rejects otherwise.
  double cost_step = 1.0;
};

// Diagonal-Fisher sensitivity proxy: sum_k (delta_y_k)^2 * (grad_y_k)^2.
double sensitivity(const std::vector<double>& delta_y, const std::vector<double>& grad_y);

// Additive aggregation used for fusion groups: per shared format label,
// summed sensitivity and cost over members. Member candidate lists must carry
// identical format label sets.
std::vector<FormatCandidate> aggregate_fusion(
    const std::vector<std::vector<FormatCandidate>>& members);

struct Assignment {
  bool feasible = false;
  double min_achievable_cost = 0.0;  // reported when infeasible
  std::map<std::string, std::string> format_by_unit;  // node or group id -> format
  double total_sensitivity = 0.0;
  double total_cost = 0.0;
};

// Exact multiple-choice knapsack: minimizes total sensitivity subject to
// total cost <= budget. Deterministic tie-break: lexicographically smallest
// assignment by unit id, then format label.
Assignment solve(const AssignmentProblem& problem);

// Weight bit-width of a format label; knows nvfp4 (4), fp8 (8), bf16 (16).
int format_bits(const std::string& label);

// Parameter-weighted mean bit-width of an assignment.
double effective_bits(const std::map<std::string, std::string>& format_by_unit,
                      const std::map<std::string, int64_t>& params_per_unit);

// Decision units after folding grouped nodes into single aggregated units;
// exposed for oracle checks and report output. Units are sorted by id.
struct DecisionUnit {
  std::string id;
  std::vector<FormatCandidate> candidates;  // sorted by format label
};
std::vector<DecisionUnit> decision_units(const AssignmentProblem& problem);

// Removes candidates dominated in both sensitivity and cost by another
// candidate of the same unit. Never changes the optimum.
std::vector<DecisionUnit> prune_dominated(const std::vector<DecisionUnit>& units);

}  // namespace quantdesk
