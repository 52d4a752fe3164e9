#pragma once

#include <Eigen/Core>

#include <limits>
#include <vector>

#include "ecfg/factor_graph.hpp"
#include "ecfg/linear_system.hpp"

namespace ecfg {

struct SolverConfig {
  int max_iterations = 100;
  double step_norm_tol = 1e-6;
  double lm_initial_lambda = 1e-3;
  double lm_factor = 10.0;
  /// LM gives up once lambda exceeds this without finding an acceptable step.
  double lm_max_lambda = 1e12;

  void validate() const {
    if (max_iterations <= 0 || !(step_norm_tol > 0) ||
        !(lm_initial_lambda > 0) || !(lm_factor > 1) || !(lm_max_lambda > 0)) {
      throw InvalidInput("invalid solver configuration");
    }
  }
};

enum class Termination { StepTolerance, MaxIterations, SolverFailure };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::StepTolerance:
      return "StepTolerance";
    case Termination::MaxIterations:
      return "MaxIterations";
    case Termination::SolverFailure:
      return "SolverFailure";
  }
  return "Unknown";
}

/// One entry per linear solve.
template <typename Scalar>
struct IterationStats {
  int iterations = 0;
  std::vector<Scalar> step_norms;
  std::vector<Scalar> cost_trace;
  Termination termination = Termination::MaxIterations;

  void record(Scalar step_norm, Scalar cost) {
    ++iterations;
    step_norms.push_back(step_norm);
    cost_trace.push_back(cost);
  }
};

template <typename Scalar>
struct OptimizationResult {
  std::vector<VectorX<Scalar>> values;  // indexed by variable id
  IterationStats<Scalar> stats;
  Scalar constraint_violation = Scalar(0);  // inf-norm over registered constraints

  bool converged() const {
    return stats.termination == Termination::StepTolerance;
  }
};

/// True iff ||step||_2 <= tol; an empty step is vacuously small.
template <typename Derived>
bool check_termination(const Eigen::MatrixBase<Derived>& step,
                       const SolverConfig& config) {
  return step.size() == 0 || double(step.norm()) <= config.step_norm_tol;
}

/// X <- X + delta for every variable present in `index`.
template <typename Scalar>
void apply_step(FactorGraph<Scalar>& graph, const IndexMap& index,
                const VectorX<Scalar>& delta) {
  for (const auto& v : graph.variables()) {
    const auto offset = index.offset(v.id());
    if (!offset) continue;
    graph.set_value(v.id(), v.value() + delta.segment(*offset, v.dim()));
  }
}

namespace detail {

inline void require_free_variable(const IndexMap& index) {
  if (index.total_dim() == 0) {
    throw InvalidInput("graph has no free variables to optimize");
  }
}

template <typename Scalar>
OptimizationResult<Scalar> finish(const FactorGraph<Scalar>& graph,
                                  IterationStats<Scalar> stats) {
  OptimizationResult<Scalar> result;
  result.values = graph.values();
  result.stats = std::move(stats);
  result.constraint_violation = constraint_violation(graph);
  return result;
}

}  // namespace detail

/// Plain Gauss-Newton over every edge and every non-fixed variable. With
/// equality edges in the graph each solve is the KKT solve and the step norm
/// covers multiplier components too.
template <typename Scalar>
OptimizationResult<Scalar> optimize_gauss_newton(FactorGraph<Scalar>& graph,
                                                 const SolverConfig& config = {}) {
  config.validate();
  const IndexMap index = build_index(graph);
  detail::require_free_variable(index);

  IterationStats<Scalar> stats;
  for (int it = 0; it < config.max_iterations; ++it) {
    const auto outcome = solve_symmetric_indefinite(assemble(graph, index));
    if (!outcome.ok()) {
      stats.termination = Termination::SolverFailure;
      return detail::finish(graph, std::move(stats));
    }
    apply_step(graph, index, outcome.step);
    stats.record(outcome.step.norm(), total_cost(graph, EdgeKind::Cost));
    if (check_termination(outcome.step, config)) {
      stats.termination = Termination::StepTolerance;
      return detail::finish(graph, std::move(stats));
    }
  }
  stats.termination = Termination::MaxIterations;
  return detail::finish(graph, std::move(stats));
}

/// Gauss-Newton with multiplicative lambda control on the primal diagonal.
/// Rejected steps are counted as iterations and leave the cost unchanged.
template <typename Scalar>
OptimizationResult<Scalar> optimize_levenberg_marquardt(
    FactorGraph<Scalar>& graph, const SolverConfig& config = {}) {
  config.validate();
  const IndexMap index = build_index(graph);
  detail::require_free_variable(index);

  IterationStats<Scalar> stats;
  Scalar lambda(config.lm_initial_lambda);
  const Scalar factor(config.lm_factor);
  Scalar cost = total_cost(graph);
  int solves = 0;
  while (solves < config.max_iterations) {
    if (lambda > Scalar(config.lm_max_lambda)) {
      stats.termination = Termination::SolverFailure;
      return detail::finish(graph, std::move(stats));
    }
    const auto system = assemble(graph, index);
    const auto outcome = solve_symmetric_indefinite(
        apply_damping(system, graph, index, lambda));
    ++solves;
    if (!outcome.ok()) {
      lambda *= factor;
      continue;
    }
    const auto backup = graph.values();
    apply_step(graph, index, outcome.step);
    const Scalar new_cost = total_cost(graph);
    const bool small = check_termination(outcome.step, config);
    if (new_cost <= cost) {
      cost = new_cost;
      lambda /= factor;
    } else {
      graph.set_values(backup);
      lambda *= factor;
    }
    stats.record(outcome.step.norm(), cost);
    if (small) {
      stats.termination = Termination::StepTolerance;
      return detail::finish(graph, std::move(stats));
    }
  }
  stats.termination = Termination::MaxIterations;
  return detail::finish(graph, std::move(stats));
}

}  // namespace ecfg
