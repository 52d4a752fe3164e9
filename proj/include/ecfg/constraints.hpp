#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <vector>

#include "ecfg/factor_graph.hpp"
#include "ecfg/linear_system.hpp"
#include "ecfg/solver.hpp"

namespace ecfg {

struct EqualityHandles {
  EdgeId edge;
  VariableId multiplier;
  ConstraintId constraint;
};

/// Information matrix [[0, I], [I, 0]] of an equality edge of dimension d.
template <typename Scalar>
MatrixX<Scalar> equality_information(Index d) {
  MatrixX<Scalar> omega = MatrixX<Scalar>::Zero(2 * d, 2 * d);
  omega.topRightCorner(d, d).setIdentity();
  omega.bottomLeftCorner(d, d).setIdentity();
  return omega;
}

/// Adds h(x) = 0 as a regular edge over (x, gamma) with error [h(x); gamma]
/// and the antidiagonal identity information. The multiplier node gamma is
/// created here with dimension d. Through the ordinary H = J^T Omega J,
/// b = -J^T Omega e assembly this edge contributes [[0, J_h^T], [J_h, 0]] and
/// [-J_h^T gamma; -h], i.e. exactly the constraint rows and columns of the
/// KKT system.
template <typename Scalar>
EqualityHandles add_equality_constraint(
    FactorGraph<Scalar>& graph, const std::vector<VariableId>& primal_var_ids,
    ErrorFunction<Scalar> h_fn, Index d,
    JacobianFunction<Scalar> h_jacobian_fn = {},
    Scalar initial_multiplier = Scalar(0)) {
  const ConstraintId cid = graph.add_constraint(
      primal_var_ids, h_fn, d, h_jacobian_fn, ConstraintMode::KktEdge);
  const VariableId gamma = graph.add_variable(
      d, VectorX<Scalar>::Constant(d, initial_multiplier), false,
      VariableKind::Multiplier);

  std::vector<VariableId> ids = primal_var_ids;
  ids.push_back(gamma);
  const std::size_t n_primal = primal_var_ids.size();

  ErrorFunction<Scalar> stacked = [h_fn, d, n_primal](const Values<Scalar>& v) {
    const Values<Scalar> primal(v.begin(), v.begin() + n_primal);
    VectorX<Scalar> e(2 * d);
    e << detail::evaluate_checked(h_fn, primal, d, "constraint"), v.back();
    return e;
  };
  JacobianFunction<Scalar> stacked_jacobian =
      [h_fn, h_jacobian_fn, d, n_primal](const Values<Scalar>& v) {
        const Values<Scalar> primal(v.begin(), v.begin() + n_primal);
        const auto Jh = evaluate_jacobian(h_fn, h_jacobian_fn, primal, d);
        std::vector<MatrixX<Scalar>> blocks;
        blocks.reserve(n_primal + 1);
        for (const auto& block : Jh) {
          MatrixX<Scalar> full = MatrixX<Scalar>::Zero(2 * d, block.cols());
          full.topRows(d) = block;
          blocks.push_back(std::move(full));
        }
        MatrixX<Scalar> g = MatrixX<Scalar>::Zero(2 * d, d);
        g.bottomRows(d).setIdentity();
        blocks.push_back(std::move(g));
        return blocks;
      };

  const EdgeId eid = graph.add_edge(ids, std::move(stacked),
                                    equality_information<Scalar>(d),
                                    std::move(stacked_jacobian),
                                    EdgeKind::Equality, cid);
  graph.link_constraint(cid, eid, gamma);
  return {eid, gamma, cid};
}

/// The local (H, b) of an equality edge, ordered (primal blocks..., gamma).
template <typename Scalar>
EdgeContribution<Scalar> equality_edge_contribution(
    const FactorGraph<Scalar>& graph, const Edge<Scalar>& edge) {
  if (edge.kind != EdgeKind::Equality) {
    throw InvalidInput("equality_edge_contribution: not an equality edge");
  }
  return edge_contribution(graph, edge);
}

/// Gauss-Newton over the graph augmented with multiplier nodes; every solve
/// is the KKT solve. Singular KKT systems (dependent constraints) surface as
/// Termination::SolverFailure.
template <typename Scalar>
OptimizationResult<Scalar> optimize_kkt_gauss_newton(
    FactorGraph<Scalar>& graph, const SolverConfig& config = {}) {
  return optimize_gauss_newton(graph, config);
}

/// Soft constraint baseline: a cost edge with error h and information w * I.
template <typename Scalar>
EdgeId add_soft_constraint(FactorGraph<Scalar>& graph,
                           const std::vector<VariableId>& primal_var_ids,
                           ErrorFunction<Scalar> h_fn, Index d, Scalar weight,
                           JacobianFunction<Scalar> h_jacobian_fn = {}) {
  if (!(weight > Scalar(0)) || !std::isfinite(double(weight))) {
    throw InvalidWeight("soft constraint weight must be positive and finite");
  }
  const ConstraintId cid = graph.add_constraint(
      primal_var_ids, h_fn, d, h_jacobian_fn, ConstraintMode::Soft);
  const EdgeId eid = graph.add_edge(
      primal_var_ids, std::move(h_fn), weight * MatrixX<Scalar>::Identity(d, d),
      std::move(h_jacobian_fn), EdgeKind::Cost, cid);
  graph.link_constraint(cid, eid);
  return eid;
}

struct ALConfig {
  double rho_init = 10.0;
  double rho_max = 50000.0;
  double alpha = 10.0;
  int inner_max_iterations = 1;
  double constraint_tol = 1e-6;
  int outer_max_iterations = 100;
  double step_norm_tol = 1e-6;
  double multiplier_init = 0.0;

  void validate() const {
    if (!(rho_init > 0) || !(rho_max > 0) || rho_init > rho_max ||
        !(alpha >= 1) || inner_max_iterations <= 0 || !(constraint_tol > 0) ||
        outer_max_iterations <= 0 || !(step_norm_tol > 0)) {
      throw InvalidInput("invalid augmented Lagrangian configuration");
    }
  }
};

/// Uniform penalty rho and one multiplier vector per constraint, indexed by
/// constraint id. Only Penalty-mode constraints are read or updated.
template <typename Scalar>
struct PenaltyState {
  Scalar rho = Scalar(0);
  std::vector<VectorX<Scalar>> multipliers;
};

template <typename Scalar>
PenaltyState<Scalar> initial_penalty_state(const FactorGraph<Scalar>& graph,
                                           const ALConfig& config) {
  PenaltyState<Scalar> state;
  state.rho = Scalar(config.rho_init);
  for (const auto& c : graph.constraints()) {
    state.multipliers.push_back(
        VectorX<Scalar>::Constant(c.dim, Scalar(config.multiplier_init)));
  }
  return state;
}

inline bool is_penalty(ConstraintMode mode) {
  return mode == ConstraintMode::Penalty;
}

/// Index over primal, non-fixed variables.
template <typename Scalar>
IndexMap build_primal_index(const FactorGraph<Scalar>& graph) {
  return build_index(graph, [](const VariableNode<Scalar>& v) {
    return v.kind() == VariableKind::Primal;
  });
}

/// Inner system of the augmented Lagrangian: cost edges as usual plus, per
/// penalty constraint, H_n = rho J_h^T J_h and b_n = -rho J_h^T h - J_h^T gamma.
template <typename Scalar>
LinearSystem<Scalar> assemble_augmented(const FactorGraph<Scalar>& graph,
                                        const IndexMap& index,
                                        const PenaltyState<Scalar>& state) {
  SystemAccumulator<Scalar> acc(graph, index);
  for (const auto& edge : graph.edges()) {
    if (edge.kind != EdgeKind::Cost) continue;
    acc.add(edge.var_ids, edge_contribution(graph, edge));
  }
  for (const auto& c : graph.constraints()) {
    if (!is_penalty(c.mode)) continue;
    const VectorX<Scalar> h = compute_constraint(graph, c);
    const auto blocks = compute_constraint_jacobian(graph, c);
    const VectorX<Scalar>& gamma = state.multipliers.at(c.id.value);
    EdgeContribution<Scalar> local = weighted_contribution<Scalar>(
        blocks, MatrixX<Scalar>::Identity(c.dim, c.dim) * state.rho, h);
    Index col = 0;
    for (const auto& block : blocks) {
      local.b.segment(col, block.cols()) -= block.transpose() * gamma;
      col += block.cols();
    }
    acc.add(c.var_ids, local);
  }
  return acc.finish();
}

/// One inner Gauss-Newton step on the augmented Lagrangian; primal variables
/// are updated in place. A singular system leaves the graph untouched.
template <typename Scalar>
SolveOutcome<Scalar> al_inner_step(FactorGraph<Scalar>& graph,
                                   const IndexMap& index,
                                   const PenaltyState<Scalar>& state) {
  auto outcome = solve_symmetric_indefinite(assemble_augmented(graph, index, state));
  if (outcome.ok()) apply_step(graph, index, outcome.step);
  return outcome;
}

template <typename Scalar>
SolveOutcome<Scalar> al_inner_step(FactorGraph<Scalar>& graph,
                                   const PenaltyState<Scalar>& state) {
  return al_inner_step(graph, build_primal_index(graph), state);
}

/// gamma <- gamma + rho * h, per constraint.
template <typename Scalar>
PenaltyState<Scalar> al_update_multipliers(
    PenaltyState<Scalar> state, const std::vector<VectorX<Scalar>>& h_values) {
  if (h_values.size() != state.multipliers.size()) {
    throw InvalidDimension("al_update_multipliers: constraint count mismatch");
  }
  for (std::size_t n = 0; n < h_values.size(); ++n) {
    if (h_values[n].size() != state.multipliers[n].size()) {
      throw InvalidDimension("al_update_multipliers: dimension mismatch");
    }
    state.multipliers[n] += state.rho * h_values[n];
  }
  return state;
}

/// rho <- min(rho_max, alpha * rho).
template <typename Scalar>
PenaltyState<Scalar> al_update_penalty(PenaltyState<Scalar> state,
                                       const ALConfig& config) {
  state.rho = std::min(Scalar(config.rho_max), Scalar(config.alpha) * state.rho);
  return state;
}

template <typename Scalar>
struct ALResult : OptimizationResult<Scalar> {
  PenaltyState<Scalar> penalty;
  int outer_iterations = 0;
};

/// Augmented Lagrangian over Penalty-mode constraints. Each outer iteration
/// runs up to inner_max_iterations Gauss-Newton steps, then updates the
/// multipliers with h at the post-step values and grows rho. Stops once
/// ||h||_inf <= constraint_tol and the last inner step is below
/// step_norm_tol. stats.iterations counts every linear solve.
template <typename Scalar>
ALResult<Scalar> optimize_augmented_lagrangian(FactorGraph<Scalar>& graph,
                                               const ALConfig& config = {}) {
  config.validate();
  const IndexMap index = build_primal_index(graph);
  detail::require_free_variable(index);
  SolverConfig inner_config;
  inner_config.step_norm_tol = config.step_norm_tol;

  ALResult<Scalar> result;
  auto& stats = result.stats;
  PenaltyState<Scalar> state = initial_penalty_state(graph, config);
  stats.termination = Termination::MaxIterations;

  auto finish = [&](Termination t) {
    stats.termination = t;
    result.values = graph.values();
    result.constraint_violation = constraint_violation(graph);
    result.penalty = state;
    return result;
  };

  for (int outer = 0; outer < config.outer_max_iterations; ++outer) {
    result.outer_iterations = outer + 1;
    bool small_step = false;
    for (int inner = 0; inner < config.inner_max_iterations; ++inner) {
      const auto outcome = al_inner_step(graph, index, state);
      if (!outcome.ok()) return finish(Termination::SolverFailure);
      stats.record(outcome.step.norm(), total_cost(graph, EdgeKind::Cost));
      small_step = check_termination(outcome.step, inner_config);
      if (small_step) break;
    }

    std::vector<VectorX<Scalar>> h(graph.constraints().size());
    Scalar violation(0);
    for (const auto& c : graph.constraints()) {
      if (is_penalty(c.mode)) {
        h[c.id.value] = compute_constraint(graph, c);
        violation = std::max(violation, h[c.id.value].cwiseAbs().maxCoeff());
      } else {
        h[c.id.value] = VectorX<Scalar>::Zero(c.dim);
      }
    }
    state = al_update_multipliers(std::move(state), h);
    if (double(violation) <= config.constraint_tol && small_step) {
      return finish(Termination::StepTolerance);
    }
    state = al_update_penalty(std::move(state), config);
  }
  return finish(Termination::MaxIterations);
}

}  // namespace ecfg
