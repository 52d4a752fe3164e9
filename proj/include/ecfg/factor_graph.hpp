#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ecfg/errors.hpp"

namespace ecfg {

using Index = Eigen::Index;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

struct VariableId {
  std::size_t value = 0;
  friend auto operator<=>(const VariableId&, const VariableId&) = default;
};

struct EdgeId {
  std::size_t value = 0;
  friend auto operator<=>(const EdgeId&, const EdgeId&) = default;
};

struct ConstraintId {
  std::size_t value = 0;
  friend auto operator<=>(const ConstraintId&, const ConstraintId&) = default;
};

enum class VariableKind { Primal, Multiplier };

/// Cost edges carry a true least-squares term; equality edges carry the
/// stacked [h; gamma] error with the antidiagonal information matrix.
enum class EdgeKind { Cost, Equality };

/// Values of the variables connected to an edge, in the edge's var_ids order.
template <typename Scalar>
using Values = std::vector<VectorX<Scalar>>;

template <typename Scalar>
using ErrorFunction = std::function<VectorX<Scalar>(const Values<Scalar>&)>;

/// Returns one (error_dim x dim_j) block per connected variable.
template <typename Scalar>
using JacobianFunction =
    std::function<std::vector<MatrixX<Scalar>>(const Values<Scalar>&)>;

template <typename Scalar>
class VariableNode {
 public:
  VariableNode(VariableId id, VectorX<Scalar> value, bool fixed,
               VariableKind kind)
      : id_(id), value_(std::move(value)), fixed_(fixed), kind_(kind) {}

  VariableId id() const { return id_; }
  Index dim() const { return value_.size(); }
  const VectorX<Scalar>& value() const { return value_; }
  bool fixed() const { return fixed_; }
  VariableKind kind() const { return kind_; }

  void set_value(const VectorX<Scalar>& v) {
    if (v.size() != dim()) {
      throw InvalidDimension("variable " + std::to_string(id_.value) +
                             ": expected dimension " + std::to_string(dim()) +
                             ", got " + std::to_string(v.size()));
    }
    value_ = v;
  }

 private:
  VariableId id_;
  VectorX<Scalar> value_;
  bool fixed_;
  VariableKind kind_;
};

template <typename Scalar>
struct Edge {
  EdgeId id;
  std::vector<VariableId> var_ids;
  Index error_dim = 0;
  MatrixX<Scalar> information;
  ErrorFunction<Scalar> error_fn;
  JacobianFunction<Scalar> jacobian_fn;  // empty: finite differences
  EdgeKind kind = EdgeKind::Cost;
  std::optional<ConstraintId> constraint;
};

/// How a registered constraint is enforced.
///   Penalty: handled by the augmented Lagrangian solver's penalty state.
///   KktEdge: realized as an equality edge with a multiplier node.
///   Soft:    realized as a weighted cost edge.
///   Monitor: not enforced; only reported through constraint_violation().
enum class ConstraintMode { Penalty, KktEdge, Soft, Monitor };

/// An equality constraint h(x) = 0 of dimension `dim`. When realized as an
/// edge, `edge` (and `multiplier` for KKT edges) point at what was generated.
template <typename Scalar>
struct Constraint {
  ConstraintId id;
  ConstraintMode mode = ConstraintMode::Penalty;
  std::vector<VariableId> var_ids;
  Index dim = 0;
  ErrorFunction<Scalar> h_fn;
  JacobianFunction<Scalar> h_jacobian_fn;
  std::optional<VariableId> multiplier;
  std::optional<EdgeId> edge;
};

template <typename Scalar>
class FactorGraph {
 public:
  using Vector = VectorX<Scalar>;
  using Matrix = MatrixX<Scalar>;

  VariableId add_variable(Index dim, const Vector& initial, bool fixed = false,
                          VariableKind kind = VariableKind::Primal) {
    if (dim <= 0 || initial.size() != dim) {
      throw InvalidDimension("add_variable: dim " + std::to_string(dim) +
                             " with initial value of length " +
                             std::to_string(initial.size()));
    }
    VariableId id{variables_.size()};
    variables_.emplace_back(id, initial, fixed, kind);
    return id;
  }

  EdgeId add_edge(const std::vector<VariableId>& var_ids,
                  ErrorFunction<Scalar> error_fn, const Matrix& information,
                  JacobianFunction<Scalar> jacobian_fn = {}) {
    return add_edge(var_ids, std::move(error_fn), information,
                    std::move(jacobian_fn), EdgeKind::Cost, std::nullopt);
  }

  EdgeId add_edge(const std::vector<VariableId>& var_ids,
                  ErrorFunction<Scalar> error_fn, const Matrix& information,
                  JacobianFunction<Scalar> jacobian_fn, EdgeKind kind,
                  std::optional<ConstraintId> constraint) {
    check_variables(var_ids);
    if (information.rows() == 0 || information.rows() != information.cols()) {
      throw InvalidInformation("information matrix must be square and non-empty");
    }
    if (!information.allFinite() ||
        (information - information.transpose()).cwiseAbs().maxCoeff() >
            Scalar(1e-12)) {
      throw InvalidInformation("information matrix must be symmetric");
    }
    if (!error_fn) {
      throw InvalidInput("add_edge: error function is empty");
    }
    EdgeId id{edges_.size()};
    edges_.push_back(Edge<Scalar>{id, var_ids, information.rows(), information,
                                  std::move(error_fn), std::move(jacobian_fn),
                                  kind, constraint});
    return id;
  }

  /// Registers h(x) = 0 without attaching any edge or multiplier. Penalty
  /// constraints are handled by the augmented Lagrangian solver.
  ConstraintId add_constraint(const std::vector<VariableId>& var_ids,
                              ErrorFunction<Scalar> h_fn, Index dim,
                              JacobianFunction<Scalar> h_jacobian_fn = {},
                              ConstraintMode mode = ConstraintMode::Penalty) {
    check_variables(var_ids);
    if (dim <= 0) {
      throw InvalidDimension("constraint dimension must be positive");
    }
    if (!h_fn) {
      throw InvalidInput("add_constraint: constraint function is empty");
    }
    ConstraintId id{constraints_.size()};
    constraints_.push_back(Constraint<Scalar>{id, mode, var_ids, dim,
                                              std::move(h_fn),
                                              std::move(h_jacobian_fn),
                                              std::nullopt, std::nullopt});
    return id;
  }

  void link_constraint(ConstraintId id, EdgeId edge,
                       std::optional<VariableId> multiplier = std::nullopt) {
    auto& c = constraints_.at(id.value);
    c.edge = edge;
    c.multiplier = multiplier;
  }

  bool contains(VariableId id) const { return id.value < variables_.size(); }

  const VariableNode<Scalar>& variable(VariableId id) const {
    if (!contains(id)) {
      throw UnknownVariable("unknown variable id " + std::to_string(id.value));
    }
    return variables_[id.value];
  }

  const Edge<Scalar>& edge(EdgeId id) const { return edges_.at(id.value); }
  const Constraint<Scalar>& constraint(ConstraintId id) const {
    return constraints_.at(id.value);
  }

  std::span<const VariableNode<Scalar>> variables() const { return variables_; }
  std::span<const Edge<Scalar>> edges() const { return edges_; }
  std::span<const Constraint<Scalar>> constraints() const {
    return constraints_;
  }

  const Vector& value(VariableId id) const { return variable(id).value(); }

  void set_value(VariableId id, const Vector& v) {
    variable(id);
    variables_[id.value].set_value(v);
  }

  /// Snapshot of every variable value, indexed by variable id.
  std::vector<Vector> values() const {
    std::vector<Vector> out;
    out.reserve(variables_.size());
    for (const auto& v : variables_) out.push_back(v.value());
    return out;
  }

  void set_values(const std::vector<Vector>& snapshot) {
    if (snapshot.size() != variables_.size()) {
      throw InvalidDimension("snapshot size does not match variable count");
    }
    for (std::size_t i = 0; i < snapshot.size(); ++i) {
      variables_[i].set_value(snapshot[i]);
    }
  }

  Values<Scalar> gather(std::span<const VariableId> ids) const {
    Values<Scalar> out;
    out.reserve(ids.size());
    for (auto id : ids) out.push_back(value(id));
    return out;
  }

 private:
  void check_variables(const std::vector<VariableId>& var_ids) const {
    if (var_ids.empty()) {
      throw InvalidInput("an edge must connect at least one variable");
    }
    for (auto id : var_ids) {
      if (!contains(id)) {
        throw UnknownVariable("unknown variable id " + std::to_string(id.value));
      }
    }
  }

  std::vector<VariableNode<Scalar>> variables_;
  std::vector<Edge<Scalar>> edges_;
  std::vector<Constraint<Scalar>> constraints_;
};

/// Global column layout of the linear system: map(.) from variable blocks to
/// offsets. Variables rejected by the build filter (always including fixed
/// ones) have no offset.
class IndexMap {
 public:
  IndexMap() = default;

  explicit IndexMap(std::vector<std::optional<Index>> offsets)
      : offsets_(std::move(offsets)) {}

  std::optional<Index> offset(VariableId id) const {
    return id.value < offsets_.size() ? offsets_[id.value] : std::nullopt;
  }

  bool contains(VariableId id) const { return offset(id).has_value(); }
  Index total_dim() const { return total_dim_; }
  std::size_t variable_count() const { return offsets_.size(); }

 private:
  template <typename Scalar, typename Filter>
  friend IndexMap build_index(const FactorGraph<Scalar>&, Filter);

  std::vector<std::optional<Index>> offsets_;
  Index total_dim_ = 0;
};

/// Assigns offsets in ascending variable-id order over non-fixed variables
/// accepted by `keep`.
template <typename Scalar, typename Filter>
IndexMap build_index(const FactorGraph<Scalar>& graph, Filter keep) {
  IndexMap index;
  index.offsets_.resize(graph.variables().size());
  Index next = 0;
  for (const auto& v : graph.variables()) {
    if (v.fixed() || !keep(v)) continue;
    index.offsets_[v.id().value] = next;
    next += v.dim();
  }
  index.total_dim_ = next;
  return index;
}

template <typename Scalar>
IndexMap build_index(const FactorGraph<Scalar>& graph) {
  return build_index(graph, [](const VariableNode<Scalar>&) { return true; });
}

namespace detail {

template <typename Scalar>
VectorX<Scalar> evaluate_checked(const ErrorFunction<Scalar>& fn,
                                 const Values<Scalar>& values, Index dim,
                                 const char* what) {
  VectorX<Scalar> e = fn(values);
  if (e.size() != dim) {
    throw InvalidDimension(std::string(what) + ": expected length " +
                           std::to_string(dim) + ", got " +
                           std::to_string(e.size()));
  }
  if (!e.allFinite()) {
    throw NonFiniteError(std::string(what) + " evaluated to a non-finite value");
  }
  return e;
}

}  // namespace detail

/// Central differences, step 1e-6 * max(1, |x_i|) per coordinate.
template <typename Scalar>
std::vector<MatrixX<Scalar>> finite_difference_jacobian(
    const ErrorFunction<Scalar>& fn, const Values<Scalar>& values,
    Index out_dim) {
  using std::abs;
  std::vector<MatrixX<Scalar>> blocks;
  blocks.reserve(values.size());
  Values<Scalar> probe = values;
  for (std::size_t j = 0; j < values.size(); ++j) {
    MatrixX<Scalar> block(out_dim, values[j].size());
    for (Index i = 0; i < values[j].size(); ++i) {
      const Scalar x = values[j](i);
      const Scalar h = Scalar(1e-6) * std::max(Scalar(1), Scalar(abs(x)));
      probe[j](i) = x + h;
      const VectorX<Scalar> plus = fn(probe);
      probe[j](i) = x - h;
      const VectorX<Scalar> minus = fn(probe);
      probe[j](i) = x;
      if (plus.size() != out_dim || minus.size() != out_dim) {
        throw InvalidDimension("finite difference: error length changed");
      }
      block.col(i) = (plus - minus) / (Scalar(2) * h);
    }
    blocks.push_back(std::move(block));
  }
  return blocks;
}

template <typename Scalar>
std::vector<MatrixX<Scalar>> evaluate_jacobian(
    const ErrorFunction<Scalar>& fn, const JacobianFunction<Scalar>& jac,
    const Values<Scalar>& values, Index out_dim) {
  std::vector<MatrixX<Scalar>> blocks =
      jac ? jac(values) : finite_difference_jacobian(fn, values, out_dim);
  if (blocks.size() != values.size()) {
    throw InvalidDimension("jacobian: wrong number of blocks");
  }
  for (std::size_t j = 0; j < blocks.size(); ++j) {
    if (blocks[j].rows() != out_dim || blocks[j].cols() != values[j].size()) {
      throw InvalidDimension("jacobian: block " + std::to_string(j) +
                             " has the wrong shape");
    }
    if (!blocks[j].allFinite()) {
      throw NonFiniteJacobian("jacobian contains non-finite entries");
    }
  }
  return blocks;
}

template <typename Scalar>
VectorX<Scalar> compute_error(const FactorGraph<Scalar>& graph,
                              const Edge<Scalar>& edge) {
  return detail::evaluate_checked(edge.error_fn, graph.gather(edge.var_ids),
                                  edge.error_dim, "edge error");
}

template <typename Scalar>
std::vector<MatrixX<Scalar>> compute_jacobian(const FactorGraph<Scalar>& graph,
                                              const Edge<Scalar>& edge) {
  return evaluate_jacobian(edge.error_fn, edge.jacobian_fn,
                           graph.gather(edge.var_ids), edge.error_dim);
}

template <typename Scalar>
VectorX<Scalar> compute_constraint(const FactorGraph<Scalar>& graph,
                                   const Constraint<Scalar>& c) {
  return detail::evaluate_checked(c.h_fn, graph.gather(c.var_ids), c.dim,
                                  "constraint");
}

template <typename Scalar>
std::vector<MatrixX<Scalar>> compute_constraint_jacobian(
    const FactorGraph<Scalar>& graph, const Constraint<Scalar>& c) {
  return evaluate_jacobian(c.h_fn, c.h_jacobian_fn, graph.gather(c.var_ids),
                           c.dim);
}

/// Sum of e^T * Omega * e over edges accepted by `keep`. Equality edges have
/// an indefinite Omega, so their summands may be negative.
template <typename Scalar, typename Filter>
Scalar total_cost(const FactorGraph<Scalar>& graph, Filter keep) {
  Scalar cost(0);
  for (const auto& edge : graph.edges()) {
    if (!keep(edge)) continue;
    const VectorX<Scalar> e = compute_error(graph, edge);
    cost += e.dot(edge.information * e);
  }
  return cost;
}

template <typename Scalar>
Scalar total_cost(const FactorGraph<Scalar>& graph) {
  return total_cost(graph, [](const Edge<Scalar>&) { return true; });
}

template <typename Scalar>
Scalar total_cost(const FactorGraph<Scalar>& graph, EdgeKind kind) {
  return total_cost(graph,
                    [kind](const Edge<Scalar>& e) { return e.kind == kind; });
}

/// Infinity norm of all registered constraints at the current values.
template <typename Scalar>
Scalar constraint_violation(const FactorGraph<Scalar>& graph) {
  Scalar worst(0);
  for (const auto& c : graph.constraints()) {
    worst = std::max(worst, compute_constraint(graph, c).cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace ecfg
