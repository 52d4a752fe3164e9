#pragma once

#include <Eigen/Core>
#include <Eigen/OrderingMethods>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "ecfg/factor_graph.hpp"

namespace ecfg {

template <typename Scalar>
using SparseMatrix = Eigen::SparseMatrix<Scalar, Eigen::ColMajor>;

/// The global Gauss-Newton system H * delta = b. H may be indefinite when
/// multiplier nodes are part of the index.
template <typename Scalar>
struct LinearSystem {
  SparseMatrix<Scalar> H;
  VectorX<Scalar> b;

  Index dim() const { return b.size(); }
  MatrixX<Scalar> dense_H() const { return MatrixX<Scalar>(H); }
};

/// Local H_j and b_j of one edge, ordered by the edge's var_ids.
template <typename Scalar>
struct EdgeContribution {
  MatrixX<Scalar> H;
  VectorX<Scalar> b;
};

/// H_j = J^T W J and b_j = -J^T W r, with J the horizontal stack of
/// `jacobians`. H_j is symmetrized so scattered systems are exactly symmetric.
template <typename Scalar>
EdgeContribution<Scalar> weighted_contribution(
    std::span<const MatrixX<Scalar>> jacobians, const MatrixX<Scalar>& weight,
    const VectorX<Scalar>& residual) {
  Index cols = 0;
  for (const auto& block : jacobians) cols += block.cols();
  MatrixX<Scalar> J(residual.size(), cols);
  Index c = 0;
  for (const auto& block : jacobians) {
    J.middleCols(c, block.cols()) = block;
    c += block.cols();
  }
  const MatrixX<Scalar> JtW = J.transpose() * weight;
  MatrixX<Scalar> H = JtW * J;
  H = (Scalar(0.5) * (H + H.transpose())).eval();
  return {std::move(H), -(JtW * residual)};
}

template <typename Scalar>
EdgeContribution<Scalar> edge_contribution(const FactorGraph<Scalar>& graph,
                                           const Edge<Scalar>& edge) {
  const VectorX<Scalar> e = compute_error(graph, edge);
  const auto J = compute_jacobian(graph, edge);
  return weighted_contribution<Scalar>(J, edge.information, e);
}

/// Scatters local contributions into the global system through an IndexMap.
/// Blocks of variables absent from the index are dropped.
template <typename Scalar>
class SystemAccumulator {
 public:
  SystemAccumulator(const FactorGraph<Scalar>& graph, const IndexMap& index)
      : graph_(graph),
        index_(index),
        b_(VectorX<Scalar>::Zero(index.total_dim())) {}

  void add(std::span<const VariableId> ids,
           const EdgeContribution<Scalar>& local) {
    std::vector<Index> local_offset(ids.size());
    Index running = 0;
    for (std::size_t a = 0; a < ids.size(); ++a) {
      local_offset[a] = running;
      running += graph_.variable(ids[a]).dim();
    }
    for (std::size_t a = 0; a < ids.size(); ++a) {
      const auto ga = index_.offset(ids[a]);
      if (!ga) continue;
      const Index da = graph_.variable(ids[a]).dim();
      b_.segment(*ga, da) += local.b.segment(local_offset[a], da);
      for (std::size_t k = 0; k < ids.size(); ++k) {
        const auto gk = index_.offset(ids[k]);
        if (!gk) continue;
        const Index dk = graph_.variable(ids[k]).dim();
        for (Index r = 0; r < da; ++r) {
          for (Index s = 0; s < dk; ++s) {
            triplets_.emplace_back(*ga + r, *gk + s,
                                   local.H(local_offset[a] + r,
                                           local_offset[k] + s));
          }
        }
      }
    }
  }

  LinearSystem<Scalar> finish() const {
    const Index n = index_.total_dim();
    LinearSystem<Scalar> system;
    system.H.resize(n, n);
    system.H.setFromTriplets(triplets_.begin(), triplets_.end());
    system.H.makeCompressed();
    system.b = b_;
    return system;
  }

 private:
  const FactorGraph<Scalar>& graph_;
  const IndexMap& index_;
  std::vector<Eigen::Triplet<Scalar>> triplets_;
  VectorX<Scalar> b_;
};

/// Builds the system from every edge accepted by `keep` at the graph's
/// current values.
template <typename Scalar, typename Filter>
LinearSystem<Scalar> assemble(const FactorGraph<Scalar>& graph,
                              const IndexMap& index, Filter keep) {
  SystemAccumulator<Scalar> acc(graph, index);
  for (const auto& edge : graph.edges()) {
    if (!keep(edge)) continue;
    acc.add(edge.var_ids, edge_contribution(graph, edge));
  }
  return acc.finish();
}

template <typename Scalar>
LinearSystem<Scalar> assemble(const FactorGraph<Scalar>& graph,
                              const IndexMap& index) {
  return assemble(graph, index, [](const Edge<Scalar>&) { return true; });
}

using KindFilter = std::function<bool(VariableKind)>;

inline bool primal_only(VariableKind kind) {
  return kind == VariableKind::Primal;
}

inline bool all_kinds(VariableKind) { return true; }

/// H' = H + lambda * D, D the identity on columns whose variable kind passes
/// `filter`.
template <typename Scalar>
LinearSystem<Scalar> apply_damping(const LinearSystem<Scalar>& system,
                                   const FactorGraph<Scalar>& graph,
                                   const IndexMap& index, Scalar lambda,
                                   const KindFilter& filter = primal_only) {
  if (!(lambda >= Scalar(0))) {
    throw InvalidInput("damping must be non-negative");
  }
  LinearSystem<Scalar> damped = system;
  if (lambda == Scalar(0)) return damped;
  SparseMatrix<Scalar> D(system.dim(), system.dim());
  std::vector<Eigen::Triplet<Scalar>> diag;
  for (const auto& v : graph.variables()) {
    const auto offset = index.offset(v.id());
    if (!offset || !filter(v.kind())) continue;
    for (Index i = 0; i < v.dim(); ++i) {
      diag.emplace_back(*offset + i, *offset + i, lambda);
    }
  }
  D.setFromTriplets(diag.begin(), diag.end());
  damped.H = system.H + D;
  damped.H.makeCompressed();
  return damped;
}

enum class SolveStatus { Solved, Singular };

struct SolveReport {
  SolveStatus status = SolveStatus::Solved;
  double residual_norm = 0.0;
};

template <typename Scalar>
struct SolveOutcome {
  SolveReport report;
  VectorX<Scalar> step;

  bool ok() const { return report.status == SolveStatus::Solved; }
};

/// Pivot magnitudes below this fraction of max|H| declare the system singular.
inline constexpr double kSingularPivotRatio = 1e-12;

/// Sparse LU with partial pivoting; handles the zero diagonal blocks of KKT
/// matrices that defeat Cholesky and unpivoted LDL^T.
template <typename Scalar>
SolveOutcome<Scalar> solve_symmetric_indefinite(
    const LinearSystem<Scalar>& system) {
  using std::abs;
  const Index n = system.dim();
  SolveOutcome<Scalar> out;
  if (system.H.rows() != n || system.H.cols() != n) {
    throw InvalidDimension("solve: H and b do not conform");
  }
  if (n == 0) {
    out.step.resize(0);
    return out;
  }
  auto singular = [&out] {
    out.report.status = SolveStatus::Singular;
    out.report.residual_norm = std::numeric_limits<double>::infinity();
    out.step.resize(0);
    return out;
  };

  SparseMatrix<Scalar> H = system.H;
  H.makeCompressed();
  Scalar max_abs(0);
  for (Index k = 0; k < H.outerSize(); ++k) {
    for (typename SparseMatrix<Scalar>::InnerIterator it(H, k); it; ++it) {
      max_abs = std::max(max_abs, Scalar(abs(it.value())));
    }
  }
  if (!(max_abs > Scalar(0)) || !std::isfinite(double(max_abs))) {
    return singular();
  }

  Eigen::SparseLU<SparseMatrix<Scalar>, Eigen::COLAMDOrdering<int>> lu;
  lu.analyzePattern(H);
  lu.factorize(H);
  if (lu.info() != Eigen::Success) return singular();

  // The diagonal of U lives in the supernodal L store.
  const auto& supernodal = lu.matrixL().m_mapL;
  using SuperMatrix = std::decay_t<decltype(supernodal)>;
  const Scalar floor = Scalar(kSingularPivotRatio) * max_abs;
  for (Index j = 0; j < n; ++j) {
    Scalar pivot(0);
    for (typename SuperMatrix::InnerIterator it(supernodal, j); it; ++it) {
      if (it.index() == j) {
        pivot = it.value();
        break;
      }
    }
    if (!(abs(pivot) >= floor)) return singular();
  }

  out.step = lu.solve(system.b);
  if (lu.info() != Eigen::Success || !out.step.allFinite()) return singular();
  out.report.residual_norm = double((H * out.step - system.b).norm());
  return out;
}

}  // namespace ecfg
