#include <doctest.h>

#include <cmath>
#include <random>

#include "ecfg/constraints.hpp"
#include "helpers.hpp"
#include "kkt_fixture.hpp"
#include "oracles.hpp"

using namespace ecfg;
using namespace testing;

namespace {

/// min x^2 with a single cost edge e = x.
VariableId scalar_objective(Graph& g, double x0 = 0.0) {
  const auto x = g.add_variable(1, vec({x0}));
  add_prior(g, x, 0.0);
  return x;
}

ErrorFunction<double> x_minus(double target) {
  return [target](const Vals& v) { return Vec(v[0].array() - target); };
}

JacobianFunction<double> unit_slope() {
  return [](const Vals&) { return std::vector<Mat>{mat1(1.0)}; };
}

/// sum_j J_j^T Omega_j e_j + sum_n J_hn^T gamma_n over primal coordinates.
Vec lagrangian_gradient(const Graph& g) {
  const IndexMap index = build_index(g, [](const VariableNode<double>& v) {
    return v.kind() == VariableKind::Primal;
  });
  Vec grad = Vec::Zero(index.total_dim());
  auto scatter = [&](const std::vector<VariableId>& ids, const std::vector<Mat>& J,
                     const Vec& weighted) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (auto off = index.offset(ids[k])) {
        grad.segment(*off, J[k].cols()) += J[k].transpose() * weighted;
      }
    }
  };
  for (const auto& e : g.edges()) {
    if (e.kind != EdgeKind::Cost) continue;
    scatter(e.var_ids, compute_jacobian(g, e), e.information * compute_error(g, e));
  }
  for (const auto& c : g.constraints()) {
    if (!c.multiplier) continue;
    scatter(c.var_ids, compute_constraint_jacobian(g, c), g.value(*c.multiplier));
  }
  return grad;
}

}  // namespace

TEST_CASE("equality edges stack [h; gamma] with antidiagonal information") {
  Graph g;
  const auto x = g.add_variable(1, vec({0.0}));
  const auto h = add_equality_constraint<double>(g, {x}, x_minus(1.0), 1);
  const auto& edge = g.edge(h.edge);
  CHECK(edge.error_dim == 2);
  CHECK(edge.kind == EdgeKind::Equality);
  Mat swap(2, 2);
  swap << 0, 1, 1, 0;
  CHECK(edge.information == swap);
  CHECK(g.variable(h.multiplier).kind() == VariableKind::Multiplier);
  CHECK(g.value(h.multiplier) == vec({0.0}));
  CHECK(edge.var_ids == std::vector<VariableId>{x, h.multiplier});

  const auto y = g.add_variable(2, vec({0.0, 0.0}));
  const auto h2 = add_equality_constraint<double>(
      g, {y}, [](const Vals& v) { return v[0]; }, 2);
  const Mat& omega = g.edge(h2.edge).information;
  REQUIRE(omega.rows() == 4);
  CHECK(omega.topLeftCorner(2, 2).isZero(0.0));
  CHECK(omega.bottomRightCorner(2, 2).isZero(0.0));
  CHECK(omega.topRightCorner(2, 2).isIdentity(0.0));
  CHECK(omega.bottomLeftCorner(2, 2).isIdentity(0.0));
  CHECK(g.variable(h2.multiplier).dim() == 2);

  CHECK_THROWS_AS(add_equality_constraint<double>(g, {VariableId{42}}, x_minus(1.0), 1),
                  UnknownVariable);
}

TEST_CASE("equality edge contribution reproduces the KKT blocks") {
  Graph g;
  const auto x = g.add_variable(1, vec({0.75}));
  // h(x) = 2x - 1 so J_h = 2 and h = 0.5 at x = 0.75.
  const auto h = add_equality_constraint<double>(
      g, {x}, [](const Vals& v) { return Vec(2.0 * v[0].array() - 1.0); }, 1,
      [](const Vals&) { return std::vector<Mat>{mat1(2.0)}; });
  g.set_value(h.multiplier, vec({3.0}));
  const auto local = equality_edge_contribution(g, g.edge(h.edge));
  Mat expected(2, 2);
  expected << 0, 2, 2, 0;
  CHECK(local.H == expected);
  CHECK(local.b == vec({-6.0, -0.5}));

  g.set_value(h.multiplier, vec({0.0}));
  g.set_value(x, vec({0.5}));
  CHECK(equality_edge_contribution(g, g.edge(h.edge)).b.isZero(0.0));

  g.set_value(h.multiplier, vec({-7.25}));
  CHECK(equality_edge_contribution(g, g.edge(h.edge)).b(1) == 0.0);

  const auto cost = add_prior(g, x, 0.0);
  CHECK_THROWS_AS(equality_edge_contribution(g, g.edge(cost)), InvalidInput);
}

TEST_CASE("stacked equality Jacobian agrees with finite differences") {
  std::mt19937_64 rng(5);
  Graph g;
  const auto a = g.add_variable(1, vec({0.0}));
  const auto b = g.add_variable(1, vec({0.0}));
  const auto h = add_equality_constraint<double>(
      g, {a, b},
      [](const Vals& v) { return vec({v[0](0) * v[0](0) + std::sin(v[1](0))}); }, 1,
      [](const Vals& v) {
        return std::vector<Mat>{mat1(2.0 * v[0](0)), mat1(std::cos(v[1](0)))};
      });
  for (int trial = 0; trial < 10; ++trial) {
    g.set_value(a, vec({uniform(rng, -3, 3)}));
    g.set_value(b, vec({uniform(rng, -3, 3)}));
    g.set_value(h.multiplier, vec({uniform(rng, -3, 3)}));
    const auto& edge = g.edge(h.edge);
    const auto analytic = compute_jacobian(g, edge);
    const auto numeric =
        finite_difference_jacobian(edge.error_fn, g.gather(edge.var_ids), edge.error_dim);
    for (std::size_t k = 0; k < analytic.size(); ++k) {
      const double scale = std::max(1.0, analytic[k].cwiseAbs().maxCoeff());
      CHECK((analytic[k] - numeric[k]).cwiseAbs().maxCoeff() <= 1e-5 * scale);
    }
  }
}

TEST_CASE("KKT Gauss-Newton on min x^2 s.t. x = 1") {
  Graph g;
  const auto x = scalar_objective(g);
  const auto h = add_equality_constraint<double>(g, {x}, x_minus(1.0), 1, unit_slope());
  const auto r = optimize_kkt_gauss_newton(g);
  // [[1, 1], [1, 0]] [dx, dgamma] = [0, 1] gives dx = 1, dgamma = -1.
  CHECK(r.stats.iterations == 2);
  CHECK(r.stats.termination == Termination::StepTolerance);
  CHECK(r.values[x.value](0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(r.values[h.multiplier.value](0) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(r.constraint_violation <= 1e-14);
}

TEST_CASE("KKT Gauss-Newton without equality edges is plain Gauss-Newton") {
  auto build = [] {
    Graph g;
    const auto x = g.add_variable(1, vec({2.0}));
    const auto y = g.add_variable(1, vec({-1.0}));
    g.add_edge({x, y}, [](const Vals& v) { return vec({v[0](0) * v[1](0) - 1.0}); },
               mat1(2.0));
    add_prior(g, x, 0.5);
    return g;
  };
  Graph a = build(), b = build();
  const auto kkt = optimize_kkt_gauss_newton(a);
  const auto gn = optimize_gauss_newton(b);
  CHECK(kkt.stats.iterations == gn.stats.iterations);
  CHECK(kkt.stats.step_norms == gn.stats.step_norms);
  CHECK(kkt.values == gn.values);
}

TEST_CASE("duplicated constraints make the KKT system singular") {
  Graph g;
  const auto x = scalar_objective(g);
  add_equality_constraint<double>(g, {x}, x_minus(1.0), 1, unit_slope());
  add_equality_constraint<double>(g, {x}, x_minus(1.0), 1, unit_slope());
  const auto r = optimize_kkt_gauss_newton(g);
  CHECK(r.stats.termination == Termination::SolverFailure);
}

TEST_CASE("soft constraints approach the hard solution as the weight grows") {
  auto solve = [](double weight) {
    Graph g;
    const auto x = scalar_objective(g);
    add_soft_constraint<double>(g, {x}, x_minus(1.0), 1, weight, unit_slope());
    const auto r = optimize_gauss_newton(g);
    REQUIRE(r.stats.termination == Termination::StepTolerance);
    return r;
  };
  const auto r = solve(1e6);
  CHECK(r.values[0](0) == doctest::Approx(1e6 / (1.0 + 1e6)).epsilon(1e-12));

  double previous = INFINITY;
  for (double w : {1e2, 1e4, 1e6}) {
    const auto s = solve(w);
    CHECK(s.constraint_violation < previous);
    CHECK(s.constraint_violation == doctest::Approx(1.0 / (1.0 + w)).epsilon(1e-9));
    previous = s.constraint_violation;
  }

  Graph g;
  const auto x = scalar_objective(g);
  CHECK_THROWS_AS(add_soft_constraint<double>(g, {x}, x_minus(1.0), 1, 0.0), InvalidWeight);
  CHECK_THROWS_AS(add_soft_constraint<double>(g, {x}, x_minus(1.0), 1, -1.0), InvalidWeight);
  CHECK_THROWS_AS(add_soft_constraint<double>(g, {x}, x_minus(1.0), 1, INFINITY),
                  InvalidWeight);
}

TEST_CASE("augmented Lagrangian inner step") {
  Graph g;
  const auto x = scalar_objective(g);
  g.add_constraint({x}, x_minus(1.0), 1, unit_slope(), ConstraintMode::Penalty);
  const IndexMap index = build_primal_index(g);

  PenaltyState<double> state{10.0, {vec({0.0})}};
  const auto sys = assemble_augmented(g, index, state);
  CHECK(sys.dense_H()(0, 0) == 11.0);
  CHECK(sys.b(0) == 10.0);
  const auto out = al_inner_step(g, state);
  REQUIRE(out.ok());
  CHECK(out.step(0) == doctest::Approx(10.0 / 11.0).epsilon(1e-15));
  CHECK(g.value(x)(0) == doctest::Approx(10.0 / 11.0).epsilon(1e-15));

  // Penalty off: the plain Gauss-Newton step from x = 2 lands on 0.
  g.set_value(x, vec({2.0}));
  const auto off = al_inner_step(g, PenaltyState<double>{0.0, {vec({0.0})}});
  CHECK(off.step(0) == doctest::Approx(-2.0));

  // h = 0 and gamma = 0: the penalty term has no gradient.
  Graph at_root;
  const auto y = at_root.add_variable(1, vec({1.0}));
  add_prior(at_root, y, 3.0);
  at_root.add_constraint({y}, x_minus(1.0), 1, unit_slope(), ConstraintMode::Penalty);
  CHECK(assemble_augmented(at_root, build_primal_index(at_root),
                           PenaltyState<double>{10.0, {vec({0.0})}}).b(0) ==
        assemble(at_root, build_primal_index(at_root)).b(0));
  const auto step = al_inner_step(at_root, PenaltyState<double>{10.0, {vec({0.0})}});
  CHECK(step.step(0) == doctest::Approx(2.0 / 11.0));
}

TEST_CASE("multiplier and penalty updates") {
  PenaltyState<double> s{10.0, {vec({0.0})}};
  CHECK(al_update_multipliers(s, {vec({0.5})}).multipliers[0] == vec({5.0}));
  s.multipliers[0] = vec({1.25});
  CHECK(al_update_multipliers(s, {vec({0.0})}).multipliers[0] == vec({1.25}));
  PenaltyState<double> v{2.0, {vec({1.0, -1.0})}};
  CHECK(al_update_multipliers(v, {vec({0.5, 0.5})}).multipliers[0] == vec({2.0, 0.0}));
  CHECK_THROWS_AS(al_update_multipliers(v, {vec({0.5})}), InvalidDimension);

  ALConfig cfg;
  CHECK(al_update_penalty(PenaltyState<double>{10.0, {}}, cfg).rho == 100.0);
  CHECK(al_update_penalty(PenaltyState<double>{10000.0, {}}, cfg).rho == 50000.0);
  cfg.alpha = 1.0;
  CHECK(al_update_penalty(PenaltyState<double>{10.0, {}}, cfg).rho == 10.0);
}

TEST_CASE("augmented Lagrangian follows the scalar fixed-point oracle") {
  Graph g;
  const auto x = scalar_objective(g);
  g.add_constraint({x}, x_minus(1.0), 1, unit_slope(), ConstraintMode::Penalty);
  const ALConfig cfg;
  const auto r = optimize_augmented_lagrangian(g, cfg);
  const auto expected = oracle::augmented_lagrangian_scalar_toy(
      cfg.rho_init, cfg.rho_max, cfg.alpha, cfg.constraint_tol, cfg.outer_max_iterations);
  CHECK(r.stats.termination == Termination::StepTolerance);
  CHECK(r.stats.iterations == expected.iterations);
  CHECK(r.values[x.value](0) == doctest::Approx(expected.x).epsilon(1e-12));
  CHECK(r.penalty.multipliers[0](0) == doctest::Approx(expected.gamma).epsilon(1e-9));
  CHECK(std::abs(r.values[x.value](0) - 1.0) <= 1e-6);
  CHECK(r.constraint_violation <= 1e-6);

  Graph kkt;
  const auto kx = scalar_objective(kkt);
  const auto h = add_equality_constraint<double>(kkt, {kx}, x_minus(1.0), 1, unit_slope());
  const auto k = optimize_kkt_gauss_newton(kkt);
  const double gk = k.values[h.multiplier.value](0);
  const double ga = r.penalty.multipliers[0](0);
  CHECK(std::signbit(gk) == std::signbit(ga));
  CHECK(std::abs(ga - gk) <= 1e-3 * std::abs(gk));
  CHECK(std::abs(r.values[x.value](0) - k.values[kx.value](0)) <= 1e-5);
}

TEST_CASE("augmented Lagrangian without constraints is one Gauss-Newton solve per step") {
  Graph g;
  const auto x = g.add_variable(1, vec({0.0}));
  add_prior(g, x, 3.0);
  const auto r = optimize_augmented_lagrangian(g);
  CHECK(r.stats.termination == Termination::StepTolerance);
  CHECK(r.stats.iterations == 2);
  CHECK(r.values[x.value](0) == doctest::Approx(3.0));

  ALConfig bad;
  bad.rho_init = 1e6;
  CHECK_THROWS_AS(optimize_augmented_lagrangian(g, bad), InvalidInput);
  bad = {};
  bad.alpha = 0.5;
  CHECK_THROWS_AS(optimize_augmented_lagrangian(g, bad), InvalidInput);
}

TEST_CASE("equality edges assemble to the directly built KKT system") {
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 200; ++trial) CHECK(kkt_assembly_gap(rng) <= 1e-12);
}

TEST_CASE("KKT solutions satisfy first-order optimality") {
  SUBCASE("projection onto a line") {
    Graph g;
    const auto x = g.add_variable(1, vec({0.0}));
    const auto y = g.add_variable(1, vec({0.0}));
    add_prior(g, x, 2.0);
    add_prior(g, y, 1.0, 3.0);
    add_equality_constraint<double>(
        g, {x, y}, [](const Vals& v) { return vec({v[0](0) + v[1](0) - 1.0}); }, 1,
        [](const Vals&) { return std::vector<Mat>{mat1(1.0), mat1(1.0)}; });
    const auto r = optimize_kkt_gauss_newton(g);
    CHECK(r.stats.iterations == 2);
    CHECK(lagrangian_gradient(g).cwiseAbs().maxCoeff() <= 1e-5);
    CHECK(r.constraint_violation <= 1e-6);
  }
  SUBCASE("closest point on the unit circle") {
    Graph g;
    const auto x = g.add_variable(1, vec({1.0}));
    const auto y = g.add_variable(1, vec({1.0}));
    // Target close to the circle: Gauss-Newton drops the 2 gamma I curvature
    // term, so convergence needs a small multiplier.
    add_prior(g, x, 1.2);
    add_prior(g, y, 0.6);
    add_equality_constraint<double>(
        g, {x, y},
        [](const Vals& v) { return vec({v[0](0) * v[0](0) + v[1](0) * v[1](0) - 1.0}); }, 1,
        [](const Vals& v) {
          return std::vector<Mat>{mat1(2.0 * v[0](0)), mat1(2.0 * v[1](0))};
        });
    const auto r = optimize_kkt_gauss_newton(g);
    REQUIRE(r.stats.termination == Termination::StepTolerance);
    CHECK(lagrangian_gradient(g).cwiseAbs().maxCoeff() <= 1e-5);
    CHECK(r.constraint_violation <= 1e-6);
    CHECK(r.values[0](0) == doctest::Approx(2.0 / std::sqrt(5.0)).epsilon(1e-6));
  }
}

TEST_CASE("KKT and augmented Lagrangian agree on toy problems") {
  auto build = [](bool kkt, bool circle) {
    Graph g;
    const auto x = g.add_variable(1, vec({1.0}));
    const auto y = g.add_variable(1, vec({1.0}));
    add_prior(g, x, 1.2);
    add_prior(g, y, 0.6, 2.0);
    ErrorFunction<double> h;
    JacobianFunction<double> jac;
    if (circle) {
      h = [](const Vals& v) { return vec({v[0](0) * v[0](0) + v[1](0) * v[1](0) - 1.0}); };
      jac = [](const Vals& v) {
        return std::vector<Mat>{mat1(2.0 * v[0](0)), mat1(2.0 * v[1](0))};
      };
    } else {
      h = [](const Vals& v) { return vec({v[0](0) - 2.0 * v[1](0)}); };
      jac = [](const Vals&) { return std::vector<Mat>{mat1(1.0), mat1(-2.0)}; };
    }
    if (kkt) {
      add_equality_constraint<double>(g, {x, y}, h, 1, jac);
    } else {
      g.add_constraint({x, y}, h, 1, jac, ConstraintMode::Penalty);
    }
    return g;
  };
  const ALConfig cfg;
  const double tol = 10.0 * std::max(cfg.constraint_tol, cfg.step_norm_tol);
  for (bool circle : {false, true}) {
    Graph kg = build(true, circle), ag = build(false, circle);
    const auto k = optimize_kkt_gauss_newton(kg);
    const auto a = optimize_augmented_lagrangian(ag, cfg);
    REQUIRE(k.stats.termination == Termination::StepTolerance);
    REQUIRE(a.stats.termination == Termination::StepTolerance);
    for (int i = 0; i < 2; ++i) CHECK(std::abs(k.values[i](0) - a.values[i](0)) <= tol);
  }
}

TEST_CASE("affine-constrained quadratics converge in two KKT iterations") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng() % 4;
    Graph g;
    for (std::size_t i = 0; i < n; ++i) g.add_variable(1, vec({uniform(rng, -5, 5)}));
    for (std::size_t i = 0; i < n; ++i) {
      add_prior(g, VariableId{i}, uniform(rng, -2, 2), uniform(rng, 0.5, 3));
    }
    const std::size_t m = 1 + rng() % (n - 1);
    for (std::size_t c = 0; c < m; ++c) {
      // Constraint c touches variable c with a dominant coefficient, so the
      // rows stay independent.
      std::vector<VariableId> ids;
      std::vector<double> a;
      for (std::size_t i = 0; i < n; ++i) {
        ids.push_back(VariableId{i});
        a.push_back(i == c ? 5.0 : uniform(rng, -1, 1));
      }
      const double rhs = uniform(rng, -1, 1);
      add_equality_constraint<double>(
          g, ids,
          [a, rhs](const Vals& v) {
            double s = -rhs;
            for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * v[i](0);
            return vec({s});
          },
          1,
          [a](const Vals&) {
            std::vector<Mat> out;
            for (double ai : a) out.push_back(mat1(ai));
            return out;
          });
    }
    const auto r = optimize_kkt_gauss_newton(g);
    CHECK(r.stats.iterations == 2);
    CHECK(r.stats.termination == Termination::StepTolerance);
    CHECK(r.constraint_violation <= 1e-9);
    CHECK(lagrangian_gradient(g).cwiseAbs().maxCoeff() <= 1e-5);
  }
}
