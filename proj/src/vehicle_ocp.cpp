#include "ecfg/vehicle_ocp.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ecfg/constraints.hpp"

namespace ecfg::vehicle {

namespace {

using Vector = VectorX<double>;
using Matrix = MatrixX<double>;

Vector scalar(double v) { return Vector::Constant(1, v); }
Matrix scalar_matrix(double v) { return Matrix::Constant(1, 1, v); }

double air_term(const VehicleParams& p) {
  return 0.5 * p.air_density * p.frontal_area * p.drag_coefficient;
}

double grade_and_rolling(const VehicleParams& p) {
  return p.vehicle_mass * p.gravity * std::sin(p.slope) +
         p.vehicle_mass * p.gravity * p.rolling_coefficient * std::cos(p.slope);
}

void add_unary_tracking(FactorGraph<double>& graph, VariableId id,
                        double target, double weight,
                        std::vector<EdgeId>& out) {
  out.push_back(graph.add_edge(
      {id},
      [target](const Values<double>& v) { return scalar(v[0](0) - target); },
      scalar_matrix(weight),
      [](const Values<double>&) {
        return std::vector<Matrix>{scalar_matrix(1.0)};
      }));
}

}  // namespace

void VehicleParams::validate() const {
  if (!(mass > 0) || !(vehicle_mass > 0) || !(dt > 0) || !(gravity >= 0) ||
      !(air_density >= 0) || !(frontal_area >= 0) || !(drag_coefficient >= 0) ||
      !(rolling_coefficient >= 0) || !std::isfinite(slope)) {
    throw InvalidInput("invalid vehicle parameters");
  }
}

void OcpWeights::validate() const {
  if (!(terminal > 0) || !(tracking > 0) || !(input > 0)) {
    throw InvalidWeight("OCP weights must be positive");
  }
}

void ReferenceTrajectory::validate() const {
  if (samples.size() < 2) {
    throw InvalidHorizon("reference needs at least 2 samples");
  }
  if (!(dt > 0)) throw InvalidInput("reference dt must be positive");
  for (double r : samples) {
    if (!std::isfinite(r) || r < 0) {
      throw InvalidInput("reference samples must be finite and non-negative");
    }
  }
}

double resistance_force(double v, const VehicleParams& params) {
  return grade_and_rolling(params) + air_term(params) * v * v;
}

double resistance_force(double v, const VehicleParams& params,
                        const DynamicsMode& mode) {
  if (const auto* lin = std::get_if<Linearized>(&mode)) {
    return grade_and_rolling(params) + air_term(params) * (lin->p1 + lin->p2 * v);
  }
  return resistance_force(v, params);
}

double resistance_slope(double v, const VehicleParams& params,
                        const DynamicsMode& mode) {
  if (const auto* lin = std::get_if<Linearized>(&mode)) {
    return air_term(params) * lin->p2;
  }
  return 2.0 * air_term(params) * v;
}

double dynamics_step(double x, double u, const VehicleParams& params,
                     const DynamicsMode& mode) {
  return x + params.dt / params.mass * (u - resistance_force(x, params, mode));
}

Linearized fit_linearization(double v_nominal) {
  if (!(v_nominal >= 0)) {
    throw InvalidInput("linearization point must be non-negative");
  }
  return {-v_nominal * v_nominal, 2.0 * v_nominal};
}

std::vector<double> rollout(std::span<const double> inputs, double x0,
                            const VehicleParams& params,
                            const DynamicsMode& mode) {
  std::vector<double> x;
  x.reserve(inputs.size() + 1);
  x.push_back(x0);
  for (double u : inputs) x.push_back(dynamics_step(x.back(), u, params, mode));
  return x;
}

double rmse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw InvalidInput("rmse: trajectories differ in length");
  }
  if (a.empty()) throw InvalidInput("rmse: empty trajectories");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return std::sqrt(sum / double(a.size()));
}

DynamicsResidual make_dynamics_residual(const VehicleParams& params,
                                        const DynamicsMode& mode,
                                        bool fixed_start, double x0) {
  const double gain = params.dt / params.mass;
  DynamicsResidual r;
  if (fixed_start) {
    r.h = [=](const Values<double>& v) {
      const double u = v[0](0), next = v[1](0);
      return scalar(next - dynamics_step(x0, u, params, mode));
    };
    r.jacobian = [=](const Values<double>&) {
      return std::vector<Matrix>{scalar_matrix(-gain), scalar_matrix(1.0)};
    };
  } else {
    r.h = [=](const Values<double>& v) {
      const double x = v[0](0), u = v[1](0), next = v[2](0);
      return scalar(next - dynamics_step(x, u, params, mode));
    };
    r.jacobian = [=](const Values<double>& v) {
      const double x = v[0](0);
      return std::vector<Matrix>{
          scalar_matrix(-1.0 + gain * resistance_slope(x, params, mode)),
          scalar_matrix(-gain), scalar_matrix(1.0)};
    };
  }
  return r;
}

std::vector<double> OcpGraph::velocity() const {
  std::vector<double> out{x0};
  for (auto id : states) out.push_back(graph.value(id)(0));
  return out;
}

std::vector<double> OcpGraph::input_sequence() const {
  std::vector<double> out;
  for (auto id : inputs) out.push_back(graph.value(id)(0));
  return out;
}

double OcpGraph::objective() const {
  double cost = 0.0;
  for (const auto* group : {&tracking_edges, &terminal_edges, &input_edges}) {
    for (auto id : *group) {
      const auto& edge = graph.edge(id);
      const Vector e = compute_error(graph, edge);
      cost += e.dot(edge.information * e);
    }
  }
  return cost;
}

OcpGraph build_ocp_graph(const ReferenceTrajectory& ref,
                         const VehicleParams& params, const OcpWeights& weights,
                         const DynamicsMode& mode, const MethodSpec& method,
                         double initial_multiplier) {
  if (ref.samples.size() < 2) {
    throw InvalidHorizon("horizon must contain at least 2 samples");
  }
  ref.validate();
  params.validate();
  weights.validate();
  if (method.method == Method::Soft && !(method.soft_weight > 0)) {
    throw InvalidWeight("soft constraint weight must be positive");
  }

  const std::size_t n = ref.samples.size();
  OcpGraph ocp;
  ocp.x0 = ref.samples.front();
  auto& g = ocp.graph;

  // Interleaved creation keeps each dynamics edge's columns adjacent.
  for (std::size_t k = 0; k + 1 < n; ++k) {
    ocp.inputs.push_back(g.add_variable(1, scalar(0.0)));
    ocp.states.push_back(g.add_variable(1, scalar(ocp.x0)));
  }

  for (std::size_t k = 0; k + 1 < n; ++k) {
    add_unary_tracking(g, ocp.inputs[k], 0.0, weights.input, ocp.input_edges);
    const std::size_t state_index = k + 1;
    if (state_index + 1 < n) {
      add_unary_tracking(g, ocp.states[k], ref.samples[state_index],
                         weights.tracking, ocp.tracking_edges);
    } else {
      add_unary_tracking(g, ocp.states[k], ref.samples[state_index],
                         weights.terminal, ocp.terminal_edges);
    }
  }

  for (std::size_t k = 0; k + 1 < n; ++k) {
    const bool first = k == 0;
    auto residual = make_dynamics_residual(params, mode, first, ocp.x0);
    std::vector<VariableId> ids;
    if (!first) ids.push_back(ocp.states[k - 1]);
    ids.push_back(ocp.inputs[k]);
    ids.push_back(ocp.states[k]);

    switch (method.method) {
      case Method::Kkt: {
        const auto handles = add_equality_constraint<double>(
            g, ids, residual.h, 1, residual.jacobian, initial_multiplier);
        ocp.dynamics.push_back(handles.constraint);
        ocp.multipliers.push_back(handles.multiplier);
        ocp.equality_edges.push_back(handles.edge);
        break;
      }
      case Method::AugmentedLagrangian:
        ocp.dynamics.push_back(
            g.add_constraint(ids, residual.h, 1, residual.jacobian,
                             ConstraintMode::Penalty));
        break;
      case Method::Soft: {
        const EdgeId e = add_soft_constraint<double>(
            g, ids, residual.h, 1, method.soft_weight, residual.jacobian);
        ocp.soft_edges.push_back(e);
        ocp.dynamics.push_back(*g.edge(e).constraint);
        break;
      }
      case Method::Unconstrained:
        ocp.dynamics.push_back(
            g.add_constraint(ids, residual.h, 1, residual.jacobian,
                             ConstraintMode::Monitor));
        break;
    }
  }
  return ocp;
}

ReferenceTrajectory read_reference_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("reference CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "t,velocity") {
    throw InvalidInput("reference CSV header must be 't,velocity'");
  }
  std::vector<double> t, v;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string a, b, extra;
    if (!std::getline(fields, a, ',') || !std::getline(fields, b, ',') ||
        std::getline(fields, extra, ',')) {
      throw InvalidInput("reference CSV row " + std::to_string(row) +
                         ": expected two columns");
    }
    try {
      std::size_t pa = 0, pb = 0;
      t.push_back(std::stod(a, &pa));
      v.push_back(std::stod(b, &pb));
      if (pa != a.size() || pb != b.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw InvalidInput("reference CSV row " + std::to_string(row) +
                         ": not a number");
    }
  }
  if (t.size() < 2) throw InvalidHorizon("reference needs at least 2 samples");
  const double dt = t[1] - t[0];
  if (!(dt > 0)) throw InvalidInput("reference times must increase");
  for (std::size_t i = 1; i < t.size(); ++i) {
    const double step = t[i] - t[i - 1];
    if (!(step > 0) || std::abs(step - dt) > 1e-9 * std::max(1.0, dt)) {
      throw InvalidInput("reference times must increase at a fixed step");
    }
  }
  ReferenceTrajectory ref{std::move(v), dt};
  ref.validate();
  return ref;
}

ReferenceTrajectory read_reference_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open reference CSV: " + path);
  return read_reference_csv(in);
}

void write_reference_csv(std::ostream& out, const ReferenceTrajectory& ref) {
  out << "t,velocity\n";
  char buf[64];
  for (std::size_t i = 0; i < ref.samples.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", double(i) * ref.dt,
                  ref.samples[i]);
    out << buf;
  }
}

}  // namespace ecfg::vehicle
