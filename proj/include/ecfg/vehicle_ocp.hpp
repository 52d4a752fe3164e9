#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ecfg/factor_graph.hpp"

namespace ecfg::vehicle {

/// Longitudinal vehicle model. Defaults are representative passenger-car
/// values.
struct VehicleParams {
  double mass = 1700.0;          // kg, including rotating powertrain inertia
  double vehicle_mass = 1600.0;  // kg
  double gravity = 9.81;         // m/s^2
  double slope = 0.0;            // rad
  double air_density = 1.206;    // kg/m^3
  double frontal_area = 2.4;     // m^2
  double drag_coefficient = 0.32;
  double rolling_coefficient = 0.009;
  double dt = 1.0;  // s

  void validate() const;
};

struct OcpWeights {
  double terminal = 1000.0;  // P
  double tracking = 1000.0;  // Q
  double input = 0.0007;     // R

  void validate() const;
};

struct ReferenceTrajectory {
  std::vector<double> samples;  // m/s
  double dt = 1.0;              // s

  std::size_t size() const { return samples.size(); }
  void validate() const;
};

struct Nonlinear {};

/// v^2 replaced by p1 + p2 * v in the air-drag term.
struct Linearized {
  double p1 = 0.0;
  double p2 = 0.0;
};

using DynamicsMode = std::variant<Nonlinear, Linearized>;

/// Grade + air drag + rolling resistance with the exact v^2 drag term.
double resistance_force(double v, const VehicleParams& params);
double resistance_force(double v, const VehicleParams& params,
                        const DynamicsMode& mode);
/// dF/dv under the given mode.
double resistance_slope(double v, const VehicleParams& params,
                        const DynamicsMode& mode);

/// Explicit Euler step x + dt/m * (u - F(x)).
double dynamics_step(double x, double u, const VehicleParams& params,
                     const DynamicsMode& mode);

/// Tangent of v^2 at v_nominal: p2 = 2 v, p1 = -v^2.
Linearized fit_linearization(double v_nominal);

std::vector<double> rollout(std::span<const double> inputs, double x0,
                            const VehicleParams& params,
                            const DynamicsMode& mode);

double rmse(std::span<const double> a, std::span<const double> b);

enum class Method { Unconstrained, Kkt, AugmentedLagrangian, Soft };

struct MethodSpec {
  Method method = Method::Kkt;
  double soft_weight = 1e6;  // only used by Method::Soft
};

/// Residual h_k = x_{k+1} - x_k - dt/m (u_k - F(x_k)) and its analytic
/// Jacobian. With `fixed_start` set, x_k is the constant x0 and the function
/// takes (u_k, x_{k+1}); otherwise it takes (x_k, u_k, x_{k+1}).
struct DynamicsResidual {
  ErrorFunction<double> h;
  JacobianFunction<double> jacobian;
};

DynamicsResidual make_dynamics_residual(const VehicleParams& params,
                                        const DynamicsMode& mode,
                                        bool fixed_start, double x0 = 0.0);

/// Graph for the velocity-tracking problem together with handles into it.
/// The initial velocity x_0 = r_0 is a constant, not a variable.
struct OcpGraph {
  FactorGraph<double> graph;
  double x0 = 0.0;
  std::vector<VariableId> states;       // x_1 .. x_{N-1}
  std::vector<VariableId> inputs;       // u_0 .. u_{N-2}
  std::vector<ConstraintId> dynamics;   // k = 0 .. N-2
  std::vector<VariableId> multipliers;  // KKT only
  std::vector<EdgeId> tracking_edges;   // Q, k = 1 .. N-2
  std::vector<EdgeId> terminal_edges;   // P, k = N-1
  std::vector<EdgeId> input_edges;      // R, k = 0 .. N-2
  std::vector<EdgeId> equality_edges;   // KKT only
  std::vector<EdgeId> soft_edges;       // Soft only

  /// x_0 .. x_{N-1}
  std::vector<double> velocity() const;
  std::vector<double> input_sequence() const;
  /// Sum of the tracking, terminal and input terms at the current values.
  double objective() const;
};

/// Initial guess: every state at x_0 (vehicle holds its initial speed),
/// inputs at zero, multipliers at `initial_multiplier`.
OcpGraph build_ocp_graph(const ReferenceTrajectory& ref,
                         const VehicleParams& params, const OcpWeights& weights,
                         const DynamicsMode& mode, const MethodSpec& method,
                         double initial_multiplier = 0.0);

/// Reads `t,velocity` CSV with strictly increasing t at a fixed step.
ReferenceTrajectory read_reference_csv(std::istream& in);
ReferenceTrajectory read_reference_csv(const std::string& path);
void write_reference_csv(std::ostream& out, const ReferenceTrajectory& ref);

}  // namespace ecfg::vehicle
