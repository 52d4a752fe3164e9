#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ecfg/constraints.hpp"
#include "ecfg/solver.hpp"
#include "ecfg/vehicle_ocp.hpp"

namespace ecfg::bench {

enum class ScenarioKind {
  Unconstrained,
  KktLinear,
  KktNonlinear,
  AlLinear,
  AlNonlinear,
  Soft,
};

struct Scenario {
  ScenarioKind kind = ScenarioKind::KktNonlinear;
  double soft_weight = 1e6;

  /// "Unconstrained", "KktLinear", ..., "Soft(1e+06)".
  std::string name() const;
  bool linearized() const;
  vehicle::MethodSpec method() const;

  /// Accepts the names produced by name() and the CLI spellings
  /// unconstrained, kkt-linear, kkt-nonlinear, al-linear, al-nonlinear, soft.
  static Scenario parse(const std::string& text, double soft_weight = 1e6);
};

/// The five scenarios of the iteration-count comparison, without Soft.
std::vector<Scenario> default_scenarios();

struct BenchConfig {
  vehicle::VehicleParams params;
  vehicle::OcpWeights weights;
  SolverConfig solver;
  ALConfig al;
  /// Linearization point for the linearized scenarios; mean of the reference
  /// when unset.
  std::optional<double> linearization_point;
  double initial_multiplier = 0.0;
};

struct BenchReport {
  Scenario scenario;
  int N = 0;
  int iterations = 0;
  double mean_iter_time_s = 0.0;
  double total_time_s = 0.0;  // mean wall time of one full solve
  double constraint_violation = 0.0;
  std::optional<double> rmse_vs_kkt;
  Termination termination = Termination::MaxIterations;
  int repeats = 1;
  std::vector<double> velocity;  // x_0 .. x_{N-1}
  std::vector<double> inputs;    // u_0 .. u_{N-2}

  bool ok() const { return termination == Termination::StepTolerance; }
};

/// Deterministic piecewise hold/ramp velocity profile in [0, 30] m/s
/// starting from standstill.
vehicle::ReferenceTrajectory synthesize_reference(std::size_t n, double dt,
                                                  std::uint64_t seed);

/// Solves the scenario `repeats` times on freshly built graphs and reports
/// the mean solve time (graph construction excluded). Throws if repeats
/// disagree on the solution.
BenchReport run_scenario(const Scenario& scenario,
                         const vehicle::ReferenceTrajectory& ref, int repeats,
                         const BenchConfig& config);

struct Comparison {
  BenchReport kkt;
  BenchReport al;
  double rmse = 0.0;
  double iteration_ratio = 0.0;       // AL / KKT
  double time_per_iteration_ratio = 0.0;  // KKT / AL

  bool ok() const { return kkt.ok() && al.ok(); }
};

/// KktNonlinear against AlNonlinear on the same reference.
Comparison compare_methods(const vehicle::ReferenceTrajectory& ref, int repeats,
                           const BenchConfig& config);

/// Runs every scenario for every horizon on prefixes of `full_ref` and fills
/// rmse_vs_kkt against the KktNonlinear solution of the same horizon.
std::vector<BenchReport> run_grid(const std::vector<Scenario>& scenarios,
                                  const std::vector<int>& horizons,
                                  const vehicle::ReferenceTrajectory& full_ref,
                                  int repeats, const BenchConfig& config,
                                  bool parallel = false);

enum class Format { Csv, Json };

inline constexpr const char* kCsvHeader =
    "scenario,N,iterations,mean_iter_time_s,total_time_s,constraint_violation,"
    "rmse_vs_kkt,termination";

void emit_report(const std::vector<BenchReport>& reports, Format format,
                 std::ostream& out);
/// Throws ecfg::Error when the file cannot be written.
void emit_report(const std::vector<BenchReport>& reports, Format format,
                 const std::string& path);

std::vector<BenchReport> reports_from_json(const std::string& text);

/// t,reference,velocity,input rows for plotting a solved trajectory.
void write_trajectory_csv(std::ostream& out,
                          const vehicle::ReferenceTrajectory& ref,
                          const BenchReport& report);

Termination termination_from_string(const std::string& text);

}  // namespace ecfg::bench
