#include "ecfg/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <map>
#include <numeric>
#include <ostream>
#include <random>

#include <json.hpp>

namespace ecfg::bench {

namespace {

using Clock = std::chrono::steady_clock;

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double uniform01(std::mt19937_64& rng) {
  return double(rng() >> 11) * 0x1.0p-53;
}

struct SolveRun {
  int iterations = 0;
  Termination termination = Termination::MaxIterations;
  double seconds = 0.0;
  double violation = 0.0;
  std::vector<double> velocity;
  std::vector<double> inputs;
};

SolveRun solve_once(const Scenario& scenario,
                    const vehicle::ReferenceTrajectory& ref,
                    const BenchConfig& config) {
  vehicle::DynamicsMode mode = vehicle::Nonlinear{};
  if (scenario.linearized()) {
    const double point = config.linearization_point.value_or(
        std::accumulate(ref.samples.begin(), ref.samples.end(), 0.0) /
        double(ref.samples.size()));
    mode = vehicle::fit_linearization(point);
  }
  auto ocp = vehicle::build_ocp_graph(ref, config.params, config.weights, mode,
                                      scenario.method(),
                                      config.initial_multiplier);

  SolveRun run;
  const auto start = Clock::now();
  if (scenario.method().method == vehicle::Method::AugmentedLagrangian) {
    const auto result = optimize_augmented_lagrangian(ocp.graph, config.al);
    run.iterations = result.stats.iterations;
    run.termination = result.stats.termination;
  } else {
    const auto result = optimize_kkt_gauss_newton(ocp.graph, config.solver);
    run.iterations = result.stats.iterations;
    run.termination = result.stats.termination;
  }
  run.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  run.violation = constraint_violation(ocp.graph);
  run.velocity = ocp.velocity();
  run.inputs = ocp.input_sequence();
  return run;
}

}  // namespace

std::string Scenario::name() const {
  switch (kind) {
    case ScenarioKind::Unconstrained:
      return "Unconstrained";
    case ScenarioKind::KktLinear:
      return "KktLinear";
    case ScenarioKind::KktNonlinear:
      return "KktNonlinear";
    case ScenarioKind::AlLinear:
      return "AlLinear";
    case ScenarioKind::AlNonlinear:
      return "AlNonlinear";
    case ScenarioKind::Soft: {
      char buf[64];
      std::snprintf(buf, sizeof buf, "Soft(%.15g)", soft_weight);
      return buf;
    }
  }
  return "Unknown";
}

bool Scenario::linearized() const {
  return kind == ScenarioKind::KktLinear || kind == ScenarioKind::AlLinear;
}

vehicle::MethodSpec Scenario::method() const {
  switch (kind) {
    case ScenarioKind::Unconstrained:
      return {vehicle::Method::Unconstrained};
    case ScenarioKind::KktLinear:
    case ScenarioKind::KktNonlinear:
      return {vehicle::Method::Kkt};
    case ScenarioKind::AlLinear:
    case ScenarioKind::AlNonlinear:
      return {vehicle::Method::AugmentedLagrangian};
    case ScenarioKind::Soft:
      return {vehicle::Method::Soft, soft_weight};
  }
  return {};
}

Scenario Scenario::parse(const std::string& text, double soft_weight) {
  static const std::map<std::string, ScenarioKind> names{
      {"Unconstrained", ScenarioKind::Unconstrained},
      {"unconstrained", ScenarioKind::Unconstrained},
      {"KktLinear", ScenarioKind::KktLinear},
      {"kkt-linear", ScenarioKind::KktLinear},
      {"KktNonlinear", ScenarioKind::KktNonlinear},
      {"kkt-nonlinear", ScenarioKind::KktNonlinear},
      {"AlLinear", ScenarioKind::AlLinear},
      {"al-linear", ScenarioKind::AlLinear},
      {"AlNonlinear", ScenarioKind::AlNonlinear},
      {"al-nonlinear", ScenarioKind::AlNonlinear},
      {"soft", ScenarioKind::Soft},
      {"Soft", ScenarioKind::Soft},
  };
  if (const auto it = names.find(text); it != names.end()) {
    Scenario s{it->second, soft_weight};
    if (s.kind == ScenarioKind::Soft && !(soft_weight > 0)) {
      throw InvalidWeight("soft weight must be positive");
    }
    return s;
  }
  if (text.starts_with("Soft(") && text.ends_with(")")) {
    try {
      std::size_t used = 0;
      const std::string inner = text.substr(5, text.size() - 6);
      const double w = std::stod(inner, &used);
      if (used == inner.size() && w > 0) return {ScenarioKind::Soft, w};
    } catch (const std::exception&) {
    }
  }
  throw InvalidInput("unknown scenario '" + text + "'");
}

std::vector<Scenario> default_scenarios() {
  return {{ScenarioKind::Unconstrained},
          {ScenarioKind::KktLinear},
          {ScenarioKind::KktNonlinear},
          {ScenarioKind::AlLinear},
          {ScenarioKind::AlNonlinear}};
}

vehicle::ReferenceTrajectory synthesize_reference(std::size_t n, double dt,
                                                  std::uint64_t seed) {
  if (n < 2) throw InvalidHorizon("reference needs at least 2 samples");
  if (!(dt > 0)) throw InvalidInput("reference dt must be positive");
  constexpr double kMaxSpeed = 30.0;
  std::mt19937_64 rng(seed);
  std::vector<double> v;
  v.reserve(n);
  double speed = 0.0;
  v.push_back(speed);
  bool first = true;
  while (v.size() < n) {
    // Occasional stops, otherwise a new cruise speed. The profile always
    // leaves standstill first.
    const double target = !first && uniform01(rng) < 0.15
                              ? 0.0
                              : 5.0 + uniform01(rng) * (kMaxSpeed - 5.0);
    first = false;
    const double accel = 0.4 + uniform01(rng) * 1.1;  // m/s^2
    while (speed != target && v.size() < n) {
      const double delta = accel * dt;
      speed = std::abs(target - speed) <= delta
                  ? target
                  : speed + std::copysign(delta, target - speed);
      speed = std::clamp(speed, 0.0, kMaxSpeed);
      v.push_back(speed);
    }
    const auto hold = std::size_t(5 + std::floor(uniform01(rng) * 26.0));
    for (std::size_t i = 0; i < hold && v.size() < n; ++i) v.push_back(speed);
  }
  return {std::move(v), dt};
}

BenchReport run_scenario(const Scenario& scenario,
                         const vehicle::ReferenceTrajectory& ref, int repeats,
                         const BenchConfig& config) {
  if (repeats < 1) throw InvalidInput("repeats must be at least 1");
  ref.validate();

  BenchReport report;
  report.scenario = scenario;
  report.N = int(ref.size());
  report.repeats = repeats;
  double total = 0.0;
  for (int r = 0; r < repeats; ++r) {
    SolveRun run = solve_once(scenario, ref, config);
    total += run.seconds;
    if (r == 0) {
      report.iterations = run.iterations;
      report.termination = run.termination;
      report.constraint_violation = run.violation;
      report.velocity = std::move(run.velocity);
      report.inputs = std::move(run.inputs);
    } else if (run.iterations != report.iterations ||
               run.velocity != report.velocity) {
      throw Error("non-deterministic solve in scenario " + scenario.name());
    }
  }
  report.total_time_s = total / repeats;
  report.mean_iter_time_s =
      report.iterations > 0 ? report.total_time_s / report.iterations : 0.0;
  return report;
}

Comparison compare_methods(const vehicle::ReferenceTrajectory& ref, int repeats,
                           const BenchConfig& config) {
  Comparison c;
  c.kkt = run_scenario({ScenarioKind::KktNonlinear}, ref, repeats, config);
  c.al = run_scenario({ScenarioKind::AlNonlinear}, ref, repeats, config);
  c.rmse = vehicle::rmse(c.al.velocity, c.kkt.velocity);
  c.kkt.rmse_vs_kkt = 0.0;
  c.al.rmse_vs_kkt = c.rmse;
  c.iteration_ratio = double(c.al.iterations) / double(c.kkt.iterations);
  c.time_per_iteration_ratio = c.kkt.mean_iter_time_s / c.al.mean_iter_time_s;
  return c;
}

std::vector<BenchReport> run_grid(const std::vector<Scenario>& scenarios,
                                  const std::vector<int>& horizons,
                                  const vehicle::ReferenceTrajectory& full_ref,
                                  int repeats, const BenchConfig& config,
                                  bool parallel) {
  std::vector<BenchReport> reports;
  for (int n : horizons) {
    if (n < 2 || std::size_t(n) > full_ref.size()) {
      throw InvalidHorizon("horizon " + std::to_string(n) +
                           " outside the available reference length");
    }
    vehicle::ReferenceTrajectory ref{
        {full_ref.samples.begin(), full_ref.samples.begin() + n}, full_ref.dt};

    const BenchReport baseline =
        run_scenario({ScenarioKind::KktNonlinear}, ref, 1, config);

    std::vector<BenchReport> batch(scenarios.size());
    if (parallel) {
      std::vector<std::future<BenchReport>> jobs;
      for (const auto& s : scenarios) {
        jobs.push_back(std::async(std::launch::async, [&, s] {
          return run_scenario(s, ref, repeats, config);
        }));
      }
      for (std::size_t i = 0; i < jobs.size(); ++i) batch[i] = jobs[i].get();
    } else {
      for (std::size_t i = 0; i < scenarios.size(); ++i) {
        batch[i] = run_scenario(scenarios[i], ref, repeats, config);
      }
    }
    for (auto& r : batch) {
      if (baseline.ok()) r.rmse_vs_kkt = vehicle::rmse(r.velocity, baseline.velocity);
      reports.push_back(std::move(r));
    }
  }
  return reports;
}

Termination termination_from_string(const std::string& text) {
  for (auto t : {Termination::StepTolerance, Termination::MaxIterations,
                 Termination::SolverFailure}) {
    if (text == to_string(t)) return t;
  }
  throw InvalidInput("unknown termination '" + text + "'");
}

void emit_report(const std::vector<BenchReport>& reports, Format format,
                 std::ostream& out) {
  if (format == Format::Csv) {
    out << kCsvHeader << '\n';
    for (const auto& r : reports) {
      out << r.scenario.name() << ',' << r.N << ',' << r.iterations << ','
          << format_double(r.mean_iter_time_s) << ','
          << format_double(r.total_time_s) << ','
          << format_double(r.constraint_violation) << ','
          << (r.rmse_vs_kkt ? format_double(*r.rmse_vs_kkt) : std::string())
          << ',' << to_string(r.termination) << '\n';
    }
    return;
  }
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& r : reports) {
    doc.push_back({
        {"scenario", r.scenario.name()},
        {"N", r.N},
        {"iterations", r.iterations},
        {"mean_iter_time_s", r.mean_iter_time_s},
        {"total_time_s", r.total_time_s},
        {"constraint_violation", r.constraint_violation},
        {"rmse_vs_kkt", r.rmse_vs_kkt ? nlohmann::json(*r.rmse_vs_kkt)
                                      : nlohmann::json(nullptr)},
        {"termination", to_string(r.termination)},
    });
  }
  out << doc.dump(2) << '\n';
}

void emit_report(const std::vector<BenchReport>& reports, Format format,
                 const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  emit_report(reports, format, out);
  out.flush();
  if (!out) throw Error("failed writing '" + path + "'");
}

std::vector<BenchReport> reports_from_json(const std::string& text) {
  std::vector<BenchReport> reports;
  const auto doc = nlohmann::json::parse(text);
  for (const auto& item : doc) {
    BenchReport r;
    r.scenario = Scenario::parse(item.at("scenario").get<std::string>());
    r.N = item.at("N").get<int>();
    r.iterations = item.at("iterations").get<int>();
    r.mean_iter_time_s = item.at("mean_iter_time_s").get<double>();
    r.total_time_s = item.at("total_time_s").get<double>();
    r.constraint_violation = item.at("constraint_violation").get<double>();
    if (!item.at("rmse_vs_kkt").is_null()) {
      r.rmse_vs_kkt = item.at("rmse_vs_kkt").get<double>();
    }
    r.termination = termination_from_string(item.at("termination").get<std::string>());
    reports.push_back(std::move(r));
  }
  return reports;
}

void write_trajectory_csv(std::ostream& out,
                          const vehicle::ReferenceTrajectory& ref,
                          const BenchReport& report) {
  out << "t,reference,velocity,input\n";
  for (std::size_t k = 0; k < report.velocity.size(); ++k) {
    out << format_double(double(k) * ref.dt) << ','
        << format_double(ref.samples.at(k)) << ','
        << format_double(report.velocity[k]) << ','
        << (k < report.inputs.size() ? format_double(report.inputs[k])
                                     : std::string())
        << '\n';
  }
}

}  // namespace ecfg::bench
