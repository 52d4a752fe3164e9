#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <random>
#include <vector>

#include "ecfg/factor_graph.hpp"

namespace testing {

using Graph = ecfg::FactorGraph<double>;
using Vec = ecfg::VectorX<double>;
using Mat = ecfg::MatrixX<double>;
using Vals = ecfg::Values<double>;

inline Vec vec(std::initializer_list<double> v) {
  Vec out(v.size());
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

inline Mat mat1(double v) { return Mat::Constant(1, 1, v); }

/// e(x) = x - target with unit slope Jacobian.
inline ecfg::EdgeId add_prior(Graph& g, ecfg::VariableId id, double target,
                              double weight = 1.0) {
  return g.add_edge(
      {id}, [target](const Vals& v) { return Vec(v[0].array() - target); },
      mat1(weight),
      [](const Vals&) { return std::vector<Mat>{mat1(1.0)}; });
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Plain central differences with respect to one argument block, kept
/// separate from the library's fallback.
inline Mat central_difference(const ecfg::ErrorFunction<double>& f, Vals at,
                              std::size_t block) {
  const Vec f0 = f(at);
  Mat J(f0.size(), at[block].size());
  for (Eigen::Index i = 0; i < at[block].size(); ++i) {
    const double x = at[block](i);
    const double h = 1e-6 * std::max(1.0, std::abs(x));
    at[block](i) = x + h;
    const Vec plus = f(at);
    at[block](i) = x - h;
    const Vec minus = f(at);
    at[block](i) = x;
    J.col(i) = (plus - minus) / (2 * h);
  }
  return J;
}

/// Entrywise relative error <= tol; exact zeros may come back as roundoff.
inline bool relative_match(const Mat& analytic, const Mat& numeric, double tol) {
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data()[i], n = numeric.data()[i];
    if (a == 0.0) {
      if (std::abs(n) > 1e-12) return false;
    } else if (std::abs(a - n) > tol * std::abs(a)) {
      return false;
    }
  }
  return true;
}

}  // namespace testing
