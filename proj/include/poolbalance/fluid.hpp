#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "poolbalance/errors.hpp"

namespace poolbalance {

inline constexpr double kTruncationTolerance = 1e-8;  // largest admissible q(I_max)
inline constexpr double kClampTolerance = 1e-12;      // clamping smaller than this is not reported
inline constexpr double kLevelTolerance = 1e-12;      // q(i) within this of 1 counts as full

inline bool is_integer_load(double lambda) { return std::floor(lambda) == lambda; }

// Fluid occupancy: q(i) is the fraction of pools with at least i tasks,
// i = 0..depth(). Levels beyond depth() are implicitly zero.
class FluidState {
 public:
  FluidState() : q_{1.0} {}

  // Validates q(0) = 1, 0 <= q(i+1) <= q(i) <= 1 up to `tol`.
  explicit FluidState(std::vector<double> q, double tol = 1e-12) : q_(std::move(q)) {
    if (q_.empty()) throw StateError("fluid state: empty occupancy vector");
    if (q_[0] != 1.0) throw StateError("fluid state: q(0) must equal 1");
    for (std::size_t i = 1; i < q_.size(); ++i) {
      if (!std::isfinite(q_[i]) || q_[i] < -tol || q_[i] > q_[i - 1] + tol)
        throw StateError("fluid state: occupancy not non-increasing in [0, 1] at level " +
                         std::to_string(i));
    }
  }

  static FluidState empty(std::size_t depth) {
    std::vector<double> q(depth + 1, 0.0);
    q[0] = 1.0;
    return FluidState(std::move(q));
  }

  std::size_t depth() const noexcept { return q_.size() - 1; }
  double operator[](std::size_t i) const noexcept { return i < q_.size() ? q_[i] : 0.0; }
  std::span<const double> values() const noexcept { return q_; }

  // Unchecked construction for integrator internals that maintain validity themselves.
  static FluidState trusted(std::vector<double> q) {
    FluidState s;
    s.q_ = std::move(q);
    return s;
  }

 private:
  std::vector<double> q_;
};

// Arrival split p(i), i = 1..depth: fraction of arrivals sent to pools that
// hold exactly i - 1 tasks. Index 0 is unused and kept at zero.
struct RoutingVector {
  std::vector<double> p;
  bool clamped = false;

  double sum() const {
    double s = 0.0;
    for (std::size_t i = 1; i < p.size(); ++i) s += p[i];
    return s;
  }
};

// Balanced occupancy: every pool holds floor(lambda) or ceil(lambda) tasks.
inline FluidState ideal_occupancy(double lambda, std::size_t depth) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw StateError("ideal_occupancy: load must be >= 0");
  const auto whole = static_cast<std::size_t>(std::floor(lambda));
  if (depth < whole + 2)
    throw DepthError("ideal_occupancy: depth " + std::to_string(depth) + " too small for load " +
                     std::to_string(lambda));
  std::vector<double> q(depth + 1, 0.0);
  for (std::size_t i = 0; i <= whole; ++i) q[i] = 1.0;
  q[whole + 1] = lambda - std::floor(lambda);
  return FluidState(std::move(q));
}

inline double tail_mass(const FluidState& q, std::size_t from_level) {
  double v = 0.0;
  for (std::size_t i = std::max<std::size_t>(from_level, 1); i <= q.depth(); ++i) v += q[i];
  return v;
}

inline double total_mass(const FluidState& q) { return tail_mass(q, 1); }

// Solution of u' = lambda - u.
inline double total_mass_closed_form(double u0, double lambda, double t) {
  return lambda + (u0 - lambda) * std::exp(-t);
}

namespace detail {

inline double clamp01(double x, bool& changed) {
  const double c = std::clamp(x, 0.0, 1.0);
  if (std::abs(c - x) > kClampTolerance) changed = true;
  return c;
}

}  // namespace detail

// Arrival split of the static-threshold fluid dynamics for offered load
// `load` (arrival rate over service rate). Three regimes, decided on q(l) and
// q(h), h = l + 1:
//   q(l) < 1              uniform over pools below l
//   q(l) = 1, q(h) < 1    enough to pools below l to balance their departures, rest to level l
//   q(h) = 1              enough to level l to balance departures, rest uniformly at random
// Off-trajectory values are clamped to [0, 1] keeping the total at one.
inline RoutingVector routing_fractions(const FluidState& q, std::size_t threshold, double load) {
  const std::size_t depth = q.depth();
  if (threshold >= depth)
    throw DepthError("routing_fractions: threshold " + std::to_string(threshold) +
                     " not below depth " + std::to_string(depth));
  if (!(load >= 0.0)) throw StateError("routing_fractions: negative load");
  const std::size_t l = threshold;
  const std::size_t h = l + 1;

  RoutingVector out;
  out.p.assign(depth + 1, 0.0);

  if (q[l] < 1.0 - kLevelTolerance) {
    const double below = 1.0 - q[l];
    for (std::size_t i = 1; i <= l; ++i) out.p[i] = (q[i - 1] - q[i]) / below;
    return out;
  }
  if (load == 0.0) return out;

  if (q[h] < 1.0 - kLevelTolerance) {
    const double raw = static_cast<double>(l) / load * (1.0 - q[h]);
    const double pl = l == 0 ? 0.0 : detail::clamp01(raw, out.clamped);
    if (l > 0) out.p[l] = pl;
    out.p[h] = 1.0 - pl;
    return out;
  }

  const double raw = static_cast<double>(h) / load * (1.0 - q[h + 1]);
  const double ph = detail::clamp01(raw, out.clamped);
  out.p[h] = ph;
  for (std::size_t i = h + 1; i <= depth; ++i) out.p[i] = (1.0 - ph) * (q[i - 1] - q[i]);
  return out;
}

// Time derivative of q under threshold `threshold`, arrival rate `lambda` and
// per-task service rate `mu`. Entry 0 is zero; entries 1..depth use q(depth+1) = 0.
inline std::vector<double> fluid_rhs(const FluidState& q, std::size_t threshold, double lambda,
                                     double mu = 1.0) {
  if (!(mu > 0.0)) throw StateError("fluid_rhs: service rate must be positive");
  const RoutingVector r = routing_fractions(q, threshold, lambda / mu);
  const std::size_t depth = q.depth();
  std::vector<double> d(depth + 1, 0.0);
  for (std::size_t i = 1; i <= depth; ++i)
    d[i] = lambda * r.p[i] - mu * static_cast<double>(i) * (q[i] - q[i + 1]);
  return d;
}

inline double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

namespace detail {

// Bisection on (lo, hi) for a function positive at lo and negative at hi.
template <class F>
double bisect_decreasing(F&& f, double lo, double hi) {
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (f(mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

// Equilibrium of the fluid dynamics for a threshold above floor(lambda):
// level differences form an Erlang-B distribution with `threshold` servers and
// inflated offered traffic lambda / (1 - theta), theta = q(threshold).
inline FluidState erlang_fixed_point(double lambda, std::size_t threshold, std::size_t depth = 0) {
  if (!(lambda > 0.0)) throw RootError("erlang_fixed_point: load must be positive");
  const std::size_t l = threshold;
  // lambda / x - sum_{i=1..l} l!/(l-i)! ((1-x)/lambda)^(i-1)
  auto f = [&](double x) {
    double term = 1.0, sum = 0.0;
    const double ratio = (1.0 - x) / lambda;
    for (std::size_t i = 1; i <= l; ++i) {
      term *= static_cast<double>(l - i + 1);
      if (i > 1) term *= ratio;
      sum += term;
    }
    return lambda / x - sum;
  };
  if (l == 0 || !(f(1.0) < 0.0))
    throw RootError("erlang_fixed_point: no sign change; threshold must exceed floor(load)");
  const double theta = detail::bisect_decreasing(f, 0.0, 1.0);

  depth = std::max(depth, l + 1);
  std::vector<double> q(depth + 1, 0.0);
  // pi(l - i) = l!/(l-i)! ((1-theta)/lambda)^i theta
  std::vector<double> pi(l + 1, 0.0);
  double term = theta;
  pi[l] = theta;
  for (std::size_t i = 1; i <= l; ++i) {
    term *= static_cast<double>(l - i + 1) * (1.0 - theta) / lambda;
    pi[l - i] = term;
  }
  double acc = 0.0;
  for (std::size_t j = l; j >= 1; --j) {
    acc += pi[j];
    q[j] = acc;
  }
  q[0] = 1.0;
  return FluidState(std::move(q), 1e-9);
}

// Equilibrium for a threshold below the load: all pools hold at least h = l+1
// tasks, and the excess above h follows the birth-death chain with birth rate
// lambda - h (1 - theta) and death rate j at state j.
inline FluidState overload_fixed_point(double lambda, std::size_t threshold, std::size_t depth = 0) {
  const std::size_t h = threshold + 1;
  const double hd = static_cast<double>(h);
  auto series = [&](double r) {
    double term = 1.0, sum = 1.0;
    for (std::size_t k = 1; k < 100000; ++k) {
      term *= r / (hd + static_cast<double>(k));
      sum += term;
      if (static_cast<double>(k) > r && term < 1e-18 * sum) break;
    }
    return sum;
  };
  auto g = [&](double x) {
    const double r = lambda - hd * (1.0 - x);
    return (1.0 - x) * series(std::max(r, 0.0)) - 1.0;
  };
  if (!(lambda > hd) || !(g(0.0) > 0.0))
    throw RootError("overload_fixed_point: no sign change; threshold too large for load");
  const double theta = detail::bisect_decreasing(g, 0.0, 1.0);
  const double r = lambda - hd * (1.0 - theta);

  // pi(i) = h!/i! r^(i-h) (1 - theta), i >= h
  std::vector<double> pi{1.0 - theta};
  for (std::size_t i = h + 1;; ++i) {
    const double next = pi.back() * r / static_cast<double>(i);
    if (next == 0.0 || (static_cast<double>(i) > r && next < 1e-20)) break;
    pi.push_back(next);
  }
  const std::size_t top = h + pi.size() - 1;  // last level with positive mass
  const std::size_t needed = top + 2;
  if (depth == 0) depth = needed;

  std::vector<double> q(std::max(depth, top) + 1, 0.0);
  double acc = 0.0;
  for (std::size_t i = top; i > h; --i) {
    acc += pi[i - h];
    q[i] = acc;
  }
  for (std::size_t i = 0; i <= h; ++i) q[i] = 1.0;
  if (q.size() > depth + 1) {
    if (q[depth] > kTruncationTolerance)
      throw DepthError("overload_fixed_point: tail does not fit in depth " + std::to_string(depth));
    q.resize(depth + 1);
  }
  return FluidState(std::move(q), 1e-9);
}

struct TuningReport {
  double lambda = 0.0;
  double alpha = 0.0;
  double lambda_max = 0.0;
  double u0 = 0.0;
  double alpha_min = 0.0;
  bool optimal_condition_holds = false;
  long l_eq_lower = 0;
  double l_eq_upper = 0.0;
  std::optional<double> t_eq_bound;  // only for non-integer load when the optimality condition holds
};

// alpha criterion, optimality condition, equilibrium-threshold bounds and the
// settling-time bound for the adaptive rule.
inline TuningReport tuning_report(double lambda, double alpha, double lambda_max, double u0) {
  TuningReport r;
  r.lambda = lambda;
  r.alpha = alpha;
  r.lambda_max = lambda_max;
  r.u0 = u0;
  r.alpha_min = lambda_max / (lambda_max + 1.0);
  const double fl = std::floor(lambda);
  const double cl = std::ceil(lambda);
  r.optimal_condition_holds = lambda / (fl + 1.0) < alpha;
  const bool integral = is_integer_load(lambda);
  r.l_eq_lower = integral ? std::max(0L, static_cast<long>(lambda) - 1) : static_cast<long>(fl);
  r.l_eq_upper = lambda / alpha;
  if (!integral && r.optimal_condition_holds) {
    const double fill = std::log(lambda / (lambda - fl));
    if (u0 <= lambda) {
      r.t_eq_bound = fill;
    } else {
      r.t_eq_bound = std::max(0.0, std::log((u0 - lambda) / (alpha * cl - lambda))) + fill;
    }
  }
  return r;
}

}  // namespace poolbalance
