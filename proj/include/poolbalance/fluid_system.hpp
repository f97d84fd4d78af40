#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "poolbalance/errors.hpp"
#include "poolbalance/fluid.hpp"
#include "poolbalance/load_schedule.hpp"

namespace poolbalance {

struct FluidIntegratorOptions {
  double tolerance = 1e-8;         // per-step error tolerance (absolute and relative)
  double event_tolerance = 1e-10;  // width of the bracket around a located switch
  double sample_dt = 0.01;         // output grid; steps are cut to land on it
  std::size_t max_switches = 10000;
  bool adaptive = true;            // false holds the threshold fixed
  std::optional<std::size_t> threshold_cap;
  std::size_t depth = 0;           // 0 picks max(ceil(lambda_max) + 10, top level + 5)
  double initial_step = 1e-4;
  double min_step = 1e-15;
};

struct FluidSample {
  double t;
  std::size_t threshold;
  FluidState state;
};

struct ThresholdSwitch {
  double t;
  std::size_t threshold;  // value after the switch
};

struct Settling {
  double t_eq;
  std::size_t threshold;
};

// One sampled fluid system: occupancy path plus piecewise-constant threshold.
struct FluidTrajectory {
  std::size_t initial_threshold = 0;
  std::size_t depth = 0;
  std::vector<FluidSample> samples;
  std::vector<ThresholdSwitch> switches;
  std::optional<Settling> settled;
  std::size_t steps_accepted = 0;
  std::size_t steps_rejected = 0;

  std::size_t final_threshold() const {
    return switches.empty() ? initial_threshold : switches.back().threshold;
  }
};

namespace detail {

// Dormand-Prince 5(4) tableau.
struct DormandPrince {
  static constexpr std::array<double, 7> c{0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                          b6 = 11.0 / 84;
  // b - b*, the embedded 4th-order weights subtracted from the 5th-order ones.
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                          e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
};

// Keeps the integrator state inside the occupancy simplex: q(0) = 1,
// non-increasing, values within kLevelTolerance of 1 snapped to exactly 1.
inline double occupancy_mass(const std::vector<double>& y) {
  double m = 0.0;
  for (std::size_t i = 1; i < y.size(); ++i) m += y[i];
  return m;
}

// Restores 1 = y(0) >= y(1) >= ... >= 0 while keeping the total mass at `mass`.
// Clipped excess goes to the lowest levels with room below their predecessor;
// a deficit is taken from the top of the tail.
inline void project_occupancy(std::vector<double>& y, double mass) {
  y[0] = 1.0;
  for (std::size_t i = 1; i < y.size(); ++i) {
    double v = std::clamp(y[i], 0.0, y[i - 1]);
    if (y[i - 1] == 1.0 && v > 1.0 - kLevelTolerance) v = 1.0;
    y[i] = v;
  }
  double excess = mass - occupancy_mass(y);
  if (excess > 0.0) {
    for (std::size_t i = 1; i < y.size() && excess > 0.0; ++i) {
      const double take = std::min(y[i - 1] - y[i], excess);
      y[i] += take;
      excess -= take;
    }
  } else if (excess < 0.0) {
    for (std::size_t i = y.size() - 1; i >= 1 && excess < 0.0; --i) {
      const double below = i + 1 < y.size() ? y[i + 1] : 0.0;
      const double take = std::min(y[i] - below, -excess);
      y[i] -= take;
      excess += take;
    }
  }
}

inline void project_occupancy(std::vector<double>& y) { project_occupancy(y, occupancy_mass(y)); }

inline double hermite(double y0, double y1, double f0, double f1, double h, double s) {
  const double th = s / h;
  const double th2 = th * th, th3 = th2 * th;
  return (2 * th3 - 3 * th2 + 1) * y0 + (th3 - 2 * th2 + th) * h * f0 + (-2 * th3 + 3 * th2) * y1 +
         (th3 - th2) * h * f1;
}

// Smallest s in (0, h] where the interpolant of one coordinate reaches `target`,
// given it starts on the `above` side; bracketed to `tol`.
inline double locate_crossing(double y0, double y1, double f0, double f1, double h, double target,
                              bool start_above, double tol) {
  auto crossed = [&](double s) {
    const double v = hermite(y0, y1, f0, f1, h, s);
    return start_above ? v <= target : v >= target;
  };
  // Scan coarsely first so that the earliest crossing is bracketed.
  constexpr int kScan = 16;
  double lo = 0.0, hi = h;
  for (int k = 1; k <= kScan; ++k) {
    const double s = h * k / kScan;
    if (crossed(s)) {
      hi = s;
      lo = h * (k - 1) / kScan;
      break;
    }
  }
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (crossed(mid) ? hi : lo) = mid;
  }
  return hi;
}

}  // namespace detail

// Integrates the fluid dynamics with an adaptive threshold: the threshold drops
// by one when q(l) falls to alpha and rises by one when q(l+1) reaches 1.
// Where the right-hand side admits several solutions, the one produced by the
// clamped routing fractions is returned.
inline FluidTrajectory integrate_fluid_system(const FluidState& q0, std::size_t threshold0,
                                              const LoadSchedule& load, double alpha, double mu,
                                              double horizon, const FluidIntegratorOptions& opts = {}) {
  if (load.empty()) throw ConfigError("integrate_fluid_system: empty load schedule");
  if (!(mu > 0.0)) throw PreconditionError("integrate_fluid_system: service rate must be positive");
  if (!(horizon >= 0.0)) throw PreconditionError("integrate_fluid_system: negative horizon");
  if (opts.adaptive && !(alpha > 0.0 && alpha < 1.0))
    throw PreconditionError("integrate_fluid_system: alpha must lie in (0, 1)");

  std::size_t top = 0;
  for (std::size_t i = 1; i <= q0.depth(); ++i)
    if (q0[i] > 0.0) top = i;
  std::size_t depth = opts.depth;
  if (depth == 0) {
    const double rho_max = load.lambda_max() / mu;
    depth = std::max<std::size_t>(static_cast<std::size_t>(std::ceil(rho_max)) + 10, top + 5);
    depth = std::max(depth, threshold0 + 5);
  }
  if (q0.depth() > depth && q0[depth + 1] > kTruncationTolerance)
    throw DepthError("integrate_fluid_system: initial state exceeds depth " + std::to_string(depth));
  if (threshold0 + 1 >= depth)
    throw DepthError("integrate_fluid_system: threshold too close to depth");

  std::vector<double> y(depth + 1, 0.0);
  for (std::size_t i = 0; i <= depth; ++i) y[i] = q0[i];
  std::size_t l = threshold0;

  if (opts.adaptive) {
    if (!(y[l] > alpha) || !(y[l + 1] < 1.0))
      throw PreconditionError(
          "integrate_fluid_system: initial state must satisfy q(l) > alpha and q(l+1) < 1");
  }

  FluidTrajectory traj;
  traj.initial_threshold = threshold0;
  traj.depth = depth;

  const std::size_t n = depth + 1;
  auto rhs = [&](const std::vector<double>& state, double lambda, std::vector<double>& out) {
    out = fluid_rhs(FluidState::trusted(state), l, lambda, mu);
  };
  auto record = [&](double t) { traj.samples.push_back({t, l, FluidState::trusted(y)}); };
  auto apply_switch = [&](double t, bool increase) {
    if (increase) {
      for (std::size_t i = 0; i <= l + 1; ++i) y[i] = 1.0;
      ++l;
    } else {
      --l;
    }
    traj.switches.push_back({t, l});
    if (traj.switches.size() > opts.max_switches)
      throw AccumulationError("integrate_fluid_system: more than " +
                              std::to_string(opts.max_switches) + " threshold switches");
  };
  auto can_increase = [&] { return !opts.threshold_cap || l < *opts.threshold_cap; };
  auto wants_decrease = [&] { return l >= 1 && y[l] <= alpha; };
  auto wants_increase = [&] { return can_increase() && y[l + 1] >= 1.0 - kLevelTolerance; };

  using DP = detail::DormandPrince;
  std::vector<double> k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), tmp(n), y5(n);

  double t = 0.0;
  double step = opts.initial_step;
  std::size_t grid_index = 0;
  const double dt = opts.sample_dt > 0.0 ? opts.sample_dt : horizon;
  record(t);

  while (t < horizon) {
    if (opts.adaptive) {
      // Instantaneous cascades cannot happen from a valid start, but guard anyway.
      while (wants_decrease() || wants_increase()) {
        if (l + 2 >= depth) throw DepthError("integrate_fluid_system: threshold reached depth");
        apply_switch(t, !wants_decrease());
      }
    }
    const double lambda = load.at(t);
    double next_grid = static_cast<double>(grid_index + 1) * dt;
    while (next_grid <= t) next_grid = static_cast<double>(++grid_index + 1) * dt;
    const double t_stop = std::min({horizon, next_grid, load.next_breakpoint(t)});
    const double h = std::min(step, t_stop - t);

    rhs(y, lambda, k1);
    auto stage = [&](std::initializer_list<std::pair<const std::vector<double>*, double>> terms,
                     std::vector<double>& out) {
      for (std::size_t i = 0; i < n; ++i) {
        double acc = y[i];
        for (const auto& [k, a] : terms) acc += h * a * (*k)[i];
        tmp[i] = acc;
      }
      rhs(tmp, lambda, out);
    };
    stage({{&k1, DP::a21}}, k2);
    stage({{&k1, DP::a31}, {&k2, DP::a32}}, k3);
    stage({{&k1, DP::a41}, {&k2, DP::a42}, {&k3, DP::a43}}, k4);
    stage({{&k1, DP::a51}, {&k2, DP::a52}, {&k3, DP::a53}, {&k4, DP::a54}}, k5);
    stage({{&k1, DP::a61}, {&k2, DP::a62}, {&k3, DP::a63}, {&k4, DP::a64}, {&k5, DP::a65}}, k6);
    for (std::size_t i = 0; i < n; ++i)
      y5[i] = y[i] + h * (DP::b1 * k1[i] + DP::b3 * k3[i] + DP::b4 * k4[i] + DP::b5 * k5[i] +
                          DP::b6 * k6[i]);
    rhs(y5, lambda, k7);

    double err = 0.0;
    for (std::size_t i = 1; i < n; ++i) {
      const double e = h * (DP::e1 * k1[i] + DP::e3 * k3[i] + DP::e4 * k4[i] + DP::e5 * k5[i] +
                            DP::e6 * k6[i] + DP::e7 * k7[i]);
      const double scale = opts.tolerance * (1.0 + std::max(std::abs(y[i]), std::abs(y5[i])));
      err = std::max(err, std::abs(e) / scale);
    }
    if (!std::isfinite(err)) err = 1e10;

    if (err > 1.0) {
      ++traj.steps_rejected;
      step = h * std::max(0.1, 0.9 * std::pow(err, -0.2));
      if (step < opts.min_step)
        throw Error("integrate_fluid_system: step size underflow at t = " + std::to_string(t));
      continue;
    }
    ++traj.steps_accepted;
    const double grow = err == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);

    // Threshold events inside the accepted step, plus the regime change when the
    // lowest non-full level at or above l fills up. Only levels l and l+1 can fill
    // in finite time; stepping over a fill would overshoot 1 and lose mass to the
    // projection.
    std::optional<double> s_dec, s_fill;
    std::size_t fill_level = 0;
    if (opts.adaptive && l >= 1 && y5[l] <= alpha)
      s_dec = detail::locate_crossing(y[l], y5[l], k1[l], k7[l], h, alpha, true, opts.event_tolerance);
    for (std::size_t f : {l, l + 1}) {
      if (y[f] >= 1.0) continue;
      if (y5[f] >= 1.0 - kLevelTolerance) {
        fill_level = f;
        s_fill = detail::locate_crossing(y[f], y5[f], k1[f], k7[f], h, 1.0 - kLevelTolerance, false,
                                         opts.event_tolerance);
      }
      break;
    }
    if (s_dec || s_fill) {
      const bool increase_possible = s_fill && fill_level == l + 1 && opts.adaptive && can_increase();
      bool fill = false;
      double s = 0.0;
      if (s_dec && s_fill) {
        fill = *s_fill < *s_dec - opts.event_tolerance;  // near-ties resolve to a decrease
        s = fill ? *s_fill : *s_dec;
      } else if (s_fill) {
        fill = true;
        s = *s_fill;
      } else {
        s = *s_dec;
      }
      for (std::size_t i = 0; i < n; ++i) y[i] = detail::hermite(y[i], y5[i], k1[i], k7[i], h, s);
      t += s;
      if (fill) {
        const double mass = detail::occupancy_mass(y);
        for (std::size_t i = 0; i <= fill_level; ++i) y[i] = 1.0;
        detail::project_occupancy(y, mass);
        if (increase_possible) {
          if (l + 2 >= depth) throw DepthError("integrate_fluid_system: threshold reached depth");
          apply_switch(t, true);
          record(t);
        }
      } else {
        detail::project_occupancy(y);
        apply_switch(t, false);
        record(t);
      }
      step = std::max(h, 1e-8);
      continue;
    }

    y.swap(y5);
    detail::project_occupancy(y);
    t = (h == t_stop - t) ? t_stop : t + h;
    if (y[depth] > kTruncationTolerance)
      throw DepthError("integrate_fluid_system: q(depth) exceeded truncation tolerance at t = " +
                       std::to_string(t));
    if (t == next_grid || t == horizon) {
      record(t);
      if (t == next_grid) ++grid_index;
    }
    // A step cut short by the grid does not shrink the next proposal.
    step = h < step ? std::max(h * grow, step * std::min(1.0, grow)) : h * grow;
  }

  const std::size_t final_l = traj.final_threshold();
  traj.settled = Settling{traj.switches.empty() ? 0.0 : traj.switches.back().t, final_l};
  return traj;
}

inline FluidTrajectory integrate_fluid_system(const FluidState& q0, std::size_t threshold0, double lambda,
                                              double alpha, double mu, double horizon,
                                              const FluidIntegratorOptions& opts = {}) {
  return integrate_fluid_system(q0, threshold0, LoadSchedule::constant(lambda), alpha, mu, horizon, opts);
}

// Fixed-threshold integration of the static fluid dynamics.
inline FluidTrajectory integrate_fixed_threshold(const FluidState& q0, std::size_t threshold,
                                                 double lambda, double mu, double horizon,
                                                 FluidIntegratorOptions opts = {}) {
  opts.adaptive = false;
  return integrate_fluid_system(q0, threshold, LoadSchedule::constant(lambda), 0.5, mu, horizon, opts);
}

}  // namespace poolbalance
