#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "poolbalance/engine.hpp"
#include "poolbalance/errors.hpp"
#include "poolbalance/fluid.hpp"
#include "poolbalance/fluid_system.hpp"
#include "poolbalance/load_schedule.hpp"

namespace poolbalance {

enum class ScalingMode {
  kAuto,        // pick by whether the load is an integer
  kNonInteger,  // log n deficit, sqrt n fluctuation at level ceil(lambda), sqrt n tails above it
  kInteger,     // sqrt n deficit and sqrt n tails from level lambda + 1
};

struct ScaledPaths {
  ScalingMode mode = ScalingMode::kAuto;
  std::vector<double> t;
  std::vector<double> y;  // deficit below the full levels
  std::vector<double> z;  // level-ceil(lambda) fluctuation; empty in integer mode
  std::map<std::size_t, std::vector<double>> tails;
};

inline ScaledPaths diffusion_scaled(const SampledTrajectory& traj, double lambda,
                                    ScalingMode mode = ScalingMode::kAuto) {
  if (traj.n < 2) throw PreconditionError("diffusion_scaled: needs n >= 2");
  if (!(lambda > 0.0)) throw PreconditionError("diffusion_scaled: needs lambda > 0");
  const bool integral = is_integer_load(lambda);
  if (mode == ScalingMode::kAuto) mode = integral ? ScalingMode::kInteger : ScalingMode::kNonInteger;
  if ((mode == ScalingMode::kInteger) != integral)
    throw ModeError(integral ? "diffusion_scaled: integer load needs the integer scaling"
                             : "diffusion_scaled: non-integer load needs the non-integer scaling");

  const double n = static_cast<double>(traj.n);
  const double root_n = std::sqrt(n);
  const auto full = static_cast<std::size_t>(std::floor(lambda));
  // Lowest tail level: ceil(lambda) + 1 in the non-integer case, lambda + 1 otherwise.
  const std::size_t first_tail = integral ? full + 1 : full + 2;
  std::size_t top = first_tail;
  for (const auto& s : traj.samples) top = std::max(top, s.occupancy.top());

  ScaledPaths out;
  out.mode = mode;
  out.t.reserve(traj.samples.size());
  for (std::size_t i = first_tail; i <= top; ++i) out.tails[i].reserve(traj.samples.size());
  const double deficit_scale = integral ? root_n : std::log(n);
  for (const auto& s : traj.samples) {
    double deficit = 0.0;
    for (std::size_t i = 1; i <= full; ++i) deficit += n - static_cast<double>(s.occupancy[i]);
    out.t.push_back(s.t);
    out.y.push_back(deficit / deficit_scale);
    if (!integral)
      out.z.push_back((static_cast<double>(s.occupancy[full + 1]) - (lambda - static_cast<double>(full)) * n) / root_n);
    for (auto& [level, series] : out.tails) series.push_back(static_cast<double>(s.occupancy[level]) / root_n);
  }
  return out;
}

struct OuDiagnostics {
  std::size_t samples = 0;
  double mean = 0.0;
  double variance = 0.0;
  double lag = 0.0;              // spacing actually used, a multiple of the grid step
  double autocorrelation = 0.0;  // NaN when degenerate
  bool degenerate = false;       // zero variance

  // Stationary reference for dZ = -Z dt + sqrt(2 lambda) dW.
  static double reference_variance(double lambda) { return lambda; }
  static double reference_autocorrelation(double lag) { return std::exp(-lag); }
};

// Moments of a series sampled on a uniform grid, restricted to t >= burn_in.
inline OuDiagnostics ou_diagnostics(const std::vector<double>& t, const std::vector<double>& z, double burn_in,
                                    double lag) {
  if (t.size() != z.size()) throw PreconditionError("ou_diagnostics: time and value series differ in length");
  const auto first = static_cast<std::size_t>(std::lower_bound(t.begin(), t.end(), burn_in) - t.begin());
  const std::size_t m = t.size() - first;
  if (m < 100) throw InsufficientDataError("ou_diagnostics: fewer than 100 samples after burn-in");

  OuDiagnostics d;
  d.samples = m;
  double sum = 0.0;
  for (std::size_t k = first; k < t.size(); ++k) sum += z[k];
  d.mean = sum / static_cast<double>(m);
  double ss = 0.0;
  for (std::size_t k = first; k < t.size(); ++k) ss += (z[k] - d.mean) * (z[k] - d.mean);
  d.variance = ss / static_cast<double>(m - 1);

  const double dt = (t.back() - t[first]) / static_cast<double>(m - 1);
  const auto shift = static_cast<std::size_t>(std::max(1.0, std::round(lag / dt)));
  d.lag = static_cast<double>(shift) * dt;
  if (ss == 0.0) {
    d.degenerate = true;
    d.autocorrelation = std::numeric_limits<double>::quiet_NaN();
    return d;
  }
  if (shift >= m) throw InsufficientDataError("ou_diagnostics: lag longer than the series");
  double cross = 0.0;
  for (std::size_t k = first; k + shift < t.size(); ++k) cross += (z[k] - d.mean) * (z[k + shift] - d.mean);
  d.autocorrelation = (cross / static_cast<double>(m - shift)) / (ss / static_cast<double>(m));
  return d;
}

// Time-integrated share of the task mass receiving 1/k of a pool, keyed by k.
struct ShareHistogram {
  std::map<std::size_t, double> bins;
  double task_time = 0.0;

  bool empty() const noexcept { return task_time <= 0.0; }

  double mass_on(std::initializer_list<std::size_t> ks) const {
    double s = 0.0;
    for (auto k : ks)
      if (auto it = bins.find(k); it != bins.end()) s += it->second;
    return s;
  }
};

// Left-point integration over the sample grid, from `from_time` on.
inline ShareHistogram resource_share_histogram(const SampledTrajectory& traj, double from_time = 0.0) {
  ShareHistogram h;
  for (std::size_t j = 0; j + 1 < traj.samples.size(); ++j) {
    const auto& s = traj.samples[j];
    if (s.t < from_time) continue;
    const double dt = traj.samples[j + 1].t - s.t;
    if (dt <= 0.0) continue;
    for (std::size_t k = 1; k <= s.occupancy.top(); ++k) {
      const double w = static_cast<double>(k) * static_cast<double>(s.occupancy.at_level(k)) * dt;
      if (w > 0.0) h.bins[k] += w;
    }
  }
  for (const auto& [k, w] : h.bins) h.task_time += w;
  if (h.task_time > 0.0)
    for (auto& [k, w] : h.bins) w /= h.task_time;
  return h;
}

struct OccupancyErrorPoint {
  double t;
  double error;       // l2 distance to the ideal occupancy at lambda(t)
  std::size_t top;    // highest occupied level
};

inline double occupancy_error_at(const CountOccupancy& occ, double lambda) {
  const auto full = static_cast<std::size_t>(std::floor(lambda));
  const double frac = lambda - static_cast<double>(full);
  const double n = static_cast<double>(occ.n());
  const std::size_t top = std::max(occ.top(), full + 1);
  double ss = 0.0;
  for (std::size_t i = 1; i <= top; ++i) {
    const double ideal = i <= full ? 1.0 : (i == full + 1 ? frac : 0.0);
    const double d = static_cast<double>(occ[i]) / n - ideal;
    ss += d * d;
  }
  return std::sqrt(ss);
}

inline std::vector<OccupancyErrorPoint> occupancy_error(const SampledTrajectory& traj, const LoadSchedule& schedule) {
  std::vector<OccupancyErrorPoint> out;
  out.reserve(traj.samples.size());
  for (const auto& s : traj.samples)
    out.push_back({s.t, occupancy_error_at(s.occupancy, schedule.at(s.t)), s.occupancy.top()});
  return out;
}

inline constexpr double kDefaultQuietWindow = 20.0;

// Settled at the last threshold change if nothing changes for at least
// `quiet` time units before the horizon.
inline std::optional<Settling> detect_settling(const std::vector<ThresholdEvent>& events,
                                               std::size_t initial_threshold, double horizon,
                                               double quiet = kDefaultQuietWindow) {
  if (!(quiet > 0.0)) throw ConfigError("detect_settling: quiet window must be positive");
  const double last = events.empty() ? 0.0 : events.back().t;
  if (horizon - last < quiet) return std::nullopt;
  return Settling{last, events.empty() ? initial_threshold : events.back().threshold};
}

inline std::optional<Settling> detect_settling(const SampledTrajectory& traj, double quiet = kDefaultQuietWindow) {
  return detect_settling(traj.threshold_events, traj.initial_threshold, traj.horizon, quiet);
}

}  // namespace poolbalance
