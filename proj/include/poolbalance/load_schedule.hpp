#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "poolbalance/errors.hpp"

namespace poolbalance {

// Piecewise-constant offered load per pool, lambda(t). Segments start at the
// listed times; the first must start at t = 0 and the last extends to infinity.
class LoadSchedule {
 public:
  struct Segment {
    double start;
    double lambda;
  };

  LoadSchedule() = default;

  // lambda_max < 0 means "use the largest segment value".
  explicit LoadSchedule(std::vector<Segment> segments, double lambda_max = -1.0)
      : segments_(std::move(segments)) {
    if (segments_.empty()) throw ConfigError("schedule: no segments");
    if (segments_.front().start != 0.0) throw ConfigError("schedule: first segment must start at t = 0");
    double peak = 0.0;
    for (std::size_t k = 0; k < segments_.size(); ++k) {
      const auto& s = segments_[k];
      if (!std::isfinite(s.start) || !std::isfinite(s.lambda))
        throw ConfigError("schedule: non-finite segment");
      if (s.lambda < 0.0) throw ConfigError("schedule: negative load");
      if (k > 0 && !(s.start > segments_[k - 1].start))
        throw ConfigError("schedule: segment start times must be strictly increasing");
      peak = std::max(peak, s.lambda);
    }
    lambda_max_ = lambda_max < 0.0 ? peak : lambda_max;
    if (peak > lambda_max_) throw ConfigError("schedule: load exceeds declared lambda_max");
  }

  static LoadSchedule constant(double lambda) { return LoadSchedule({{0.0, lambda}}); }

  bool empty() const noexcept { return segments_.empty(); }
  const std::vector<Segment>& segments() const noexcept { return segments_; }
  double lambda_max() const noexcept { return lambda_max_; }
  bool is_constant() const noexcept { return segments_.size() == 1; }

  double at(double t) const {
    if (segments_.empty()) throw ConfigError("schedule: no segments");
    auto it = std::upper_bound(segments_.begin(), segments_.end(), t,
                               [](double x, const Segment& s) { return x < s.start; });
    if (it == segments_.begin()) return segments_.front().lambda;
    return std::prev(it)->lambda;
  }

  // First segment boundary strictly after t, or +inf.
  double next_breakpoint(double t) const noexcept {
    for (const auto& s : segments_)
      if (s.start > t) return s.start;
    return std::numeric_limits<double>::infinity();
  }

 private:
  std::vector<Segment> segments_;
  double lambda_max_ = 0.0;
};

}  // namespace poolbalance
