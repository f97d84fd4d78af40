#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "poolbalance/errors.hpp"
#include "poolbalance/load_schedule.hpp"
#include "poolbalance/occupancy.hpp"
#include "poolbalance/policy.hpp"
#include "poolbalance/rng.hpp"

namespace poolbalance {

struct StreamIds {
  std::uint64_t arrivals = static_cast<std::uint64_t>(Stream::kArrivals);
  std::uint64_t departures = static_cast<std::uint64_t>(Stream::kDepartures);
  std::uint64_t departure_selection = static_cast<std::uint64_t>(Stream::kDepartureSelection);
  std::uint64_t selection = static_cast<std::uint64_t>(Stream::kSelection);
};

struct SimConfig {
  std::int64_t n = 1;
  LoadSchedule load = LoadSchedule::constant(1.0);
  double mu = 1.0;
  PolicyKind policy = ThresholdAdaptive{};
  std::optional<std::size_t> threshold_cap;
  bool blocking = false;  // with a cap B-1, pools hold at most B tasks and excess arrivals are lost
  std::vector<std::int64_t> initial_occupancy;  // Q(1), Q(2), ...; empty means all pools empty
  double horizon = 10.0;
  double sample_dt = 0.1;
  std::uint64_t seed = 1;
  StreamIds rng_streams;
  std::size_t max_level = 100000;
  bool check_invariants = false;  // validate state and token identities after every event
};

struct RunCounters {
  std::uint64_t arrivals = 0;
  std::uint64_t departures = 0;
  std::uint64_t green_messages = 0;
  std::uint64_t yellow_messages = 0;
  std::uint64_t arrival_messages = 0;    // messages triggered by an arrival (at most one each)
  std::uint64_t departure_messages = 0;  // messages triggered by a departure (at most one each)
  std::uint64_t threshold_updates = 0;
  std::uint64_t blocked = 0;

  bool within_message_budget() const noexcept {
    return green_messages + yellow_messages <= arrivals + departures && arrival_messages <= arrivals &&
           departure_messages <= departures && arrival_messages + departure_messages == green_messages + yellow_messages;
  }
};

struct OccupancySample {
  double t;
  std::size_t threshold;
  CountOccupancy occupancy;
};

struct ThresholdEvent {
  double t;
  std::size_t threshold;  // value after the change
};

struct SampledTrajectory {
  std::int64_t n = 0;
  std::size_t initial_threshold = 0;
  double horizon = 0.0;
  std::vector<OccupancySample> samples;
  std::vector<ThresholdEvent> threshold_events;
  RunCounters counters;

  std::size_t final_threshold() const noexcept {
    return threshold_events.empty() ? initial_threshold : threshold_events.back().threshold;
  }
};

enum class EventKind { kNone, kArrival, kBlocked, kDeparture };

struct Event {
  EventKind kind = EventKind::kNone;
  double t = 0.0;
  std::size_t level = 0;  // destination level (arrival) or departing level (departure)
};

// Next point after t of a Poisson process with intensity n * lambda(s), by
// thinning a rate n * lambda_max process. Returns +inf if none follows.
inline double next_arrival_time(const LoadSchedule& load, double t, std::int64_t n, CounterRng& rng) {
  if (load.empty()) throw ConfigError("next_arrival_time: empty load schedule");
  const double lmax = load.lambda_max();
  if (!(lmax > 0.0)) return std::numeric_limits<double>::infinity();
  const double rate = static_cast<double>(n) * lmax;
  // A trailing zero-load segment would make the loop below run forever.
  const double last_start = load.segments().back().start;
  const bool dead_tail = load.segments().back().lambda == 0.0;
  for (;;) {
    t += rng.exponential(rate);
    if (dead_tail && t >= last_start) return std::numeric_limits<double>::infinity();
    if (rng.uniform() * lmax < load.at(t)) return t;
  }
}

inline void validate_config(const SimConfig& c) {
  if (c.n < 1) throw ConfigError("n must be >= 1");
  if (c.load.empty()) throw ConfigError("load schedule is empty");
  if (!(c.mu > 0.0) || !std::isfinite(c.mu)) throw ConfigError("mu must be positive");
  if (!(c.horizon >= 0.0) || !std::isfinite(c.horizon)) throw ConfigError("horizon must be finite and >= 0");
  if (!(c.sample_dt > 0.0)) throw ConfigError("sample_dt must be positive");
  validate_policy(c.policy);
  if (c.blocking && !c.threshold_cap) throw ConfigError("blocking requires threshold_cap");
  if (c.threshold_cap && initial_threshold(c.policy) > *c.threshold_cap)
    throw ConfigError("initial threshold exceeds threshold_cap");
  std::int64_t prev = c.n;
  for (std::size_t i = 0; i < c.initial_occupancy.size(); ++i) {
    const auto q = c.initial_occupancy[i];
    if (q < 0 || q > prev)
      throw ConfigError("initial_occupancy must be non-increasing within [0, n] (level " +
                        std::to_string(i + 1) + ")");
    prev = q;
  }
  if (c.blocking) {
    const std::size_t cap = *c.threshold_cap + 1;
    if (c.initial_occupancy.size() > cap && c.initial_occupancy[cap] > 0)
      throw ConfigError("initial_occupancy exceeds the blocking capacity");
  }
}

// Discrete-event simulation over the aggregate level counts.
class Engine {
 public:
  explicit Engine(SimConfig config)
      : cfg_(std::move(config)),
        occ_(cfg_.n),
        arrivals_(cfg_.seed, cfg_.rng_streams.arrivals),
        departures_(cfg_.seed, cfg_.rng_streams.departures),
        departure_selection_(cfg_.seed, cfg_.rng_streams.departure_selection),
        selection_(cfg_.seed, cfg_.rng_streams.selection) {
    validate_config(cfg_);
    occ_ = CountOccupancy(cfg_.n, cfg_.initial_occupancy);
    if (occ_.top() > cfg_.max_level) throw DepthError("initial occupancy above max_level");
    threshold_ = initial_threshold(cfg_.policy);
    if (const auto* a = std::get_if<ThresholdAdaptive>(&cfg_.policy)) alpha_ = a->alpha;
    tracks_tokens_ = is_threshold_policy(cfg_.policy);
    capacity_ = cfg_.blocking ? std::optional<std::size_t>(*cfg_.threshold_cap + 1) : std::nullopt;
    resync_tokens();
    next_arrival_ = next_arrival_time(cfg_.load, 0.0, cfg_.n, arrivals_);
    redraw_departure();
  }

  const SimConfig& config() const noexcept { return cfg_; }
  double time() const noexcept { return t_; }
  const CountOccupancy& occupancy() const noexcept { return occ_; }
  std::size_t threshold() const noexcept { return threshold_; }
  const RunCounters& counters() const noexcept { return counters_; }
  const std::vector<ThresholdEvent>& threshold_events() const noexcept { return events_; }
  std::int64_t green_tokens() const noexcept { return green_; }
  std::int64_t yellow_tokens() const noexcept { return yellow_; }

  // Processes the next event if it happens no later than `until`; otherwise
  // advances the clock to `until` and returns kNone.
  Event step(double until) {
    const double next = std::min(next_arrival_, next_departure_);
    if (next > until) {
      t_ = std::max(t_, until);
      return {EventKind::kNone, t_, 0};
    }
    t_ = next;
    Event ev = next_arrival_ <= next_departure_ ? arrive() : depart();
    if (cfg_.check_invariants) check_invariants();
    return ev;
  }

  // Advances to `until`, processing every event on the way.
  void advance(double until) {
    while (step(until).kind != EventKind::kNone) {
    }
  }

  SampledTrajectory run() {
    SampledTrajectory traj;
    traj.n = cfg_.n;
    traj.initial_threshold = threshold_;
    traj.horizon = cfg_.horizon;
    const auto grid = static_cast<std::size_t>(std::floor(cfg_.horizon / cfg_.sample_dt + 1e-9));
    traj.samples.reserve(grid + 2);
    for (std::size_t k = 0; k <= grid; ++k) {
      const double s = static_cast<double>(k) * cfg_.sample_dt;
      advance(s);
      traj.samples.push_back({s, threshold_, occ_});
    }
    if (traj.samples.back().t < cfg_.horizon) {
      advance(cfg_.horizon);
      traj.samples.push_back({cfg_.horizon, threshold_, occ_});
    }
    traj.threshold_events = events_;
    traj.counters = counters_;
    return traj;
  }

  void check_invariants() const {
    occ_.validate();
    if (tracks_tokens_) {
      if (green_ != occ_.n() - occ_[threshold_] || yellow_ != occ_.n() - occ_[threshold_ + 1])
        throw StateError("token counts diverged from occupancy at t = " + std::to_string(t_));
    }
    if (!counters_.within_message_budget()) throw StateError("message budget exceeded");
  }

 private:
  Event arrive() {
    const std::size_t l = threshold_;
    std::size_t new_l = l;
    if (alpha_) new_l = adapt_threshold(occ_, l, *alpha_, cfg_.threshold_cap);

    const std::size_t d = dispatch_decision(cfg_.policy, occ_, l, selection_);
    ++counters_.arrivals;
    Event ev{EventKind::kArrival, t_, d};
    if (capacity_ && d >= *capacity_) {
      ++counters_.blocked;
      ev.kind = EventKind::kBlocked;
    } else {
      if (d + 1 > cfg_.max_level) throw DepthError("pool level exceeds max_level " + std::to_string(cfg_.max_level));
      occ_.add_task(d);
      if (tracks_tokens_) {
        if (d < l) {
          --green_;  // token used and discarded
          if (d + 1 < l) {
            ++green_;
            ++counters_.green_messages;
            ++counters_.arrival_messages;
          }
        } else if (d == l) {
          --yellow_;
        }
      }
      redraw_departure();
    }

    if (new_l != l) {
      threshold_ = new_l;
      ++counters_.threshold_updates;
      events_.push_back({t_, new_l});
      // The new threshold is broadcast and the token store rebuilt; this
      // bookkeeping is outside the per-task message budget.
      resync_tokens();
    }
    next_arrival_ = next_arrival_time(cfg_.load, t_, cfg_.n, arrivals_);
    return ev;
  }

  Event depart() {
    const auto total = occ_.total_tasks();
    const std::size_t i = occ_.level_of_task(static_cast<std::int64_t>(departure_selection_.below(static_cast<std::uint64_t>(total))));
    occ_.remove_task(i);
    ++counters_.departures;
    if (tracks_tokens_) {
      if (i == threshold_) {
        ++green_;
        ++counters_.green_messages;
        ++counters_.departure_messages;
      } else if (i == threshold_ + 1) {
        ++yellow_;
        ++counters_.yellow_messages;
        ++counters_.departure_messages;
      }
    }
    redraw_departure();
    return {EventKind::kDeparture, t_, i};
  }

  void redraw_departure() {
    const auto total = occ_.total_tasks();
    next_departure_ = total > 0 ? t_ + departures_.exponential(cfg_.mu * static_cast<double>(total))
                                : std::numeric_limits<double>::infinity();
  }

  void resync_tokens() {
    if (!tracks_tokens_) return;
    green_ = occ_.n() - occ_[threshold_];
    yellow_ = occ_.n() - occ_[threshold_ + 1];
  }

  SimConfig cfg_;
  CountOccupancy occ_;
  CounterRng arrivals_, departures_, departure_selection_, selection_;
  double t_ = 0.0;
  double next_arrival_ = 0.0;
  double next_departure_ = 0.0;
  std::size_t threshold_ = 0;
  std::optional<double> alpha_;
  std::optional<std::size_t> capacity_;
  bool tracks_tokens_ = false;
  std::int64_t green_ = 0, yellow_ = 0;
  RunCounters counters_;
  std::vector<ThresholdEvent> events_;
};

inline Engine build_engine(const SimConfig& config) { return Engine(config); }

inline SampledTrajectory simulate(const SimConfig& config) { return Engine(config).run(); }

}  // namespace poolbalance
