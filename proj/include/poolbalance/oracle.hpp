#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/poisson.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "poolbalance/engine.hpp"
#include "poolbalance/errors.hpp"
#include "poolbalance/occupancy.hpp"
#include "poolbalance/policy.hpp"
#include "poolbalance/rng.hpp"

namespace poolbalance {

inline constexpr std::size_t kMaxCtmcStates = 100000;

// Generator of the aggregate chain for n pools holding at most B tasks each.
// States are the vectors (Q(1), ..., Q(B)) in ascending lexicographic order.
struct GeneratorMatrix {
  std::int64_t n = 0;
  std::size_t capacity = 0;
  std::vector<std::vector<std::int64_t>> states;
  Eigen::SparseMatrix<double, Eigen::RowMajor> rates;

  std::size_t size() const noexcept { return states.size(); }

  std::size_t index_of(const std::vector<std::int64_t>& q) const {
    auto it = std::lower_bound(states.begin(), states.end(), q);
    if (it == states.end() || *it != q) throw StateError("ctmc: state outside the enumerated space");
    return static_cast<std::size_t>(it - states.begin());
  }

  std::size_t index_of(const CountOccupancy& occ) const {
    if (occ.top() > capacity) throw StateError("ctmc: occupancy above the capacity");
    std::vector<std::int64_t> q(capacity);
    for (std::size_t i = 1; i <= capacity; ++i) q[i - 1] = occ[i];
    return index_of(q);
  }
};

namespace detail {

// Number of non-increasing sequences n >= Q(1) >= ... >= Q(B) >= 0, i.e.
// C(n + B, B), saturating once it passes `limit`.
inline std::size_t count_states(std::int64_t n, std::size_t capacity, std::size_t limit) {
  double c = 1.0;
  for (std::size_t k = 1; k <= capacity; ++k) {
    c = c * static_cast<double>(n + static_cast<std::int64_t>(k)) / static_cast<double>(k);
    if (c > static_cast<double>(limit)) return limit + 1;
  }
  return static_cast<std::size_t>(std::llround(c));
}

inline void enumerate_states(std::vector<std::int64_t>& prefix, std::int64_t bound, std::size_t capacity,
                             std::vector<std::vector<std::int64_t>>& out) {
  if (prefix.size() == capacity) {
    out.push_back(prefix);
    return;
  }
  for (std::int64_t v = 0; v <= bound; ++v) {
    prefix.push_back(v);
    enumerate_states(prefix, v, capacity, out);
    prefix.pop_back();
  }
}

// Pools at exactly level d, from Q(1..B) with Q(0) = n.
inline std::int64_t pools_at(const std::vector<std::int64_t>& q, std::int64_t n, std::size_t d) {
  const std::int64_t above = d < q.size() ? q[d] : 0;
  const std::int64_t at_least = d == 0 ? n : q[d - 1];
  return at_least - above;
}

// Probability that an arrival joins a pool at level d, d = 0..B.
// Written directly from the policy definitions, independent of the simulator.
inline std::vector<double> arrival_split(const PolicyKind& policy, const std::vector<std::int64_t>& q,
                                         std::int64_t n) {
  const std::size_t B = q.size();
  std::vector<double> p(B + 1, 0.0);
  auto Q = [&](std::size_t i) -> std::int64_t { return i == 0 ? n : (i <= B ? q[i - 1] : 0); };
  const double nd = static_cast<double>(n);

  if (const auto* s = std::get_if<ThresholdStatic>(&policy)) {
    const std::size_t l = s->threshold;
    if (Q(l) < n) {
      const double green = static_cast<double>(n - Q(l));
      for (std::size_t d = 0; d < l; ++d) p[d] = static_cast<double>(pools_at(q, n, d)) / green;
    } else if (Q(l + 1) < n) {
      p[l] = 1.0;
    } else {
      for (std::size_t d = 0; d <= B; ++d) p[d] = static_cast<double>(pools_at(q, n, d)) / nd;
    }
  } else if (std::holds_alternative<JoinShortest>(policy)) {
    std::size_t d = 0;
    while (pools_at(q, n, d) == 0) ++d;
    p[d] = 1.0;
  } else if (std::holds_alternative<UniformRandom>(policy)) {
    for (std::size_t d = 0; d <= B; ++d) p[d] = static_cast<double>(pools_at(q, n, d)) / nd;
  } else if (const auto* pd = std::get_if<PowerOfD>(&policy)) {
    // P(min of d draws >= k) = (Q(k)/n)^d.
    const double e = static_cast<double>(pd->d);
    for (std::size_t k = 0; k <= B; ++k)
      p[k] = std::pow(static_cast<double>(Q(k)) / nd, e) - std::pow(static_cast<double>(Q(k + 1)) / nd, e);
  } else {
    throw ConfigError("ctmc: adaptive thresholds are not supported by the exact oracle");
  }
  return p;
}

}  // namespace detail

inline GeneratorMatrix ctmc_generator(std::int64_t n, std::size_t capacity, double lambda, double mu,
                                      const PolicyKind& policy) {
  if (n < 1 || capacity < 1) throw ConfigError("ctmc: need n >= 1 and capacity >= 1");
  if (!(lambda >= 0.0) || !(mu > 0.0)) throw ConfigError("ctmc: need lambda >= 0 and mu > 0");
  validate_policy(policy);
  if (const auto* s = std::get_if<ThresholdStatic>(&policy); s && s->threshold >= capacity)
    throw ConfigError("ctmc: threshold must be below the capacity");
  const std::size_t count = detail::count_states(n, capacity, kMaxCtmcStates);
  if (count > kMaxCtmcStates)
    throw SizeError("ctmc: state space exceeds " + std::to_string(kMaxCtmcStates) + " states");

  GeneratorMatrix g;
  g.n = n;
  g.capacity = capacity;
  g.states.reserve(count);
  std::vector<std::int64_t> prefix;
  detail::enumerate_states(prefix, n, capacity, g.states);

  std::vector<Eigen::Triplet<double>> entries;
  const double arrival_rate = static_cast<double>(n) * lambda;
  for (std::size_t s = 0; s < g.size(); ++s) {
    const auto& q = g.states[s];
    double out = 0.0;
    auto add = [&](std::vector<std::int64_t> next, double rate) {
      if (rate <= 0.0) return;
      entries.emplace_back(s, g.index_of(next), rate);
      out += rate;
    };
    if (arrival_rate > 0.0) {
      const auto split = detail::arrival_split(policy, q, n);
      for (std::size_t d = 0; d < capacity; ++d) {  // d = capacity is blocked
        if (split[d] <= 0.0) continue;
        auto next = q;
        ++next[d];
        add(std::move(next), arrival_rate * split[d]);
      }
    }
    for (std::size_t i = 1; i <= capacity; ++i) {
      auto next = q;
      --next[i - 1];
      add(std::move(next), mu * static_cast<double>(i) * static_cast<double>(detail::pools_at(q, n, i)));
    }
    entries.emplace_back(s, s, -out);
  }
  g.rates.resize(static_cast<Eigen::Index>(g.size()), static_cast<Eigen::Index>(g.size()));
  g.rates.setFromTriplets(entries.begin(), entries.end());
  return g;
}

// True when every state can be reached from the all-empty state.
inline bool reachable_from_empty(const GeneratorMatrix& g) {
  std::vector<char> seen(g.size(), 0);
  std::vector<std::size_t> stack{0};
  seen[0] = 1;
  while (!stack.empty()) {
    const auto s = stack.back();
    stack.pop_back();
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(g.rates, static_cast<Eigen::Index>(s)); it; ++it) {
      const auto j = static_cast<std::size_t>(it.col());
      if (it.value() > 0.0 && !seen[j]) {
        seen[j] = 1;
        stack.push_back(j);
      }
    }
  }
  return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
}

inline double stationary_residual(const GeneratorMatrix& g, const Eigen::VectorXd& pi) {
  const Eigen::VectorXd r = g.rates.transpose() * pi;
  return r.cwiseAbs().maxCoeff();
}

// Solves pi G = 0 with the last balance equation replaced by sum(pi) = 1.
inline std::vector<double> ctmc_stationary(const GeneratorMatrix& g, double max_residual = 1e-10) {
  const auto m = static_cast<Eigen::Index>(g.size());
  if (m == 0) throw SolverError("ctmc: empty generator");
  Eigen::SparseMatrix<double> a = g.rates.transpose();
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(a.nonZeros() + m));
  for (Eigen::Index k = 0; k < a.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(a, k); it; ++it)
      if (it.row() != m - 1) entries.emplace_back(it.row(), it.col(), it.value());
  for (Eigen::Index j = 0; j < m; ++j) entries.emplace_back(m - 1, j, 1.0);
  a.setZero();
  a.setFromTriplets(entries.begin(), entries.end());
  a.makeCompressed();

  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(a);
  if (lu.info() != Eigen::Success) throw SolverError("ctmc: generator is singular beyond normalization");
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m);
  rhs(m - 1) = 1.0;
  const Eigen::VectorXd pi = lu.solve(rhs);
  if (lu.info() != Eigen::Success || !pi.allFinite()) throw SolverError("ctmc: solve failed");
  const double res = stationary_residual(g, pi);
  if (res > max_residual || pi.minCoeff() < -1e-12)
    throw SolverError("ctmc: stationary residual " + std::to_string(res) + " too large");
  return {pi.data(), pi.data() + m};
}

// Long-run fraction of time the simulator spends in each enumerated state,
// counted after `burn_in`. The config must confine pools to g.capacity tasks.
// The run's counters are copied to `counters` when given.
inline std::vector<double> des_state_frequencies(const GeneratorMatrix& g, const SimConfig& config,
                                                 double burn_in = 0.0, RunCounters* counters = nullptr) {
  Engine engine(config);
  std::vector<double> time(g.size(), 0.0);
  double last = 0.0;
  std::size_t state = g.index_of(engine.occupancy());
  for (;;) {
    const auto ev = engine.step(config.horizon);
    const double now = engine.time();
    const double from = std::max(last, burn_in);
    if (now > from) time[state] += now - from;
    if (ev.kind == EventKind::kNone) break;
    state = g.index_of(engine.occupancy());
    last = now;
  }
  if (counters) *counters = engine.counters();
  double total = 0.0;
  for (double x : time) total += x;
  if (total > 0.0)
    for (double& x : time) x /= total;
  return time;
}

inline double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw PreconditionError("total_variation: length mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) s += std::abs(p[k] - q[k]);
  return 0.5 * s;
}

// Expected number of tasks at time t in an M/M/inf queue with arrival rate
// `arrival_rate` and per-task service rate mu.
inline double mm_infinity_mean(double arrival_rate, double mu, double t, double initial_tasks = 0.0) {
  const double decay = std::exp(-mu * t);
  return arrival_rate / mu * (1.0 - decay) + initial_tasks * decay;
}

struct GoodnessOfFit {
  double statistic = 0.0;
  std::size_t degrees_of_freedom = 0;
  double p_value = 0.0;
};

// Pearson chi-square test of integer samples against Poisson(mean). Outer
// cells are merged until each expects at least `min_expected` observations.
inline GoodnessOfFit poisson_chi_square(const std::vector<std::int64_t>& samples, double mean,
                                        double min_expected = 5.0) {
  if (samples.empty() || !(mean > 0.0)) throw PreconditionError("poisson_chi_square: need samples and mean > 0");
  const boost::math::poisson_distribution<> law(mean);
  const double m = static_cast<double>(samples.size());

  // Cell c covers (cuts[c-1], cuts[c]]; the first and last cells are open-ended.
  std::vector<std::int64_t> cuts;
  auto k = static_cast<std::int64_t>(boost::math::quantile(law, 1e-12));
  double acc = boost::math::cdf(law, static_cast<double>(k));
  const auto top = static_cast<std::int64_t>(boost::math::quantile(boost::math::complement(law, 1e-12)));
  while (k < top) {
    if (acc * m >= min_expected && boost::math::cdf(boost::math::complement(law, static_cast<double>(k))) * m >= min_expected) {
      cuts.push_back(k);
      acc = 0.0;
    }
    ++k;
    acc += boost::math::pdf(law, static_cast<double>(k));
  }
  if (cuts.empty()) throw InsufficientDataError("poisson_chi_square: too few samples for two cells");

  std::vector<double> expected(cuts.size() + 1), observed(cuts.size() + 1, 0.0);
  double below = 0.0;
  for (std::size_t c = 0; c < cuts.size(); ++c) {
    const double cdf = boost::math::cdf(law, static_cast<double>(cuts[c]));
    expected[c] = (cdf - below) * m;
    below = cdf;
  }
  expected.back() = (1.0 - below) * m;
  for (auto x : samples) {
    const auto it = std::lower_bound(cuts.begin(), cuts.end(), x);
    observed[static_cast<std::size_t>(it - cuts.begin())] += 1.0;
  }
  GoodnessOfFit r;
  for (std::size_t c = 0; c < expected.size(); ++c)
    r.statistic += (observed[c] - expected[c]) * (observed[c] - expected[c]) / expected[c];
  r.degrees_of_freedom = expected.size() - 1;
  const boost::math::chi_squared_distribution<> chi(static_cast<double>(r.degrees_of_freedom));
  r.p_value = boost::math::cdf(boost::math::complement(chi, r.statistic));
  return r;
}

// Paired components (sum_{i <= L} Q(i), Q(L + 1)) with L = floor(lambda).
struct CoupledPoint {
  double t;
  std::int64_t x1_full, x1_top;  // JSQ system
  std::int64_t x2_full, x2_top;  // threshold system
};

struct CoupledPaths {
  std::vector<CoupledPoint> points;
  std::size_t arrivals = 0;
  std::size_t potential_departures = 0;

  std::size_t mismatches() const noexcept {
    std::size_t m = 0;
    for (const auto& p : points) m += (p.x1_full != p.x2_full || p.x1_top != p.x2_top);
    return m;
  }
};

namespace detail {

// Stream ids beyond the engine's own, for the coupling's private draws.
inline constexpr std::uint64_t kCouplingJsqSelection = 6;
inline constexpr std::uint64_t kCouplingThresholdSelection = 7;

inline std::int64_t full_component(const CountOccupancy& q, std::size_t L) {
  std::int64_t s = 0;
  for (std::size_t i = 1; i <= L; ++i) s += q[i];
  return s;
}

}  // namespace detail

// JSQ versus the threshold policy at l = floor(lambda), both blocking at
// floor(lambda) + 1 tasks per pool, driven by one arrival process and one
// uniformized potential-departure process at rate (floor(lambda) + 1) n with a
// shared uniform U per epoch.
inline CoupledPaths coupled_run(std::int64_t n, double lambda, double horizon, std::uint64_t seed,
                                const std::vector<std::int64_t>& initial_occupancy = {}) {
  if (n < 1) throw ConfigError("coupled_run: n must be >= 1");
  if (!(lambda > 0.0) || std::floor(lambda) == lambda) throw ConfigError("coupled_run: lambda must be positive and non-integer");
  if (!(horizon >= 0.0)) throw ConfigError("coupled_run: horizon must be >= 0");
  const auto L = static_cast<std::size_t>(std::floor(lambda));
  const std::size_t cap = L + 1;

  CountOccupancy jsq(n, initial_occupancy), thr(n, initial_occupancy);
  if (jsq.top() > cap) throw ConfigError("coupled_run: initial occupancy above floor(lambda) + 1");

  CounterRng arrivals(seed, Stream::kArrivals), departures(seed, Stream::kDepartures),
      shared_u(seed, Stream::kCoupling), pick_jsq(seed, detail::kCouplingJsqSelection),
      pick_thr(seed, detail::kCouplingThresholdSelection);
  const double nd = static_cast<double>(n);
  const double arrival_rate = nd * lambda;
  const double potential_rate = static_cast<double>(cap) * nd;

  CoupledPaths out;
  auto record = [&](double t) {
    out.points.push_back({t, detail::full_component(jsq, L), jsq[cap], detail::full_component(thr, L), thr[cap]});
  };
  record(0.0);

  const PolicyKind jsq_policy = JoinShortest{};
  const PolicyKind thr_policy = ThresholdStatic{L};
  auto arrive = [&](CountOccupancy& q, const PolicyKind& policy, CounterRng& rng) {
    const std::size_t d = dispatch_decision(policy, q, L, rng);
    if (d < cap) q.add_task(d);
  };
  // U < a: a pool at exactly L+1 loses a task. a <= U < a + b: a task held by a
  // pool below L+1 finishes, chosen uniformly among those tasks.
  auto depart = [&](CountOccupancy& q, double u, CounterRng& rng) {
    const double top = static_cast<double>(q[cap]);
    const std::int64_t lower_tasks = detail::full_component(q, L) - static_cast<std::int64_t>(L) * q[cap];
    const double a = top / nd;
    const double b = static_cast<double>(lower_tasks) / potential_rate;
    if (u < a) {
      q.remove_task(cap);
    } else if (u < a + b) {
      q.remove_task(q.level_of_task(static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(lower_tasks)))));
    }
  };

  double next_arrival = arrivals.exponential(arrival_rate);
  double next_departure = departures.exponential(potential_rate);
  for (;;) {
    const double t = std::min(next_arrival, next_departure);
    if (t > horizon) break;
    if (next_arrival <= next_departure) {
      arrive(jsq, jsq_policy, pick_jsq);
      arrive(thr, thr_policy, pick_thr);
      ++out.arrivals;
      next_arrival = t + arrivals.exponential(arrival_rate);
    } else {
      const double u = shared_u.uniform();
      depart(jsq, u, pick_jsq);
      depart(thr, u, pick_thr);
      ++out.potential_departures;
      next_departure = t + departures.exponential(potential_rate);
    }
    record(t);
  }
  return out;
}

}  // namespace poolbalance
