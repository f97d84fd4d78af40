#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "poolbalance/engine.hpp"

namespace pb = poolbalance;

namespace {

pb::SimConfig base_config(std::int64_t n, double lambda, pb::PolicyKind policy, double horizon,
                          std::uint64_t seed = 11) {
  pb::SimConfig c;
  c.n = n;
  c.load = pb::LoadSchedule::constant(lambda);
  c.policy = policy;
  c.horizon = horizon;
  c.sample_dt = 0.1;
  c.seed = seed;
  c.check_invariants = true;
  return c;
}

}  // namespace

TEST(CountOccupancy, RankAndTaskLookup) {
  // Q(1..3) = 5, 3, 1: two pools at level 1, two at 2, one at 3.
  const pb::CountOccupancy q(5, {5, 3, 1});
  EXPECT_EQ(q.total_tasks(), 9);
  EXPECT_EQ(q.top(), 3u);
  const std::size_t by_rank[] = {1, 1, 2, 2, 3};
  for (int r = 0; r < 5; ++r) EXPECT_EQ(q.level_of_rank(r), by_rank[r]) << r;
  const std::size_t by_task[] = {1, 1, 2, 2, 2, 2, 3, 3, 3};
  for (int k = 0; k < 9; ++k) EXPECT_EQ(q.level_of_task(k), by_task[k]) << k;
}

TEST(CountOccupancy, GrowsAndShrinks) {
  pb::CountOccupancy q(3);
  EXPECT_EQ(q.top(), 0u);
  q.add_task(0);
  q.add_task(1);
  EXPECT_EQ(q.top(), 2u);
  EXPECT_EQ(q[1], 1);
  EXPECT_EQ(q[2], 1);
  EXPECT_THROW(q.add_task(1), pb::StateError);  // no pool at level 1 any more
  q.remove_task(2);
  q.remove_task(1);
  EXPECT_EQ(q.top(), 0u);
  EXPECT_THROW(q.remove_task(1), pb::StateError);
  EXPECT_THROW(pb::CountOccupancy(3, {2, 3}), pb::StateError);
}

TEST(Dispatch, ThresholdBranches) {
  pb::CounterRng rng(1, pb::Stream::kSelection);
  const pb::PolicyKind policy = pb::ThresholdStatic{3};
  // Exactly one pool below l = 3, at level 2.
  const pb::CountOccupancy one_green(4, {4, 4, 3, 1});
  for (int k = 0; k < 50; ++k) EXPECT_EQ(pb::dispatch_decision(policy, one_green, 3, rng), 2u);
  // Q(l) = n, Q(h) < n: join a pool at exactly l.
  const pb::CountOccupancy at_l(4, {4, 4, 4, 1});
  for (int k = 0; k < 50; ++k) EXPECT_EQ(pb::dispatch_decision(policy, at_l, 3, rng), 3u);
  // No tokens: uniform over all pools, which all sit at >= h.
  const pb::CountOccupancy full(4, {4, 4, 4, 4, 2});
  std::map<std::size_t, int> seen;
  for (int k = 0; k < 4000; ++k) ++seen[pb::dispatch_decision(policy, full, 3, rng)];
  EXPECT_EQ(seen.size(), 2u);
  EXPECT_NEAR(seen[4] / 4000.0, 0.5, 0.05);
}

TEST(Dispatch, GreenPoolsChosenUniformly) {
  pb::CounterRng rng(5, pb::Stream::kSelection);
  // l = 3: one pool at level 0, three at level 2, the rest above.
  const pb::CountOccupancy q(10, {9, 9, 6, 2});
  std::map<std::size_t, int> seen;
  const int draws = 40000;
  for (int k = 0; k < draws; ++k) ++seen[pb::dispatch_decision(pb::ThresholdStatic{3}, q, 3, rng)];
  EXPECT_NEAR(seen[0] / double(draws), 0.25, 0.01);
  EXPECT_NEAR(seen[2] / double(draws), 0.75, 0.01);
}

TEST(Dispatch, BaselinePolicies) {
  pb::CounterRng rng(2, pb::Stream::kSelection);
  const pb::CountOccupancy q(7, {7, 7, 3});  // Q = (n, n, 3, 0) from level 1
  EXPECT_EQ(pb::dispatch_decision(pb::JoinShortest{}, q, 0, rng), 2u);
  std::map<std::size_t, int> rnd, pod;
  for (int k = 0; k < 70000; ++k) {
    ++rnd[pb::dispatch_decision(pb::UniformRandom{}, q, 0, rng)];
    ++pod[pb::dispatch_decision(pb::PowerOfD{2}, q, 0, rng)];
  }
  EXPECT_NEAR(rnd[2] / 70000.0, 4.0 / 7.0, 0.01);
  // Both samples must land on level 3 for the minimum to be 3.
  EXPECT_NEAR(pod[3] / 70000.0, 9.0 / 49.0, 0.01);
}

TEST(AdaptThreshold, RuleExamples) {
  const std::int64_t n = 500;
  std::vector<std::int64_t> q(6, n);
  q[4] = 499;  // Q(5) = 499 with l = 4
  q[5] = 0;
  EXPECT_EQ(pb::adapt_threshold(pb::CountOccupancy(n, q), 4, 0.93), 5u);
  EXPECT_EQ(pb::adapt_threshold(pb::CountOccupancy(n, q), 4, 0.93, 4), 4u);  // capped

  std::vector<std::int64_t> low{500, 500, 500, 465, 10};
  EXPECT_EQ(pb::adapt_threshold(pb::CountOccupancy(n, low), 4, 0.93), 3u);
  low[3] = 466;
  EXPECT_EQ(pb::adapt_threshold(pb::CountOccupancy(n, low), 4, 0.93), 4u);

  std::vector<std::int64_t> mid{500, 500, 500, 500, 400};
  EXPECT_EQ(pb::adapt_threshold(pb::CountOccupancy(n, mid), 4, 0.93), 4u);
  EXPECT_EQ(pb::adapt_threshold(pb::CountOccupancy(n), 0, 0.5), 0u);
}

TEST(AdaptThreshold, TinySystemChecksIncreaseFirst) {
  // n = 2, one pool at l = 1 and one at 0: Q(2) = 0 >= n - 1 fails, Q(1)/n = 0.5 <= 0.9.
  EXPECT_EQ(pb::adapt_threshold(pb::CountOccupancy(2, {1}), 1, 0.9), 0u);
  // Q(2) = 1 >= n - 1 and Q(1)/n = 0.5 <= alpha: both hold, increase wins.
  EXPECT_EQ(pb::adapt_threshold(pb::CountOccupancy(2, {1, 1}), 1, 0.9), 2u);
}

TEST(Arrivals, ConstantRateMean) {
  pb::CounterRng rng(3, pb::Stream::kArrivals);
  const auto load = pb::LoadSchedule::constant(2.0);
  double t = 0.0, sum = 0.0, sq = 0.0;
  const int count = 200000;
  for (int k = 0; k < count; ++k) {
    const double next = pb::next_arrival_time(load, t, 5, rng);
    sum += next - t;
    sq += (next - t) * (next - t);
    t = next;
  }
  const double mean = sum / count;
  EXPECT_NEAR(mean, 0.1, 5 * 0.1 / std::sqrt(count));
  EXPECT_NEAR(sq / count, 2 * 0.01, 0.0005);  // second moment of Exp(10)
}

TEST(Arrivals, SegmentCountsAndZeroLoad) {
  pb::CounterRng rng(4, pb::Stream::kArrivals);
  const pb::LoadSchedule load({{0.0, 1.0}, {10.0, 0.0}, {12.0, 5.0}, {22.0, 0.0}});
  std::size_t first = 0, dead = 0, second = 0;
  const std::int64_t n = 100;
  for (double t = pb::next_arrival_time(load, 0.0, n, rng); std::isfinite(t);
       t = pb::next_arrival_time(load, t, n, rng)) {
    if (t < 10) ++first;
    else if (t < 12) ++dead;
    else if (t < 22) ++second;
    else ADD_FAILURE() << "arrival in trailing zero segment at " << t;
  }
  EXPECT_EQ(dead, 0u);
  EXPECT_NEAR(double(first), 1000.0, 5 * std::sqrt(1000.0));
  EXPECT_NEAR(double(second), 5000.0, 5 * std::sqrt(5000.0));
}

TEST(Engine, DeterministicForEqualSeeds) {
  const auto c = base_config(50, 2.9, pb::ThresholdAdaptive{0, 0.97}, 20.0, 99);
  const auto a = pb::simulate(c);
  const auto b = pb::simulate(c);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  for (std::size_t k = 0; k < a.samples.size(); ++k) {
    EXPECT_EQ(a.samples[k].occupancy, b.samples[k].occupancy);
    EXPECT_EQ(a.samples[k].threshold, b.samples[k].threshold);
  }
  EXPECT_EQ(a.counters.arrivals, b.counters.arrivals);
  auto other = c;
  other.seed = 100;
  EXPECT_NE(pb::simulate(other).counters.arrivals, a.counters.arrivals);
}

TEST(Engine, ArrivalCountAndSampleGrid) {
  const auto traj = pb::simulate(base_config(500, 5.5, pb::ThresholdAdaptive{0, 0.93}, 10.0));
  EXPECT_NEAR(double(traj.counters.arrivals), 27500.0, 5 * std::sqrt(27500.0));
  ASSERT_EQ(traj.samples.size(), 101u);
  for (std::size_t k = 0; k < traj.samples.size(); ++k) EXPECT_DOUBLE_EQ(traj.samples[k].t, 0.1 * k);
  EXPECT_TRUE(traj.counters.within_message_budget());
}

TEST(Engine, HorizonOffGridGetsEndpoint) {
  auto c = base_config(10, 1.0, pb::JoinShortest{}, 1.05);
  const auto traj = pb::simulate(c);
  ASSERT_EQ(traj.samples.size(), 12u);
  EXPECT_DOUBLE_EQ(traj.samples.back().t, 1.05);
}

TEST(Engine, InitialOccupancyEcho) {
  auto c = base_config(500, 5.5, pb::ThresholdAdaptive{9, 0.93}, 0.0);
  c.initial_occupancy.assign(9, 500);
  pb::Engine e(c);
  for (std::size_t i = 0; i <= 9; ++i) EXPECT_EQ(e.occupancy()[i], 500);
  EXPECT_EQ(e.occupancy()[10], 0);
}

TEST(Engine, RejectsInvalidConfig) {
  auto c = base_config(10, 1.0, pb::JoinShortest{}, 1.0);
  c.initial_occupancy = {5, 7};
  EXPECT_THROW(pb::Engine{c}, pb::ConfigError);
  c = base_config(0, 1.0, pb::JoinShortest{}, 1.0);
  EXPECT_THROW(pb::Engine{c}, pb::ConfigError);
  c = base_config(10, 1.0, pb::ThresholdAdaptive{0, 1.0}, 1.0);
  EXPECT_THROW(pb::Engine{c}, pb::ConfigError);
  c = base_config(10, 1.0, pb::JoinShortest{}, 1.0);
  c.sample_dt = 0.0;
  EXPECT_THROW(pb::Engine{c}, pb::ConfigError);
  c = base_config(10, 1.0, pb::JoinShortest{}, 1.0);
  c.blocking = true;
  EXPECT_THROW(pb::Engine{c}, pb::ConfigError);
}

TEST(Engine, MaxLevelOverflow) {
  auto c = base_config(2, 6.0, pb::UniformRandom{}, 20.0);
  c.max_level = 3;
  EXPECT_THROW(pb::simulate(c), pb::DepthError);
}

TEST(Engine, SettlesAtFloorOfLoad) {
  const auto traj = pb::simulate(base_config(500, 5.5, pb::ThresholdAdaptive{0, 0.93}, 10.0, 3));
  EXPECT_EQ(traj.final_threshold(), 5u);
  ASSERT_FALSE(traj.threshold_events.empty());
  EXPECT_GT(traj.threshold_events.back().t, 1.5);
  EXPECT_LT(traj.threshold_events.back().t, 3.5);
}

TEST(Engine, ControlTracksOfferedLoad) {
  auto c = base_config(500, 11.0, pb::ThresholdAdaptive{0, 0.93}, 10.0, 3);
  c.mu = 2.0;
  const auto traj = pb::simulate(c);
  EXPECT_EQ(traj.final_threshold(), 5u);
}

TEST(Engine, ThresholdOscillatesForSmallN) {
  const auto traj = pb::simulate(base_config(100, 2.9, pb::ThresholdAdaptive{0, 0.97}, 100.0, 8));
  std::map<std::size_t, int> visited;
  for (const auto& s : traj.samples)
    if (s.t > 20) ++visited[s.threshold];
  for (std::size_t l : {2u, 3u}) EXPECT_GT(visited[l], 0) << l;
  EXPECT_GT(traj.counters.threshold_updates, 5u);
}

TEST(Engine, TotalTaskPathIsPolicyIndependent) {
  const std::vector<pb::PolicyKind> policies{pb::ThresholdStatic{2}, pb::ThresholdAdaptive{0, 0.9},
                                             pb::JoinShortest{}, pb::UniformRandom{}, pb::PowerOfD{2}};
  std::vector<std::vector<std::int64_t>> totals;
  for (const auto& p : policies) {
    const auto traj = pb::simulate(base_config(20, 2.0, p, 5.0, 1234));
    std::vector<std::int64_t> path;
    for (const auto& s : traj.samples) path.push_back(s.occupancy.total_tasks());
    totals.push_back(path);
  }
  for (std::size_t k = 1; k < totals.size(); ++k) EXPECT_EQ(totals[k], totals[0]) << k;
}

TEST(Engine, BlockingCapsPools) {
  auto c = base_config(5, 4.0, pb::ThresholdStatic{1}, 20.0);
  c.threshold_cap = 1;
  c.blocking = true;
  const auto traj = pb::simulate(c);
  EXPECT_GT(traj.counters.blocked, 0u);
  for (const auto& s : traj.samples) EXPECT_LE(s.occupancy.top(), 2u);
}

TEST(Engine, MessagesOnlyForThresholdPolicies) {
  const auto jsq = pb::simulate(base_config(50, 3.0, pb::JoinShortest{}, 10.0));
  EXPECT_EQ(jsq.counters.green_messages + jsq.counters.yellow_messages, 0u);
  const auto thr = pb::simulate(base_config(50, 3.0, pb::ThresholdStatic{3}, 10.0));
  EXPECT_GT(thr.counters.green_messages, 0u);
  EXPECT_GT(thr.counters.yellow_messages, 0u);
  EXPECT_TRUE(thr.counters.within_message_budget());
}
