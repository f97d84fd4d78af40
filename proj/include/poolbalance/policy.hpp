#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <variant>

#include "poolbalance/errors.hpp"
#include "poolbalance/occupancy.hpp"
#include "poolbalance/rng.hpp"

namespace poolbalance {

struct ThresholdStatic {
  std::size_t threshold = 0;
};

struct ThresholdAdaptive {
  std::size_t initial_threshold = 0;
  double alpha = 0.9;
};

struct JoinShortest {};
struct UniformRandom {};

struct PowerOfD {
  std::size_t d = 2;
};

using PolicyKind = std::variant<ThresholdStatic, ThresholdAdaptive, JoinShortest, UniformRandom, PowerOfD>;

inline bool is_threshold_policy(const PolicyKind& p) noexcept {
  return std::holds_alternative<ThresholdStatic>(p) || std::holds_alternative<ThresholdAdaptive>(p);
}

inline std::size_t initial_threshold(const PolicyKind& p) noexcept {
  if (const auto* s = std::get_if<ThresholdStatic>(&p)) return s->threshold;
  if (const auto* a = std::get_if<ThresholdAdaptive>(&p)) return a->initial_threshold;
  return 0;
}

inline std::string policy_name(const PolicyKind& p) {
  struct {
    std::string operator()(const ThresholdStatic&) const { return "threshold"; }
    std::string operator()(const ThresholdAdaptive&) const { return "adaptive"; }
    std::string operator()(const JoinShortest&) const { return "jsq"; }
    std::string operator()(const UniformRandom&) const { return "random"; }
    std::string operator()(const PowerOfD& p) const { return "pod" + std::to_string(p.d); }
  } v;
  return std::visit(v, p);
}

inline void validate_policy(const PolicyKind& p) {
  if (const auto* a = std::get_if<ThresholdAdaptive>(&p); a && !(a->alpha > 0.0 && a->alpha < 1.0))
    throw ConfigError("policy: alpha must lie in (0, 1)");
  if (const auto* d = std::get_if<PowerOfD>(&p); d && d->d < 1) throw ConfigError("policy: d must be >= 1");
}

// Level of the pool that receives the next task under `policy` with current
// threshold l. Only the selection stream is consumed.
inline std::size_t dispatch_decision(const PolicyKind& policy, const CountOccupancy& occ, std::size_t l,
                                     CounterRng& rng) {
  using count = CountOccupancy::count_type;
  const count n = occ.n();
  auto uniform_pool = [&] { return occ.level_of_rank(static_cast<count>(rng.below(static_cast<std::uint64_t>(n)))); };

  if (is_threshold_policy(policy)) {
    const count green = n - occ[l];
    if (green > 0) return occ.level_of_rank(static_cast<count>(rng.below(static_cast<std::uint64_t>(green))));
    if (occ[l + 1] < n) return l;
    return uniform_pool();
  }
  if (std::holds_alternative<JoinShortest>(policy)) return occ.level_of_rank(0);
  if (std::holds_alternative<UniformRandom>(policy)) return uniform_pool();
  const std::size_t d = std::get<PowerOfD>(policy).d;
  std::size_t best = uniform_pool();
  for (std::size_t k = 1; k < d; ++k) best = std::min(best, uniform_pool());
  return best;
}

// Learning rule, evaluated on the occupancy right before an arrival.
inline std::size_t adapt_threshold(const CountOccupancy& before, std::size_t l, double alpha,
                                   std::optional<std::size_t> cap = std::nullopt) {
  const auto n = before.n();
  // For tiny n both triggers can hold at once; the increase is checked first.
  if (before[l + 1] >= n - 1 && (!cap || l < *cap)) return l + 1;
  if (l >= 1 && static_cast<double>(before[l]) / static_cast<double>(n) <= alpha) return l - 1;
  return l;
}

}  // namespace poolbalance
