#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "poolbalance/engine.hpp"
#include "poolbalance/errors.hpp"
#include "poolbalance/fluid.hpp"
#include "poolbalance/load_schedule.hpp"
#include "poolbalance/policy.hpp"

namespace poolbalance {

using ConfigTree = boost::property_tree::ptree;

enum class Mode { kDes, kFluid, kCoupled, kCtmc, kTuning };

inline std::string mode_name(Mode m) {
  switch (m) {
    case Mode::kDes: return "des";
    case Mode::kFluid: return "fluid";
    case Mode::kCoupled: return "coupled";
    case Mode::kCtmc: return "ctmc";
    case Mode::kTuning: return "tuning";
  }
  return "?";
}

struct InitialState {
  enum class Kind { kEmpty, kIdeal, kAllAt, kCounts };
  Kind kind = Kind::kEmpty;
  std::size_t level = 0;              // kAllAt
  std::vector<std::int64_t> counts;   // kCounts: Q(1), Q(2), ...
};

struct ExperimentSpec {
  Mode mode = Mode::kDes;
  std::string preset;
  std::string description;
  std::size_t replications = 1;
  std::uint64_t seed = 1;
  std::string output_dir = "out";

  std::int64_t n = 0;
  LoadSchedule load;
  double mu = 1.0;
  double horizon = 0.0;
  double sample_dt = 0.1;
  InitialState initial;
  std::size_t capacity = 0;  // 0: unbounded pools
  double u0 = 0.0;
  std::size_t depth = 0;     // fluid truncation, 0 picks the default

  PolicyKind policy = ThresholdStatic{};
  std::vector<PolicyKind> compare;
  std::optional<std::size_t> threshold_cap;

  double burn_in = 0.0;
  double quiet_window = 20.0;
  double lag = 0.5;
  bool trajectories = true;
  bool histogram = false;
  bool diffusion = false;
  bool error = false;

  ConfigTree resolved;               // fully merged document, written next to the outputs
  std::vector<std::string> notices;  // preset overrides and ignored fields

  std::vector<PolicyKind> policies() const {
    std::vector<PolicyKind> all{policy};
    all.insert(all.end(), compare.begin(), compare.end());
    return all;
  }

  double alpha() const {
    if (const auto* a = std::get_if<ThresholdAdaptive>(&policy)) return a->alpha;
    return 0.0;
  }

  // Pool counts at t = 0 for the simulator.
  std::vector<std::int64_t> initial_counts() const {
    switch (initial.kind) {
      case InitialState::Kind::kEmpty: return {};
      case InitialState::Kind::kAllAt: return std::vector<std::int64_t>(initial.level, n);
      case InitialState::Kind::kCounts: return initial.counts;
      case InitialState::Kind::kIdeal: {
        const double lambda = load.at(0.0);
        std::vector<std::int64_t> q(static_cast<std::size_t>(std::floor(lambda)), n);
        const auto extra = std::llround((lambda - std::floor(lambda)) * static_cast<double>(n));
        if (extra > 0) q.push_back(extra);
        return q;
      }
    }
    return {};
  }

  FluidState initial_fluid_state() const {
    switch (initial.kind) {
      case InitialState::Kind::kEmpty: return FluidState::empty(1);
      case InitialState::Kind::kIdeal: return ideal_occupancy(load.at(0.0), static_cast<std::size_t>(load.at(0.0)) + 2);
      case InitialState::Kind::kAllAt: {
        std::vector<double> q(initial.level + 1, 1.0);
        return FluidState(std::move(q));
      }
      case InitialState::Kind::kCounts: {
        std::vector<double> q{1.0};
        for (auto c : initial.counts) q.push_back(static_cast<double>(c) / static_cast<double>(n));
        return FluidState(std::move(q));
      }
    }
    return FluidState::empty(1);
  }

  SimConfig sim_config(const PolicyKind& p, std::uint64_t replication_seed_value) const {
    SimConfig c;
    c.n = n;
    c.load = load;
    c.mu = mu;
    c.policy = p;
    c.horizon = horizon;
    c.sample_dt = sample_dt;
    c.seed = replication_seed_value;
    c.initial_occupancy = initial_counts();
    c.threshold_cap = threshold_cap;
    if (capacity > 0) {
      c.blocking = true;
      c.threshold_cap = capacity - 1;
    }
    return c;
  }
};

namespace detail {

inline const std::map<std::string, std::set<std::string>>& config_schema() {
  static const std::map<std::string, std::set<std::string>> schema = {
      {"experiment", {"mode", "preset", "replications", "seed", "description"}},
      {"system", {"n", "lambda", "lambda_max", "mu", "horizon", "sample_dt", "initial", "capacity", "u0", "depth"}},
      {"policy", {"kind", "threshold", "alpha", "d", "threshold_cap", "compare"}},
      {"schedule", {"segments", "lambda_max"}},
      {"output", {"dir", "burn_in", "quiet_window", "lag", "trajectories", "histogram", "diffusion", "error"}},
  };
  return schema;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline double parse_real(const std::string& text, const std::string& key) {
  const std::string s = trim(text);
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v))
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  return v;
}

inline std::uint64_t parse_unsigned(const std::string& text, const std::string& key) {
  const std::string s = trim(text);
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
  return v;
}

inline bool parse_flag(const std::string& text, const std::string& key) {
  const std::string s = trim(text);
  if (s == "true" || s == "yes" || s == "1" || s == "on") return true;
  if (s == "false" || s == "no" || s == "0" || s == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

class Reader {
 public:
  explicit Reader(const ConfigTree& tree) : tree_(tree) {}

  bool has(const std::string& key) const { return tree_.get_optional<std::string>(path(key)).has_value(); }

  std::string text(const std::string& key) const {
    auto v = tree_.get_optional<std::string>(path(key));
    if (!v) throw ConfigError(key + ": required key is missing");
    return trim(*v);
  }
  std::string text(const std::string& key, const std::string& fallback) const { return has(key) ? text(key) : fallback; }

  double real(const std::string& key) const { return parse_real(text(key), key); }
  double real(const std::string& key, double fallback) const { return has(key) ? real(key) : fallback; }

  std::uint64_t count(const std::string& key) const { return parse_unsigned(text(key), key); }
  std::uint64_t count(const std::string& key, std::uint64_t fallback) const { return has(key) ? count(key) : fallback; }

  bool flag(const std::string& key, bool fallback) const { return has(key) ? parse_flag(text(key), key) : fallback; }

 private:
  static ConfigTree::path_type path(const std::string& key) { return ConfigTree::path_type(key, '.'); }
  const ConfigTree& tree_;
};

inline void check_keys(const ConfigTree& tree) {
  const auto& schema = config_schema();
  for (const auto& [section, body] : tree) {
    if (!body.data().empty() && body.empty()) throw ConfigError(section + ": key outside any section");
    auto it = schema.find(section);
    if (it == schema.end()) throw ConfigError(section + ": unknown section");
    for (const auto& [key, value] : body)
      if (!it->second.count(key)) throw ConfigError(section + "." + key + ": unknown key");
  }
}

inline PolicyKind parse_policy_name(const std::string& name, std::size_t threshold, std::optional<double> alpha,
                                    std::size_t d, const std::string& key) {
  if (name == "threshold") return ThresholdStatic{threshold};
  if (name == "adaptive") {
    if (!alpha) throw ConfigError("policy.alpha: required key is missing (adaptive policy)");
    return ThresholdAdaptive{threshold, *alpha};
  }
  if (name == "jsq") return JoinShortest{};
  if (name == "random") return UniformRandom{};
  if (name == "pod") return PowerOfD{d};
  if (name.size() > 3 && name.compare(0, 3, "pod") == 0)
    return PowerOfD{static_cast<std::size_t>(parse_unsigned(name.substr(3), key))};
  throw ConfigError(key + ": unknown policy '" + name + "'");
}

inline InitialState parse_initial(const std::string& text) {
  const std::string key = "system.initial";
  InitialState s;
  if (text == "empty") return s;
  if (text == "ideal") {
    s.kind = InitialState::Kind::kIdeal;
    return s;
  }
  const auto colon = text.find(':');
  const std::string head = trim(text.substr(0, colon));
  const std::string body = colon == std::string::npos ? std::string() : text.substr(colon + 1);
  if (head == "all" && colon != std::string::npos) {
    s.kind = InitialState::Kind::kAllAt;
    s.level = parse_unsigned(body, key);
    return s;
  }
  if (head == "counts" && colon != std::string::npos) {
    s.kind = InitialState::Kind::kCounts;
    for (const auto& c : split_list(body)) s.counts.push_back(static_cast<std::int64_t>(parse_unsigned(c, key)));
    return s;
  }
  throw ConfigError(key + ": expected empty, ideal, all:K or counts:Q1,Q2,..., got '" + text + "'");
}

inline LoadSchedule parse_schedule(const std::string& text, std::optional<double> lambda_max) {
  std::vector<LoadSchedule::Segment> segments;
  for (const auto& item : split_list(text)) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("schedule.segments: expected start:lambda, got '" + item + "'");
    segments.push_back({parse_real(item.substr(0, colon), "schedule.segments"),
                        parse_real(item.substr(colon + 1), "schedule.segments")});
  }
  try {
    return LoadSchedule(std::move(segments), lambda_max.value_or(-1.0));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("schedule.segments: ") + e.what());
  }
}

}  // namespace detail

// Preset documents; each is merged over the user's configuration.
inline const std::map<std::string, std::string>& preset_documents() {
  static const std::map<std::string, std::string> presets = {
      {"fig3-left",
       "[experiment]\nmode=des\nseed=42\ndescription=oscillating threshold at n = 100\n"
       "[system]\nn=100\nlambda=2.9\nhorizon=100\nsample_dt=0.1\ninitial=empty\n"
       "[policy]\nkind=adaptive\nthreshold=0\nalpha=0.97\n"},
      {"fig3-right",
       "[experiment]\nmode=des\nseed=42\ndescription=threshold mostly at floor(lambda) at n = 400\n"
       "[system]\nn=400\nlambda=2.9\nhorizon=100\nsample_dt=0.1\ninitial=empty\n"
       "[policy]\nkind=adaptive\nthreshold=0\nalpha=0.97\n"},
      {"fig5-left",
       "[experiment]\nmode=des\nseed=42\ndescription=settling from an empty system\n"
       "[system]\nn=500\nlambda=5.5\nhorizon=30\nsample_dt=0.01\ninitial=empty\n"
       "[policy]\nkind=adaptive\nthreshold=0\nalpha=0.93\n"},
      {"fig5-right",
       "[experiment]\nmode=des\nseed=42\ndescription=settling with every pool at 9 tasks\n"
       "[system]\nn=500\nlambda=5.5\nhorizon=30\nsample_dt=0.01\ninitial=all:9\n"
       "[policy]\nkind=adaptive\nthreshold=9\nalpha=0.93\n"},
      {"fig5-fluid-left",
       "[experiment]\nmode=fluid\ndescription=fluid settling from an empty system\n"
       "[system]\nlambda=5.5\nhorizon=10\nsample_dt=0.01\ninitial=empty\n"
       "[policy]\nkind=adaptive\nthreshold=0\nalpha=0.93\n"},
      {"fig5-fluid-right",
       "[experiment]\nmode=fluid\ndescription=fluid settling with every pool at 9 tasks\n"
       "[system]\nlambda=5.5\nhorizon=10\nsample_dt=0.01\ninitial=all:9\n"
       "[policy]\nkind=adaptive\nthreshold=9\nalpha=0.93\n"},
      {"fig7",
       "[experiment]\nmode=des\nseed=42\ndescription=resource shares under four dispatching rules\n"
       "[system]\nn=500\nlambda=10.5\nhorizon=220\nsample_dt=0.01\ninitial=empty\n"
       "[policy]\nkind=adaptive\nthreshold=0\nalpha=0.97\ncompare=random,pod2,jsq\n"
       "[output]\nburn_in=20\nhistogram=true\ntrajectories=false\n"},
      {"fig8",
       "[experiment]\nmode=des\nseed=42\ndescription=tracking a time-varying load (reconstructed schedule)\n"
       "[system]\nn=500\nhorizon=50\nsample_dt=0.1\ninitial=empty\n"
       "[policy]\nkind=adaptive\nthreshold=0\nalpha=0.91\n"
       "[schedule]\nlambda_max=10\nsegments=0:5.3 2:5.2 2.5:5.4 3:5.2 3.5:5.4 4:5.2 4.5:5.4 5:5.2 5.5:5.4 6:5.2 "
       "6.5:5.4 7:5.2 7.5:5.4 8:5.2 8.5:5.4 9:5.2 9.5:5.4 10:5.2 10.5:5.4 11:5.2 11.5:5.4 12:5.2 12.5:5.4 "
       "13:5.2 13.5:5.4 14:5.2 14.5:5.4 15:5.3 20:8.1 30:3.2 33:3.45 34:3.7 35:3.95 36:4.2 37:4.45 38:4.7 "
       "39:4.95 40:5.2 41:5.45 42:5.7 43:5.95 44:6.2\n"
       "[output]\nerror=true\n"},
      {"tuning",
       "[experiment]\nmode=tuning\ndescription=alpha criterion and settling bound\n"
       "[system]\nlambda=5.3\nlambda_max=10\nu0=0\n"
       "[policy]\nkind=adaptive\nthreshold=0\nalpha=0.91\n"},
      {"coupling",
       "[experiment]\nmode=coupled\nseed=42\nreplications=100\ndescription=JSQ and threshold under shared primitives\n"
       "[system]\nn=10\nlambda=2.5\nhorizon=5\n"},
      {"ctmc-small",
       "[experiment]\nmode=ctmc\ndescription=exact stationary law of a tiny system\n"
       "[system]\nn=2\ncapacity=2\nlambda=1\n"
       "[policy]\nkind=threshold\nthreshold=1\n"},
  };
  return presets;
}

inline ConfigTree read_config_text(const std::string& text) {
  ConfigTree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  return tree;
}

// Overlays the preset named in experiment.preset; conflicting user values are
// replaced and reported.
inline void apply_preset(ConfigTree& tree, std::vector<std::string>& notices) {
  const auto name = tree.get_optional<std::string>("experiment.preset");
  if (!name) return;
  const std::string preset = detail::trim(*name);
  const auto& docs = preset_documents();
  auto it = docs.find(preset);
  if (it == docs.end()) throw ConfigError("experiment.preset: unknown preset '" + preset + "'");
  const ConfigTree overlay = read_config_text(it->second);
  for (const auto& [section, body] : overlay)
    for (const auto& [key, value] : body) {
      const std::string path = section + "." + key;
      if (auto mine = tree.get_optional<std::string>(path); mine && detail::trim(*mine) != value.data())
        notices.push_back("preset " + preset + " overrides " + path + " (" + detail::trim(*mine) + " -> " +
                          value.data() + ")");
      tree.put(path, value.data());
    }
}

// Validates a merged document and applies defaults.
inline ExperimentSpec resolve_spec(const ConfigTree& tree, std::vector<std::string> notices = {}) {
  detail::check_keys(tree);
  const detail::Reader r(tree);
  ExperimentSpec s;
  s.notices = std::move(notices);
  s.resolved = tree;

  const std::string mode = r.text("experiment.mode", "des");
  if (mode == "des") s.mode = Mode::kDes;
  else if (mode == "fluid") s.mode = Mode::kFluid;
  else if (mode == "coupled") s.mode = Mode::kCoupled;
  else if (mode == "ctmc") s.mode = Mode::kCtmc;
  else if (mode == "tuning") s.mode = Mode::kTuning;
  else throw ConfigError("experiment.mode: unknown mode '" + mode + "'");
  s.preset = r.text("experiment.preset", "");
  s.description = r.text("experiment.description", "");
  s.replications = r.count("experiment.replications", 1);
  if (s.replications < 1) throw ConfigError("experiment.replications: must be >= 1");
  s.seed = r.count("experiment.seed", 1);
  s.output_dir = r.text("output.dir", "out");

  const bool needs_n = s.mode == Mode::kDes || s.mode == Mode::kCoupled || s.mode == Mode::kCtmc;
  if (needs_n || r.has("system.n")) {
    const auto n = r.count("system.n");
    if (n < 1) throw ConfigError("system.n: must be >= 1");
    s.n = static_cast<std::int64_t>(n);
  }

  const bool has_schedule = r.has("schedule.segments");
  if (has_schedule && r.has("system.lambda")) throw ConfigError("system.lambda: conflicts with schedule.segments");
  std::optional<double> lambda_max;
  if (r.has("schedule.lambda_max")) lambda_max = r.real("schedule.lambda_max");
  if (r.has("system.lambda_max")) {
    if (lambda_max) throw ConfigError("system.lambda_max: conflicts with schedule.lambda_max");
    lambda_max = r.real("system.lambda_max");
  }
  if (has_schedule) {
    s.load = detail::parse_schedule(r.text("schedule.segments"), lambda_max);
  } else {
    const double lambda = r.real("system.lambda");
    if (lambda < 0.0) throw ConfigError("system.lambda: must be >= 0");
    if (lambda_max && *lambda_max < lambda) throw ConfigError("system.lambda_max: below system.lambda");
    s.load = LoadSchedule({{0.0, lambda}}, lambda_max.value_or(-1.0));
  }
  if ((s.mode == Mode::kCoupled || s.mode == Mode::kCtmc) && !s.load.is_constant())
    throw ConfigError("schedule.segments: mode " + mode + " needs a constant load");

  s.mu = r.real("system.mu", 1.0);
  if (!(s.mu > 0.0)) throw ConfigError("system.mu: must be positive");
  const bool needs_horizon = s.mode == Mode::kDes || s.mode == Mode::kFluid || s.mode == Mode::kCoupled;
  if (needs_horizon || r.has("system.horizon")) {
    s.horizon = r.real("system.horizon");
    if (!(s.horizon > 0.0)) throw ConfigError("system.horizon: must be positive");
  }
  s.sample_dt = r.real("system.sample_dt", 0.1);
  if (!(s.sample_dt > 0.0)) throw ConfigError("system.sample_dt: must be positive");
  s.initial = detail::parse_initial(r.text("system.initial", "empty"));
  if ((s.initial.kind == InitialState::Kind::kCounts) && s.n == 0)
    throw ConfigError("system.initial: counts need system.n");
  s.capacity = r.count("system.capacity", 0);
  if (s.mode == Mode::kCtmc && s.capacity == 0) throw ConfigError("system.capacity: required key is missing");
  s.u0 = r.real("system.u0", 0.0);
  if (s.u0 < 0.0) throw ConfigError("system.u0: must be >= 0");
  s.depth = r.count("system.depth", 0);

  std::optional<double> alpha;
  if (r.has("policy.alpha")) {
    alpha = r.real("policy.alpha");
    if (!(*alpha > 0.0 && *alpha < 1.0)) throw ConfigError("policy.alpha: must lie in (0, 1)");
  }
  const auto threshold = static_cast<std::size_t>(r.count("policy.threshold", 0));
  const auto d = static_cast<std::size_t>(r.count("policy.d", 2));
  if (d < 1) throw ConfigError("policy.d: must be >= 1");
  if (r.has("policy.threshold_cap")) s.threshold_cap = static_cast<std::size_t>(r.count("policy.threshold_cap"));

  switch (s.mode) {
    case Mode::kDes:
    case Mode::kCtmc:
      s.policy = detail::parse_policy_name(r.text("policy.kind"), threshold, alpha, d, "policy.kind");
      break;
    case Mode::kFluid: {
      const std::string kind = r.text("policy.kind");
      if (kind != "threshold" && kind != "adaptive")
        throw ConfigError("policy.kind: fluid mode supports threshold or adaptive, got '" + kind + "'");
      s.policy = detail::parse_policy_name(kind, threshold, alpha, d, "policy.kind");
      break;
    }
    case Mode::kTuning:
      if (!alpha) throw ConfigError("policy.alpha: required key is missing");
      s.policy = ThresholdAdaptive{threshold, *alpha};
      break;
    case Mode::kCoupled:
      s.policy = ThresholdStatic{static_cast<std::size_t>(std::floor(s.load.at(0.0)))};
      break;
  }
  if (r.has("policy.compare")) {
    if (s.mode != Mode::kDes) throw ConfigError("policy.compare: only used in des mode");
    for (const auto& name : detail::split_list(r.text("policy.compare")))
      s.compare.push_back(detail::parse_policy_name(name, threshold, alpha, d, "policy.compare"));
  }

  s.burn_in = r.real("output.burn_in", 0.0);
  if (s.burn_in < 0.0) throw ConfigError("output.burn_in: must be >= 0");
  s.quiet_window = r.real("output.quiet_window", 20.0);
  if (!(s.quiet_window > 0.0)) throw ConfigError("output.quiet_window: must be positive");
  s.lag = r.real("output.lag", 0.5);
  if (!(s.lag > 0.0)) throw ConfigError("output.lag: must be positive");
  s.trajectories = r.flag("output.trajectories", true);
  s.histogram = r.flag("output.histogram", false);
  s.diffusion = r.flag("output.diffusion", false);
  s.error = r.flag("output.error", false);
  if (s.diffusion && !s.load.is_constant()) throw ConfigError("output.diffusion: needs a constant load");

  // Mode-specific consistency, reported against the offending key.
  if (s.mode == Mode::kDes) {
    for (const auto& p : s.policies()) {
      try {
        validate_config(s.sim_config(p, s.seed));
      } catch (const ConfigError& e) {
        throw ConfigError(std::string("system: ") + e.what());
      }
    }
  }
  if (s.mode == Mode::kCoupled) {
    const double lambda = s.load.at(0.0);
    if (!(lambda > 0.0) || is_integer_load(lambda)) throw ConfigError("system.lambda: coupling needs a non-integer load");
  }
  if (s.mode == Mode::kFluid && s.replications > 1) {
    s.notices.push_back("fluid mode is deterministic; running one replication instead of " +
                        std::to_string(s.replications));
    s.replications = 1;
  }
  return s;
}

inline ExperimentSpec build_spec(ConfigTree tree) {
  std::vector<std::string> notices;
  apply_preset(tree, notices);
  return resolve_spec(tree, std::move(notices));
}

inline ExperimentSpec parse_config(const std::string& text) { return build_spec(read_config_text(text)); }

inline ExperimentSpec load_preset(const std::string& name) {
  ConfigTree tree;
  tree.put("experiment.preset", name);
  return build_spec(std::move(tree));
}

inline std::string write_config_text(const ConfigTree& tree) {
  std::ostringstream out;
  boost::property_tree::ini_parser::write_ini(out, tree);
  return out.str();
}

}  // namespace poolbalance
