#pragma once

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <system_error>
#include <type_traits>
#include <vector>

#include "poolbalance/engine.hpp"
#include "poolbalance/errors.hpp"
#include "poolbalance/fluid.hpp"
#include "poolbalance/fluid_system.hpp"
#include "poolbalance/metrics.hpp"
#include "poolbalance/oracle.hpp"

namespace poolbalance {

// Shortest decimal that round-trips, '.' separator regardless of locale.
inline std::string format_number(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

template <class Int, std::enable_if_t<std::is_integral_v<Int>, int> = 0>
inline std::string format_number(Int x) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

// Quotes a field only when it contains a separator, quote or line break.
inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw Error("cannot open " + path.string() + " for writing");
  }

  template <class... Cells>
  void row(const Cells&... cells) {
    bool first = true;
    ((put(cells, first)), ...);
    out_ << "\r\n";
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t k = 0; k < cells.size(); ++k) out_ << (k ? "," : "") << csv_field(cells[k]);
    out_ << "\r\n";
  }

  void close() {
    out_.close();
    if (!out_) throw Error("failed writing " + path_.string());
  }

 private:
  template <class T>
  void put(const T& cell, bool& first) {
    if (!first) out_ << ',';
    first = false;
    if constexpr (std::is_arithmetic_v<T>)
      out_ << format_number(cell);
    else
      out_ << csv_field(cell);
  }

  std::filesystem::path path_;
  std::ofstream out_;
};

// t, threshold, Q_1..Q_top with top the highest level seen in the run.
inline void write_trajectory_csv(const std::filesystem::path& path, const SampledTrajectory& traj) {
  std::size_t top = 1;
  for (const auto& s : traj.samples) top = std::max(top, s.occupancy.top());
  CsvWriter w(path);
  std::vector<std::string> cells{"t", "threshold"};
  for (std::size_t i = 1; i <= top; ++i) cells.push_back("Q_" + std::to_string(i));
  w.row(cells);
  for (const auto& s : traj.samples) {
    cells.assign({format_number(s.t), format_number(s.threshold)});
    for (std::size_t i = 1; i <= top; ++i) cells.push_back(format_number(s.occupancy[i]));
    w.row(cells);
  }
  w.close();
}

inline void write_threshold_events_csv(const std::filesystem::path& path, const SampledTrajectory& traj) {
  CsvWriter w(path);
  w.row("t", "threshold");
  w.row(0.0, traj.initial_threshold);
  for (const auto& e : traj.threshold_events) w.row(e.t, e.threshold);
  w.close();
}

// key=value lines.
inline void write_counters(const std::filesystem::path& path, const RunCounters& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "arrivals=" << c.arrivals << "\n"
      << "departures=" << c.departures << "\n"
      << "green_messages=" << c.green_messages << "\n"
      << "yellow_messages=" << c.yellow_messages << "\n"
      << "arrival_messages=" << c.arrival_messages << "\n"
      << "departure_messages=" << c.departure_messages << "\n"
      << "threshold_updates=" << c.threshold_updates << "\n"
      << "blocked=" << c.blocked << "\n";
  if (!out) throw Error("failed writing " + path.string());
}

// t, threshold, q_1..q_depth.
inline void write_fluid_csv(const std::filesystem::path& path, const FluidTrajectory& traj) {
  CsvWriter w(path);
  std::vector<std::string> cells{"t", "threshold"};
  for (std::size_t i = 1; i <= traj.depth; ++i) cells.push_back("q_" + std::to_string(i));
  w.row(cells);
  for (const auto& s : traj.samples) {
    cells.assign({format_number(s.t), format_number(s.threshold)});
    for (std::size_t i = 1; i <= traj.depth; ++i) cells.push_back(format_number(s.state[i]));
    w.row(cells);
  }
  w.close();
}

inline void write_fluid_switches_csv(const std::filesystem::path& path, const FluidTrajectory& traj) {
  CsvWriter w(path);
  w.row("t", "threshold");
  w.row(0.0, traj.initial_threshold);
  for (const auto& s : traj.switches) w.row(s.t, s.threshold);
  w.close();
}

inline void write_share_histogram_csv(const std::filesystem::path& path, const ShareHistogram& h) {
  CsvWriter w(path);
  w.row("share", "mass");
  for (auto it = h.bins.rbegin(); it != h.bins.rend(); ++it) w.row(1.0 / static_cast<double>(it->first), it->second);
  w.close();
}

inline void write_error_csv(const std::filesystem::path& path, const std::vector<OccupancyErrorPoint>& e) {
  CsvWriter w(path);
  w.row("t", "error", "top");
  for (const auto& p : e) w.row(p.t, p.error, p.top);
  w.close();
}

inline void write_diffusion_csv(const std::filesystem::path& path, const ScaledPaths& s) {
  CsvWriter w(path);
  std::vector<std::string> cells{"t", "y"};
  const bool has_z = !s.z.empty();
  if (has_z) cells.push_back("z");
  for (const auto& [level, series] : s.tails) cells.push_back("q_" + std::to_string(level));
  w.row(cells);
  for (std::size_t k = 0; k < s.t.size(); ++k) {
    cells.assign({format_number(s.t[k]), format_number(s.y[k])});
    if (has_z) cells.push_back(format_number(s.z[k]));
    for (const auto& [level, series] : s.tails) cells.push_back(format_number(series[k]));
    w.row(cells);
  }
  w.close();
}

inline void write_coupled_csv(const std::filesystem::path& path, const CoupledPaths& p) {
  CsvWriter w(path);
  w.row("t", "jsq_full", "jsq_top", "threshold_full", "threshold_top");
  for (const auto& x : p.points) w.row(x.t, x.x1_full, x.x1_top, x.x2_full, x.x2_top);
  w.close();
}

inline void write_stationary_csv(const std::filesystem::path& path, const GeneratorMatrix& g,
                                 const std::vector<double>& pi) {
  CsvWriter w(path);
  std::vector<std::string> cells;
  for (std::size_t i = 1; i <= g.capacity; ++i) cells.push_back("Q_" + std::to_string(i));
  cells.push_back("probability");
  w.row(cells);
  for (std::size_t s = 0; s < g.size(); ++s) {
    cells.clear();
    for (auto q : g.states[s]) cells.push_back(format_number(q));
    cells.push_back(format_number(pi[s]));
    w.row(cells);
  }
  w.close();
}

inline void write_tuning_csv(const std::filesystem::path& path, const TuningReport& r) {
  CsvWriter w(path);
  w.row("lambda", "alpha", "lambda_max", "u0", "alpha_min", "optimal_condition_holds", "l_eq_lower", "l_eq_upper",
        "t_eq_bound");
  w.row(r.lambda, r.alpha, r.lambda_max, r.u0, r.alpha_min, std::string(r.optimal_condition_holds ? "true" : "false"),
        r.l_eq_lower, r.l_eq_upper, r.t_eq_bound ? format_number(*r.t_eq_bound) : std::string());
  w.close();
}

}  // namespace poolbalance
