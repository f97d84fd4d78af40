#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "poolbalance/config.hpp"
#include "poolbalance/csv.hpp"
#include "poolbalance/engine.hpp"
#include "poolbalance/fluid_system.hpp"
#include "poolbalance/metrics.hpp"
#include "poolbalance/oracle.hpp"

namespace poolbalance {

struct Manifest {
  std::filesystem::path dir;
  std::vector<std::string> files;        // relative to dir, in write order
  std::vector<std::uint64_t> seeds;      // per replication
};

// Runs jobs 0..count-1 on up to `workers` threads. The first exception thrown
// by any job is rethrown once all threads have joined.
inline void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& job) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto loop = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= count || failed.load()) return;
      try {
        job(k);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(loop);
  loop();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline std::size_t default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

namespace detail {

inline std::string replication_tag(std::size_t r) {
  std::string s = std::to_string(r);
  return "rep" + std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

struct DesSummary {
  std::size_t replication = 0;
  std::uint64_t seed = 0;
  std::string policy;
  RunCounters counters;
  std::size_t final_threshold = 0;
  std::optional<Settling> settled;
  double share_mass = 0.0;  // mass on shares 1/floor(lambda) and 1/ceil(lambda), histogram runs only
};

inline void write_manifest(const Manifest& m, const ExperimentSpec& spec) {
  std::ofstream out(m.dir / "manifest.txt", std::ios::binary);
  if (!out) throw Error("cannot write manifest in " + m.dir.string());
  out << "mode=" << mode_name(spec.mode) << "\n";
  out << "preset=" << spec.preset << "\n";
  out << "seed=" << spec.seed << "\n";
  out << "replications=" << spec.replications << "\n";
  out << "resolved_config=resolved_config.ini\n";
  for (std::size_t r = 0; r < m.seeds.size(); ++r) out << "replication." << r << ".seed=" << m.seeds[r] << "\n";
  for (std::size_t k = 0; k < m.files.size(); ++k) out << "file." << k << "=" << m.files[k] << "\n";
  if (!out) throw Error("failed writing manifest in " + m.dir.string());
}

}  // namespace detail

// Executes the spec and writes every output under spec.output_dir, plus
// resolved_config.ini and manifest.txt. Progress lines go to `log` if given.
inline Manifest run_experiment(const ExperimentSpec& spec, std::ostream* log = nullptr,
                               std::size_t workers = default_workers()) {
  namespace fs = std::filesystem;
  Manifest m;
  m.dir = spec.output_dir;
  fs::create_directories(m.dir);
  for (const auto& note : spec.notices)
    if (log) *log << "notice: " << note << "\n";

  {
    std::ofstream out(m.dir / "resolved_config.ini", std::ios::binary);
    out << write_config_text(spec.resolved);
    if (!out) throw Error("cannot write resolved_config.ini");
  }
  m.files.push_back("resolved_config.ini");
  for (std::size_t r = 0; r < spec.replications; ++r) m.seeds.push_back(replication_seed(spec.seed, r));

  switch (spec.mode) {
    case Mode::kDes: {
      const auto policies = spec.policies();
      const std::size_t jobs = spec.replications * policies.size();
      std::vector<detail::DesSummary> summaries(jobs);
      std::vector<std::vector<std::string>> written(jobs);
      parallel_for(jobs, workers, [&](std::size_t k) {
        const std::size_t r = k / policies.size();
        const auto& policy = policies[k % policies.size()];
        const std::string prefix = detail::replication_tag(r) + "_" + policy_name(policy) + "_";
        auto cfg = spec.sim_config(policy, m.seeds[r]);
        const auto traj = simulate(cfg);
        auto& files = written[k];
        auto emit = [&](const std::string& name) {
          files.push_back(prefix + name);
          return m.dir / (prefix + name);
        };
        if (spec.trajectories) write_trajectory_csv(emit("trajectory.csv"), traj);
        if (is_threshold_policy(policy)) write_threshold_events_csv(emit("thresholds.csv"), traj);
        write_counters(emit("counters.txt"), traj.counters);
        auto& s = summaries[k];
        s.replication = r;
        s.seed = m.seeds[r];
        s.policy = policy_name(policy);
        s.counters = traj.counters;
        s.final_threshold = traj.final_threshold();
        if (is_threshold_policy(policy)) s.settled = detect_settling(traj, spec.quiet_window);
        if (spec.histogram) {
          const auto h = resource_share_histogram(traj, spec.burn_in);
          write_share_histogram_csv(emit("shares.csv"), h);
          const double lambda = spec.load.at(0.0);
          const auto lo = static_cast<std::size_t>(std::floor(lambda));
          s.share_mass = h.mass_on({lo, lo + 1});
        }
        if (spec.error) write_error_csv(emit("error.csv"), occupancy_error(traj, spec.load));
        if (spec.diffusion) write_diffusion_csv(emit("diffusion.csv"), diffusion_scaled(traj, spec.load.at(0.0) / spec.mu));
        if (log && k % policies.size() == policies.size() - 1 && (r + 1) % 10 == 0)
          *log << "replication " << r + 1 << "/" << spec.replications << " done\n";
      });
      for (const auto& f : written) m.files.insert(m.files.end(), f.begin(), f.end());

      CsvWriter w(m.dir / "summary.csv");
      w.row(std::vector<std::string>{"replication", "seed", "policy", "arrivals", "departures", "green_messages",
                                     "yellow_messages", "threshold_updates", "blocked", "final_threshold",
                                     "settled_at", "settled_threshold", "share_mass"});
      for (const auto& s : summaries) {
        w.row(std::vector<std::string>{
            format_number(s.replication), format_number(s.seed), s.policy, format_number(s.counters.arrivals),
            format_number(s.counters.departures), format_number(s.counters.green_messages),
            format_number(s.counters.yellow_messages), format_number(s.counters.threshold_updates),
            format_number(s.counters.blocked), format_number(s.final_threshold),
            s.settled ? format_number(s.settled->t_eq) : std::string(),
            s.settled ? format_number(s.settled->threshold) : std::string(),
            spec.histogram ? format_number(s.share_mass) : std::string()});
      }
      w.close();
      m.files.push_back("summary.csv");
      break;
    }
    case Mode::kFluid: {
      FluidIntegratorOptions opts;
      opts.sample_dt = spec.sample_dt;
      opts.depth = spec.depth;
      opts.threshold_cap = spec.threshold_cap;
      opts.adaptive = std::holds_alternative<ThresholdAdaptive>(spec.policy);
      const double alpha = opts.adaptive ? spec.alpha() : 0.5;
      const auto traj = integrate_fluid_system(spec.initial_fluid_state(), initial_threshold(spec.policy), spec.load,
                                               alpha, spec.mu, spec.horizon, opts);
      write_fluid_csv(m.dir / "fluid_trajectory.csv", traj);
      write_fluid_switches_csv(m.dir / "fluid_switches.csv", traj);
      m.files.push_back("fluid_trajectory.csv");
      m.files.push_back("fluid_switches.csv");
      if (log) *log << "fluid: " << traj.switches.size() << " switches, final threshold " << traj.final_threshold() << "\n";
      break;
    }
    case Mode::kCoupled: {
      std::vector<std::size_t> mismatches(spec.replications);
      std::vector<std::size_t> events(spec.replications);
      parallel_for(spec.replications, workers, [&](std::size_t r) {
        const auto paths = coupled_run(spec.n, spec.load.at(0.0), spec.horizon, m.seeds[r], spec.initial_counts());
        if (spec.trajectories) write_coupled_csv(m.dir / (detail::replication_tag(r) + "_coupled.csv"), paths);
        mismatches[r] = paths.mismatches();
        events[r] = paths.points.size();
      });
      if (spec.trajectories)
        for (std::size_t r = 0; r < spec.replications; ++r) m.files.push_back(detail::replication_tag(r) + "_coupled.csv");
      CsvWriter w(m.dir / "summary.csv");
      w.row("replication", "seed", "events", "mismatches");
      for (std::size_t r = 0; r < spec.replications; ++r) w.row(r, m.seeds[r], events[r], mismatches[r]);
      w.close();
      m.files.push_back("summary.csv");
      break;
    }
    case Mode::kCtmc: {
      const auto g = ctmc_generator(spec.n, spec.capacity, spec.load.at(0.0), spec.mu, spec.policy);
      write_stationary_csv(m.dir / "stationary.csv", g, ctmc_stationary(g));
      m.files.push_back("stationary.csv");
      break;
    }
    case Mode::kTuning: {
      write_tuning_csv(m.dir / "tuning.csv",
                       tuning_report(spec.load.at(0.0), spec.alpha(), spec.load.lambda_max(), spec.u0));
      m.files.push_back("tuning.csv");
      break;
    }
  }
  detail::write_manifest(m, spec);
  return m;
}

}  // namespace poolbalance
