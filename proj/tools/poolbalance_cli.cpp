#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "poolbalance/poolbalance.hpp"

namespace pb = poolbalance;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw pb::ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Threshold load balancing across infinite-server pools: simulation, fluid model and oracles"};
  std::string config_path, preset, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> replications;
  bool quiet = false, list_presets = false;
  app.add_option("--config", config_path, "INI experiment description")->check(CLI::ExistingFile);
  app.add_option("--preset", preset, "named scenario, overrides conflicting config keys");
  app.add_option("--out", out_dir, "output directory (env POOLBALANCE_OUT)");
  app.add_option("--seed", seed, "root seed (env POOLBALANCE_SEED)");
  app.add_option("--replications", replications, "number of replications")->check(CLI::PositiveNumber);
  app.add_flag("--quiet", quiet, "suppress progress output");
  app.add_flag("--list-presets", list_presets, "print preset names and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (list_presets) {
    for (const auto& [name, doc] : pb::preset_documents()) std::cout << name << "\n";
    return 0;
  }

  pb::ExperimentSpec spec;
  try {
    if (config_path.empty() && preset.empty()) throw pb::ConfigError("need --config or --preset");
    pb::ConfigTree tree = config_path.empty() ? pb::ConfigTree() : pb::read_config_text(read_file(config_path));
    if (!preset.empty()) tree.put("experiment.preset", preset);
    std::vector<std::string> notices;
    pb::apply_preset(tree, notices);
    // Environment beats the config file, command-line flags beat both.
    if (auto v = env("POOLBALANCE_OUT")) tree.put("output.dir", *v);
    if (auto v = env("POOLBALANCE_SEED")) tree.put("experiment.seed", *v);
    if (!out_dir.empty()) tree.put("output.dir", out_dir);
    if (seed) tree.put("experiment.seed", std::to_string(*seed));
    if (replications) tree.put("experiment.replications", std::to_string(*replications));
    spec = pb::resolve_spec(tree, std::move(notices));
  } catch (const pb::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    const auto manifest = pb::run_experiment(spec, quiet ? nullptr : &std::cerr);
    if (!quiet)
      std::cerr << "wrote " << manifest.files.size() + 1 << " files to " << manifest.dir.string() << "\n";
  } catch (const pb::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
