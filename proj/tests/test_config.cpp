#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "poolbalance/experiment.hpp"

namespace pb = poolbalance;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("poolbalance_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> read_manifest(const fs::path& dir) {
  std::map<std::string, std::string> kv;
  std::ifstream in(dir / "manifest.txt");
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace

TEST(ParseConfig, MinimalDesDefaults) {
  const auto s = pb::parse_config(
      "[system]\nn=20\nlambda=1.5\nhorizon=5\n"
      "[policy]\nkind=threshold\nthreshold=1\n"
      "[experiment]\nseed=9\n");
  EXPECT_EQ(s.mode, pb::Mode::kDes);
  EXPECT_EQ(s.n, 20);
  EXPECT_DOUBLE_EQ(s.load.at(3.0), 1.5);
  EXPECT_DOUBLE_EQ(s.mu, 1.0);
  EXPECT_DOUBLE_EQ(s.sample_dt, 0.1);
  EXPECT_EQ(s.seed, 9u);
  EXPECT_EQ(s.replications, 1u);
  EXPECT_EQ(s.output_dir, "out");
  EXPECT_EQ(s.initial.kind, pb::InitialState::Kind::kEmpty);
  EXPECT_DOUBLE_EQ(s.quiet_window, 20.0);
  EXPECT_EQ(std::get<pb::ThresholdStatic>(s.policy).threshold, 1u);
  EXPECT_EQ(s.alpha(), 0.0);  // unset unless adaptive
}

TEST(ParseConfig, Errors) {
  auto fails_on = [](const std::string& text, const std::string& key) {
    try {
      pb::parse_config(text);
      ADD_FAILURE() << "accepted: " << text;
    } catch (const pb::ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(key), std::string::npos) << e.what();
    }
  };
  const std::string base = "[system]\nn=20\nhorizon=5\n[policy]\nkind=jsq\n";
  fails_on(base + "[schedule]\nsegments=0:1 3:2 2:4\n", "schedule.segments");
  fails_on("[system]\nn=20\nlambda=2\nhorizon=5\nbogus=1\n[policy]\nkind=jsq\n", "system.bogus");
  fails_on("[system]\nn=20\nhorizon=5\n[policy]\nkind=jsq\n", "system.lambda");
  fails_on("[system]\nn=20\nlambda=2\n[policy]\nkind=jsq\n", "system.horizon");
  fails_on("[system]\nn=20\nlambda=2\nhorizon=5\n[policy]\nkind=adaptive\n", "policy.alpha");
  fails_on("[system]\nn=20\nlambda=2\nhorizon=5\n[policy]\nkind=adaptive\nalpha=1.2\n", "policy.alpha");
  fails_on("[system]\nn=twenty\nlambda=2\nhorizon=5\n[policy]\nkind=jsq\n", "system.n");
  fails_on("[system]\nn=20\nlambda=2\nhorizon=5\n[policy]\nkind=magic\n", "policy.kind");
  fails_on("[system]\nn=20\nlambda=2\nhorizon=5\n[policy]\nkind=jsq\n[extra]\nx=1\n", "extra");
  fails_on("[system]\nn=20\nlambda=2\nhorizon=5\n[policy]\nkind=jsq\n[experiment]\nreplications=0\n",
           "experiment.replications");
  fails_on("[system]\nn=20\nlambda=2\nhorizon=5\n[policy]\nkind=jsq\n[experiment]\npreset=fig99\n", "experiment.preset");
  fails_on("[system]\nn=20\nlambda=2\nhorizon=5\n[policy]\nkind=jsq\n[experiment]\nmode=magic\n", "experiment.mode");
  fails_on("[system]\nn=4\nlambda=2\nhorizon=5\ninitial=counts:4,5\n[policy]\nkind=jsq\n", "system");
  fails_on("[experiment]\nmode=coupled\n[system]\nn=4\nlambda=2\nhorizon=5\n", "system.lambda");
  fails_on("[experiment]\nmode=ctmc\n[system]\nn=2\nlambda=1\n[policy]\nkind=jsq\n", "system.capacity");
  fails_on("[system\nn=2\n", "config line");
}

TEST(ParseConfig, ScheduleAndInitialStates) {
  const auto s = pb::parse_config(
      "[system]\nn=10\nhorizon=5\ninitial=counts:10,7,2\n[policy]\nkind=pod\nd=3\ncompare=jsq random pod2\n"
      "[schedule]\nsegments=0:1, 2:5 4:0.5\nlambda_max=8\n");
  EXPECT_DOUBLE_EQ(s.load.at(2.5), 5.0);
  EXPECT_DOUBLE_EQ(s.load.lambda_max(), 8.0);
  EXPECT_EQ((s.initial_counts()), (std::vector<std::int64_t>{10, 7, 2}));
  EXPECT_EQ(std::get<pb::PowerOfD>(s.policy).d, 3u);
  ASSERT_EQ(s.compare.size(), 3u);
  EXPECT_EQ(pb::policy_name(s.compare[2]), "pod2");

  const auto all9 = pb::parse_config("[system]\nn=5\nlambda=5.5\nhorizon=1\ninitial=all:9\n[policy]\nkind=jsq\n");
  EXPECT_EQ(all9.initial_counts(), std::vector<std::int64_t>(9, 5));
  const auto ideal = pb::parse_config("[system]\nn=10\nlambda=2.5\nhorizon=1\ninitial=ideal\n[policy]\nkind=jsq\n");
  EXPECT_EQ(ideal.initial_counts(), (std::vector<std::int64_t>{10, 10, 5}));
}

TEST(Presets, ParametersMatchTable) {
  struct Row {
    const char* name;
    std::int64_t n;
    double lambda;
    double alpha;
    std::size_t l0;
    pb::InitialState::Kind init;
  };
  const Row table[] = {
      {"fig3-left", 100, 2.9, 0.97, 0, pb::InitialState::Kind::kEmpty},
      {"fig3-right", 400, 2.9, 0.97, 0, pb::InitialState::Kind::kEmpty},
      {"fig5-left", 500, 5.5, 0.93, 0, pb::InitialState::Kind::kEmpty},
      {"fig5-right", 500, 5.5, 0.93, 9, pb::InitialState::Kind::kAllAt},
      {"fig7", 500, 10.5, 0.97, 0, pb::InitialState::Kind::kEmpty},
      {"fig8", 500, 5.3, 0.91, 0, pb::InitialState::Kind::kEmpty},
  };
  for (const auto& row : table) {
    const auto s = pb::load_preset(row.name);
    EXPECT_EQ(s.mode, pb::Mode::kDes) << row.name;
    EXPECT_EQ(s.n, row.n) << row.name;
    EXPECT_DOUBLE_EQ(s.load.at(0.0), row.lambda) << row.name;
    EXPECT_DOUBLE_EQ(s.alpha(), row.alpha) << row.name;
    EXPECT_EQ(pb::initial_threshold(s.policy), row.l0) << row.name;
    EXPECT_EQ(s.initial.kind, row.init) << row.name;
  }
  EXPECT_EQ(pb::load_preset("fig5-right").initial.level, 9u);

  const auto fig7 = pb::load_preset("fig7");
  std::vector<std::string> names;
  for (const auto& p : fig7.policies()) names.push_back(pb::policy_name(p));
  EXPECT_EQ(names, (std::vector<std::string>{"adaptive", "random", "pod2", "jsq"}));
  EXPECT_TRUE(fig7.histogram);

  const auto fig8 = pb::load_preset("fig8");
  EXPECT_DOUBLE_EQ(fig8.load.lambda_max(), 10.0);
  EXPECT_DOUBLE_EQ(fig8.load.at(25.0), 8.1);
  EXPECT_DOUBLE_EQ(fig8.load.at(31.0), 3.2);
  EXPECT_TRUE(fig8.error);

  EXPECT_EQ(pb::load_preset("tuning").mode, pb::Mode::kTuning);
  EXPECT_EQ(pb::load_preset("coupling").mode, pb::Mode::kCoupled);
  EXPECT_EQ(pb::load_preset("ctmc-small").mode, pb::Mode::kCtmc);
  EXPECT_EQ(pb::load_preset("fig5-fluid-left").mode, pb::Mode::kFluid);
}

TEST(Presets, OverrideConflictingKeysWithNotice) {
  const auto s = pb::parse_config("[experiment]\npreset=fig5-left\n[system]\nn=100\nsample_dt=0.5\n");
  EXPECT_EQ(s.n, 500);
  EXPECT_DOUBLE_EQ(s.sample_dt, 0.01);
  ASSERT_EQ(s.notices.size(), 2u);
  EXPECT_NE(s.notices[0].find("system.n"), std::string::npos);
}

TEST(RunExperiment, TuningReport) {
  auto s = pb::load_preset("tuning");
  s.output_dir = scratch_dir("tuning").string();
  pb::run_experiment(s);
  const auto text = slurp(fs::path(s.output_dir) / "tuning.csv");
  EXPECT_NE(text.find("0.9090909090909091"), std::string::npos) << text;
  EXPECT_NE(text.find(",true,5,"), std::string::npos) << text;
}

TEST(RunExperiment, ManifestListsEveryFileAndReruns) {
  auto s = pb::parse_config(
      "[experiment]\nseed=5\nreplications=3\n"
      "[system]\nn=50\nlambda=3.4\nhorizon=4\n"
      "[policy]\nkind=adaptive\nalpha=0.9\ncompare=jsq\n"
      "[output]\nhistogram=true\nerror=true\ndiffusion=true\n");
  const auto dir = scratch_dir("manifest");
  s.output_dir = dir.string();
  s.resolved.put("output.dir", s.output_dir);
  const auto m = pb::run_experiment(s, nullptr, 3);

  std::set<std::string> listed(m.files.begin(), m.files.end());
  std::set<std::string> on_disk;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().filename() != "manifest.txt") on_disk.insert(e.path().filename().string());
  EXPECT_EQ(listed, on_disk);
  const auto kv = read_manifest(dir);
  EXPECT_EQ(kv.at("replications"), "3");
  EXPECT_EQ(kv.at("replication.2.seed"), std::to_string(pb::replication_seed(5, 2)));

  // Re-run from the resolved document alone, single-threaded, elsewhere.
  auto again = pb::parse_config(slurp(dir / "resolved_config.ini"));
  const auto dir2 = scratch_dir("manifest_rerun");
  again.output_dir = dir2.string();
  pb::run_experiment(again, nullptr, 1);
  for (const auto& f : m.files) {
    if (f == "resolved_config.ini") continue;
    EXPECT_EQ(slurp(dir / f), slurp(dir2 / f)) << f;
  }
}

TEST(RunExperiment, FluidCoupledCtmc) {
  auto fluid = pb::load_preset("fig5-fluid-left");
  fluid.output_dir = scratch_dir("fluid").string();
  pb::run_experiment(fluid);
  const auto switches = slurp(fs::path(fluid.output_dir) / "fluid_switches.csv");
  EXPECT_NE(switches.find("\r\n"), std::string::npos);
  EXPECT_EQ(switches.substr(0, 11), "t,threshold");

  auto coupled = pb::load_preset("coupling");
  coupled.replications = 5;
  coupled.output_dir = scratch_dir("coupled").string();
  pb::run_experiment(coupled);
  std::ifstream in(fs::path(coupled.output_dir) / "summary.csv");
  std::string line;
  std::getline(in, line);
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(line.substr(line.rfind(',') + 1), "0\r");
  }
  EXPECT_EQ(rows, 5);

  auto ctmc = pb::load_preset("ctmc-small");
  ctmc.output_dir = scratch_dir("ctmc").string();
  pb::run_experiment(ctmc);
  EXPECT_TRUE(fs::exists(fs::path(ctmc.output_dir) / "stationary.csv"));
}

TEST(Csv, NumbersAndQuoting) {
  EXPECT_EQ(pb::format_number(0.1), "0.1");
  EXPECT_EQ(pb::format_number(2.0), "2");
  EXPECT_EQ(pb::format_number(std::uint64_t{18446744073709551615ULL}), "18446744073709551615");
  EXPECT_EQ(pb::csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(pb::csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(pb::csv_field("plain"), "plain");
}
