#include "churnlab/cli.hpp"

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "churnlab/data.hpp"
#include "churnlab/harness.hpp"
#include "churnlab/probs_io.hpp"

using namespace churnlab;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv = {"churnlab"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

}  // namespace

TEST_CASE("gen-data writes a loadable csv") {
  const auto dir = temp_dir("churnlab_cli_gen");
  CHECK(run_cli({"gen-data", "--n-per-class", "30", "--k", "2", "--d", "3", "--seed", "5",
                 "--out", dir}) == 0);
  const auto ds = data::load_csv((fs::path(dir) / "data.csv").string());
  CHECK(ds.size() == 60);
  CHECK(ds.dim() == 3);
  CHECK(fs::exists(fs::path(dir) / "manifest.json"));
  fs::remove_all(dir);
}

TEST_CASE("experiment subcommand equals the direct library call") {
  const auto dir = temp_dir("churnlab_cli_exp");
  const auto cfg_path = (fs::path(dir) / "exp.json").string();
  {
    std::ofstream out(cfg_path);
    out << R"({
      "dataset": {"kind": "blobs", "n_per_class": 40, "k": 3, "d": 2, "spread": 1.0, "seed": 3},
      "net": {"hidden": [8]},
      "lr": {"peak": 0.05, "warmup_steps": 10, "decay_steps": [200], "decay_factor": 0.1},
      "train": {"total_steps": 250, "batch_size": 16, "augment_sigma": 0.1},
      "runs": {"n_runs": 2, "init_seed": 1, "order_seed": 2, "augment_seed": 3}
    })";
  }
  const auto cli_out = (fs::path(dir) / "cli").string();
  CHECK(run_cli({"experiment", "--config", cfg_path, "--set", "method.kind=codistill_skl",
                 "--set", "method.beta=0.04", "--out", cli_out}) == 0);

  // same config through the library
  harness::ExperimentConfig cfg;
  {
    std::ifstream in(cfg_path);
    nlohmann::json j;
    in >> j;
    j["method"]["kind"] = "codistill_skl";
    j["method"]["beta"] = 0.04;
    cfg = harness::ExperimentConfig::from_json(j);
  }
  cfg.out_dir = (fs::path(dir) / "lib").string();
  const auto lib_summary = harness::run_experiment(cfg);

  // the CLI must have produced the same experiment identity and numbers
  harness::ExperimentSummary cli_summary;
  bool found = false;
  for (const auto& entry : fs::directory_iterator(cli_out)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("summary_", 0) == 0 && entry.path().extension() == ".json") {
      cli_summary = harness::load_summary(entry.path().string());
      found = true;
    }
  }
  REQUIRE(found);
  CHECK(cli_summary.config_digest == lib_summary.config_digest);
  CHECK(cli_summary.churn.mean == lib_summary.churn.mean);
  CHECK(cli_summary.churn.stddev == lib_summary.churn.stddev);
  CHECK(cli_summary.accuracy.mean == lib_summary.accuracy.mean);
  CHECK(cli_summary.entropy.mean == lib_summary.entropy.mean);

  // report over the CLI output dir
  CHECK(run_cli({"report", cli_out}) == 0);
  CHECK(fs::exists(fs::path(cli_out) / "report.csv"));
  CHECK(fs::exists(fs::path(cli_out) / "manifest.json"));
  fs::remove_all(dir);
}

TEST_CASE("bad invocations exit 1") {
  CHECK(run_cli({"frobnicate"}) == 1);
  CHECK(run_cli({"report", "/nonexistent_dir_for_churnlab_test"}) == 1);

  const auto dir = temp_dir("churnlab_cli_bad");
  const auto cfg_path = (fs::path(dir) / "bad.json").string();
  {
    std::ofstream out(cfg_path);
    out << R"({"method": {"kind": "baseline", "alhpa": 0.3}})";
  }
  CHECK(run_cli({"experiment", "--config", cfg_path, "--out", dir}) == 1);
  CHECK(run_cli({"experiment", "--config", cfg_path, "--set", "oops", "--out", dir}) == 1);
  fs::remove_all(dir);
}

TEST_CASE("landscape emits the curves csv") {
  const auto dir = temp_dir("churnlab_cli_landscape");
  CHECK(run_cli({"landscape", "--out", dir, "--alphas", "0,0.5", "--taus", "2", "--ps",
                 "0.25,0.5,0.75"}) == 0);
  std::ifstream in(fs::path(dir) / "curves.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "kind,param,x,loss");
  int lines = 0;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) ++lines;
  }
  CHECK(lines == 2 * 3 + 1 * 3);
  fs::remove_all(dir);
}

TEST_CASE("audit wires to the bound checks") {
  const auto dir = temp_dir("churnlab_cli_audit");
  ProbMatrix p1(3, 2), p2(3, 2);
  p1.p = {0.9, 0.1, 0.3, 0.7, 0.5, 0.5};
  p2.p = {0.8, 0.2, 0.4, 0.6, 0.5, 0.5};
  const LabelVector labels({0, 1, 0});
  const auto a_path = (fs::path(dir) / "a.csv").string();
  const auto b_path = (fs::path(dir) / "b.csv").string();
  write_probs_csv_file(a_path, p1, labels);
  write_probs_csv_file(b_path, p2, labels);
  CHECK(run_cli({"audit", "--preds", a_path, "--preds", b_path}) == 0);

  const auto y_path = (fs::path(dir) / "y.csv").string();
  {
    std::ofstream out(y_path);
    out << "label\n0\n1\n0\n";
  }
  CHECK(run_cli({"audit", "--preds", a_path, "--preds", b_path, "--labels", y_path}) == 0);
  CHECK(run_cli({"audit", "--preds", a_path}) == 1);
  fs::remove_all(dir);
}
