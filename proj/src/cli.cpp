#include "churnlab/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "churnlab/common.hpp"
#include "churnlab/harness.hpp"
#include "churnlab/probs_io.hpp"
#include "churnlab/serialize.hpp"

namespace churnlab::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "churnlab 0.1.0";

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string default_out_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("CHURNLAB_OUT"); env && *env) return env;
  return "churnlab_out";
}

// Applies one dotted-path override onto the config document. Values parse as
// JSON when possible (numbers, booleans, arrays), else as strings.
void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("--set expects key=value, got '" + assignment + "'");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);

  json* node = &doc;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ConfigError("--set path '" + path + "' has an empty segment");
    parts.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];

  json parsed = json::parse(value, nullptr, false);
  if (parsed.is_discarded() || parsed.is_object()) {
    (*node)[parts.back()] = value;  // plain string
  } else {
    (*node)[parts.back()] = parsed;
  }
}

harness::ExperimentConfig load_config(const std::string& config_path,
                                      const std::vector<std::string>& overrides,
                                      const std::string& out_flag, int runs_flag, int jobs_flag,
                                      long long seed_flag) {
  json doc = json::object();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot open config '" + config_path + "'");
    try {
      in >> doc;
    } catch (const json::exception& e) {
      throw ParseError("config '" + config_path + "': " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(doc, o);
  harness::ExperimentConfig cfg = harness::ExperimentConfig::from_json(doc);
  if (!out_flag.empty()) cfg.out_dir = out_flag;
  if (cfg.out_dir.empty()) cfg.out_dir = default_out_dir("");
  if (runs_flag > 0) cfg.n_runs = runs_flag;
  if (jobs_flag > 0) cfg.jobs = jobs_flag;
  if (seed_flag >= 0) {
    const auto s = static_cast<std::uint64_t>(seed_flag);
    cfg.base_seed = {s, s + 1, s + 2};
  }
  return cfg;
}

void write_manifest(const std::string& dir, const std::string& started,
                    std::uint64_t config_digest, bool has_config) {
  fs::create_directories(dir);
  json j;
  j["tool_version"] = kVersion;
  j["started_at"] = started;
  j["finished_at"] = utc_timestamp();
  if (has_config) j["config_digest"] = hex_u64(config_digest);
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << j.dump(2) << "\n";
}

// --- subcommand bodies ----------------------------------------------------

int cmd_gen_data(int n_per_class, int k, int d, double spread, long long seed,
                 const std::string& out_dir) {
  const auto started = utc_timestamp();
  const auto ds = data::gen_blobs(n_per_class, k, d, spread, static_cast<std::uint64_t>(seed));
  fs::create_directories(out_dir);
  const auto path = (fs::path(out_dir) / "data.csv").string();
  data::write_csv_file(path, ds);
  std::cout << "wrote " << ds.size() << " rows (" << ds.train_idx.size() << " train, "
            << ds.eval_idx.size() << " eval) to " << path << "\n";
  std::cout << "dataset digest: " << hex_u64(ds.digest()) << "\n";
  write_manifest(out_dir, started, 0, false);
  return 0;
}

int cmd_train(const harness::ExperimentConfig& cfg) {
  const auto started = utc_timestamp();
  const auto bundle = harness::bundle_for_run(cfg, 0);
  const auto artifact = harness::run_training(cfg, bundle, 0);
  write_manifest(cfg.out_dir, started, cfg.digest(), true);
  if (artifact.failed) {
    std::cerr << "run failed at step " << artifact.failed_step << ": " << artifact.fail_reason
              << "\n";
    return 2;
  }
  std::cout << "run " << harness::artifact_filename(artifact) << "\n"
            << "  accuracy:        " << format_double(artifact.accuracy) << "\n"
            << "  mean entropy:    " << format_double(artifact.mean_entropy) << "\n"
            << "  mean confidence: " << format_double(artifact.mean_confidence) << "\n"
            << "  params digest:   " << hex_u64(artifact.params_digest) << "\n";
  return 0;
}

int cmd_experiment(const harness::ExperimentConfig& cfg) {
  const auto started = utc_timestamp();
  const auto summary = harness::run_experiment(cfg);
  write_manifest(cfg.out_dir, started, cfg.digest(), true);
  std::cout << harness::summary_table({summary});
  if (summary.n_failed > 0) {
    std::cerr << "warning: " << summary.n_failed << " run(s) failed and were excluded\n";
  }
  return 0;
}

int cmd_ablate(const harness::ExperimentConfig& cfg) {
  const auto started = utc_timestamp();
  const auto cells = harness::ablation_grid(cfg);
  write_manifest(cfg.out_dir, started, cfg.digest(), true);
  std::cout << harness::ablation_table(cells);
  return 0;
}

int cmd_report(const std::string& run_dir) {
  std::vector<harness::ExperimentSummary> summaries;
  if (fs::is_directory(run_dir)) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(run_dir)) {
      const auto name = entry.path().filename().string();
      if (name.rfind("summary_", 0) == 0 && entry.path().extension() == ".json") {
        files.push_back(entry.path().string());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) summaries.push_back(harness::load_summary(f));
  }
  if (summaries.empty()) {
    throw UsageError("no experiment summaries found under '" + run_dir + "'");
  }
  const std::string table = harness::summary_table(summaries);
  std::cout << table;

  // CSV mirror of the table, full precision.
  std::ofstream csv(fs::path(run_dir) / "report.csv");
  csv << "method,train_cost,accuracy,accuracy_std,churn,churn_std,schurn1,schurn1_std,"
         "churn_correct,churn_incorrect,ece\n";
  for (const auto& s : summaries) {
    csv << s.method_name << ',' << s.train_cost << ',' << format_double(s.accuracy.mean) << ','
        << format_double(s.accuracy.stddev) << ',' << format_double(s.churn.mean) << ','
        << format_double(s.churn.stddev) << ',' << format_double(s.schurn1.mean) << ','
        << format_double(s.schurn1.stddev) << ',' << format_double(s.churn_correct.mean) << ','
        << format_double(s.churn_incorrect.mean) << ',' << format_double(s.ece.mean) << "\n";
  }
  return 0;
}

int cmd_landscape(const std::string& out_dir, std::vector<double> alphas,
                  std::vector<double> taus, std::vector<double> ps) {
  const auto started = utc_timestamp();
  if (alphas.empty()) alphas = {0.0, 0.25, 0.5, 0.75, 1.0};
  if (taus.empty()) taus = {0.5, 1.0, 2.0, 4.0};
  if (ps.empty()) {
    for (int i = 1; i < 100; ++i) ps.push_back(i / 100.0);
  }
  const auto samples = losses::landscape_scan(alphas, taus, ps);
  fs::create_directories(out_dir);
  const auto path = (fs::path(out_dir) / "curves.csv").string();
  std::ofstream out(path);
  losses::write_curves_csv(out, samples);
  std::cout << "wrote " << samples.size() << " curve samples to " << path << "\n";
  write_manifest(out_dir, started, 0, false);
  return 0;
}

int cmd_audit(const std::vector<std::string>& pred_files, const std::string& labels_file) {
  if (pred_files.size() != 2) {
    throw UsageError("audit needs exactly two --preds files, got " +
                     std::to_string(pred_files.size()));
  }
  auto [p1, l1] = read_probs_csv_file(pred_files[0]);
  auto [p2, l2] = read_probs_csv_file(pred_files[1]);
  LabelVector labels = labels_file.empty() ? l1 : read_labels_csv_file(labels_file);

  const auto audit = metrics::audit_bounds(p1, p2, labels);
  const auto flag = [](bool ok, int witness) {
    return ok ? std::string("ok") : "VIOLATED at row " + std::to_string(witness);
  };
  std::cout << "rows audited:            " << p1.n << "\n"
            << "churn <= err1 + err2:    " << flag(audit.lemma1_ok, audit.lemma1_witness)
            << "  (slack " << format_double(audit.lemma1_slack) << ")\n"
            << "disagree => l1 > min(g): " << flag(audit.lemma2_ok, audit.lemma2_witness) << "\n"
            << "pinsker l1 <= sqrt(2kl): " << flag(audit.pinsker_ok, audit.pinsker_witness)
            << "\n"
            << "churn: " << format_double(metrics::churn(p1, p2)) << "\n";
  return audit.all_ok() ? 0 : 2;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"churn measurement and churn-reduction training toolkit"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  // shared options
  std::string config_path, out_flag;
  std::vector<std::string> overrides;
  int runs_flag = 0, jobs_flag = 0;
  long long seed_flag = -1;

  const auto add_config_opts = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON experiment config");
    sub->add_option("--set", overrides, "dotted-path override key=value")->take_all();
    sub->add_option("--out", out_flag, "output directory (default $CHURNLAB_OUT)");
    sub->add_option("--seed", seed_flag, "base seed; sets init/order/augment to s, s+1, s+2");
    sub->add_option("--runs", runs_flag, "number of runs");
    sub->add_option("--jobs", jobs_flag, "parallel runs");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a blob dataset CSV");
  int gd_n = 200, gd_k = 3, gd_d = 2;
  double gd_spread = 1.0;
  long long gd_seed = 7;
  std::string gd_out;
  gen->add_option("--n-per-class", gd_n, "examples per class");
  gen->add_option("--k", gd_k, "class count");
  gen->add_option("--d", gd_d, "feature dimension");
  gen->add_option("--spread", gd_spread, "cluster stddev");
  gen->add_option("--seed", gd_seed, "dataset seed");
  gen->add_option("--out", gd_out, "output directory");

  auto* train = app.add_subcommand("train", "run one training run");
  add_config_opts(train);

  auto* experiment = app.add_subcommand("experiment", "multi-seed experiment with churn summary");
  add_config_opts(experiment);

  auto* ablate = app.add_subcommand("ablate", "4-cell seed-channel ablation grid");
  add_config_opts(ablate);

  auto* report = app.add_subcommand("report", "tabulate experiment summaries in a directory");
  std::string report_dir;
  report->add_option("dir", report_dir, "directory with summary_*.json")->required();

  auto* landscape = app.add_subcommand("landscape", "emit loss-landscape curve samples");
  std::string ls_out;
  std::vector<double> ls_alphas, ls_taus, ls_ps;
  landscape->add_option("--out", ls_out, "output directory");
  landscape->add_option("--alphas", ls_alphas, "alpha grid")->delimiter(',');
  landscape->add_option("--taus", ls_taus, "temperature grid")->delimiter(',');
  landscape->add_option("--ps", ls_ps, "probability grid in (0,1)")->delimiter(',');

  auto* audit = app.add_subcommand("audit", "check churn bounds on two prediction files");
  std::vector<std::string> audit_preds;
  std::string audit_labels;
  audit->add_option("--preds", audit_preds, "prediction CSV (give twice)")->take_all();
  audit->add_option("--labels", audit_labels, "label CSV overriding the preds label column");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help / --version
      return app.exit(e);
    }
    app.exit(e);
    return 1;
  }

  try {
    if (*gen) {
      return cmd_gen_data(gd_n, gd_k, gd_d, gd_spread, gd_seed, default_out_dir(gd_out));
    }
    if (*train || *experiment || *ablate) {
      const auto cfg =
          load_config(config_path, overrides, out_flag, runs_flag, jobs_flag, seed_flag);
      if (*train) return cmd_train(cfg);
      if (*experiment) return cmd_experiment(cfg);
      return cmd_ablate(cfg);
    }
    if (*report) return cmd_report(report_dir);
    if (*landscape) return cmd_landscape(default_out_dir(ls_out), ls_alphas, ls_taus, ls_ps);
    if (*audit) return cmd_audit(audit_preds, audit_labels);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace churnlab::cli
