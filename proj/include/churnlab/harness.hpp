#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "churnlab/data.hpp"
#include "churnlab/losses.hpp"
#include "churnlab/metrics.hpp"
#include "churnlab/tensor_core.hpp"

namespace churnlab::harness {

struct DatasetSpec {
  enum class Kind { kBlobs, kCsv };
  Kind kind = Kind::kBlobs;
  int n_per_class = 200;
  int k = 3;
  int d = 2;
  double spread = 1.0;
  std::uint64_t seed = 7;
  std::string csv_path;
};

struct TrainSpec {
  int total_steps = 2000;
  int batch_size = 32;
  double augment_sigma = 0.1;
};

struct AblationFlags {
  bool fix_init = false;
  bool fix_order = false;
  bool fix_augment = false;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  std::vector<int> hidden = {32, 32};
  LrSchedule lr{0.05, 100, {1200, 1600}, 0.1};
  TrainSpec train;
  losses::MethodSpec method;
  int n_runs = 10;
  data::SeedBundle base_seed{1, 2, 3};
  AblationFlags fix;
  int jobs = 1;
  std::string out_dir;

  void validate() const;
  // Identity of the experiment: everything except out_dir and jobs.
  std::uint64_t digest() const;
  nlohmann::json to_json() const;
  // Rejects unknown keys with the offending dotted path.
  static ExperimentConfig from_json(const nlohmann::json& j);
};

struct RunArtifact {
  std::uint64_t config_digest = 0;
  std::string method;
  std::string train_cost;
  int run_index = 0;
  data::SeedBundle seeds;
  std::uint64_t params_digest = 0;
  std::uint64_t eval_digest = 0;
  ProbMatrix eval_probs;
  LabelVector eval_labels;
  double accuracy = 0.0;
  double mean_entropy = 0.0;
  double mean_confidence = 0.0;
  double wall_clock_sec = 0.0;
  int step_count = 0;
  bool failed = false;
  int failed_step = -1;
  std::string fail_reason;
};

struct Stat {
  double mean = 0.0;
  double stddev = 0.0;  // n-1 denominator; 0 when fewer than two samples
};

struct ExperimentSummary {
  std::uint64_t config_digest = 0;
  std::string method_name;
  std::string train_cost;  // "1x" | "2x" | "(n+1)x"
  int n_runs_requested = 0;
  int n_runs_used = 0;
  int n_failed = 0;

  struct PairReport {
    int i = 0;
    int j = 0;
    metrics::ChurnReport report;
  };
  std::vector<PairReport> pairs;

  // churn family aggregated over pairs; the rest over runs
  Stat churn, schurn1, churn_correct, churn_incorrect;
  Stat accuracy, ece, confidence, entropy;
};

// One deterministic training run. Co-distillation kinds train two models
// jointly and record model 1; ensemble_distill records the student. The
// artifact is persisted under config.out_dir (when set) before returning.
// Numeric divergence marks the artifact failed instead of throwing.
RunArtifact run_training(const ExperimentConfig& config, const data::SeedBundle& bundle,
                         int run_index = 0);

// n_runs runs on derived bundles (base + i on every non-fixed channel),
// pairwise churn reports, aggregation, persistence.
ExperimentSummary run_experiment(const ExperimentConfig& config);

// The 4-cell {fix_init} x {fix_order+augment} grid; the augmentation channel
// follows the order flag.
std::vector<ExperimentSummary> ablation_grid(const ExperimentConfig& config);

// Trains n_teachers baselines on teacher-derived bundles, averages their
// prediction probabilities, then trains one student against the averaged
// teacher with the distillation loss at the configured temperature.
RunArtifact ensemble_distill_run(const ExperimentConfig& config, const data::SeedBundle& bundle,
                                 int run_index = 0);

// Pairwise reports over >= 2 artifacts sharing one eval-set digest.
ExperimentSummary summarize_pairwise(const std::vector<RunArtifact>& artifacts);

// --- persistence -----------------------------------------------------------

std::string artifact_filename(const RunArtifact& a);
void save_artifact(const std::string& dir, const RunArtifact& a);
RunArtifact load_artifact(const std::string& path);

std::string summary_filename(const ExperimentSummary& s);
void save_summary(const std::string& dir, const ExperimentSummary& s);
ExperimentSummary load_summary(const std::string& path);

// Aligned text table in the accuracy/churn/schurn/slices/ece column layout.
std::string summary_table(const std::vector<ExperimentSummary>& summaries);
std::string ablation_table(const std::vector<ExperimentSummary>& cells);

// Helpers shared with the CLI.
data::Dataset make_dataset(const DatasetSpec& spec);
data::SeedBundle bundle_for_run(const ExperimentConfig& config, int run);
// Seed bundle the t-th ensemble teacher trains on (offset derivation, so the
// teachers never collide with run bundles).
data::SeedBundle teacher_bundle(const data::SeedBundle& bundle, int t);
std::string train_cost_label(const losses::MethodSpec& method);

}  // namespace churnlab::harness
