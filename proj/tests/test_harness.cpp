#include "churnlab/harness.hpp"

#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "churnlab/metrics.hpp"
#include "churnlab/serialize.hpp"

using namespace churnlab;
using namespace churnlab::harness;

namespace fs = std::filesystem;

namespace {

// Small, fast experiment shape shared by the tests here.
ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.dataset = {DatasetSpec::Kind::kBlobs, 40, 3, 2, 1.0, 3, ""};
  cfg.hidden = {8};
  cfg.lr = LrSchedule{0.05, 10, {200}, 0.1};
  cfg.train = {250, 16, 0.1};
  cfg.n_runs = 3;
  cfg.base_seed = {1, 2, 3};
  cfg.out_dir = "";
  return cfg;
}

std::string temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

RunArtifact fake_artifact(int run, const ProbMatrix& probs, const LabelVector& labels,
                          std::uint64_t eval_digest) {
  RunArtifact a;
  a.config_digest = 42;
  a.method = "baseline";
  a.train_cost = "1x";
  a.run_index = run;
  a.eval_digest = eval_digest;
  a.eval_probs = probs;
  a.eval_labels = labels;
  a.accuracy = metrics::accuracy(probs, labels);
  a.mean_entropy = metrics::mean_entropy(probs);
  a.mean_confidence = metrics::mean_confidence(probs);
  return a;
}

ProbMatrix probs_of(const std::vector<std::vector<double>>& rows) {
  ProbMatrix p(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      p.at(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
    }
  }
  return p;
}

}  // namespace

TEST_CASE("run_training is bit-deterministic") {
  const auto cfg = tiny_config();
  const data::SeedBundle bundle{5, 6, 7};
  const auto a = run_training(cfg, bundle);
  const auto b = run_training(cfg, bundle);
  REQUIRE_FALSE(a.failed);
  CHECK(a.params_digest == b.params_digest);
  CHECK(a.eval_probs.p == b.eval_probs.p);
  CHECK(a.eval_digest == b.eval_digest);
  CHECK(a.accuracy == b.accuracy);
}

TEST_CASE("beta=0 co-distillation reproduces the baseline model 1 bit-exactly") {
  auto cfg = tiny_config();
  const data::SeedBundle bundle{11, 12, 13};
  const auto base = run_training(cfg, bundle);

  for (auto kind : {losses::MethodKind::kCodistillSkl, losses::MethodKind::kCodistillL1,
                    losses::MethodKind::kCodistillCeIndependent}) {
    cfg.method = losses::MethodSpec{};
    cfg.method.kind = kind;
    cfg.method.beta = 0.0;
    const auto coupled = run_training(cfg, bundle);
    REQUIRE_FALSE(coupled.failed);
    CHECK(coupled.params_digest == base.params_digest);
    CHECK(coupled.eval_probs.p == base.eval_probs.p);
    CHECK(coupled.accuracy == base.accuracy);
  }

  // alpha=0 endpoints for the single-model regularizers
  for (auto kind : {losses::MethodKind::kEntropy, losses::MethodKind::kSkl}) {
    cfg.method = losses::MethodSpec{};
    cfg.method.kind = kind;
    cfg.method.alpha = 0.0;
    const auto reg = run_training(cfg, bundle);
    CHECK(reg.params_digest == base.params_digest);
    CHECK(reg.eval_probs.p == base.eval_probs.p);
  }
}

TEST_CASE("experiment pair counts and all-fixed zero churn") {
  auto cfg = tiny_config();
  cfg.n_runs = 2;
  const auto s2 = run_experiment(cfg);
  CHECK(s2.pairs.size() == 1);

  cfg.n_runs = 5;
  cfg.fix = {true, true, true};
  const auto s5 = run_experiment(cfg);
  CHECK(s5.pairs.size() == 10);
  CHECK(s5.churn.mean == 0.0);
  CHECK(s5.churn.stddev == 0.0);
  CHECK(s5.schurn1.mean == 0.0);
  CHECK(s5.accuracy.stddev == 0.0);
}

TEST_CASE("fixed init channel pins the step-0 parameter digest") {
  auto cfg = tiny_config();
  cfg.fix = {true, false, false};
  const auto b0 = bundle_for_run(cfg, 0);
  const auto b3 = bundle_for_run(cfg, 3);
  CHECK(b0.init_seed == b3.init_seed);
  CHECK(b0.order_seed != b3.order_seed);
  CHECK(ModelParams::init({2, 8, 3}, b0.init_seed).digest() ==
        ModelParams::init({2, 8, 3}, b3.init_seed).digest());
}

TEST_CASE("summarize_pairwise oracle on hand-built artifacts") {
  const auto pa = probs_of({{0.9, 0.1}, {0.8, 0.2}, {0.3, 0.7}, {0.6, 0.4}});
  const auto pb = probs_of({{0.9, 0.1}, {0.2, 0.8}, {0.3, 0.7}, {0.6, 0.4}});
  const auto pc = probs_of({{0.1, 0.9}, {0.8, 0.2}, {0.3, 0.7}, {0.4, 0.6}});
  const LabelVector labels({0, 0, 1, 1});

  const std::vector<RunArtifact> arts = {fake_artifact(0, pa, labels, 99),
                                         fake_artifact(1, pb, labels, 99),
                                         fake_artifact(2, pc, labels, 99)};
  const auto s = summarize_pairwise(arts);
  REQUIRE(s.pairs.size() == 3);
  // churn(a,b) = 1/4; churn(a,c) = 2/4; churn(b,c) = 3/4
  CHECK(s.pairs[0].report.churn == 0.25);
  CHECK(s.pairs[1].report.churn == 0.5);
  CHECK(s.pairs[2].report.churn == 0.75);
  CHECK(s.churn.mean == doctest::Approx(0.5).epsilon(1e-15));

  // duplicated artifacts: zero churn
  const std::vector<RunArtifact> dup = {fake_artifact(0, pa, labels, 99),
                                        fake_artifact(1, pa, labels, 99)};
  CHECK(summarize_pairwise(dup).churn.mean == 0.0);

  // mismatched eval digests are rejected
  const std::vector<RunArtifact> mixed = {fake_artifact(0, pa, labels, 99),
                                          fake_artifact(1, pb, labels, 100)};
  CHECK_THROWS_AS(summarize_pairwise(mixed), UsageError);

  const std::vector<RunArtifact> one = {fake_artifact(0, pa, labels, 99)};
  CHECK_THROWS_AS(summarize_pairwise(one), UsageError);
}

TEST_CASE("artifact persistence round-trips and summaries recompute bit-exactly") {
  const auto dir = temp_dir("churnlab_test_persist");
  auto cfg = tiny_config();
  cfg.out_dir = dir;
  cfg.n_runs = 3;
  const auto summary = run_experiment(cfg);

  // reload artifacts from disk, re-summarize, compare everything
  std::vector<RunArtifact> loaded;
  for (int i = 0; i < cfg.n_runs; ++i) {
    RunArtifact probe;
    probe.config_digest = cfg.digest();
    probe.run_index = i;
    loaded.push_back(load_artifact((fs::path(dir) / artifact_filename(probe)).string()));
    CHECK(loaded.back().eval_probs.p ==
          run_training(cfg, bundle_for_run(cfg, i), i).eval_probs.p);
  }
  const auto recomputed = summarize_pairwise(loaded);
  CHECK(recomputed.churn.mean == summary.churn.mean);
  CHECK(recomputed.churn.stddev == summary.churn.stddev);
  CHECK(recomputed.schurn1.mean == summary.schurn1.mean);
  CHECK(recomputed.accuracy.mean == summary.accuracy.mean);
  CHECK(recomputed.ece.mean == summary.ece.mean);
  CHECK(recomputed.entropy.mean == summary.entropy.mean);
  CHECK(recomputed.confidence.mean == summary.confidence.mean);
  REQUIRE(recomputed.pairs.size() == summary.pairs.size());
  for (std::size_t p = 0; p < summary.pairs.size(); ++p) {
    CHECK(recomputed.pairs[p].report.churn == summary.pairs[p].report.churn);
    CHECK(recomputed.pairs[p].report.schurn.at(1.0) == summary.pairs[p].report.schurn.at(1.0));
  }

  // summary JSON round-trip
  const auto loaded_summary = load_summary((fs::path(dir) / summary_filename(summary)).string());
  CHECK(loaded_summary.churn.mean == summary.churn.mean);
  CHECK(loaded_summary.churn.stddev == summary.churn.stddev);
  CHECK(loaded_summary.pairs.size() == summary.pairs.size());
  CHECK(loaded_summary.method_name == summary.method_name);
  CHECK(loaded_summary.train_cost == summary.train_cost);
  fs::remove_all(dir);
}

TEST_CASE("parallel runs give the same artifacts as serial") {
  auto cfg = tiny_config();
  cfg.n_runs = 4;
  cfg.jobs = 1;
  const auto serial = run_experiment(cfg);
  cfg.jobs = 4;
  const auto parallel = run_experiment(cfg);
  CHECK(serial.churn.mean == parallel.churn.mean);
  CHECK(serial.accuracy.mean == parallel.accuracy.mean);
  CHECK(serial.entropy.mean == parallel.entropy.mean);
}

TEST_CASE("ensemble distillation artifacts") {
  auto cfg = tiny_config();
  cfg.method.kind = losses::MethodKind::kEnsembleDistill;
  cfg.method.temperature = 2.0;
  cfg.method.n_teachers = 2;
  const auto student = ensemble_distill_run(cfg, {21, 22, 23});
  REQUIRE_FALSE(student.failed);
  CHECK(student.train_cost == "3x");
  student.eval_probs.validate();  // student rows are on the simplex
  CHECK(student.accuracy > 0.4);

  // two-teacher student keeps accuracy within 2% of the best single teacher
  auto teacher_cfg = tiny_config();
  double best_teacher = 0.0;
  for (int t = 0; t < 2; ++t) {
    const auto teacher = run_training(teacher_cfg, teacher_bundle({21, 22, 23}, t));
    REQUIRE_FALSE(teacher.failed);
    best_teacher = std::max(best_teacher, teacher.accuracy);
  }
  CHECK(student.accuracy >= best_teacher - 0.02);

  // wrong method kind is rejected
  auto bad = tiny_config();
  CHECK_THROWS_AS(ensemble_distill_run(bad, {1, 2, 3}), UsageError);
}

TEST_CASE("distilled student tracks its teacher closer than independent runs") {
  // degenerate single-teacher setup at tau=1, allowed for tests
  auto cfg = tiny_config();
  cfg.method.kind = losses::MethodKind::kEnsembleDistill;
  cfg.method.n_teachers = 1;
  cfg.method.temperature = 1.0;
  const data::SeedBundle bundle{41, 42, 43};
  const auto student = ensemble_distill_run(cfg, bundle);
  REQUIRE_FALSE(student.failed);

  auto base_cfg = tiny_config();
  const auto teacher = run_training(base_cfg, teacher_bundle(bundle, 0));
  const auto indep_a = run_training(base_cfg, bundle);
  const auto indep_b = run_training(base_cfg, teacher_bundle(bundle, 0));

  const double student_vs_teacher = metrics::churn(student.eval_probs, teacher.eval_probs);
  const double indep_vs_indep = metrics::churn(indep_a.eval_probs, indep_b.eval_probs);
  CHECK(student_vs_teacher <= indep_vs_indep);
}

TEST_CASE("entropy regularizer training lowers mean eval entropy") {
  auto cfg = tiny_config();
  const data::SeedBundle bundle{51, 52, 53};
  const auto base = run_training(cfg, bundle);
  cfg.method.kind = losses::MethodKind::kEntropy;
  cfg.method.alpha = 0.3;
  const auto sharpened = run_training(cfg, bundle);
  REQUIRE_FALSE(sharpened.failed);
  CHECK(sharpened.mean_entropy < base.mean_entropy);
  CHECK(sharpened.mean_confidence > base.mean_confidence);
}

TEST_CASE("ablation grid runs the four Table-layout cells") {
  auto cfg = tiny_config();
  cfg.n_runs = 2;
  cfg.train.total_steps = 60;
  const auto cells = ablation_grid(cfg);
  REQUIRE(cells.size() == 4);
  // the all-fixed cell is exactly zero churn on the deterministic core
  CHECK(cells[3].churn.mean == 0.0);
  CHECK(cells[3].churn.stddev == 0.0);
  const auto table = ablation_table(cells);
  CHECK(table.find("Identical minibatch order") != std::string::npos);
  CHECK(table.find("Churn %") != std::string::npos);
}

TEST_CASE("config json round-trip, overrides, digest") {
  auto cfg = tiny_config();
  cfg.method.kind = losses::MethodKind::kCodistillSkl;
  cfg.method.beta = 0.04;
  const auto j = cfg.to_json();
  const auto back = ExperimentConfig::from_json(j);
  CHECK(back.digest() == cfg.digest());
  CHECK(back.method.beta == cfg.method.beta);
  CHECK(back.dataset.spread == cfg.dataset.spread);

  // out_dir and jobs do not change the experiment identity
  auto moved = cfg;
  moved.out_dir = "/elsewhere";
  moved.jobs = 8;
  CHECK(moved.digest() == cfg.digest());

  // unknown keys are hard errors naming the path
  auto bad = j;
  bad["method"]["alhpa"] = 0.2;
  try {
    ExperimentConfig::from_json(bad);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("method.alhpa") != std::string::npos);
  }

  auto bad2 = j;
  bad2["lr"]["decay_steps"] = "soon";
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad2), ConfigError);
}

TEST_CASE("config validation rejects inconsistent settings") {
  auto cfg = tiny_config();
  cfg.n_runs = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = tiny_config();
  cfg.train.total_steps = 5;  // below warmup
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = tiny_config();
  cfg.lr.decay_steps = {200, 100};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = tiny_config();
  cfg.method.kind = losses::MethodKind::kBaseline;
  cfg.method.beta = 0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
