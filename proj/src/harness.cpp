#include "churnlab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "churnlab/common.hpp"
#include "churnlab/probs_io.hpp"
#include "churnlab/serialize.hpp"

namespace churnlab::harness {

namespace fs = std::filesystem;
using losses::MethodKind;
using nlohmann::json;

namespace {

// Seed derivation constants. Run bundles use base + run_index per channel, so
// these offsets are large enough to stay clear of any realistic run count.
constexpr std::uint64_t kPartnerInitOffset = 0x9E3779B9ULL;  // second co-distilled model
constexpr std::uint64_t kTeacherSeedStride = 1000003ULL;     // ensemble teachers

// Probability matrices above this row count go to a sidecar CSV.
constexpr int kSidecarRows = 10000;

// ---------------------------------------------------------------------------
// JSON helpers
// ---------------------------------------------------------------------------

// Tracks which keys a parser consumed; leftovers are hard errors naming the
// dotted path.
class KeyChecker {
 public:
  KeyChecker(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be a JSON object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path_ + "." + key + " has the wrong type");
    }
  }

  const json& child(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) {
        throw ConfigError("unknown config key '" + path_ + "." + item.key() + "'");
      }
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Stat make_stat(const std::vector<double>& xs) {
  Stat s;
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(xs.size());
  if (xs.size() < 2) return s;
  double sq = 0.0;
  for (double x : xs) sq += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(sq / static_cast<double>(xs.size() - 1));
  return s;
}

void write_atomically(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ParseError("cannot write '" + tmp + "'");
    out << contents;
  }
  fs::rename(tmp, path);
}

// Thrown inside training loops so the harness can mark the run failed.
struct Diverged {
  int step;
  std::string reason;
};

// ---------------------------------------------------------------------------
// Batch stream: minibatch order + augmentation channels
// ---------------------------------------------------------------------------

class BatchStream {
 public:
  BatchStream(const data::Dataset& ds, const TrainSpec& train, const data::SeedBundle& bundle)
      : ds_(ds),
        train_(train),
        bundle_(bundle),
        n_train_(static_cast<int>(ds.train_idx.size())),
        batches_per_epoch_((n_train_ + train.batch_size - 1) / train.batch_size) {
    if (n_train_ < 1) throw ConfigError("dataset has no training rows");
  }

  struct Batch {
    Mat features;
    LabelVector labels;
    std::vector<int> rows;  // global dataset row ids
  };

  Batch at_step(int step) {
    const int epoch = step / batches_per_epoch_;
    const int batch_index = step % batches_per_epoch_;
    if (epoch != cached_epoch_) {
      perm_ = data::epoch_order(bundle_.order_seed, epoch, n_train_);
      cached_epoch_ = epoch;
    }
    const int begin = batch_index * train_.batch_size;
    const int end = std::min(n_train_, begin + train_.batch_size);
    Batch b;
    b.rows.reserve(static_cast<std::size_t>(end - begin));
    for (int t = begin; t < end; ++t) {
      b.rows.push_back(ds_.train_idx[static_cast<std::size_t>(perm_[static_cast<std::size_t>(t)])]);
    }
    b.features = data::augment(ds_.gather_features(b.rows), bundle_.augment_seed, epoch,
                               batch_index, train_.augment_sigma);
    b.labels = ds_.gather_labels(b.rows);
    return b;
  }

 private:
  const data::Dataset& ds_;
  const TrainSpec& train_;
  data::SeedBundle bundle_;
  int n_train_;
  int batches_per_epoch_;
  int cached_epoch_ = -1;
  std::vector<int> perm_;
};

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

std::vector<int> net_dims(const ExperimentConfig& cfg, const data::Dataset& ds) {
  std::vector<int> dims;
  dims.push_back(ds.dim());
  for (int h : cfg.hidden) dims.push_back(h);
  dims.push_back(ds.num_classes);
  return dims;
}

losses::RampSchedule linear_ramp(double cap, double slope_hint, int total_steps) {
  losses::RampSchedule r;
  r.cap = cap;
  // default slope saturates the coefficient after 10% of training
  r.slope_c = slope_hint > 0.0 ? slope_hint : cap / (0.1 * static_cast<double>(total_steps));
  return r;
}

ModelParams train_single(const ExperimentConfig& cfg, const data::Dataset& ds,
                         const data::SeedBundle& bundle, const losses::MethodSpec& method) {
  ModelParams params = ModelParams::init(net_dims(cfg, ds), bundle.init_seed);
  OptState state(params.param_count());
  BatchStream stream(ds, cfg.train, bundle);
  for (int step = 0; step < cfg.train.total_steps; ++step) {
    try {
      const auto batch = stream.at_step(step);
      Tape tape;
      const NodeId probs = mlp_probs_node(tape, params, batch.features, 0);
      NodeId loss;
      switch (method.kind) {
        case MethodKind::kEntropy:
          loss = losses::entropy_regularized_loss(tape, probs, batch.labels, method.alpha,
                                                  method.top_k);
          break;
        case MethodKind::kSkl:
          loss = losses::skl_regularized_loss(tape, probs, batch.labels, method.alpha,
                                              method.top_k);
          break;
        default:
          loss = losses::ce_loss(tape, probs, batch.labels);
          break;
      }
      const auto grads = compute_gradients(tape, loss);
      optimizer_step(params, grads, state, lr_at(cfg.lr, step));
    } catch (const NumericError& e) {
      throw Diverged{step, e.what()};
    }
  }
  return params;
}

ModelParams params_from_values(const ModelParams& like, const std::vector<double>& values) {
  ModelParams p;
  p.layer_shapes = like.layer_shapes;
  p.values = values;
  return p;
}

// Joint or independent two-model training; returns model 1.
ModelParams train_pair(const ExperimentConfig& cfg, const data::Dataset& ds,
                       const data::SeedBundle& bundle) {
  const auto& method = cfg.method;
  const auto dims = net_dims(cfg, ds);
  ModelParams params1 = ModelParams::init(dims, bundle.init_seed);
  ModelParams params2 = ModelParams::init(dims, bundle.init_seed + kPartnerInitOffset);
  const std::size_t p_count = params1.param_count();
  OptState state1(p_count), state2(p_count);
  BatchStream stream(ds, cfg.train, bundle);

  const auto beta_ramp = linear_ramp(method.beta, method.ramp_c, cfg.train.total_steps);
  // The entropy side of the combined objective ramps over the whole run, so
  // sharpening only reaches full strength once the coupling has stabilized
  // the pair.
  const auto alpha_ramp =
      linear_ramp(method.alpha, method.alpha / static_cast<double>(cfg.train.total_steps),
                  cfg.train.total_steps);

  // Stale parameter history for independent updates: front() is the state
  // max(0, t - stale_t) steps ago.
  std::deque<std::vector<double>> hist1, hist2;

  for (int step = 0; step < cfg.train.total_steps; ++step) {
    try {
      const auto batch = stream.at_step(step);
      const double beta_t = losses::coefficient_at(beta_ramp, step);
      const double lr = lr_at(cfg.lr, step);

      if (method.kind == MethodKind::kCodistillCeIndependent) {
        hist1.push_back(params1.values);
        hist2.push_back(params2.values);
        while (static_cast<int>(hist1.size()) > method.stale_t + 1) hist1.pop_front();
        while (static_cast<int>(hist2.size()) > method.stale_t + 1) hist2.pop_front();
        const ProbMatrix teacher_for_1 =
            forward_probs(params_from_values(params2, hist2.front()), batch.features);
        const ProbMatrix teacher_for_2 =
            forward_probs(params_from_values(params1, hist1.front()), batch.features);

        Tape tape1;
        const NodeId probs1 = mlp_probs_node(tape1, params1, batch.features, 0);
        const NodeId loss1 = losses::codistill_ce_independent_loss(tape1, probs1, teacher_for_1,
                                                                   batch.labels, beta_t);
        const auto grads1 = compute_gradients(tape1, loss1);

        Tape tape2;
        const NodeId probs2 = mlp_probs_node(tape2, params2, batch.features, 0);
        const NodeId loss2 = losses::codistill_ce_independent_loss(tape2, probs2, teacher_for_2,
                                                                   batch.labels, beta_t);
        const auto grads2 = compute_gradients(tape2, loss2);

        optimizer_step(params1, grads1, state1, lr);
        optimizer_step(params2, grads2, state2, lr);
      } else {
        Tape tape;
        const NodeId probs1 = mlp_probs_node(tape, params1, batch.features, 0);
        const NodeId probs2 = mlp_probs_node(tape, params2, batch.features, p_count);
        NodeId loss;
        if (method.kind == MethodKind::kCombined) {
          const double alpha_t = losses::coefficient_at(alpha_ramp, step);
          loss = losses::combined_loss(tape, probs1, probs2, batch.labels, alpha_t, beta_t,
                                       method.combined_reg);
        } else {
          const auto variant = method.kind == MethodKind::kCodistillL1
                                   ? losses::CodistillVariant::kL1
                                   : losses::CodistillVariant::kSkl;
          loss = losses::codistill_loss(tape, probs1, probs2, batch.labels, beta_t, variant);
        }
        const auto grads = compute_gradients(tape, loss);
        const std::span<const double> gspan(grads);
        optimizer_step(params1, gspan.first(p_count), state1, lr);
        optimizer_step(params2, gspan.subspan(p_count), state2, lr);
      }
    } catch (const NumericError& e) {
      throw Diverged{step, e.what()};
    }
  }
  return params1;
}

ModelParams train_distill_student(const ExperimentConfig& cfg, const data::Dataset& ds,
                                  const data::SeedBundle& bundle, const ProbMatrix& teacher_all) {
  ModelParams params = ModelParams::init(net_dims(cfg, ds), bundle.init_seed);
  OptState state(params.param_count());
  BatchStream stream(ds, cfg.train, bundle);
  for (int step = 0; step < cfg.train.total_steps; ++step) {
    try {
      const auto batch = stream.at_step(step);
      ProbMatrix teacher_batch(static_cast<int>(batch.rows.size()), teacher_all.k);
      for (std::size_t r = 0; r < batch.rows.size(); ++r) {
        for (int j = 0; j < teacher_all.k; ++j) {
          teacher_batch.at(static_cast<int>(r), j) = teacher_all.at(batch.rows[r], j);
        }
      }
      Tape tape;
      const NodeId probs = mlp_probs_node(tape, params, batch.features, 0);
      const NodeId loss = losses::distill_loss(tape, probs, teacher_batch, cfg.method.temperature);
      const auto grads = compute_gradients(tape, loss);
      optimizer_step(params, grads, state, lr_at(cfg.lr, step));
    } catch (const NumericError& e) {
      throw Diverged{step, e.what()};
    }
  }
  return params;
}

RunArtifact finish_artifact(const ExperimentConfig& cfg, const data::Dataset& ds,
                            const data::SeedBundle& bundle, int run_index,
                            const ModelParams& params,
                            std::chrono::steady_clock::time_point t0) {
  RunArtifact a;
  a.config_digest = cfg.digest();
  a.method = losses::method_kind_name(cfg.method.kind);
  a.train_cost = train_cost_label(cfg.method);
  a.run_index = run_index;
  a.seeds = bundle;
  a.params_digest = params.digest();
  a.eval_digest = ds.eval_digest();
  a.eval_probs = forward_probs(params, ds.gather_features(ds.eval_idx));
  a.eval_labels = ds.gather_labels(ds.eval_idx);
  a.accuracy = metrics::accuracy(a.eval_probs, a.eval_labels);
  a.mean_entropy = metrics::mean_entropy(a.eval_probs);
  a.mean_confidence = metrics::mean_confidence(a.eval_probs);
  a.step_count = cfg.train.total_steps;
  a.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return a;
}

RunArtifact failed_artifact(const ExperimentConfig& cfg, const data::Dataset& ds,
                            const data::SeedBundle& bundle, int run_index, const Diverged& d,
                            std::chrono::steady_clock::time_point t0) {
  RunArtifact a;
  a.config_digest = cfg.digest();
  a.method = losses::method_kind_name(cfg.method.kind);
  a.train_cost = train_cost_label(cfg.method);
  a.run_index = run_index;
  a.seeds = bundle;
  a.eval_digest = ds.eval_digest();
  a.failed = true;
  a.failed_step = d.step;
  a.fail_reason = d.reason;
  a.step_count = d.step;
  a.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return a;
}

RunArtifact run_training_on(const ExperimentConfig& cfg, const data::Dataset& ds,
                            const data::SeedBundle& bundle, int run_index) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.method.validate(ds.num_classes);
  RunArtifact a;
  try {
    ModelParams params = cfg.method.trains_pair() ? train_pair(cfg, ds, bundle)
                                                  : train_single(cfg, ds, bundle, cfg.method);
    a = finish_artifact(cfg, ds, bundle, run_index, params, t0);
  } catch (const Diverged& d) {
    a = failed_artifact(cfg, ds, bundle, run_index, d, t0);
  }
  if (!cfg.out_dir.empty()) save_artifact(cfg.out_dir, a);
  return a;
}

RunArtifact ensemble_distill_on(const ExperimentConfig& cfg, const data::Dataset& ds,
                                const data::SeedBundle& bundle, int run_index) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.method.validate(ds.num_classes);
  RunArtifact a;
  try {
    // Teachers are plain baseline runs on derived bundles.
    ProbMatrix teacher_all(ds.size(), ds.num_classes);
    losses::MethodSpec baseline;
    for (int t = 0; t < cfg.method.n_teachers; ++t) {
      const ModelParams teacher = train_single(cfg, ds, teacher_bundle(bundle, t), baseline);
      const ProbMatrix probs = forward_probs(teacher, ds.features);
      for (std::size_t i = 0; i < probs.p.size(); ++i) teacher_all.p[i] += probs.p[i];
    }
    for (double& x : teacher_all.p) x /= static_cast<double>(cfg.method.n_teachers);

    const ModelParams student = train_distill_student(cfg, ds, bundle, teacher_all);
    a = finish_artifact(cfg, ds, bundle, run_index, student, t0);
  } catch (const Diverged& d) {
    a = failed_artifact(cfg, ds, bundle, run_index, d, t0);
  }
  if (!cfg.out_dir.empty()) save_artifact(cfg.out_dir, a);
  return a;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (dataset.kind == DatasetSpec::Kind::kBlobs) {
    if (dataset.k < 2) throw ConfigError("dataset.k must be >= 2");
    if (dataset.d < 1) throw ConfigError("dataset.d must be >= 1");
    if (dataset.n_per_class < 1) throw ConfigError("dataset.n_per_class must be >= 1");
    if (!(dataset.spread > 0.0)) throw ConfigError("dataset.spread must be > 0");
    method.validate(dataset.k);
  } else if (dataset.csv_path.empty()) {
    throw ConfigError("dataset.path is required for kind 'csv'");
  }
  if (hidden.empty()) throw ConfigError("net.hidden must name at least one layer");
  for (int h : hidden) {
    if (h < 1) throw ConfigError("net.hidden entries must be >= 1");
  }
  if (!(lr.peak_lr > 0.0)) throw ConfigError("lr.peak must be > 0");
  if (lr.warmup_steps < 0) throw ConfigError("lr.warmup_steps must be >= 0");
  if (!(lr.decay_factor > 0.0 && lr.decay_factor < 1.0)) {
    throw ConfigError("lr.decay_factor must be in (0,1)");
  }
  if (!std::is_sorted(lr.decay_steps.begin(), lr.decay_steps.end())) {
    throw ConfigError("lr.decay_steps must be sorted ascending");
  }
  if (train.total_steps < 1) throw ConfigError("train.total_steps must be >= 1");
  if (train.total_steps < lr.warmup_steps) {
    throw ConfigError("train.total_steps must cover lr.warmup_steps");
  }
  if (train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (train.augment_sigma < 0.0) throw ConfigError("train.augment_sigma must be >= 0");
  if (n_runs < 2) throw ConfigError("runs.n_runs must be >= 2 for churn measurement");
  if (jobs < 1) throw ConfigError("runs.jobs must be >= 1");
}

json ExperimentConfig::to_json() const {
  json j;
  j["dataset"]["kind"] = dataset.kind == DatasetSpec::Kind::kBlobs ? "blobs" : "csv";
  if (dataset.kind == DatasetSpec::Kind::kBlobs) {
    j["dataset"]["n_per_class"] = dataset.n_per_class;
    j["dataset"]["k"] = dataset.k;
    j["dataset"]["d"] = dataset.d;
    j["dataset"]["spread"] = dataset.spread;
    j["dataset"]["seed"] = dataset.seed;
  } else {
    j["dataset"]["path"] = dataset.csv_path;
  }
  j["net"]["hidden"] = hidden;
  j["lr"]["peak"] = lr.peak_lr;
  j["lr"]["warmup_steps"] = lr.warmup_steps;
  j["lr"]["decay_steps"] = lr.decay_steps;
  j["lr"]["decay_factor"] = lr.decay_factor;
  j["train"]["total_steps"] = train.total_steps;
  j["train"]["batch_size"] = train.batch_size;
  j["train"]["augment_sigma"] = train.augment_sigma;
  j["method"]["kind"] = losses::method_kind_name(method.kind);
  j["method"]["alpha"] = method.alpha;
  j["method"]["beta"] = method.beta;
  j["method"]["ramp_c"] = method.ramp_c;
  j["method"]["top_k"] = method.top_k;
  j["method"]["temperature"] = method.temperature;
  j["method"]["n_teachers"] = method.n_teachers;
  j["method"]["stale_t"] = method.stale_t;
  j["method"]["combined_reg"] =
      method.combined_reg == losses::CombinedReg::kEntropy ? "entropy" : "skl";
  j["runs"]["n_runs"] = n_runs;
  j["runs"]["init_seed"] = base_seed.init_seed;
  j["runs"]["order_seed"] = base_seed.order_seed;
  j["runs"]["augment_seed"] = base_seed.augment_seed;
  j["runs"]["fix_init"] = fix.fix_init;
  j["runs"]["fix_order"] = fix.fix_order;
  j["runs"]["fix_augment"] = fix.fix_augment;
  j["runs"]["jobs"] = jobs;
  j["out_dir"] = out_dir;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig cfg;
  KeyChecker root(j, "config");

  if (root.has("dataset")) {
    KeyChecker ds(root.child("dataset"), "dataset");
    const std::string kind = ds.get<std::string>("kind", "blobs");
    if (kind == "blobs") {
      cfg.dataset.kind = DatasetSpec::Kind::kBlobs;
      cfg.dataset.n_per_class = ds.get<int>("n_per_class", cfg.dataset.n_per_class);
      cfg.dataset.k = ds.get<int>("k", cfg.dataset.k);
      cfg.dataset.d = ds.get<int>("d", cfg.dataset.d);
      cfg.dataset.spread = ds.get<double>("spread", cfg.dataset.spread);
      cfg.dataset.seed = ds.get<std::uint64_t>("seed", cfg.dataset.seed);
    } else if (kind == "csv") {
      cfg.dataset.kind = DatasetSpec::Kind::kCsv;
      cfg.dataset.csv_path = ds.get<std::string>("path", "");
    } else {
      throw ConfigError("dataset.kind must be 'blobs' or 'csv', got '" + kind + "'");
    }
    ds.finish();
  }
  if (root.has("net")) {
    KeyChecker net(root.child("net"), "net");
    cfg.hidden = net.get<std::vector<int>>("hidden", cfg.hidden);
    net.finish();
  }
  if (root.has("lr")) {
    KeyChecker lr(root.child("lr"), "lr");
    cfg.lr.peak_lr = lr.get<double>("peak", cfg.lr.peak_lr);
    cfg.lr.warmup_steps = lr.get<int>("warmup_steps", cfg.lr.warmup_steps);
    cfg.lr.decay_steps = lr.get<std::vector<int>>("decay_steps", cfg.lr.decay_steps);
    cfg.lr.decay_factor = lr.get<double>("decay_factor", cfg.lr.decay_factor);
    lr.finish();
  }
  if (root.has("train")) {
    KeyChecker tr(root.child("train"), "train");
    cfg.train.total_steps = tr.get<int>("total_steps", cfg.train.total_steps);
    cfg.train.batch_size = tr.get<int>("batch_size", cfg.train.batch_size);
    cfg.train.augment_sigma = tr.get<double>("augment_sigma", cfg.train.augment_sigma);
    tr.finish();
  }
  if (root.has("method")) {
    KeyChecker m(root.child("method"), "method");
    cfg.method.kind = losses::parse_method_kind(m.get<std::string>("kind", "baseline"));
    cfg.method.alpha = m.get<double>("alpha", 0.0);
    cfg.method.beta = m.get<double>("beta", 0.0);
    cfg.method.ramp_c = m.get<double>("ramp_c", 0.0);
    cfg.method.top_k = m.get<int>("top_k", 0);
    cfg.method.temperature = m.get<double>("temperature", 1.0);
    cfg.method.n_teachers = m.get<int>("n_teachers", 2);
    cfg.method.stale_t = m.get<int>("stale_t", 1);
    const std::string reg = m.get<std::string>("combined_reg", "entropy");
    if (reg == "entropy") {
      cfg.method.combined_reg = losses::CombinedReg::kEntropy;
    } else if (reg == "skl") {
      cfg.method.combined_reg = losses::CombinedReg::kSkl;
    } else {
      throw ConfigError("method.combined_reg must be 'entropy' or 'skl'");
    }
    m.finish();
  }
  if (root.has("runs")) {
    KeyChecker r(root.child("runs"), "runs");
    cfg.n_runs = r.get<int>("n_runs", cfg.n_runs);
    cfg.base_seed.init_seed = r.get<std::uint64_t>("init_seed", cfg.base_seed.init_seed);
    cfg.base_seed.order_seed = r.get<std::uint64_t>("order_seed", cfg.base_seed.order_seed);
    cfg.base_seed.augment_seed = r.get<std::uint64_t>("augment_seed", cfg.base_seed.augment_seed);
    cfg.fix.fix_init = r.get<bool>("fix_init", false);
    cfg.fix.fix_order = r.get<bool>("fix_order", false);
    cfg.fix.fix_augment = r.get<bool>("fix_augment", false);
    cfg.jobs = r.get<int>("jobs", 1);
    r.finish();
  }
  cfg.out_dir = root.get<std::string>("out_dir", "");
  root.finish();
  return cfg;
}

std::uint64_t ExperimentConfig::digest() const {
  json j = to_json();
  j.erase("out_dir");
  j["runs"].erase("jobs");
  Fnv1a h;
  h.update(j.dump());
  return h.digest();
}

// ---------------------------------------------------------------------------
// Experiment orchestration
// ---------------------------------------------------------------------------

data::Dataset make_dataset(const DatasetSpec& spec) {
  if (spec.kind == DatasetSpec::Kind::kBlobs) {
    return data::gen_blobs(spec.n_per_class, spec.k, spec.d, spec.spread, spec.seed);
  }
  return data::load_csv(spec.csv_path);
}

data::SeedBundle teacher_bundle(const data::SeedBundle& bundle, int t) {
  const std::uint64_t off = kTeacherSeedStride * static_cast<std::uint64_t>(t + 1);
  return {bundle.init_seed + off, bundle.order_seed + off, bundle.augment_seed + off};
}

data::SeedBundle bundle_for_run(const ExperimentConfig& config, int run) {
  data::SeedBundle b = config.base_seed;
  const auto i = static_cast<std::uint64_t>(run);
  if (!config.fix.fix_init) b.init_seed += i;
  if (!config.fix.fix_order) b.order_seed += i;
  if (!config.fix.fix_augment) b.augment_seed += i;
  return b;
}

std::string train_cost_label(const losses::MethodSpec& method) {
  if (method.trains_pair()) return "2x";
  if (method.kind == MethodKind::kEnsembleDistill) {
    return std::to_string(method.n_teachers + 1) + "x";
  }
  return "1x";
}

RunArtifact run_training(const ExperimentConfig& config, const data::SeedBundle& bundle,
                         int run_index) {
  config.validate();
  if (!config.out_dir.empty()) fs::create_directories(config.out_dir);
  const data::Dataset ds = make_dataset(config.dataset);
  if (config.method.kind == MethodKind::kEnsembleDistill) {
    return ensemble_distill_on(config, ds, bundle, run_index);
  }
  return run_training_on(config, ds, bundle, run_index);
}

RunArtifact ensemble_distill_run(const ExperimentConfig& config, const data::SeedBundle& bundle,
                                 int run_index) {
  config.validate();
  if (config.method.kind != MethodKind::kEnsembleDistill) {
    throw UsageError("ensemble_distill_run needs method.kind = ensemble_distill");
  }
  if (!config.out_dir.empty()) fs::create_directories(config.out_dir);
  const data::Dataset ds = make_dataset(config.dataset);
  return ensemble_distill_on(config, ds, bundle, run_index);
}

ExperimentSummary run_experiment(const ExperimentConfig& config) {
  config.validate();
  if (!config.out_dir.empty()) fs::create_directories(config.out_dir);
  const data::Dataset ds = make_dataset(config.dataset);

  std::vector<RunArtifact> artifacts(static_cast<std::size_t>(config.n_runs));
  const int jobs = std::min(config.jobs, config.n_runs);
  if (jobs <= 1) {
    for (int i = 0; i < config.n_runs; ++i) {
      const auto bundle = bundle_for_run(config, i);
      artifacts[static_cast<std::size_t>(i)] =
          config.method.kind == MethodKind::kEnsembleDistill
              ? ensemble_distill_on(config, ds, bundle, i)
              : run_training_on(config, ds, bundle, i);
    }
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> workers;
    workers.reserve(static_cast<std::size_t>(jobs));
    std::atomic<bool> had_error{false};
    std::string error_msg;
    std::mutex error_mu;
    for (int w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (int i = next.fetch_add(1); i < config.n_runs; i = next.fetch_add(1)) {
          try {
            const auto bundle = bundle_for_run(config, i);
            artifacts[static_cast<std::size_t>(i)] =
                config.method.kind == MethodKind::kEnsembleDistill
                    ? ensemble_distill_on(config, ds, bundle, i)
                    : run_training_on(config, ds, bundle, i);
          } catch (const std::exception& e) {
            const std::lock_guard<std::mutex> lock(error_mu);
            had_error = true;
            error_msg = e.what();
          }
        }
      });
    }
    for (auto& t : workers) t.join();
    if (had_error) throw NumericError("experiment worker failed: " + error_msg);
  }

  int n_failed = 0;
  for (const auto& a : artifacts) {
    if (a.failed) ++n_failed;
  }
  if (n_failed == config.n_runs) {
    throw NumericError("all " + std::to_string(config.n_runs) + " runs failed");
  }

  ExperimentSummary summary = summarize_pairwise(artifacts);
  if (!config.out_dir.empty()) save_summary(config.out_dir, summary);
  return summary;
}

std::vector<ExperimentSummary> ablation_grid(const ExperimentConfig& config) {
  // Table-1 column order: nothing fixed, init fixed, order(+augment) fixed,
  // everything fixed. The augmentation channel follows the order flag.
  const bool grid[4][2] = {{false, false}, {true, false}, {false, true}, {true, true}};
  std::vector<ExperimentSummary> cells;
  for (const auto& cell : grid) {
    ExperimentConfig c = config;
    c.fix.fix_init = cell[0];
    c.fix.fix_order = cell[1];
    c.fix.fix_augment = cell[1];
    cells.push_back(run_experiment(c));
  }
  return cells;
}

ExperimentSummary summarize_pairwise(const std::vector<RunArtifact>& artifacts) {
  std::vector<const RunArtifact*> used;
  int n_failed = 0;
  for (const auto& a : artifacts) {
    if (a.failed) {
      ++n_failed;
    } else {
      used.push_back(&a);
    }
  }
  if (used.size() < 2) {
    throw UsageError("summarize_pairwise needs at least two successful artifacts, got " +
                     std::to_string(used.size()));
  }
  for (const auto* a : used) {
    if (a->eval_digest != used.front()->eval_digest) {
      throw UsageError("artifacts were evaluated on different eval sets; churn across "
                       "different examples is meaningless");
    }
  }

  ExperimentSummary s;
  s.config_digest = used.front()->config_digest;
  s.method_name = used.front()->method;
  s.train_cost = used.front()->train_cost;
  s.n_runs_requested = static_cast<int>(artifacts.size());
  s.n_runs_used = static_cast<int>(used.size());
  s.n_failed = n_failed;

  std::vector<double> churns, schurns, corrects, incorrects;
  for (std::size_t i = 0; i < used.size(); ++i) {
    for (std::size_t j = i + 1; j < used.size(); ++j) {
      ExperimentSummary::PairReport pr;
      pr.i = used[i]->run_index;
      pr.j = used[j]->run_index;
      pr.report =
          metrics::make_churn_report(used[i]->eval_probs, used[j]->eval_probs, used[i]->eval_labels);
      churns.push_back(pr.report.churn);
      schurns.push_back(pr.report.schurn.at(1.0));
      corrects.push_back(pr.report.churn_correct);
      incorrects.push_back(pr.report.churn_incorrect);
      s.pairs.push_back(std::move(pr));
    }
  }

  std::vector<double> accs, eces, confs, ents;
  for (const auto* a : used) {
    accs.push_back(a->accuracy);
    eces.push_back(metrics::ece(a->eval_probs, a->eval_labels));
    confs.push_back(a->mean_confidence);
    ents.push_back(a->mean_entropy);
  }

  s.churn = make_stat(churns);
  s.schurn1 = make_stat(schurns);
  s.churn_correct = make_stat(corrects);
  s.churn_incorrect = make_stat(incorrects);
  s.accuracy = make_stat(accs);
  s.ece = make_stat(eces);
  s.confidence = make_stat(confs);
  s.entropy = make_stat(ents);
  return s;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

json seeds_to_json(const data::SeedBundle& b) {
  return json{{"init", b.init_seed}, {"order", b.order_seed}, {"augment", b.augment_seed}};
}

data::SeedBundle seeds_from_json(const json& j) {
  return {j.at("init").get<std::uint64_t>(), j.at("order").get<std::uint64_t>(),
          j.at("augment").get<std::uint64_t>()};
}

json report_to_json(const metrics::ChurnReport& r) {
  json j;
  j["churn"] = r.churn;
  json sc = json::object();
  for (const auto& [alpha, value] : r.schurn) sc[format_double(alpha)] = value;
  j["schurn"] = sc;
  j["churn_correct"] = r.churn_correct;
  j["churn_incorrect"] = r.churn_incorrect;
  j["correct_empty"] = r.correct_empty;
  j["incorrect_empty"] = r.incorrect_empty;
  j["mean_confidence"] = r.mean_confidence;
  j["mean_entropy"] = r.mean_entropy;
  j["ece"] = r.ece;
  j["accuracy"] = r.accuracy;
  return j;
}

metrics::ChurnReport report_from_json(const json& j) {
  metrics::ChurnReport r;
  r.churn = j.at("churn").get<double>();
  for (const auto& item : j.at("schurn").items()) {
    r.schurn[parse_double(item.key())] = item.value().get<double>();
  }
  r.churn_correct = j.at("churn_correct").get<double>();
  r.churn_incorrect = j.at("churn_incorrect").get<double>();
  r.correct_empty = j.at("correct_empty").get<bool>();
  r.incorrect_empty = j.at("incorrect_empty").get<bool>();
  r.mean_confidence = j.at("mean_confidence").get<std::array<double, 2>>();
  r.mean_entropy = j.at("mean_entropy").get<std::array<double, 2>>();
  r.ece = j.at("ece").get<std::array<double, 2>>();
  r.accuracy = j.at("accuracy").get<std::array<double, 2>>();
  return r;
}

json stat_to_json(const Stat& s) { return json{{"mean", s.mean}, {"std", s.stddev}}; }

Stat stat_from_json(const json& j) {
  return {j.at("mean").get<double>(), j.at("std").get<double>()};
}

}  // namespace

std::string artifact_filename(const RunArtifact& a) {
  return "run_" + hex_u64(a.config_digest) + "_" + std::to_string(a.run_index) + ".json";
}

void save_artifact(const std::string& dir, const RunArtifact& a) {
  fs::create_directories(dir);
  json j;
  j["config_digest"] = hex_u64(a.config_digest);
  j["method"] = a.method;
  j["train_cost"] = a.train_cost;
  j["run_index"] = a.run_index;
  j["seeds"] = seeds_to_json(a.seeds);
  j["params_digest"] = hex_u64(a.params_digest);
  j["eval_digest"] = hex_u64(a.eval_digest);
  j["accuracy"] = a.accuracy;
  j["mean_entropy"] = a.mean_entropy;
  j["mean_confidence"] = a.mean_confidence;
  j["wall_clock_sec"] = a.wall_clock_sec;
  j["step_count"] = a.step_count;
  j["failed"] = a.failed;
  j["failed_step"] = a.failed_step;
  j["fail_reason"] = a.fail_reason;
  j["k"] = a.eval_probs.k;
  const std::string base = artifact_filename(a);
  if (!a.failed && a.eval_probs.n > kSidecarRows) {
    const std::string sidecar = base.substr(0, base.size() - 5) + ".probs.csv";
    std::ostringstream csv;
    write_probs_csv(csv, a.eval_probs, a.eval_labels);
    write_atomically((fs::path(dir) / sidecar).string(), csv.str());
    j["probs_csv"] = sidecar;
  } else if (!a.failed) {
    json rows = json::array();
    for (int i = 0; i < a.eval_probs.n; ++i) {
      rows.push_back(std::vector<double>(a.eval_probs.row(i).begin(), a.eval_probs.row(i).end()));
    }
    j["probs"] = rows;
    j["labels"] = a.eval_labels.y;
  }
  write_atomically((fs::path(dir) / base).string(), j.dump(2) + "\n");
}

RunArtifact load_artifact(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError("'" + path + "': " + e.what());
  }
  RunArtifact a;
  a.config_digest = parse_hex_u64(j.at("config_digest").get<std::string>());
  a.method = j.value("method", "");
  a.train_cost = j.value("train_cost", "");
  a.run_index = j.at("run_index").get<int>();
  a.seeds = seeds_from_json(j.at("seeds"));
  a.params_digest = parse_hex_u64(j.at("params_digest").get<std::string>());
  a.eval_digest = parse_hex_u64(j.at("eval_digest").get<std::string>());
  a.accuracy = j.at("accuracy").get<double>();
  a.mean_entropy = j.at("mean_entropy").get<double>();
  a.mean_confidence = j.at("mean_confidence").get<double>();
  a.wall_clock_sec = j.at("wall_clock_sec").get<double>();
  a.step_count = j.at("step_count").get<int>();
  a.failed = j.at("failed").get<bool>();
  a.failed_step = j.at("failed_step").get<int>();
  a.fail_reason = j.at("fail_reason").get<std::string>();
  const int k = j.at("k").get<int>();
  if (a.failed) return a;
  if (j.contains("probs_csv")) {
    const auto sidecar = fs::path(path).parent_path() / j.at("probs_csv").get<std::string>();
    auto [probs, labels] = read_probs_csv_file(sidecar.string());
    a.eval_probs = std::move(probs);
    a.eval_labels = std::move(labels);
  } else {
    const auto rows = j.at("probs").get<std::vector<std::vector<double>>>();
    a.eval_probs = ProbMatrix(static_cast<int>(rows.size()), k);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (static_cast<int>(rows[i].size()) != k) {
        throw ParseError("'" + path + "': probs row " + std::to_string(i) + " has wrong width");
      }
      std::copy(rows[i].begin(), rows[i].end(), a.eval_probs.row(static_cast<int>(i)).begin());
    }
    a.eval_labels = LabelVector(j.at("labels").get<std::vector<int>>());
  }
  return a;
}

std::string summary_filename(const ExperimentSummary& s) {
  return "summary_" + s.method_name + "_" + hex_u64(s.config_digest) + ".json";
}

void save_summary(const std::string& dir, const ExperimentSummary& s) {
  fs::create_directories(dir);
  json j;
  j["config_digest"] = hex_u64(s.config_digest);
  j["method"] = s.method_name;
  j["train_cost"] = s.train_cost;
  j["n_runs_requested"] = s.n_runs_requested;
  j["n_runs_used"] = s.n_runs_used;
  j["n_failed"] = s.n_failed;
  json pairs = json::array();
  for (const auto& p : s.pairs) {
    json pj = report_to_json(p.report);
    pj["i"] = p.i;
    pj["j"] = p.j;
    pairs.push_back(pj);
  }
  j["pairs"] = pairs;
  j["aggregates"]["churn"] = stat_to_json(s.churn);
  j["aggregates"]["schurn1"] = stat_to_json(s.schurn1);
  j["aggregates"]["churn_correct"] = stat_to_json(s.churn_correct);
  j["aggregates"]["churn_incorrect"] = stat_to_json(s.churn_incorrect);
  j["aggregates"]["accuracy"] = stat_to_json(s.accuracy);
  j["aggregates"]["ece"] = stat_to_json(s.ece);
  j["aggregates"]["confidence"] = stat_to_json(s.confidence);
  j["aggregates"]["entropy"] = stat_to_json(s.entropy);
  write_atomically((fs::path(dir) / summary_filename(s)).string(), j.dump(2) + "\n");

  const std::string table = summary_table({s});
  write_atomically((fs::path(dir) / (summary_filename(s).substr(0, summary_filename(s).size() - 5) +
                                     ".txt"))
                       .string(),
                   table);
}

ExperimentSummary load_summary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError("'" + path + "': " + e.what());
  }
  ExperimentSummary s;
  s.config_digest = parse_hex_u64(j.at("config_digest").get<std::string>());
  s.method_name = j.at("method").get<std::string>();
  s.train_cost = j.at("train_cost").get<std::string>();
  s.n_runs_requested = j.at("n_runs_requested").get<int>();
  s.n_runs_used = j.at("n_runs_used").get<int>();
  s.n_failed = j.at("n_failed").get<int>();
  for (const auto& pj : j.at("pairs")) {
    ExperimentSummary::PairReport pr;
    pr.i = pj.at("i").get<int>();
    pr.j = pj.at("j").get<int>();
    pr.report = report_from_json(pj);
    s.pairs.push_back(std::move(pr));
  }
  const auto& agg = j.at("aggregates");
  s.churn = stat_from_json(agg.at("churn"));
  s.schurn1 = stat_from_json(agg.at("schurn1"));
  s.churn_correct = stat_from_json(agg.at("churn_correct"));
  s.churn_incorrect = stat_from_json(agg.at("churn_incorrect"));
  s.accuracy = stat_from_json(agg.at("accuracy"));
  s.ece = stat_from_json(agg.at("ece"));
  s.confidence = stat_from_json(agg.at("confidence"));
  s.entropy = stat_from_json(agg.at("entropy"));
  return s;
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

namespace {

std::string pct(const Stat& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f+-%.2f", 100.0 * s.mean, 100.0 * s.stddev);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

}  // namespace

std::string summary_table(const std::vector<ExperimentSummary>& summaries) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < summaries.size(); ++i) {
    if (summaries[i].churn.mean < summaries[best].churn.mean) best = i;
  }
  std::ostringstream out;
  out << pad("Method", 26) << pad("TrainCost", 11) << pad("Accuracy", 15) << pad("Churn%", 15)
      << pad("SChurn%", 15) << pad("ChurnCorrect", 15) << pad("ChurnIncorrect", 16)
      << pad("ECE", 14) << "\n";
  for (std::size_t i = 0; i < summaries.size(); ++i) {
    const auto& s = summaries[i];
    const std::string marker = summaries.size() > 1 && i == best ? "*" : "";
    out << pad(s.method_name + marker, 26) << pad(s.train_cost, 11) << pad(pct(s.accuracy), 15)
        << pad(pct(s.churn), 15) << pad(pct(s.schurn1), 15) << pad(pct(s.churn_correct), 15)
        << pad(pct(s.churn_incorrect), 16) << pad(pct(s.ece), 14);
    if (s.n_failed > 0) out << "  [" << s.n_failed << " failed run(s) excluded]";
    out << "\n";
  }
  return out.str();
}

std::string ablation_table(const std::vector<ExperimentSummary>& cells) {
  if (cells.size() != 4) throw UsageError("ablation_table expects the 4-cell grid");
  std::ostringstream out;
  out << pad("Platform", 28) << pad("deterministic CPU core", 64) << "\n";
  out << pad("Identical minibatch order", 28) << pad("-", 16) << pad("-", 16) << pad("yes", 16)
      << pad("yes", 16) << "\n";
  out << pad("Identical initialization", 28) << pad("-", 16) << pad("yes", 16) << pad("-", 16)
      << pad("yes", 16) << "\n";
  out << pad("Accuracy", 28);
  for (const auto& c : cells) out << pad(pct(c.accuracy), 16);
  out << "\n" << pad("Churn %", 28);
  for (const auto& c : cells) out << pad(pct(c.churn), 16);
  out << "\n" << pad("SChurn %", 28);
  for (const auto& c : cells) out << pad(pct(c.schurn1), 16);
  out << "\n";
  return out.str();
}

}  // namespace churnlab::harness
