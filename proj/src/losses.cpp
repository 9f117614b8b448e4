#include "churnlab/losses.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "churnlab/common.hpp"

namespace churnlab::losses {

MethodKind parse_method_kind(const std::string& name) {
  if (name == "baseline") return MethodKind::kBaseline;
  if (name == "entropy") return MethodKind::kEntropy;
  if (name == "skl") return MethodKind::kSkl;
  if (name == "codistill_l1") return MethodKind::kCodistillL1;
  if (name == "codistill_skl") return MethodKind::kCodistillSkl;
  if (name == "codistill_ce_independent") return MethodKind::kCodistillCeIndependent;
  if (name == "combined") return MethodKind::kCombined;
  if (name == "ensemble_distill") return MethodKind::kEnsembleDistill;
  throw ConfigError("unknown method kind '" + name + "'");
}

std::string method_kind_name(MethodKind kind) {
  switch (kind) {
    case MethodKind::kBaseline: return "baseline";
    case MethodKind::kEntropy: return "entropy";
    case MethodKind::kSkl: return "skl";
    case MethodKind::kCodistillL1: return "codistill_l1";
    case MethodKind::kCodistillSkl: return "codistill_skl";
    case MethodKind::kCodistillCeIndependent: return "codistill_ce_independent";
    case MethodKind::kCombined: return "combined";
    case MethodKind::kEnsembleDistill: return "ensemble_distill";
  }
  throw ConfigError("bad method kind");
}

bool MethodSpec::trains_pair() const {
  return kind == MethodKind::kCodistillL1 || kind == MethodKind::kCodistillSkl ||
         kind == MethodKind::kCodistillCeIndependent || kind == MethodKind::kCombined;
}

void MethodSpec::validate(int num_classes) const {
  const bool uses_alpha =
      kind == MethodKind::kEntropy || kind == MethodKind::kSkl || kind == MethodKind::kCombined;
  const bool uses_beta = trains_pair();
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("method.alpha must be in [0,1]");
  if (!uses_alpha && alpha != 0.0) {
    throw ConfigError("method.alpha is only used by entropy/skl/combined");
  }
  if (beta < 0.0) throw ConfigError("method.beta must be >= 0");
  if (!uses_beta && beta != 0.0) {
    throw ConfigError("method.beta is only used by co-distillation kinds");
  }
  if (ramp_c < 0.0) throw ConfigError("method.ramp_c must be >= 0");
  if (!uses_beta && ramp_c != 0.0) {
    throw ConfigError("method.ramp_c is only used by co-distillation kinds");
  }
  if (top_k != 0) {
    if (!uses_alpha) throw ConfigError("method.top_k is only used by entropy/skl/combined");
    if (top_k < 2) throw ConfigError("method.top_k must be >= 2");
    if (top_k > num_classes) {
      throw ConfigError("method.top_k exceeds the class count " + std::to_string(num_classes));
    }
  }
  if (!(temperature > 0.0)) throw ConfigError("method.temperature must be > 0");
  if (kind != MethodKind::kEnsembleDistill && temperature != 1.0) {
    throw ConfigError("method.temperature is only used by ensemble_distill");
  }
  if (n_teachers < 1) throw ConfigError("method.n_teachers must be >= 1");
  if (stale_t < 1) throw ConfigError("method.stale_t must be >= 1");
}

double coefficient_at(const RampSchedule& sched, int step) {
  if (step < 0) throw UsageError("coefficient_at: step must be >= 0");
  if (sched.style == RampSchedule::Style::kStep) {
    return step < sched.step_start ? 0.0 : sched.cap;
  }
  return std::min(sched.slope_c * static_cast<double>(step), sched.cap);
}

namespace {

// probs -> clamped, renormalized probs (still on the simplex, entries > 0).
NodeId clamped(Tape& t, NodeId probs) {
  return t.div_rowsum(t.clamp_floor(probs, kProbEps));
}

// Mean row entropy of clamped probs; with top_k the k largest probabilities
// are renormalized over their own mass first.
NodeId mean_entropy_node(Tape& t, NodeId probs, int top_k) {
  NodeId q = clamped(t, probs);
  if (top_k > 0) q = t.div_rowsum(t.topk_gather(q, top_k));
  const NodeId neg_h_rows = t.row_sum(t.mul(q, t.log_of(q)));
  return t.scale(t.mean_all(neg_h_rows), -1.0);
}

// Mean SKL(row, uniform) of clamped probs, same top-k treatment (uniform over
// the k kept classes).
NodeId mean_skl_uniform_node(Tape& t, NodeId probs, int top_k) {
  NodeId q = clamped(t, probs);
  int width = t.value(q).cols;
  if (top_k > 0) {
    q = t.div_rowsum(t.topk_gather(q, top_k));
    width = top_k;
  }
  const Mat& qv = t.value(q);
  const NodeId unif = t.input(Mat(qv.rows, width,
                                  std::vector<double>(static_cast<std::size_t>(qv.rows) * width,
                                                      1.0 / width)));
  // SKL(a,u) = sum (a - u) * (log a - log u)
  const NodeId diff = t.sub(q, unif);
  const NodeId log_diff = t.sub(t.log_of(q), t.log_of(unif));
  return t.mean_all(t.row_sum(t.mul(diff, log_diff)));
}

NodeId mean_skl_pair_node(Tape& t, NodeId probs1, NodeId probs2) {
  const NodeId q1 = clamped(t, probs1);
  const NodeId q2 = clamped(t, probs2);
  const NodeId diff = t.sub(q1, q2);
  const NodeId log_diff = t.sub(t.log_of(q1), t.log_of(q2));
  return t.mean_all(t.row_sum(t.mul(diff, log_diff)));
}

// L1 disagreement runs on the raw probability rows; no logs involved.
NodeId mean_l1_pair_node(Tape& t, NodeId probs1, NodeId probs2) {
  return t.mean_all(t.row_sum(t.abs_of(t.sub(probs1, probs2))));
}

void require_same_batch(Tape& t, NodeId a, NodeId b) {
  const Mat& A = t.value(a);
  const Mat& B = t.value(b);
  if (A.rows != B.rows || A.cols != B.cols) {
    throw UsageError("co-distillation branches see different batch shapes");
  }
}

}  // namespace

NodeId ce_loss(Tape& tape, NodeId probs, const LabelVector& labels) {
  const NodeId q = clamped(tape, probs);
  const Mat& qv = tape.value(q);
  labels.validate(qv.rows, qv.cols);
  const NodeId picked = tape.gather_label(tape.log_of(q), labels);
  return tape.scale(tape.mean_all(picked), -1.0);
}

NodeId entropy_regularized_loss(Tape& tape, NodeId probs, const LabelVector& labels,
                                double alpha, int top_k) {
  if (alpha < 0.0 || alpha > 1.0) throw UsageError("alpha must be in [0,1]");
  if (top_k > tape.value(probs).cols) throw UsageError("top_k exceeds class count");
  const NodeId ce = ce_loss(tape, probs, labels);
  if (alpha == 0.0) return ce;
  const NodeId ent = mean_entropy_node(tape, probs, top_k);
  return tape.add(tape.scale(ce, 1.0 - alpha), tape.scale(ent, alpha));
}

NodeId skl_regularized_loss(Tape& tape, NodeId probs, const LabelVector& labels, double alpha,
                            int top_k) {
  if (alpha < 0.0 || alpha > 1.0) throw UsageError("alpha must be in [0,1]");
  if (top_k > tape.value(probs).cols) throw UsageError("top_k exceeds class count");
  const NodeId ce = ce_loss(tape, probs, labels);
  if (alpha == 0.0) return ce;
  const NodeId skl = mean_skl_uniform_node(tape, probs, top_k);
  return tape.add(tape.scale(ce, 1.0 - alpha), tape.scale(skl, -alpha));
}

NodeId codistill_loss(Tape& tape, NodeId probs1, NodeId probs2, const LabelVector& labels,
                      double beta_t, CodistillVariant variant) {
  require_same_batch(tape, probs1, probs2);
  if (beta_t < 0.0) throw UsageError("beta_t must be >= 0");
  const NodeId base = tape.add(ce_loss(tape, probs1, labels), ce_loss(tape, probs2, labels));
  if (beta_t == 0.0) return base;
  const NodeId disagreement = variant == CodistillVariant::kL1
                                  ? mean_l1_pair_node(tape, probs1, probs2)
                                  : mean_skl_pair_node(tape, probs1, probs2);
  return tape.add(base, tape.scale(disagreement, beta_t));
}

NodeId codistill_ce_independent_loss(Tape& tape, NodeId student_probs,
                                     const ProbMatrix& frozen_teacher,
                                     const LabelVector& labels, double beta_t) {
  const Mat& sv = tape.value(student_probs);
  if (frozen_teacher.n != sv.rows || frozen_teacher.k != sv.cols) {
    throw UsageError("frozen teacher shape does not match the student batch");
  }
  if (beta_t < 0.0) throw UsageError("beta_t must be >= 0");
  const NodeId ce = ce_loss(tape, student_probs, labels);
  if (beta_t == 0.0) return ce;
  const NodeId q = clamped(tape, student_probs);
  const NodeId teacher = tape.input(Mat(frozen_teacher.n, frozen_teacher.k, frozen_teacher.p));
  const NodeId xent_rows = tape.scale(tape.row_sum(tape.mul(teacher, tape.log_of(q))), -1.0);
  return tape.add(ce, tape.scale(tape.mean_all(xent_rows), beta_t));
}

NodeId combined_loss(Tape& tape, NodeId probs1, NodeId probs2, const LabelVector& labels,
                     double alpha_t, double beta_t, CombinedReg reg) {
  if (alpha_t < 0.0) throw UsageError("alpha_t must be >= 0");
  const NodeId codist = codistill_loss(tape, probs1, probs2, labels, beta_t,
                                       CodistillVariant::kSkl);
  if (alpha_t == 0.0) return codist;
  NodeId ereg;
  if (reg == CombinedReg::kEntropy) {
    ereg = tape.add(mean_entropy_node(tape, probs1, 0), mean_entropy_node(tape, probs2, 0));
  } else {
    ereg = tape.scale(tape.add(mean_skl_uniform_node(tape, probs1, 0),
                               mean_skl_uniform_node(tape, probs2, 0)),
                      -1.0);
  }
  return tape.add(codist, tape.scale(ereg, alpha_t));
}

NodeId distill_loss(Tape& tape, NodeId student_probs, const ProbMatrix& teacher_probs,
                    double temperature) {
  if (!(temperature > 0.0)) throw UsageError("temperature must be > 0");
  const Mat& sv = tape.value(student_probs);
  if (teacher_probs.n != sv.rows || teacher_probs.k != sv.cols) {
    throw UsageError("teacher matrix shape does not match the student batch");
  }
  // Soften the teacher outside the tape: normalize t^(1/tau).
  Mat teacher(teacher_probs.n, teacher_probs.k);
  for (int i = 0; i < teacher_probs.n; ++i) {
    double sum = 0.0;
    for (int j = 0; j < teacher_probs.k; ++j) {
      const double v = std::pow(std::max(teacher_probs.at(i, j), kProbEps), 1.0 / temperature);
      teacher.at(i, j) = v;
      sum += v;
    }
    for (int j = 0; j < teacher_probs.k; ++j) teacher.at(i, j) /= sum;
  }
  NodeId soft_student = clamped(tape, student_probs);
  if (temperature != 1.0) {
    soft_student = tape.div_rowsum(tape.pow_const(soft_student, 1.0 / temperature));
  }
  const NodeId teacher_node = tape.input(std::move(teacher));
  const NodeId xent_rows =
      tape.scale(tape.row_sum(tape.mul(teacher_node, tape.log_of(soft_student))), -1.0);
  return tape.mean_all(xent_rows);
}

std::vector<CurveSample> landscape_scan(std::span<const double> alpha_grid,
                                        std::span<const double> tau_grid,
                                        std::span<const double> p_grid) {
  for (double p : p_grid) {
    if (!(p > 0.0 && p < 1.0)) throw UsageError("p_grid values must lie in (0,1)");
  }
  std::vector<CurveSample> out;
  const auto binary_entropy = [](double p) {
    return -p * std::log(p) - (1.0 - p) * std::log(1.0 - p);
  };
  for (double alpha : alpha_grid) {
    for (double p : p_grid) {
      out.push_back({"entropy_log_loss", alpha, p,
                     (1.0 - alpha) * -std::log(p) + alpha * binary_entropy(p)});
    }
  }
  for (double tau : tau_grid) {
    if (!(tau > 0.0)) throw UsageError("tau_grid values must be > 0");
    for (double p : p_grid) {
      const double f = std::log(p / (1.0 - p));
      // -log sigmoid(f/tau) = log(1 + exp(-f/tau))
      out.push_back({"tempered_logistic", tau, f, std::log1p(std::exp(-f / tau))});
    }
  }
  return out;
}

void write_curves_csv(std::ostream& out, const std::vector<CurveSample>& samples) {
  out << "kind,param,x,loss\n";
  char buf[128];
  for (const auto& s : samples) {
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g\n", s.kind.c_str(), s.param, s.x,
                  s.loss);
    out << buf;
  }
}

}  // namespace churnlab::losses
