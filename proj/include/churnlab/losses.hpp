#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "churnlab/tensor_core.hpp"
#include "churnlab/types.hpp"

namespace churnlab::losses {

enum class MethodKind {
  kBaseline,
  kEntropy,
  kSkl,
  kCodistillL1,
  kCodistillSkl,
  kCodistillCeIndependent,
  kCombined,
  kEnsembleDistill,
};

MethodKind parse_method_kind(const std::string& name);
std::string method_kind_name(MethodKind kind);

enum class CombinedReg { kEntropy, kSkl };

// Which training objective, plus its knobs. Fields only apply to the kinds
// that use them; validate() rejects stray settings.
struct MethodSpec {
  MethodKind kind = MethodKind::kBaseline;
  double alpha = 0.0;        // entropy/skl/combined regularizer weight
  double beta = 0.0;         // co-distillation coupling cap
  double ramp_c = 0.0;       // linear ramp slope; 0 = derive from total steps
  int top_k = 0;             // 0 = off; otherwise entropy/SKL on top-k only
  double temperature = 1.0;  // ensemble distillation
  int n_teachers = 2;
  int stale_t = 1;  // teacher staleness for independent-update co-distillation
  CombinedReg combined_reg = CombinedReg::kEntropy;

  void validate(int num_classes) const;  // throws ConfigError naming the field
  bool trains_pair() const;
};

struct RampSchedule {
  enum class Style { kLinear, kStep };
  double cap = 0.0;
  double slope_c = 0.0;  // linear style
  Style style = Style::kLinear;
  int step_start = 0;  // step style threshold
};

// Linear: min(slope_c * step, cap). Step: 0 before step_start, cap afterwards.
double coefficient_at(const RampSchedule& sched, int step);

// --- node builders -------------------------------------------------------
// All builders take a row-stochastic probability node (e.g. mlp_probs_node
// output) and apply the module-wide clamp before any logarithm.

// Mean of -log p_y over the batch.
NodeId ce_loss(Tape& tape, NodeId probs, const LabelVector& labels);

// (1-alpha)*CE + alpha*mean row entropy; with top_k the entropy is taken over
// the k largest probabilities renormalized to sum one. alpha=0 short-circuits
// to the exact ce_loss node.
NodeId entropy_regularized_loss(Tape& tape, NodeId probs, const LabelVector& labels,
                                double alpha, int top_k = 0);

// (1-alpha)*CE - alpha*mean SKL(row, uniform); same top-k treatment.
NodeId skl_regularized_loss(Tape& tape, NodeId probs, const LabelVector& labels, double alpha,
                            int top_k = 0);

enum class CodistillVariant { kL1, kSkl };

// Joint two-model objective: CE(model1) + CE(model2) + beta_t * mean
// disagreement (L1 or SKL between the two prediction rows). Gradients flow
// into both models. beta_t=0 short-circuits to the decoupled CE sum.
NodeId codistill_loss(Tape& tape, NodeId probs1, NodeId probs2, const LabelVector& labels,
                      double beta_t, CodistillVariant variant);

// One side of the independent-update variant: CE(student) + beta_t * mean
// cross-entropy against a frozen teacher matrix. The teacher enters as plain
// data, so no gradient reaches it. Call once per model with the other model's
// stale predictions.
NodeId codistill_ce_independent_loss(Tape& tape, NodeId student_probs,
                                     const ProbMatrix& frozen_teacher,
                                     const LabelVector& labels, double beta_t);

// SKL co-distillation plus alpha_t * (summed entropy of both models), or the
// negated summed SKL-to-uniform when reg = kSkl. The regularizer is added on
// top, not blended as a convex combination.
NodeId combined_loss(Tape& tape, NodeId probs1, NodeId probs2, const LabelVector& labels,
                     double alpha_t, double beta_t, CombinedReg reg);

// Cross-entropy between the temperature-softened teacher and the
// temperature-softened student, mean over the batch. Softening re-normalizes
// p^(1/tau), which equals re-softmaxing the logits at tau.
NodeId distill_loss(Tape& tape, NodeId student_probs, const ProbMatrix& teacher_probs,
                    double temperature);

// --- loss landscape curves -------------------------------------------------

struct CurveSample {
  std::string kind;  // "entropy_log_loss" | "tempered_logistic"
  double param = 0.0;
  double x = 0.0;
  double loss = 0.0;
};

// Pure arithmetic samples of the regularized binary log-loss over p and the
// tempered logistic loss over f = logit(p).
std::vector<CurveSample> landscape_scan(std::span<const double> alpha_grid,
                                        std::span<const double> tau_grid,
                                        std::span<const double> p_grid);

// CSV: kind,param,x,loss with 17 significant digits.
void write_curves_csv(std::ostream& out, const std::vector<CurveSample>& samples);

}  // namespace churnlab::losses
