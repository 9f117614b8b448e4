#pragma once

#include <array>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "churnlab/types.hpp"

namespace churnlab::metrics {

// Argmax with ties broken toward the lowest index, so predictions are
// deterministic even on exactly tied rows.
int argmax_row(std::span<const double> row);

LabelVector predict_labels(const ProbMatrix& p);

// Fraction of rows where the argmax predictions of the two models differ.
double churn(const ProbMatrix& p1, const ProbMatrix& p2);

// Surrogate churn: half the mean L1 distance between max-normalized rows
// raised elementwise to alpha. Approaches churn as alpha grows.
double schurn(const ProbMatrix& p1, const ProbMatrix& p2, double alpha);

// Per-row prediction confidence: top probability minus second probability.
std::vector<double> confidence(const ProbMatrix& p);
double mean_confidence(const ProbMatrix& p);

struct SliceChurn {
  double correct = 0.0;
  double incorrect = 0.0;
  bool correct_empty = false;
  bool incorrect_empty = false;
};

// Churn restricted to the rows model 1 classifies correctly / incorrectly.
SliceChurn slice_churn(const ProbMatrix& p1, const ProbMatrix& p2, const LabelVector& labels);

struct Distances {
  double l1 = 0.0;
  double kl = 0.0;   // KL(a || b)
  double skl = 0.0;  // KL(a || b) + KL(b || a)
};

// All three distances on the clamped, renormalized rows (floor kProbEps), so
// the Pinsker relation l1 <= sqrt(2*kl) holds by construction.
Distances distances(std::span<const double> a, std::span<const double> b);

// Natural-log entropy of a row after the clamp+renormalize step.
double row_entropy(std::span<const double> row);
double mean_entropy(const ProbMatrix& p);

// Symmetric KL divergence between a (clamped) row and the uniform distribution.
double skl_to_uniform(std::span<const double> row);

double accuracy(const ProbMatrix& p, const LabelVector& labels);

// Top-label expected calibration error over equal-width confidence bins.
double ece(const ProbMatrix& p, const LabelVector& labels, int n_bins = 15);

struct BoundAudit {
  // churn <= perr(p1) + perr(p2)
  bool lemma1_ok = true;
  int lemma1_witness = -1;
  double lemma1_slack = 0.0;  // perr1 + perr2 - churn
  // every argmax disagreement row has l1 > min(gamma1, gamma2)
  bool lemma2_ok = true;
  int lemma2_witness = -1;
  // per row: l1 <= sqrt(2*kl) within 1e-9
  bool pinsker_ok = true;
  int pinsker_witness = -1;
  // per-row slack values; lemma2 slack is meaningful only on disagreeing rows
  std::vector<double> lemma2_slack;   // l1 - min(gamma1, gamma2)
  std::vector<double> pinsker_slack;  // sqrt(2*kl) - l1

  bool all_ok() const { return lemma1_ok && lemma2_ok && pinsker_ok; }
};

BoundAudit audit_bounds(const ProbMatrix& p1, const ProbMatrix& p2, const LabelVector& labels);

struct Theorem1Result {
  bool ok = true;
  int witness = -1;  // index of the first counterexample pair
};

// For binary prediction pairs (p, p'): lower entropy implies higher confidence,
// and higher SKL-to-uniform implies higher confidence.
Theorem1Result check_theorem1(std::span<const std::pair<double, double>> pairs);

struct ChurnReport {
  double churn = 0.0;
  std::map<double, double> schurn;  // alpha -> value
  double churn_correct = 0.0;
  double churn_incorrect = 0.0;
  bool correct_empty = false;
  bool incorrect_empty = false;
  std::array<double, 2> mean_confidence{};
  std::array<double, 2> mean_entropy{};
  std::array<double, 2> ece{};
  std::array<double, 2> accuracy{};
};

// Full pairwise report; rechecks the Lemma 1 bound and the slice partition
// identity at build time.
ChurnReport make_churn_report(const ProbMatrix& p1, const ProbMatrix& p2,
                              const LabelVector& labels);

}  // namespace churnlab::metrics
