#include "churnlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace churnlab::metrics {

namespace {

void require_same_shape(const ProbMatrix& p1, const ProbMatrix& p2) {
  if (p1.n != p2.n || p1.k != p2.k) {
    throw UsageError("prediction matrices disagree in shape: " + std::to_string(p1.n) + "x" +
                     std::to_string(p1.k) + " vs " + std::to_string(p2.n) + "x" +
                     std::to_string(p2.k));
  }
}

// Floor at kProbEps, then renormalize back onto the simplex.
std::vector<double> clamp_renorm(std::span<const double> row) {
  std::vector<double> out(row.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    out[j] = std::max(row[j], kProbEps);
    sum += out[j];
  }
  for (double& x : out) x /= sum;
  return out;
}

double raw_l1(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) d += std::abs(a[j] - b[j]);
  return d;
}

// Top probability minus second probability of one row.
double row_confidence(std::span<const double> row) {
  double top = -1.0, second = -1.0;
  for (double x : row) {
    if (x > top) {
      second = top;
      top = x;
    } else if (x > second) {
      second = x;
    }
  }
  return top - second;
}

double binary_entropy(double p) { return -p * std::log(p) - (1.0 - p) * std::log(1.0 - p); }

}  // namespace

int argmax_row(std::span<const double> row) {
  int best = 0;
  for (int j = 1; j < static_cast<int>(row.size()); ++j) {
    if (row[static_cast<std::size_t>(j)] > row[static_cast<std::size_t>(best)]) best = j;
  }
  return best;
}

LabelVector predict_labels(const ProbMatrix& p) {
  std::vector<int> out(static_cast<std::size_t>(p.n));
  for (int i = 0; i < p.n; ++i) out[static_cast<std::size_t>(i)] = argmax_row(p.row(i));
  return LabelVector(std::move(out));
}

double churn(const ProbMatrix& p1, const ProbMatrix& p2) {
  require_same_shape(p1, p2);
  if (p1.n == 0) return 0.0;
  int disagree = 0;
  for (int i = 0; i < p1.n; ++i) {
    if (argmax_row(p1.row(i)) != argmax_row(p2.row(i))) ++disagree;
  }
  return static_cast<double>(disagree) / p1.n;
}

double schurn(const ProbMatrix& p1, const ProbMatrix& p2, double alpha) {
  require_same_shape(p1, p2);
  if (!(alpha > 0.0)) throw UsageError("schurn needs alpha > 0, got " + std::to_string(alpha));
  if (p1.n == 0) return 0.0;
  double total = 0.0;
  for (int i = 0; i < p1.n; ++i) {
    auto r1 = p1.row(i);
    auto r2 = p2.row(i);
    const double m1 = r1[static_cast<std::size_t>(argmax_row(r1))];
    const double m2 = r2[static_cast<std::size_t>(argmax_row(r2))];
    if (!(m1 > 0.0 && m2 > 0.0)) {
      throw UsageError("schurn needs positive max entries, row " + std::to_string(i));
    }
    double d = 0.0;
    for (int j = 0; j < p1.k; ++j) {
      const double a = std::pow(r1[static_cast<std::size_t>(j)] / m1, alpha);
      const double b = std::pow(r2[static_cast<std::size_t>(j)] / m2, alpha);
      d += std::abs(a - b);
    }
    total += d;
  }
  return 0.5 * total / p1.n;
}

std::vector<double> confidence(const ProbMatrix& p) {
  std::vector<double> out(static_cast<std::size_t>(p.n));
  for (int i = 0; i < p.n; ++i) out[static_cast<std::size_t>(i)] = row_confidence(p.row(i));
  return out;
}

double mean_confidence(const ProbMatrix& p) {
  if (p.n == 0) return 0.0;
  double sum = 0.0;
  for (int i = 0; i < p.n; ++i) sum += row_confidence(p.row(i));
  return sum / p.n;
}

SliceChurn slice_churn(const ProbMatrix& p1, const ProbMatrix& p2, const LabelVector& labels) {
  require_same_shape(p1, p2);
  labels.validate(p1.n, p1.k);
  int n_correct = 0, n_incorrect = 0;
  int d_correct = 0, d_incorrect = 0;
  for (int i = 0; i < p1.n; ++i) {
    const int y1 = argmax_row(p1.row(i));
    const int y2 = argmax_row(p2.row(i));
    const bool disagree = y1 != y2;
    if (y1 == labels[i]) {
      ++n_correct;
      if (disagree) ++d_correct;
    } else {
      ++n_incorrect;
      if (disagree) ++d_incorrect;
    }
  }
  SliceChurn out;
  out.correct_empty = n_correct == 0;
  out.incorrect_empty = n_incorrect == 0;
  out.correct = n_correct == 0 ? 0.0 : static_cast<double>(d_correct) / n_correct;
  out.incorrect = n_incorrect == 0 ? 0.0 : static_cast<double>(d_incorrect) / n_incorrect;
  return out;
}

Distances distances(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw UsageError("distances: row lengths differ");
  const std::vector<double> ca = clamp_renorm(a);
  const std::vector<double> cb = clamp_renorm(b);
  Distances d;
  double kl_ba = 0.0;
  for (std::size_t j = 0; j < ca.size(); ++j) {
    d.l1 += std::abs(ca[j] - cb[j]);
    const double log_ratio = std::log(ca[j] / cb[j]);
    d.kl += ca[j] * log_ratio;
    kl_ba -= cb[j] * log_ratio;
  }
  d.kl = std::max(d.kl, 0.0);
  kl_ba = std::max(kl_ba, 0.0);
  d.skl = d.kl + kl_ba;
  return d;
}

double row_entropy(std::span<const double> row) {
  const std::vector<double> c = clamp_renorm(row);
  double h = 0.0;
  for (double x : c) h -= x * std::log(x);
  return h;
}

double mean_entropy(const ProbMatrix& p) {
  if (p.n == 0) return 0.0;
  double sum = 0.0;
  for (int i = 0; i < p.n; ++i) sum += row_entropy(p.row(i));
  return sum / p.n;
}

double skl_to_uniform(std::span<const double> row) {
  const std::vector<double> c = clamp_renorm(row);
  const double u = 1.0 / static_cast<double>(c.size());
  double skl = 0.0;
  for (double x : c) skl += (x - u) * std::log(x / u);
  return std::max(skl, 0.0);
}

double accuracy(const ProbMatrix& p, const LabelVector& labels) {
  labels.validate(p.n, p.k);
  if (p.n == 0) return 0.0;
  int correct = 0;
  for (int i = 0; i < p.n; ++i) {
    if (argmax_row(p.row(i)) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / p.n;
}

double ece(const ProbMatrix& p, const LabelVector& labels, int n_bins) {
  if (n_bins < 1) throw UsageError("ece needs n_bins >= 1");
  labels.validate(p.n, p.k);
  if (p.n == 0) return 0.0;
  std::vector<double> bin_conf(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<int> bin_correct(static_cast<std::size_t>(n_bins), 0);
  std::vector<int> bin_count(static_cast<std::size_t>(n_bins), 0);
  for (int i = 0; i < p.n; ++i) {
    const int yhat = argmax_row(p.row(i));
    const double conf = p.at(i, yhat);
    const int bin = std::min(static_cast<int>(conf * n_bins), n_bins - 1);
    bin_conf[static_cast<std::size_t>(bin)] += conf;
    bin_correct[static_cast<std::size_t>(bin)] += yhat == labels[i] ? 1 : 0;
    bin_count[static_cast<std::size_t>(bin)] += 1;
  }
  double out = 0.0;
  for (int b = 0; b < n_bins; ++b) {
    const int cnt = bin_count[static_cast<std::size_t>(b)];
    if (cnt == 0) continue;
    const double acc = static_cast<double>(bin_correct[static_cast<std::size_t>(b)]) / cnt;
    const double conf = bin_conf[static_cast<std::size_t>(b)] / cnt;
    out += (static_cast<double>(cnt) / p.n) * std::abs(acc - conf);
  }
  return out;
}

BoundAudit audit_bounds(const ProbMatrix& p1, const ProbMatrix& p2, const LabelVector& labels) {
  require_same_shape(p1, p2);
  labels.validate(p1.n, p1.k);
  BoundAudit audit;
  audit.lemma2_slack.resize(static_cast<std::size_t>(p1.n), 0.0);
  audit.pinsker_slack.resize(static_cast<std::size_t>(p1.n), 0.0);

  // Lemma 1 on integer counts: #disagreements vs #errors of each model.
  int disagree = 0, err1 = 0, err2 = 0;
  for (int i = 0; i < p1.n; ++i) {
    const int y1 = argmax_row(p1.row(i));
    const int y2 = argmax_row(p2.row(i));
    if (y1 != y2) ++disagree;
    if (y1 != labels[i]) ++err1;
    if (y2 != labels[i]) ++err2;

    // Per-row checks.
    const double l1 = raw_l1(p1.row(i), p2.row(i));
    const double gamma_min = std::min(row_confidence(p1.row(i)), row_confidence(p2.row(i)));
    audit.lemma2_slack[static_cast<std::size_t>(i)] = l1 - gamma_min;
    if (y1 != y2 && !(l1 > gamma_min)) {
      audit.lemma2_ok = false;
      if (audit.lemma2_witness < 0) audit.lemma2_witness = i;
    }

    const Distances d = distances(p1.row(i), p2.row(i));
    const double pinsker_bound = std::sqrt(2.0 * d.kl);
    audit.pinsker_slack[static_cast<std::size_t>(i)] = pinsker_bound - d.l1;
    if (d.l1 > pinsker_bound + 1e-9) {
      audit.pinsker_ok = false;
      if (audit.pinsker_witness < 0) audit.pinsker_witness = i;
    }
  }
  if (disagree > err1 + err2) {
    audit.lemma1_ok = false;
    audit.lemma1_witness = 0;
  }
  if (p1.n > 0) {
    audit.lemma1_slack =
        static_cast<double>(err1 + err2 - disagree) / static_cast<double>(p1.n);
  }
  return audit;
}

Theorem1Result check_theorem1(std::span<const std::pair<double, double>> pairs) {
  Theorem1Result res;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double p = pairs[i].first;
    const double q = pairs[i].second;
    const double gamma_p = std::abs(2.0 * p - 1.0);
    const double gamma_q = std::abs(2.0 * q - 1.0);
    const double h_p = binary_entropy(p);
    const double h_q = binary_entropy(q);
    // SKL to uniform in the binary case: -0.5*log(p(1-p)) - H(p) - log 2 ... the
    // additive constants cancel in the comparison, so the raw form suffices.
    const double skl_p = -0.5 * std::log(p * (1.0 - p)) - h_p;
    const double skl_q = -0.5 * std::log(q * (1.0 - q)) - h_q;
    const bool entropy_dir = !(h_p <= h_q) || gamma_p >= gamma_q;
    const bool skl_dir = !(skl_p >= skl_q) || gamma_p >= gamma_q;
    if (!entropy_dir || !skl_dir) {
      res.ok = false;
      res.witness = static_cast<int>(i);
      return res;
    }
  }
  return res;
}

ChurnReport make_churn_report(const ProbMatrix& p1, const ProbMatrix& p2,
                              const LabelVector& labels) {
  require_same_shape(p1, p2);
  labels.validate(p1.n, p1.k);
  ChurnReport r;
  r.churn = churn(p1, p2);
  r.schurn[1.0] = schurn(p1, p2, 1.0);
  const SliceChurn s = slice_churn(p1, p2, labels);
  r.churn_correct = s.correct;
  r.churn_incorrect = s.incorrect;
  r.correct_empty = s.correct_empty;
  r.incorrect_empty = s.incorrect_empty;
  r.mean_confidence = {mean_confidence(p1), mean_confidence(p2)};
  r.mean_entropy = {mean_entropy(p1), mean_entropy(p2)};
  r.ece = {ece(p1, labels), ece(p2, labels)};
  r.accuracy = {accuracy(p1, labels), accuracy(p2, labels)};

  // Lemma 1 recheck and the slice partition identity, both on counts.
  const double err_sum = (1.0 - r.accuracy[0]) + (1.0 - r.accuracy[1]);
  if (r.churn > err_sum + 1e-12) {
    throw NumericError("churn report violates the error-sum bound");
  }
  const double n = static_cast<double>(p1.n);
  const double n_correct = r.accuracy[0] * n;
  const double mixture =
      n > 0.0 ? (n_correct * r.churn_correct + (n - n_correct) * r.churn_incorrect) / n : 0.0;
  if (std::abs(mixture - r.churn) > 1e-9) {
    throw NumericError("slice churn does not partition total churn");
  }
  return r;
}

}  // namespace churnlab::metrics
