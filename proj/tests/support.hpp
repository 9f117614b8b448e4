#pragma once

// Shared test helpers: random matrix generators and the central-difference
// gradient oracle. Test-only; the oracle must stay independent of the tape.

#include <cmath>
#include <functional>
#include <vector>

#include "churnlab/rng.hpp"
#include "churnlab/tensor_core.hpp"
#include "churnlab/types.hpp"

namespace churnlab::testsupport {

// Random row-stochastic matrix (uniform draws, normalized).
inline ProbMatrix random_probs(KeyedRng& rng, int n, int k) {
  ProbMatrix p(n, k);
  for (int i = 0; i < n; ++i) {
    double sum = 0.0;
    for (int j = 0; j < k; ++j) {
      const double u = rng.next_unit() + 1e-6;
      p.at(i, j) = u;
      sum += u;
    }
    for (int j = 0; j < k; ++j) p.at(i, j) /= sum;
  }
  return p;
}

// Random matrix whose per-row confidence (top minus second) is at least gap.
inline ProbMatrix random_probs_with_confidence(KeyedRng& rng, int n, int k, double gap) {
  ProbMatrix p = random_probs(rng, n, k);
  for (int i = 0; i < n; ++i) {
    auto row = p.row(i);
    int top = 0, second = 1;
    if (row[1] > row[0]) {
      top = 1;
      second = 0;
    }
    for (int j = 2; j < k; ++j) {
      if (row[j] > row[top]) {
        second = top;
        top = j;
      } else if (row[j] > row[second]) {
        second = j;
      }
    }
    const double need = gap + 0.05 - (row[top] - row[second]);
    if (need > 0.0) {
      // shift mass from every other class onto the top one
      const double take = need / (k - 1);
      for (int j = 0; j < k; ++j) {
        if (j == top) continue;
        const double d = std::min(take, row[j] * 0.9);
        row[j] -= d;
        row[top] += d;
      }
    }
  }
  return p;
}

inline LabelVector random_labels(KeyedRng& rng, int n, int k) {
  std::vector<int> y(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    y[static_cast<std::size_t>(i)] = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(k)));
  }
  return LabelVector(std::move(y));
}

inline Mat random_batch(KeyedRng& rng, int n, int d, double scale = 1.5) {
  Mat m(n, d);
  for (double& x : m.v) x = scale * rng.next_gauss();
  return m;
}

// Central differences with h = 1e-6 over every parameter coordinate.
// eval must recompute the loss value from scratch for the current params.
inline std::vector<double> central_diff_grad(ModelParams& params,
                                             const std::function<double()>& eval,
                                             double h = 1e-6) {
  std::vector<double> g(params.values.size());
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    const double orig = params.values[i];
    params.values[i] = orig + h;
    const double up = eval();
    params.values[i] = orig - h;
    const double down = eval();
    params.values[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Relative error with a unit floor: coordinates whose true gradient is far
// below the loss scale are compared absolutely.
inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1.0});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace churnlab::testsupport
