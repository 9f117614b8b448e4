#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "churnlab/common.hpp"

namespace churnlab {

// Dense row-major matrix of doubles. The only tensor shape in the project.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}
  Mat(int r, int c, std::vector<double> data) : rows(r), cols(c), v(std::move(data)) {}

  double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
  std::span<const double> row(int r) const {
    return std::span<const double>(v).subspan(static_cast<std::size_t>(r) * cols,
                                              static_cast<std::size_t>(cols));
  }
  std::span<double> row(int r) {
    return std::span<double>(v).subspan(static_cast<std::size_t>(r) * cols,
                                        static_cast<std::size_t>(cols));
  }
  std::size_t size() const { return v.size(); }
};

// Row-stochastic prediction matrix: n rows on the K-simplex.
struct ProbMatrix {
  int n = 0;
  int k = 0;
  std::vector<double> p;  // row-major n*k

  ProbMatrix() = default;
  ProbMatrix(int n_, int k_) : n(n_), k(k_), p(static_cast<std::size_t>(n_) * k_, 0.0) {}

  double& at(int i, int j) { return p[static_cast<std::size_t>(i) * k + j]; }
  double at(int i, int j) const { return p[static_cast<std::size_t>(i) * k + j]; }
  std::span<const double> row(int i) const {
    return std::span<const double>(p).subspan(static_cast<std::size_t>(i) * k,
                                              static_cast<std::size_t>(k));
  }
  std::span<double> row(int i) {
    return std::span<double>(p).subspan(static_cast<std::size_t>(i) * k,
                                        static_cast<std::size_t>(k));
  }

  // Entries in [0,1], rows sum to 1 within 1e-9.
  void validate() const {
    if (k < 2) throw UsageError("ProbMatrix needs k >= 2, got k=" + std::to_string(k));
    if (p.size() != static_cast<std::size_t>(n) * k) {
      throw UsageError("ProbMatrix storage does not match n*k");
    }
    for (int i = 0; i < n; ++i) {
      double sum = 0.0;
      for (int j = 0; j < k; ++j) {
        const double x = at(i, j);
        if (!(x >= 0.0 && x <= 1.0)) {
          throw UsageError("ProbMatrix entry out of [0,1] at row " + std::to_string(i));
        }
        sum += x;
      }
      if (std::abs(sum - 1.0) > 1e-9) {
        throw UsageError("ProbMatrix row " + std::to_string(i) + " sums to " +
                         std::to_string(sum));
      }
    }
  }
};

struct LabelVector {
  std::vector<int> y;

  LabelVector() = default;
  explicit LabelVector(std::vector<int> labels) : y(std::move(labels)) {}

  int size() const { return static_cast<int>(y.size()); }
  int operator[](int i) const { return y[static_cast<std::size_t>(i)]; }

  void validate(int n, int k) const {
    if (size() != n) {
      throw UsageError("label count " + std::to_string(size()) + " does not match n=" +
                       std::to_string(n));
    }
    for (int i = 0; i < n; ++i) {
      if (y[static_cast<std::size_t>(i)] < 0 || y[static_cast<std::size_t>(i)] >= k) {
        throw UsageError("label out of [0," + std::to_string(k) + ") at row " +
                         std::to_string(i));
      }
    }
  }
};

}  // namespace churnlab
