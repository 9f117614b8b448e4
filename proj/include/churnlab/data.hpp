#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "churnlab/types.hpp"

namespace churnlab::data {

// The three randomness channels of a training run. Each channel drives exactly
// one source: init_seed the parameter draw, order_seed the minibatch
// permutations, augment_seed the feature noise.
struct SeedBundle {
  std::uint64_t init_seed = 0;
  std::uint64_t order_seed = 0;
  std::uint64_t augment_seed = 0;

  bool operator==(const SeedBundle&) const = default;
};

struct Dataset {
  Mat features;  // N x D
  LabelVector labels;
  int num_classes = 0;
  std::vector<int> train_idx;
  std::vector<int> eval_idx;

  int size() const { return features.rows; }
  int dim() const { return features.cols; }

  Mat gather_features(const std::vector<int>& rows) const;
  LabelVector gather_labels(const std::vector<int>& rows) const;

  // FNV-1a over the canonical CSV bytes.
  std::uint64_t digest() const;
  std::uint64_t eval_digest() const;
};

// k Gaussian clusters with seed-derived means on a sphere of radius 3 and
// isotropic stddev = spread. Rows are grouped by class; every fifth row is
// tagged eval (fixed 80/20 stride split, invariant across seed bundles).
Dataset gen_blobs(int n_per_class, int k, int d, double spread, std::uint64_t seed);

// CSV with header label,f0,...,f{D-1}; rows keep file order. Applies the same
// stride split.
Dataset load_csv(const std::string& path);

// Canonical CSV form (shortest round-trip decimals).
void write_csv(std::ostream& out, const Dataset& ds);
void write_csv_file(const std::string& path, const Dataset& ds);

// Fisher-Yates permutation of [0,n) keyed by (order_seed, epoch); any epoch is
// recomputable without touching the others.
std::vector<int> epoch_order(std::uint64_t order_seed, int epoch, int n);

// Additive Gaussian feature noise N(0, sigma^2) keyed by
// (augment_seed, epoch, batch_index). sigma=0 returns the input bit-identically.
Mat augment(const Mat& batch, std::uint64_t augment_seed, int epoch, int batch_index,
            double sigma);

}  // namespace churnlab::data
