#include "churnlab/data.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "churnlab/common.hpp"
#include "churnlab/rng.hpp"
#include "churnlab/serialize.hpp"

namespace churnlab::data {

namespace {

// Every fifth row goes to eval; the split depends on indices only, so it is
// identical for every seed bundle and churn is always measured on the same
// examples.
void apply_stride_split(Dataset& ds) {
  ds.train_idx.clear();
  ds.eval_idx.clear();
  for (int i = 0; i < ds.size(); ++i) {
    if (i % 5 == 4) {
      ds.eval_idx.push_back(i);
    } else {
      ds.train_idx.push_back(i);
    }
  }
}

std::string csv_rows(const Dataset& ds, const std::vector<int>* subset) {
  std::ostringstream out;
  out << "label";
  for (int j = 0; j < ds.dim(); ++j) out << ",f" << j;
  out << "\n";
  const int n = subset ? static_cast<int>(subset->size()) : ds.size();
  for (int r = 0; r < n; ++r) {
    const int i = subset ? (*subset)[static_cast<std::size_t>(r)] : r;
    out << ds.labels[i];
    for (int j = 0; j < ds.dim(); ++j) out << ',' << format_double(ds.features.at(i, j));
    out << "\n";
  }
  return out.str();
}

}  // namespace

Mat Dataset::gather_features(const std::vector<int>& rows) const {
  Mat out(static_cast<int>(rows.size()), dim());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (int j = 0; j < dim(); ++j) {
      out.at(static_cast<int>(r), j) = features.at(rows[r], j);
    }
  }
  return out;
}

LabelVector Dataset::gather_labels(const std::vector<int>& rows) const {
  std::vector<int> out(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) out[r] = labels[rows[r]];
  return LabelVector(std::move(out));
}

std::uint64_t Dataset::digest() const {
  Fnv1a h;
  h.update(csv_rows(*this, nullptr));
  return h.digest();
}

std::uint64_t Dataset::eval_digest() const {
  Fnv1a h;
  h.update(csv_rows(*this, &eval_idx));
  return h.digest();
}

Dataset gen_blobs(int n_per_class, int k, int d, double spread, std::uint64_t seed) {
  if (k < 2) throw UsageError("gen_blobs: k must be >= 2");
  if (d < 1) throw UsageError("gen_blobs: d must be >= 1");
  if (n_per_class < 1) throw UsageError("gen_blobs: n_per_class must be >= 1");
  if (!(spread > 0.0)) throw UsageError("gen_blobs: spread must be > 0");

  Dataset ds;
  ds.num_classes = k;
  ds.features = Mat(n_per_class * k, d);
  std::vector<int> labels(static_cast<std::size_t>(n_per_class) * k);

  for (int c = 0; c < k; ++c) {
    KeyedRng rng(RngStream::kBlobs, seed, static_cast<std::uint64_t>(c));
    // class mean: random direction scaled to the radius-3 sphere
    std::vector<double> mean(static_cast<std::size_t>(d));
    double norm = 0.0;
    do {
      norm = 0.0;
      for (int j = 0; j < d; ++j) {
        mean[static_cast<std::size_t>(j)] = rng.next_gauss();
        norm += mean[static_cast<std::size_t>(j)] * mean[static_cast<std::size_t>(j)];
      }
      norm = std::sqrt(norm);
    } while (norm < 1e-9);
    for (int j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] *= 3.0 / norm;

    for (int i = 0; i < n_per_class; ++i) {
      const int row = c * n_per_class + i;
      labels[static_cast<std::size_t>(row)] = c;
      for (int j = 0; j < d; ++j) {
        ds.features.at(row, j) = mean[static_cast<std::size_t>(j)] + spread * rng.next_gauss();
      }
    }
  }
  ds.labels = LabelVector(std::move(labels));
  apply_stride_split(ds);
  return ds;
}

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw ParseError("'" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  // header: label,f0,...,f{D-1}
  std::vector<std::string> cols;
  {
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) cols.push_back(tok);
  }
  if (cols.empty() || cols[0] != "label") {
    throw ParseError("'" + path + "' line 1: header must start with 'label'");
  }
  const int d = static_cast<int>(cols.size()) - 1;
  if (d < 1) throw ParseError("'" + path + "' line 1: no feature columns");
  for (int j = 0; j < d; ++j) {
    if (cols[static_cast<std::size_t>(j) + 1] != "f" + std::to_string(j)) {
      throw ParseError("'" + path + "' line 1: expected column f" + std::to_string(j));
    }
  }

  std::vector<double> feats;
  std::vector<int> labels;
  int line_no = 1;
  int max_label = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    int col = 0;
    while (std::getline(ss, tok, ',')) {
      try {
        if (col == 0) {
          const long long y = parse_int(tok);
          if (y < 0) throw ParseError("negative label");
          labels.push_back(static_cast<int>(y));
          max_label = std::max(max_label, static_cast<int>(y));
        } else {
          const double v = parse_double(tok);
          if (!std::isfinite(v)) throw ParseError("non-finite feature");
          feats.push_back(v);
        }
      } catch (const ParseError& e) {
        throw ParseError("'" + path + "' line " + std::to_string(line_no) + ": " + e.what());
      }
      ++col;
    }
    if (col != d + 1) {
      throw ParseError("'" + path + "' line " + std::to_string(line_no) + ": expected " +
                       std::to_string(d + 1) + " columns, got " + std::to_string(col));
    }
  }
  if (labels.empty()) throw ParseError("'" + path + "' has no data rows");

  Dataset ds;
  ds.num_classes = max_label + 1;
  ds.features = Mat(static_cast<int>(labels.size()), d, std::move(feats));
  ds.labels = LabelVector(std::move(labels));
  if (ds.num_classes < 2) {
    throw ParseError("'" + path + "': needs at least two classes, saw only label 0");
  }
  apply_stride_split(ds);
  return ds;
}

void write_csv(std::ostream& out, const Dataset& ds) { out << csv_rows(ds, nullptr); }

void write_csv_file(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path + "'");
  write_csv(out, ds);
}

std::vector<int> epoch_order(std::uint64_t order_seed, int epoch, int n) {
  if (n < 1) throw UsageError("epoch_order: n must be >= 1");
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  KeyedRng rng(RngStream::kOrder, order_seed, static_cast<std::uint64_t>(epoch));
  for (int i = n - 1; i >= 1; --i) {
    const auto j = rng.next_below(static_cast<std::uint64_t>(i) + 1);
    std::swap(perm[static_cast<std::size_t>(i)], perm[j]);
  }
  return perm;
}

Mat augment(const Mat& batch, std::uint64_t augment_seed, int epoch, int batch_index,
            double sigma) {
  if (sigma < 0.0) throw UsageError("augment: sigma must be >= 0");
  if (sigma == 0.0) return batch;
  KeyedRng rng(RngStream::kAugment, augment_seed, static_cast<std::uint64_t>(epoch),
               static_cast<std::uint64_t>(batch_index));
  Mat out = batch;
  for (double& x : out.v) x += sigma * rng.next_gauss();
  return out;
}

}  // namespace churnlab::data
