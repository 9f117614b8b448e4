#include "churnlab/tensor_core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "churnlab/rng.hpp"
#include "churnlab/serialize.hpp"

namespace churnlab {

// ---------------------------------------------------------------------------
// ModelParams
// ---------------------------------------------------------------------------

ModelParams ModelParams::init(const std::vector<int>& dims, std::uint64_t init_seed) {
  if (dims.size() < 2) throw ConfigError("net needs at least input and output dims");
  for (int d : dims) {
    if (d < 1) throw ConfigError("net layer dims must be >= 1");
  }
  ModelParams p;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    p.layer_shapes.push_back({dims[l], dims[l + 1]});
  }
  p.values.assign(p.param_count(), 0.0);
  KeyedRng rng(RngStream::kInit, init_seed);
  for (std::size_t l = 0; l < p.layer_shapes.size(); ++l) {
    const auto& s = p.layer_shapes[l];
    const double lim = std::sqrt(6.0 / (s.in_dim + s.out_dim));
    double* w = p.values.data() + p.weight_offset(l);
    const std::size_t n = static_cast<std::size_t>(s.in_dim) * s.out_dim;
    for (std::size_t i = 0; i < n; ++i) w[i] = lim * (2.0 * rng.next_unit() - 1.0);
    // biases stay zero
  }
  return p;
}

std::size_t ModelParams::param_count() const {
  std::size_t n = 0;
  for (const auto& s : layer_shapes) {
    n += static_cast<std::size_t>(s.in_dim) * s.out_dim + static_cast<std::size_t>(s.out_dim);
  }
  return n;
}

std::size_t ModelParams::weight_offset(std::size_t layer) const {
  std::size_t off = 0;
  for (std::size_t l = 0; l < layer; ++l) {
    off += static_cast<std::size_t>(layer_shapes[l].in_dim) * layer_shapes[l].out_dim +
           static_cast<std::size_t>(layer_shapes[l].out_dim);
  }
  return off;
}

std::size_t ModelParams::bias_offset(std::size_t layer) const {
  return weight_offset(layer) +
         static_cast<std::size_t>(layer_shapes[layer].in_dim) * layer_shapes[layer].out_dim;
}

std::uint64_t ModelParams::digest() const {
  Fnv1a h;
  for (const auto& s : layer_shapes) {
    h.update_u64(static_cast<std::uint64_t>(s.in_dim));
    h.update_u64(static_cast<std::uint64_t>(s.out_dim));
  }
  for (double v : values) h.update(v);
  return h.digest();
}

void ModelParams::check_finite() const {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError("parameter " + std::to_string(i) + " is non-finite");
    }
  }
}

// ---------------------------------------------------------------------------
// Schedule and optimizer
// ---------------------------------------------------------------------------

double lr_at(const LrSchedule& schedule, int step) {
  if (schedule.warmup_steps > 0 && step < schedule.warmup_steps) {
    return schedule.peak_lr * static_cast<double>(step) / schedule.warmup_steps;
  }
  double lr = schedule.peak_lr;
  for (int d : schedule.decay_steps) {
    if (d <= step) lr *= schedule.decay_factor;
  }
  return lr;
}

void optimizer_step(ModelParams& params, std::span<const double> grads, OptState& state,
                    double lr) {
  const std::size_t n = params.values.size();
  if (grads.size() != n || state.velocity.size() != n) {
    throw UsageError("optimizer_step: params/grads/velocity lengths disagree");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericError("non-finite gradient at parameter " + std::to_string(i));
    }
    const double v = state.momentum * state.velocity[i] - lr * grads[i];
    state.velocity[i] = v;
    params.values[i] += state.momentum * v - lr * grads[i];
  }
  params.check_finite();
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

namespace {

void require_same_mat_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw UsageError(std::string(op) + ": shapes disagree (" + std::to_string(a.rows) + "x" +
                     std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                     std::to_string(b.cols) + ")");
  }
}

}  // namespace

NodeId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::input(Mat value) {
  Node n{Op::kInput};
  n.val = std::move(value);
  return push(std::move(n));
}

NodeId Tape::param(Mat value, std::size_t grad_offset) {
  Node n{Op::kParam};
  n.grad_offset = grad_offset;
  grad_size_ = std::max(grad_size_, grad_offset + value.size());
  n.val = std::move(value);
  return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  if (A.cols != B.rows) {
    throw UsageError("matmul: inner dims disagree (" + std::to_string(A.cols) + " vs " +
                     std::to_string(B.rows) + ")");
  }
  Node n{Op::kMatMul, a, b};
  n.val = Mat(A.rows, B.cols);
  for (int i = 0; i < A.rows; ++i) {
    for (int j = 0; j < B.cols; ++j) {
      double acc = 0.0;
      for (int t = 0; t < A.cols; ++t) acc += A.at(i, t) * B.at(t, j);
      n.val.at(i, j) = acc;
    }
  }
  return push(std::move(n));
}

NodeId Tape::add_rowvec(NodeId a, NodeId row) {
  const Mat& A = val(a);
  const Mat& R = val(row);
  if (R.rows != 1 || R.cols != A.cols) throw UsageError("add_rowvec: bias shape mismatch");
  Node n{Op::kAddRowVec, a, row};
  n.val = Mat(A.rows, A.cols);
  for (int i = 0; i < A.rows; ++i) {
    for (int j = 0; j < A.cols; ++j) n.val.at(i, j) = A.at(i, j) + R.at(0, j);
  }
  return push(std::move(n));
}

NodeId Tape::tanh_of(NodeId a) {
  Node n{Op::kTanh, a};
  n.val = val(a);
  for (double& x : n.val.v) x = std::tanh(x);
  return push(std::move(n));
}

NodeId Tape::softmax_rows(NodeId a) {
  const Mat& A = val(a);
  Node n{Op::kSoftmaxRows, a};
  n.val = Mat(A.rows, A.cols);
  for (int i = 0; i < A.rows; ++i) {
    double m = A.at(i, 0);
    for (int j = 1; j < A.cols; ++j) m = std::max(m, A.at(i, j));
    double sum = 0.0;
    for (int j = 0; j < A.cols; ++j) {
      const double e = std::exp(A.at(i, j) - m);
      n.val.at(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < A.cols; ++j) n.val.at(i, j) /= sum;
  }
  return push(std::move(n));
}

NodeId Tape::clamp_floor(NodeId a, double floor) {
  Node n{Op::kClampFloor, a};
  n.c = floor;
  n.val = val(a);
  for (double& x : n.val.v) x = std::max(x, floor);
  return push(std::move(n));
}

NodeId Tape::div_rowsum(NodeId a) {
  const Mat& A = val(a);
  Node n{Op::kDivRowSum, a};
  n.val = Mat(A.rows, A.cols);
  for (int i = 0; i < A.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < A.cols; ++j) s += A.at(i, j);
    for (int j = 0; j < A.cols; ++j) n.val.at(i, j) = A.at(i, j) / s;
  }
  return push(std::move(n));
}

NodeId Tape::log_of(NodeId a) {
  Node n{Op::kLog, a};
  n.val = val(a);
  for (double& x : n.val.v) x = std::log(x);
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  require_same_mat_shape(val(a), val(b), "add");
  Node n{Op::kAdd, a, b};
  n.val = val(a);
  const Mat& B = val(b);
  for (std::size_t i = 0; i < n.val.v.size(); ++i) n.val.v[i] += B.v[i];
  return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  require_same_mat_shape(val(a), val(b), "sub");
  Node n{Op::kSub, a, b};
  n.val = val(a);
  const Mat& B = val(b);
  for (std::size_t i = 0; i < n.val.v.size(); ++i) n.val.v[i] -= B.v[i];
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  require_same_mat_shape(val(a), val(b), "mul");
  Node n{Op::kMul, a, b};
  n.val = val(a);
  const Mat& B = val(b);
  for (std::size_t i = 0; i < n.val.v.size(); ++i) n.val.v[i] *= B.v[i];
  return push(std::move(n));
}

NodeId Tape::abs_of(NodeId a) {
  Node n{Op::kAbs, a};
  n.val = val(a);
  for (double& x : n.val.v) x = std::abs(x);
  return push(std::move(n));
}

NodeId Tape::pow_const(NodeId a, double exponent) {
  Node n{Op::kPowConst, a};
  n.c = exponent;
  n.val = val(a);
  for (double& x : n.val.v) x = std::pow(x, exponent);
  return push(std::move(n));
}

NodeId Tape::scale(NodeId a, double factor) {
  Node n{Op::kScale, a};
  n.c = factor;
  n.val = val(a);
  for (double& x : n.val.v) x *= factor;
  return push(std::move(n));
}

NodeId Tape::row_sum(NodeId a) {
  const Mat& A = val(a);
  Node n{Op::kRowSum, a};
  n.val = Mat(A.rows, 1);
  for (int i = 0; i < A.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < A.cols; ++j) s += A.at(i, j);
    n.val.at(i, 0) = s;
  }
  return push(std::move(n));
}

NodeId Tape::mean_all(NodeId a) {
  const Mat& A = val(a);
  if (A.size() == 0) throw UsageError("mean_all: empty matrix");
  Node n{Op::kMeanAll, a};
  n.val = Mat(1, 1);
  double s = 0.0;
  for (double x : A.v) s += x;
  n.val.at(0, 0) = s / static_cast<double>(A.size());
  return push(std::move(n));
}

NodeId Tape::gather_label(NodeId a, const LabelVector& labels) {
  const Mat& A = val(a);
  labels.validate(A.rows, A.cols);
  Node n{Op::kGatherLabel, a};
  n.idx = labels.y;
  n.val = Mat(A.rows, 1);
  for (int i = 0; i < A.rows; ++i) n.val.at(i, 0) = A.at(i, labels[i]);
  return push(std::move(n));
}

NodeId Tape::topk_gather(NodeId a, int k) {
  const Mat& A = val(a);
  if (k < 2 || k > A.cols) {
    throw UsageError("topk_gather: k must be in [2, cols], got k=" + std::to_string(k));
  }
  Node n{Op::kTopKGather, a};
  n.c = k;
  n.val = Mat(A.rows, k);
  n.idx.resize(static_cast<std::size_t>(A.rows) * k);
  std::vector<int> order(static_cast<std::size_t>(A.cols));
  for (int i = 0; i < A.rows; ++i) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y) { return A.at(i, x) > A.at(i, y); });
    for (int j = 0; j < k; ++j) {
      n.idx[static_cast<std::size_t>(i) * k + j] = order[static_cast<std::size_t>(j)];
      n.val.at(i, j) = A.at(i, order[static_cast<std::size_t>(j)]);
    }
  }
  return push(std::move(n));
}

std::vector<double> Tape::backward(NodeId loss) {
  const Mat& L = val(loss);
  if (L.rows != 1 || L.cols != 1) {
    throw UsageError("backward needs a scalar loss node, got " + std::to_string(L.rows) + "x" +
                     std::to_string(L.cols));
  }
  std::vector<double> grads(grad_size_, 0.0);
  for (auto& n : nodes_) {
    n.grad = Mat(n.val.rows, n.val.cols);
  }
  nodes_[static_cast<std::size_t>(loss)].grad.at(0, 0) = 1.0;

  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    const Mat& g = n.grad;
    switch (n.op) {
      case Op::kInput:
        break;
      case Op::kParam: {
        for (std::size_t i = 0; i < g.v.size(); ++i) grads[n.grad_offset + i] += g.v[i];
        break;
      }
      case Op::kMatMul: {
        const Mat& A = val(n.a);
        const Mat& B = val(n.b);
        Mat& gA = nodes_[static_cast<std::size_t>(n.a)].grad;
        Mat& gB = nodes_[static_cast<std::size_t>(n.b)].grad;
        // dA = g * B^T, dB = A^T * g
        for (int i = 0; i < A.rows; ++i) {
          for (int t = 0; t < A.cols; ++t) {
            double acc = 0.0;
            for (int j = 0; j < B.cols; ++j) acc += g.at(i, j) * B.at(t, j);
            gA.at(i, t) += acc;
          }
        }
        for (int t = 0; t < B.rows; ++t) {
          for (int j = 0; j < B.cols; ++j) {
            double acc = 0.0;
            for (int i = 0; i < A.rows; ++i) acc += A.at(i, t) * g.at(i, j);
            gB.at(t, j) += acc;
          }
        }
        break;
      }
      case Op::kAddRowVec: {
        Mat& gA = nodes_[static_cast<std::size_t>(n.a)].grad;
        Mat& gR = nodes_[static_cast<std::size_t>(n.b)].grad;
        for (int i = 0; i < g.rows; ++i) {
          for (int j = 0; j < g.cols; ++j) {
            gA.at(i, j) += g.at(i, j);
            gR.at(0, j) += g.at(i, j);
          }
        }
        break;
      }
      case Op::kTanh: {
        Mat& gA = nodes_[static_cast<std::size_t>(n.a)].grad;
        for (std::size_t i = 0; i < g.v.size(); ++i) {
          gA.v[i] += g.v[i] * (1.0 - n.val.v[i] * n.val.v[i]);
        }
        break;
      }
      case Op::kSoftmaxRows: {
        Mat& gA = nodes_[static_cast<std::size_t>(n.a)].grad;
        for (int i = 0; i < g.rows; ++i) {
          double dot = 0.0;
          for (int j = 0; j < g.cols; ++j) dot += g.at(i, j) * n.val.at(i, j);
          for (int j = 0; j < g.cols; ++j) {
            gA.at(i, j) += n.val.at(i, j) * (g.at(i, j) - dot);
          }
        }
        break;
      }
      case Op::kClampFloor: {
        const Mat& A = val(n.a);
        Mat& gA = nodes_[static_cast<std::size_t>(n.a)].grad;
        for (std::size_t i = 0; i < g.v.size(); ++i) {
          if (A.v[i] > n.c) gA.v[i] += g.v[i];
        }
        break;
      }
      case Op::kDivRowSum: {
        const Mat& A = val(n.a);
        Mat& gA = nodes_[static_cast<std::size_t>(n.a)].grad;
        for (int i = 0; i < g.rows; ++i) {
          double s = 0.0;
          for (int j = 0; j < g.cols; ++j) s += A.at(i, j);
          double dot = 0.0;
          for (int j = 0; j < g.cols; ++j) dot += g.at(i, j) * n.val.at(i, j);
          for (int j = 0; j < g.cols; ++j) {
            gA.at(i, j) += (g.at(i, j) - dot) / s;
          }
        }
        break;
      }
      case Op::kLog: {
        const Mat& A = val(n.a);
        Mat& gA = nodes_[static_cast<std::size_t>(n.a)].grad;
        for (std::size_t i = 0; i < g.v.size(); ++i) gA.v[i] += g.v[i] / A.v[i];
        break;
      }
      case Op::kAdd: {
        Mat& gA = nodes_[static_cast<std::size_t>(n.a)].grad;
        Mat& gB = nodes_[static_cast<std::size_t>(n.b)].grad;
        for (std::size_t i = 0; i < g.v.size(); ++i) {
          gA.v[i] += g.v[i];
          gB.v[i] += g.v[i];
        }
        break;
      }
      case Op::kSub: {
        Mat& gA = nodes_[static_cast<std::size_t>(n.a)].grad;
        Mat& gB = nodes_[static_cast<std::size_t>(n.b)].grad;
        for (std::size_t i = 0; i < g.v.size(); ++i) {
          gA.v[i] += g.v[i];
          gB.v[i] -= g.v[i];
        }
        break;
      }
      case Op::kMul: {
        const Mat& A = val(n.a);
        const Mat& B = val(n.b);
        Mat& gA = nodes_[static_cast<std::size_t>(n.a)].grad;
        Mat& gB = nodes_[static_cast<std::size_t>(n.b)].grad;
        for (std::size_t i = 0; i < g.v.size(); ++i) {
          gA.v[i] += g.v[i] * B.v[i];
          gB.v[i] += g.v[i] * A.v[i];
        }
        break;
      }
      case Op::kAbs: {
        const Mat& A = val(n.a);
        Mat& gA = nodes_[static_cast<std::size_t>(n.a)].grad;
        for (std::size_t i = 0; i < g.v.size(); ++i) {
          const double sign = A.v[i] > 0.0 ? 1.0 : (A.v[i] < 0.0 ? -1.0 : 0.0);
          gA.v[i] += g.v[i] * sign;
        }
        break;
      }
      case Op::kPowConst: {
        const Mat& A = val(n.a);
        Mat& gA = nodes_[static_cast<std::size_t>(n.a)].grad;
        for (std::size_t i = 0; i < g.v.size(); ++i) {
          gA.v[i] += g.v[i] * n.c * std::pow(A.v[i], n.c - 1.0);
        }
        break;
      }
      case Op::kScale: {
        Mat& gA = nodes_[static_cast<std::size_t>(n.a)].grad;
        for (std::size_t i = 0; i < g.v.size(); ++i) gA.v[i] += g.v[i] * n.c;
        break;
      }
      case Op::kRowSum: {
        Mat& gA = nodes_[static_cast<std::size_t>(n.a)].grad;
        for (int i = 0; i < gA.rows; ++i) {
          for (int j = 0; j < gA.cols; ++j) gA.at(i, j) += g.at(i, 0);
        }
        break;
      }
      case Op::kMeanAll: {
        Mat& gA = nodes_[static_cast<std::size_t>(n.a)].grad;
        const double w = g.at(0, 0) / static_cast<double>(gA.size());
        for (double& x : gA.v) x += w;
        break;
      }
      case Op::kGatherLabel: {
        Mat& gA = nodes_[static_cast<std::size_t>(n.a)].grad;
        for (int i = 0; i < g.rows; ++i) {
          gA.at(i, n.idx[static_cast<std::size_t>(i)]) += g.at(i, 0);
        }
        break;
      }
      case Op::kTopKGather: {
        Mat& gA = nodes_[static_cast<std::size_t>(n.a)].grad;
        const int k = static_cast<int>(n.c);
        for (int i = 0; i < g.rows; ++i) {
          for (int j = 0; j < k; ++j) {
            gA.at(i, n.idx[static_cast<std::size_t>(i) * k + j]) += g.at(i, j);
          }
        }
        break;
      }
    }
  }
  return grads;
}

std::vector<double> compute_gradients(Tape& tape, NodeId loss) { return tape.backward(loss); }

// ---------------------------------------------------------------------------
// Dense net forward
// ---------------------------------------------------------------------------

namespace {

void require_batch_matches(const ModelParams& params, const Mat& batch) {
  if (batch.cols != params.input_dim()) {
    throw ConfigError("batch has " + std::to_string(batch.cols) + " features but net expects " +
                      std::to_string(params.input_dim()));
  }
}

void require_finite_mat(const Mat& m, std::size_t layer, const char* what) {
  for (double x : m.v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("non-finite ") + what + " at layer " +
                         std::to_string(layer));
    }
  }
}

}  // namespace

NodeId mlp_probs_node(Tape& tape, const ModelParams& params, const Mat& batch,
                      std::size_t grad_base) {
  require_batch_matches(params, batch);
  NodeId x = tape.input(batch);
  const std::size_t n_layers = params.layer_shapes.size();
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& s = params.layer_shapes[l];
    Mat w(s.in_dim, s.out_dim);
    std::copy_n(params.values.begin() + static_cast<std::ptrdiff_t>(params.weight_offset(l)),
                w.size(), w.v.begin());
    Mat b(1, s.out_dim);
    std::copy_n(params.values.begin() + static_cast<std::ptrdiff_t>(params.bias_offset(l)),
                b.size(), b.v.begin());
    const NodeId wn = tape.param(std::move(w), grad_base + params.weight_offset(l));
    const NodeId bn = tape.param(std::move(b), grad_base + params.bias_offset(l));
    NodeId z = tape.add_rowvec(tape.matmul(x, wn), bn);
    require_finite_mat(tape.value(z), l, "activation");
    x = (l + 1 < n_layers) ? tape.tanh_of(z) : tape.softmax_rows(z);
  }
  return x;
}

ProbMatrix forward_probs(const ModelParams& params, const Mat& batch) {
  require_batch_matches(params, batch);
  Mat x = batch;
  const std::size_t n_layers = params.layer_shapes.size();
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& s = params.layer_shapes[l];
    const double* w = params.values.data() + params.weight_offset(l);
    const double* b = params.values.data() + params.bias_offset(l);
    Mat z(x.rows, s.out_dim);
    for (int i = 0; i < x.rows; ++i) {
      for (int j = 0; j < s.out_dim; ++j) {
        double acc = b[j];
        for (int t = 0; t < s.in_dim; ++t) {
          acc += x.at(i, t) * w[static_cast<std::size_t>(t) * s.out_dim + j];
        }
        z.at(i, j) = acc;
      }
    }
    require_finite_mat(z, l, "activation");
    if (l + 1 < n_layers) {
      for (double& v : z.v) v = std::tanh(v);
    }
    x = std::move(z);
  }
  // stabilized softmax on the final logits
  ProbMatrix probs(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i) {
    double m = x.at(i, 0);
    for (int j = 1; j < x.cols; ++j) m = std::max(m, x.at(i, j));
    double sum = 0.0;
    for (int j = 0; j < x.cols; ++j) {
      const double e = std::exp(x.at(i, j) - m);
      probs.at(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < x.cols; ++j) probs.at(i, j) /= sum;
  }
  return probs;
}

}  // namespace churnlab
