#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "churnlab/types.hpp"

namespace churnlab {

struct LayerShape {
  int in_dim = 0;
  int out_dim = 0;
};

// Flat parameter store: weights (row-major in_dim x out_dim) then bias per
// layer. All arithmetic is 64-bit and single-threaded with fixed reduction
// order, so identical inputs give bit-identical results.
struct ModelParams {
  std::vector<LayerShape> layer_shapes;
  std::vector<double> values;

  // dims = [input, hidden..., output]. Weights drawn uniform from
  // (-sqrt(6/(in+out)), +sqrt(6/(in+out))), biases start at zero.
  static ModelParams init(const std::vector<int>& dims, std::uint64_t init_seed);

  std::size_t param_count() const;
  std::size_t weight_offset(std::size_t layer) const;
  std::size_t bias_offset(std::size_t layer) const;
  int input_dim() const { return layer_shapes.front().in_dim; }
  int output_dim() const { return layer_shapes.back().out_dim; }
  std::uint64_t digest() const;
  void check_finite() const;  // throws NumericError naming the first bad index
};

struct LrSchedule {
  double peak_lr = 0.05;
  int warmup_steps = 0;
  std::vector<int> decay_steps;  // sorted ascending
  double decay_factor = 0.1;
};

// Linear warmup from 0 to peak, then peak * factor^(#decay points <= step).
double lr_at(const LrSchedule& schedule, int step);

struct OptState {
  std::vector<double> velocity;
  double momentum = 0.9;

  explicit OptState(std::size_t n = 0, double mu = 0.9)
      : velocity(n, 0.0), momentum(mu) {}
};

// Nesterov update: v <- mu*v - lr*g; w <- w + mu*v - lr*g (with the new v).
void optimizer_step(ModelParams& params, std::span<const double> grads, OptState& state,
                    double lr);

using NodeId = int;

// Append-only reverse-mode tape over dense matrices. Node inputs always
// precede their consumers, so one reverse sweep is a valid backward pass.
class Tape {
 public:
  enum class Op {
    kInput,
    kParam,
    kMatMul,
    kAddRowVec,
    kTanh,
    kSoftmaxRows,
    kClampFloor,
    kDivRowSum,
    kLog,
    kAdd,
    kSub,
    kMul,
    kAbs,
    kPowConst,
    kScale,
    kRowSum,
    kMeanAll,
    kGatherLabel,
    kTopKGather,
  };

  NodeId input(Mat value);

  // Registers one weight or bias matrix; gradients land in the flat gradient
  // vector at grad_offset.
  NodeId param(Mat value, std::size_t grad_offset);

  NodeId matmul(NodeId a, NodeId b);
  NodeId add_rowvec(NodeId a, NodeId row);
  NodeId tanh_of(NodeId a);
  NodeId softmax_rows(NodeId a);
  NodeId clamp_floor(NodeId a, double floor);
  NodeId div_rowsum(NodeId a);
  NodeId log_of(NodeId a);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId abs_of(NodeId a);
  NodeId pow_const(NodeId a, double exponent);
  NodeId scale(NodeId a, double factor);
  NodeId row_sum(NodeId a);
  NodeId mean_all(NodeId a);
  NodeId gather_label(NodeId a, const LabelVector& labels);
  // Values of the k largest entries per row (ties toward the lower index);
  // index selection carries no gradient.
  NodeId topk_gather(NodeId a, int k);

  const Mat& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].val; }
  std::size_t grad_size() const { return grad_size_; }
  int node_count() const { return static_cast<int>(nodes_.size()); }

  // Reverse sweep from a scalar loss node; returns d(loss)/d(params) for every
  // registered parameter slot.
  std::vector<double> backward(NodeId loss);

 private:
  struct Node {
    explicit Node(Op op_, NodeId a_ = -1, NodeId b_ = -1) : op(op_), a(a_), b(b_) {}
    Op op;
    NodeId a = -1;
    NodeId b = -1;
    Mat val;
    Mat grad;
    double c = 0.0;               // op constant (floor, factor, exponent)
    std::size_t grad_offset = 0;  // kParam only
    std::vector<int> idx;         // kGatherLabel labels / kTopKGather indices
  };

  NodeId push(Node n);
  const Mat& val(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].val; }

  std::vector<Node> nodes_;
  std::size_t grad_size_ = 0;
};

// Scalar-loss gradient entry point; throws UsageError if loss is not 1x1.
std::vector<double> compute_gradients(Tape& tape, NodeId loss);

// Dense net forward on the tape: affine + tanh per hidden layer, affine +
// stabilized softmax on the output. Parameter gradients land at grad_base.
NodeId mlp_probs_node(Tape& tape, const ModelParams& params, const Mat& batch,
                      std::size_t grad_base);

// Plain (tape-free) forward pass used for evaluation and frozen teachers.
ProbMatrix forward_probs(const ModelParams& params, const Mat& batch);

}  // namespace churnlab
