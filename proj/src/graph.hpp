#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tensor.hpp"

namespace snds::ad {

// Trainable tensor with an accumulated gradient of identical shape.
class Parameter {
 public:
  Parameter(std::string id, Tensor value)
      : id_(std::move(id)), value_(std::move(value)), grad_(Tensor::zeros_like(value_)) {}

  const std::string& id() const { return id_; }
  Tensor& value() { return value_; }
  const Tensor& value() const { return value_; }
  Tensor& grad() { return grad_; }
  const Tensor& grad() const { return grad_; }
  void zero_grad() { grad_.fill(0.0); }

 private:
  std::string id_;
  Tensor value_;
  Tensor grad_;
};

using NodeId = int;

// Define-by-run computation tape. Re-recorded on every forward pass, which is
// what lets the network topology change between growth events. Inference mode
// skips gradient bookkeeping; such graphs are pure and thread-confined, so
// forward-only evaluation over disjoint batches may run concurrently.
class Graph {
 public:
  enum class Mode { kTrain, kInference };

  using BackwardFn = std::function<void(Graph&, NodeId)>;

  explicit Graph(Mode mode = Mode::kTrain) : mode_(mode) {}

  bool recording() const { return mode_ == Mode::kTrain; }
  int node_count() const { return static_cast<int>(nodes_.size()); }

  // Non-trainable input (constants, data batches).
  NodeId input(Tensor value);
  // Trainable leaf; repeated calls for the same parameter return one node.
  NodeId leaf(Parameter& p);

  // -- primitive operations ------------------------------------------------
  NodeId add(NodeId a, NodeId b);  // residual addition
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId log(NodeId x);
  NodeId relu(NodeId x);
  NodeId sum(NodeId x);          // scalar
  NodeId sum_squares(NodeId x);  // scalar
  NodeId index(NodeId v, int i);  // scalar pick from a vector
  NodeId reshape(NodeId x, Shape shape);
  NodeId weighted_sum(const std::vector<NodeId>& xs, const std::vector<double>& coeffs);
  NodeId scale_by(NodeId x, NodeId s);  // s is a scalar node

  NodeId affine(NodeId x, NodeId w, NodeId b);          // x:(N,I) w:(I,O) b:(O)
  NodeId conv2d(NodeId x, NodeId k, NodeId b, int stride);  // 3x3 kernels, padding 1
  NodeId avg_pool(NodeId x, int kernel);                // non-overlapping, floor division
  NodeId scale_shift(NodeId x, NodeId gamma, NodeId beta);  // per-channel affine
  NodeId batch_norm(NodeId x, NodeId gamma, NodeId beta, double eps = 1e-5);
  NodeId softmax_cross_entropy(NodeId logits, std::vector<int> labels);  // batch mean, scalar

  // Escape hatch for differentiable distribution nodes defined elsewhere.
  NodeId custom(Tensor value, std::vector<NodeId> parents, BackwardFn fn, const char* op_name);

  const Tensor& value(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }
  Tensor& grad(NodeId id);
  const std::vector<NodeId>& parents(NodeId id) const { return nodes_[static_cast<size_t>(id)].parents; }

  // Reverse pass from a scalar loss. Accumulates d(loss)/d(param) into every
  // reachable Parameter. A second call without re-recording is an error.
  void backward(NodeId loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<NodeId> parents;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  NodeId emit(Tensor value, std::vector<NodeId> parents, BackwardFn fn, const char* op_name);
  Node& node(NodeId id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, NodeId> leaf_cache_;
  Mode mode_;
  bool backward_done_ = false;
};

// Row-wise softmax of a (N,C) logits tensor; forward-only helper.
Tensor softmax(const Tensor& logits);

}  // namespace snds::ad
