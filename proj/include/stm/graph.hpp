#pragma once

#include <functional>
#include <string>
#include <vector>

#include "stm/tensor.hpp"

namespace stm {

struct NodeId {
  int v = -1;
  bool valid() const { return v >= 0; }
};

// Named trainable tensor. Gradients accumulate across backward passes until
// zero_grad; the optimizer consumes them in registration order.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)) {}

  void ensure_grad() {
    if (!grad.same_shape(value)) grad = Tensor<T>::zeros(value.shape());
  }
  void zero_grad() { grad = Tensor<T>(); }
};

// Reverse-mode tape. Nodes are appended in evaluation order, so the tape
// index itself is a topological order; backward is a single reverse sweep
// that touches each reachable node once. Ops are pure: a node's value never
// changes after construction, which makes concurrent forward evaluation of
// disjoint graphs safe.
template <typename T>
class Graph {
 public:
  Graph();

  // Leaves.
  NodeId input(Tensor<T> v);     // grad tracked iff v.requires_grad
  NodeId constant(Tensor<T> v);  // never tracked
  NodeId param(Parameter<T>& p);  // tracked iff p.trainable; backward adds
                                  // into p.grad

  // Core ops.
  NodeId conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad);
  NodeId relu(NodeId x);
  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose2d(NodeId a);
  NodeId reshape(NodeId a, Shape s);
  // C x H x W -> (H*W) x C, row (h*W + w) holding the channel vector.
  NodeId chw_to_rows(NodeId a);
  NodeId concat_rows(const std::vector<NodeId>& xs);
  NodeId concat_channels(NodeId a, NodeId b);
  // Column-wise softmax of x/s with per-column max subtraction.
  NodeId softmax_columns(NodeId x, T s);
  // scale * exp(min(x, clamp)); positive range mapping for regression.
  NodeId scaled_exp(NodeId x, T scale, T clamp = T(20));
  NodeId sum_all(NodeId x);
  // Scalar linear combination sum_i coeff[i] * xs[i].
  NodeId weighted_sum(const std::vector<NodeId>& xs,
                      const std::vector<T>& coeffs);

  // Losses (targets are data, not graph nodes). All return scalars already
  // divided by `normalizer`.
  NodeId focal_loss_with_logits(NodeId logits, Tensor<T> labels, T alpha,
                                T gamma, T normalizer);
  NodeId bce_with_logits_masked(NodeId logits, Tensor<T> targets,
                                Tensor<T> mask, T normalizer);
  // pred/target are 4 x H x W (l,t,r,b distances); -log(IoU) over mask>0.
  NodeId iou_loss_ltrb(NodeId pred, Tensor<T> target, Tensor<T> mask,
                       T normalizer);

  void backward(NodeId root);

  const Tensor<T>& value(NodeId id) const;
  const Tensor<T>& grad(NodeId id) const;  // zeros if untouched
  bool requires_grad(NodeId id) const;
  std::size_t node_count() const { return nodes_.size(); }
  int backward_visits(NodeId id) const;

  void set_check_finite(bool b) { check_finite_ = b; }
  bool check_finite_enabled() const { return check_finite_; }

  // By default backward folds leaf gradients into their bound Parameters.
  // Batch workers disable this and merge bound_grads() themselves so that
  // concurrent backward passes never touch shared parameter state.
  void set_fold_param_grads(bool b) { fold_param_grads_ = b; }
  std::vector<std::pair<Parameter<T>*, const Tensor<T>*>> bound_grads() const;

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<int> inputs;
    std::function<void(Graph&, int)> backprop;
    Parameter<T>* bound = nullptr;
    const char* op = "";
    bool requires_grad = false;
    bool grad_live = false;
    int visits = 0;
  };

  NodeId emplace(const char* op, Tensor<T> value, std::vector<int> inputs,
                 std::function<void(Graph&, int)> backprop);
  Tensor<T>& grad_buf(int id);
  void accumulate(int id, const Tensor<T>& g);
  const Node& node(NodeId id) const;
  void check_node_finite(const Node& n) const;

  std::vector<Node> nodes_;
  bool check_finite_;
  bool fold_param_grads_ = true;
};

using GraphF = Graph<float>;
using GraphD = Graph<double>;

}  // namespace stm
