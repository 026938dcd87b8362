#ifndef TTLAB_GRAPH_HPP
#define TTLAB_GRAPH_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <string_view>
#include <utility>
#include <vector>

#include "ttlab/tape.hpp"
#include "ttlab/tensor.hpp"

namespace ttlab {

/// Handle to a node inside a GraphT<T>. Only valid for the graph that
/// produced it.
template <typename T>
struct ValueT {
  std::int32_t id = -1;
};

/// Reverse-mode autodiff over a dynamically recorded operation tape.
/// A graph is built fresh for each forward pass; backward() may run once
/// and writes parameter gradients back into the bound tapes. Nodes are
/// created strictly after their inputs, so reverse creation order is a
/// valid traversal order for backpropagation.
template <typename T>
class GraphT {
 public:
  GraphT() = default;
  GraphT(const GraphT&) = delete;
  GraphT& operator=(const GraphT&) = delete;

  // Leaves.
  ValueT<T> input(TensorT<T> x, bool requires_grad = false);
  ValueT<T> param(ParamTapeT<T>& tape, std::string_view name,
                  bool trainable = true);

  // Layer vocabulary.
  ValueT<T> conv2d(ValueT<T> x, ValueT<T> w, int stride, int padding);
  ValueT<T> group_norm(ValueT<T> x, int groups, ValueT<T> gamma,
                       ValueT<T> beta, T eps = T(1e-5));
  ValueT<T> relu(ValueT<T> x);
  ValueT<T> avg_pool2d(ValueT<T> x, int kernel, int stride);
  ValueT<T> linear(ValueT<T> x, ValueT<T> w, ValueT<T> b);
  ValueT<T> reshape(ValueT<T> x, std::vector<std::int64_t> shape);
  ValueT<T> softmax_cross_entropy(ValueT<T> logits,
                                  const std::vector<std::int64_t>& labels);
  ValueT<T> add(ValueT<T> a, ValueT<T> b);
  ValueT<T> scale(ValueT<T> x, T c);
  ValueT<T> sum(ValueT<T> x);

  // Runs reverse-mode accumulation from a scalar loss node. Zeroes the
  // gradient slots of every tape bound via param() first, then adds
  // fresh gradients, so unreached parameters read zero afterwards.
  void backward(ValueT<T> loss);

  const TensorT<T>& value(ValueT<T> v) const;
  // Gradient of the last backward() w.r.t. this node. Zero tensor if the
  // node was never reached. StateError before backward() has run.
  const TensorT<T>& grad(ValueT<T> v);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    TensorT<T> value;
    TensorT<T> grad;
    bool requires_grad = false;
    bool touched = false;
    std::function<void()> backprop;
  };

  ValueT<T> emplace(TensorT<T> value, bool requires_grad);
  Node& node(ValueT<T> v);
  const Node& node(ValueT<T> v) const;
  bool needs_grad(ValueT<T> v) const;
  // Mutable gradient accumulator for a node, allocated (zeroed) on first
  // touch during a backward sweep.
  TensorT<T>& grad_buffer(std::int32_t id);

  std::vector<Node> nodes_;
  struct ParamBinding {
    ParamTapeT<T>* tape;
    std::string name;
    std::int32_t id;
  };
  std::vector<ParamBinding> bindings_;
  std::map<std::pair<const void*, std::string>, std::int32_t> param_lookup_;
  bool ran_backward_ = false;
};

using Graph = GraphT<float>;
using GraphD = GraphT<double>;
using Value = ValueT<float>;
using ValueD = ValueT<double>;

/// Per-sample cross-entropy values for a logits block, without touching
/// any graph. Used where individual losses matter (SSL gating, reports).
template <typename T>
std::vector<T> softmax_ce_per_sample(const TensorT<T>& logits,
                                     const std::vector<std::int64_t>& labels);

/// Argmax over the class axis of a [N,C] logits block.
template <typename T>
std::vector<std::int64_t> argmax_rows(const TensorT<T>& logits);

}  // namespace ttlab

#endif  // TTLAB_GRAPH_HPP
