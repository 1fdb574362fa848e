#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "patchdiff/nn/kernels.hpp"
#include "patchdiff/nn/tensor.hpp"

namespace patchdiff {
class Rng;
}

namespace patchdiff::nn {

/// Reverse-mode tape. Each op appends a node holding its output and, when
/// recording, a closure that propagates the output gradient to its inputs.
/// Parameter nodes alias caller-owned tensors (which must outlive the graph);
/// their gradients are read back with `grad(id)` after `backward`.
template <typename Real>
class Graph {
 public:
  using Id = int;
  using BackwardFn = std::function<void(Graph&, int self)>;

  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Id constant(Tensor<Real> value);
  Id parameter(const Tensor<Real>& value);
  Id emit(Tensor<Real> value, std::initializer_list<Id> inputs, BackwardFn fn);

  const Tensor<Real>& value(Id id) const;
  bool needs_grad(Id id) const { return nodes_[id].needs_grad; }
  /// Gradient buffer of a node, zero-initialised on first access.
  Tensor<Real>& grad(Id id);

  /// Seeds the scalar root with gradient 1 and runs the tape in reverse.
  void backward(Id root);

 private:
  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;
    const Tensor<Real>* alias = nullptr;
    bool needs_grad = false;
    BackwardFn backward;
  };

  bool record_;
  std::deque<Node> nodes_;
};

template <typename Real>
int conv2d(Graph<Real>& g, int x, int weight, int bias, ConvGeometry geom);
template <typename Real>
int group_norm(Graph<Real>& g, int x, int gamma, int beta, int groups);
template <typename Real>
int silu(Graph<Real>& g, int x);
template <typename Real>
int add(Graph<Real>& g, int a, int b);
/// x (N, C, H, W) + v (N, C, 1, 1) broadcast over space.
template <typename Real>
int add_channel_bias(Graph<Real>& g, int x, int v);
/// x (N, in, 1, 1), weight (out, in, 1, 1), bias (1, out, 1, 1).
template <typename Real>
int linear(Graph<Real>& g, int x, int weight, int bias);
template <typename Real>
int concat_channels(Graph<Real>& g, int a, int b);
template <typename Real>
int upsample_nearest2x(Graph<Real>& g, int x);
template <typename Real>
int attention(Graph<Real>& g, int q, int k, int v);
template <typename Real>
int dropout(Graph<Real>& g, int x, double rate, Rng& rng);
/// Mean squared error against a fixed target; returns a (1, 1, 1, 1) node.
template <typename Real>
int mse(Graph<Real>& g, int pred, const Tensor<Real>& target);

}  // namespace patchdiff::nn
