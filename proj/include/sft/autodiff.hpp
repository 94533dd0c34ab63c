#pragma once

// Tape-based reverse-mode differentiation over dense double tensors.
//
// A Graph records every operation executed through it in order. Leaves are
// either constants (copied in) or parameters bound to a caller-owned Tensor.
// Graph::backward replays adjoints in exact reverse execution order and adds
// each bound parameter's adjoint into that Tensor's `grad` buffer, so two
// backward passes without clearing produce twice the gradient.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "sft/tensor.hpp"

namespace sft {

class Graph;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  double item() const;
  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  // Receives the node's own output adjoint; adds into input adjoints.
  using BackwardFn = std::function<void(Graph& graph, const std::vector<double>& out_adjoint)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // Leaf whose adjoint is added into `param.grad` on backward when
  // param.track_grad is set. The value is copied at bind time.
  Var parameter(Tensor& param);

  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }

  // Operation plumbing.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::vector<double>& adjoint(std::size_t id);

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Tensor* bound = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> adjoints_;
};

// [m x k] * [k x n]
Var matmul(Var a, Var b);
// Adds b[j] along axis 1 of x (rows of a matrix, channels of an image batch).
Var add_bias(Var x, Var bias);
// Valid cross-correlation. input is [C x H x W] or [B x C x H x W];
// kernels is [O x C x kh x kw].
Var conv2d(Var input, Var kernels, std::size_t stride);
Var relu(Var x);
// [B x ...] -> [B x prod(...)]
Var flatten(Var x);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
Var sum(Var x);
// Mean over the batch of the cross-entropy between softmax(logits) and the
// smoothed one-hot target (true class 1 - eps + eps/K, others eps/K).
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels, double smoothing);

// Max over coordinates of |analytic - central| / max(1, |central|). `loss`
// builds a scalar from parameters it binds itself; each tensor in `params` is
// perturbed in place and restored.
double finite_diff_check(const std::function<Var(Graph&)>& loss, std::span<Tensor* const> params,
                         double step = 1e-5);
// Single-tensor form: `f` receives theta already bound as a parameter.
double finite_diff_check(const std::function<Var(Graph&, Var)>& f, const Tensor& theta,
                         double step = 1e-5);

}  // namespace sft
