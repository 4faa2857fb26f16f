#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tsadv/tensor.hpp"

namespace tsadv {

// Handle to a node recorded on a Tape. Only meaningful for the tape that issued it.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

class Gradients;

// Eager reverse-mode tape. Every op computes its value immediately and records
// a closure that maps the output gradient onto its parents' gradients. Nodes are
// appended in creation order, so reverse iteration is a reverse topological order.
class Tape {
 public:
  // parent_grads[i] is null when parent i does not require a gradient.
  using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> parent_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Differentiable leaf. A non-empty name makes its gradient addressable by name.
  Var input(Tensor value, std::string name = {});
  // Leaf that never receives a gradient.
  Var constant(Tensor value);
  Var record(Tensor value, std::vector<Var> parents, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  // Propagates seed * d(output)/d(.) to every differentiable leaf. A non-scalar
  // output is seeded with the broadcast seed. Throws UsageError on a second call.
  Gradients backward(Var output, double seed = 1.0);

 private:
  struct Node {
    Tensor value;
    std::vector<Var> parents;
    BackwardFn backward;
    bool requires_grad = false;
    std::string name;
  };

  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

class Gradients {
 public:
  // Gradient of a leaf; a zero tensor when the output does not depend on it.
  const Tensor& operator[](Var v) const;
  const Tensor& named(const std::string& name) const;
  const std::map<std::string, Tensor>& by_name() const noexcept { return named_; }

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
  std::map<std::string, Tensor> named_;
};

// Numerically stable helpers shared with non-tape code paths.
std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);

// Differentiable primitives. Feature maps are [channels x time].

// Same-length cross-correlation with zero padding; kernels [C_out x C_in x K], K odd.
Var conv1d(Tape& tape, Var input, Var kernels, Var bias);
Var relu(Tape& tape, Var input);
// Non-overlapping window max; the final partial window pools the remainder.
// Ties route the gradient to the lowest index.
Var maxpool1d(Tape& tape, Var input, std::size_t window);
// Gaussian non-local means across time positions: column i of the output is the
// softmax(theta(x_i)^T phi(x_j) / sqrt(d))-weighted average of input columns x_j.
// theta/phi weights are [d x embed] 1x1 convolutions without bias.
Var gnlm_denoise(Tape& tape, Var input, Var theta_weights, Var phi_weights);
// [C x T] -> [C], mean over time.
Var global_avg_pool(Tape& tape, Var input);
// weights [m x n], bias [m], input [n].
Var dense(Tape& tape, Var input, Var weights, Var bias);
// -log softmax(logits)[label]; scalar output.
Var softmax_cross_entropy(Tape& tape, Var logits, std::size_t label);
// KL(softmax(p_logits) || softmax(q_logits)); scalar output.
Var kl_divergence(Tape& tape, Var p_logits, Var q_logits);
Var add(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var a, double factor);

}  // namespace tsadv
