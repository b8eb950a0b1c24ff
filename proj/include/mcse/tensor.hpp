#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mcse/common.hpp"

namespace mcse::ad {

using Shape = std::vector<Index>;

Index shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Handle over a shared flat row-major buffer with an optional gradient
/// of the same size. Copies of a Tensor alias the same storage, and a
/// const handle still exposes mutable storage (shared_ptr semantics);
/// reshaped views share buffer and gradient.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, Eigen::ArrayXd values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return data_->shape; }
  Index size() const { return data_->payload->values.size(); }
  Index dim(std::size_t axis) const { return data_->shape.at(axis); }
  std::size_t rank() const { return data_->shape.size(); }

  Eigen::ArrayXd& values() const { return data_->payload->values; }

  bool requires_grad() const { return data_->requires_grad; }
  void set_requires_grad(bool v) { data_->requires_grad = v; }

  bool has_grad() const { return data_->payload->grad_allocated; }
  /// Gradient buffer, zero-initialized on first access.
  Eigen::ArrayXd& grad() const;
  void zero_grad() const;

  /// New tensor with the same total size sharing buffer and gradient.
  Tensor reshaped(Shape shape) const;

  /// Deep copy with fresh storage (gradient not copied).
  Tensor clone() const;

  /// Identity of the underlying buffer (aliasing check).
  const void* payload_id() const { return data_->payload.get(); }

 private:
  struct Payload {
    Eigen::ArrayXd values;
    Eigen::ArrayXd grad;
    bool grad_allocated = false;
  };
  struct Data {
    Shape shape;
    std::shared_ptr<Payload> payload;
    bool requires_grad = false;
  };
  std::shared_ptr<Data> data_;
};

/// Records operations in execution order (a topological order) and plays
/// their backward rules in reverse. Single-owner: one graph per pass.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Aborts the pass with a numeric error when an op emits NaN/Inf.
  bool check_finite = true;

  /// Registers `output` as produced from `inputs`; `backward_fn` must
  /// accumulate into the inputs' grads from output.grad(). Recording is
  /// skipped when no input requires a gradient.
  Tensor record(const char* op_name, Tensor output, std::vector<Tensor> inputs,
                std::function<void()> backward_fn);

  /// Accumulates dloss/dx into every reachable tensor that requires a
  /// gradient. `loss` must be scalar.
  void backward(const Tensor& loss);

  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    const char* op_name;
    Tensor output;
    std::vector<Tensor> inputs;
    std::function<void()> backward_fn;
  };
  std::vector<Node> nodes_;
};

}  // namespace mcse::ad
