#include "mcse/tensor.hpp"

#include <sstream>
#include <utility>

namespace mcse::ad {

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    require(d >= 1, errc::invalid_argument, "shape extents must be positive");
    n *= d;
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const Index n = shape_size(shape);
  return from_values(std::move(shape), Eigen::ArrayXd::Zero(n), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const Index n = shape_size(shape);
  return from_values(std::move(shape), Eigen::ArrayXd::Constant(n, value),
                     requires_grad);
}

Tensor Tensor::from_values(Shape shape, Eigen::ArrayXd values,
                           bool requires_grad) {
  require(shape_size(shape) == values.size(), errc::shape_mismatch,
          "tensor values do not match shape " + shape_to_string(shape));
  Tensor t;
  t.data_ = std::make_shared<Data>();
  t.data_->shape = std::move(shape);
  t.data_->payload = std::make_shared<Payload>();
  t.data_->payload->values = std::move(values);
  t.data_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({1}, Eigen::ArrayXd::Constant(1, value), requires_grad);
}

Eigen::ArrayXd& Tensor::grad() const {
  auto& p = *data_->payload;
  if (!p.grad_allocated) {
    p.grad = Eigen::ArrayXd::Zero(p.values.size());
    p.grad_allocated = true;
  }
  return p.grad;
}

void Tensor::zero_grad() const {
  auto& p = *data_->payload;
  if (p.grad_allocated) p.grad.setZero();
}

Tensor Tensor::reshaped(Shape shape) const {
  require(shape_size(shape) == size(), errc::shape_mismatch,
          "reshape size mismatch: " + shape_to_string(this->shape()) + " -> " +
              shape_to_string(shape));
  Tensor t;
  t.data_ = std::make_shared<Data>();
  t.data_->shape = std::move(shape);
  t.data_->payload = data_->payload;
  t.data_->requires_grad = data_->requires_grad;
  return t;
}

Tensor Tensor::clone() const {
  return from_values(shape(), values(), requires_grad());
}

Tensor Graph::record(const char* op_name, Tensor output,
                     std::vector<Tensor> inputs,
                     std::function<void()> backward_fn) {
  if (check_finite) {
    require(output.values().allFinite(), errc::numeric_error,
            std::string("non-finite values produced by op ") + op_name);
  }
  bool needs_grad = false;
  for (const Tensor& t : inputs) needs_grad = needs_grad || t.requires_grad();
  output.set_requires_grad(needs_grad);
  if (needs_grad) {
    nodes_.push_back(
        Node{op_name, output, std::move(inputs), std::move(backward_fn)});
  }
  return output;
}

void Graph::backward(const Tensor& loss) {
  require(loss.defined() && loss.size() == 1, errc::invalid_argument,
          "backward requires a scalar loss");
  Tensor seed = loss;
  seed.grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->backward_fn();
    if (check_finite) {
      for (const Tensor& in : it->inputs) {
        if (in.requires_grad() && in.has_grad()) {
          require(in.grad().allFinite(), errc::numeric_error,
                  std::string("non-finite gradient produced by op ") +
                      it->op_name);
        }
      }
    }
  }
}

}  // namespace mcse::ad
