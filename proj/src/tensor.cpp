#include "invlab/tensor.hpp"

#include <numeric>
#include <sstream>

namespace invlab {

const char* to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Tanh: return "tanh";
  }
  return "identity";
}

Activation activation_from_string(const std::string& name) {
  if (name == "identity") return Activation::Identity;
  if (name == "relu") return Activation::Relu;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "tanh") return Activation::Tanh;
  throw ValidationError("unknown activation '" + name + "'");
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << "x";
    out << shape[i];
  }
  out << "]";
  return out.str();
}

namespace {
std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_to_string(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}
}  // namespace

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_to_string(shape));
  }
}

Tensor Tensor::zeros(Shape s) {
  const std::size_t n = shape_numel(s);
  return Tensor(std::move(s), std::vector<double>(n, 0.0));
}

int Tensor::rows() const {
  if (shape.size() != 2) throw ShapeError("expected a matrix, got shape " + shape_to_string(shape));
  return shape[0];
}

int Tensor::cols() const {
  if (shape.size() != 2) throw ShapeError("expected a matrix, got shape " + shape_to_string(shape));
  return shape[1];
}

void Tensor::ensure_grad() {
  if (grad.empty()) grad.assign(values.size(), 0.0);
}

void Tensor::zero_grad() {
  if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
}

TensorPtr make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  auto t = std::make_shared<Tensor>(std::move(shape), std::move(values));
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr make_scalar(double value, bool requires_grad) {
  return make_leaf({1}, {value}, requires_grad);
}

}  // namespace invlab
