#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "invlab/errors.hpp"

namespace invlab {

enum class Activation { Identity, Relu, Sigmoid, Tanh };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& name);

using Shape = std::vector<int>;

std::string shape_to_string(const Shape& shape);

/// Dense row-major tensor of 64-bit floats with a lazily allocated gradient.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a backward pass touches it
  bool requires_grad = false;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> v);
  static Tensor zeros(Shape s);

  std::size_t numel() const { return values.size(); }
  bool is_scalar() const { return values.size() == 1; }
  bool is_matrix() const { return shape.size() == 2; }

  int rows() const;
  int cols() const;

  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols() + c]; }
  double& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols() + c]; }

  bool has_grad() const { return !grad.empty(); }
  void ensure_grad();
  void zero_grad();
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_leaf(Shape shape, std::vector<double> values, bool requires_grad = false);
TensorPtr make_scalar(double value, bool requires_grad = false);

}  // namespace invlab
