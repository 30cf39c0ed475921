#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vqunet {

using Shape = std::vector<std::size_t>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

// Receives the upstream gradient of a node and adds the contribution of each
// parent into `parent_grads[i]`. Entries are null for parents that do not
// require a gradient.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<std::vector<double>*> parent_grads)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // persistent accumulation, leaves only
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};

}  // namespace detail

/// Dense row-major float64 tensor that records the operations applied to it
/// so gradients can be computed in reverse mode.
///
/// Copies are shallow: two handles to the same tensor share storage and graph
/// position. Values are immutable once produced by an operation; only leaf
/// tensors (parameters, inputs) may be mutated, and only outside of any graph
/// that still needs them.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);
  // Keeps `Tensor(shape, {1.0})` from binding to the bool overload.
  Tensor(Shape shape, std::initializer_list<double> values, bool requires_grad = false)
      : Tensor(std::move(shape), std::vector<double>(values), requires_grad) {}

  static Tensor scalar(double value);
  static Tensor full(Shape shape, double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> data() const;
  /// Mutable view of a leaf's values. Throws for non-leaf tensors.
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad();

  /// New leaf holding a copy of the values, cut from any graph.
  Tensor detach() const;
  /// Same data viewed under another shape of equal size (differentiable).
  Tensor reshape(Shape shape) const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Records a differentiable result. Falls back to a plain constant when
/// gradient recording is disabled or no input requires a gradient.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   detail::BackwardFn backward);

/// Whether operations currently record a graph on this thread.
bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse pass from a scalar loss. Gradients are added into every reachable
/// leaf that requires one; repeated calls accumulate.
void backward(const Tensor& loss);

/// Gradients of a scalar loss with respect to `wrt` (leaves or intermediate
/// tensors), without touching any stored leaf gradient.
std::vector<std::vector<double>> gradients(const Tensor& loss, std::span<const Tensor> wrt);

}  // namespace vqunet
