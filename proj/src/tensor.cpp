#include "vqunet/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>
#include <utility>

namespace vqunet {

namespace {

thread_local bool g_grad_enabled = true;

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, bool requires_grad) {
  node_ = std::make_shared<detail::Node>();
  node_->value.assign(shape_size(shape), 0.0);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != shape_size(shape)) {
    throw ShapeError("tensor of shape " + shape_string(shape) + " given " +
                     std::to_string(values.size()) + " values");
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape()));
  return node_->shape[axis];
}

std::size_t Tensor::size() const { return node_->value.size(); }

std::span<const double> Tensor::data() const { return node_->value; }

std::span<double> Tensor::mutable_data() {
  if (!is_leaf()) throw Error("mutable_data() on a non-leaf tensor");
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw Error("set_requires_grad() on a non-leaf tensor");
  node_->requires_grad = on;
}

bool Tensor::is_leaf() const { return node_->parents.empty(); }

bool Tensor::has_grad() const { return !node_->grad.empty() || (size() == 0 && node_->requires_grad); }

std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() { return node_->grad; }

void Tensor::zero_grad() { node_->grad.assign(size(), 0.0); }

void Tensor::clear_grad() {
  node_->grad.clear();
  node_->grad.shrink_to_fit();
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value); }

Tensor Tensor::reshape(Shape shape) const {
  if (shape_size(shape) != size()) {
    throw ShapeError("cannot reshape " + shape_string(this->shape()) + " to " + shape_string(shape));
  }
  return make_result(std::move(shape), node_->value, {*this},
                     [](std::span<const double> g, std::span<std::vector<double>*> pg) {
                       if (pg[0]) {
                         auto& dst = *pg[0];
                         for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                       }
                     });
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   detail::BackwardFn backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  if (g_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.defined() && t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (auto& in : inputs) node->parents.push_back(in.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor::from_node(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace {

// Post-order over nodes that require a gradient, iterative to keep deep
// graphs off the call stack.
std::vector<detail::Node*> topo_order(detail::Node* root) {
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

std::unordered_map<detail::Node*, std::vector<double>> run_reverse(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward requires a scalar loss, got " +
                     (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  }
  std::unordered_map<detail::Node*, std::vector<double>> grads;
  if (!loss.requires_grad()) return grads;

  const auto order = topo_order(loss.node().get());
  grads[loss.node().get()] = {1.0};
  std::vector<std::vector<double>*> parent_grads;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    auto found = grads.find(node);
    if (found == grads.end() || !node->backward) continue;
    parent_grads.assign(node->parents.size(), nullptr);
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      detail::Node* parent = node->parents[i].get();
      if (!parent->requires_grad) continue;
      auto& buf = grads[parent];
      if (buf.empty()) buf.assign(parent->value.size(), 0.0);
      parent_grads[i] = &buf;
    }
    // Map nodes are address-stable, so buffers obtained above stay valid.
    node->backward(found->second, parent_grads);
  }
  return grads;
}

}  // namespace

void backward(const Tensor& loss) {
  auto grads = run_reverse(loss);
  for (auto& [node, g] : grads) {
    if (!node->parents.empty() || !node->requires_grad) continue;
    if (node->grad.empty()) {
      node->grad = std::move(g);
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) node->grad[i] += g[i];
    }
  }
}

std::vector<std::vector<double>> gradients(const Tensor& loss, std::span<const Tensor> wrt) {
  auto grads = run_reverse(loss);
  std::vector<std::vector<double>> out;
  out.reserve(wrt.size());
  for (const auto& t : wrt) {
    auto found = grads.find(t.node().get());
    if (found == grads.end()) {
      out.emplace_back(t.size(), 0.0);
    } else {
      out.push_back(found->second);
    }
  }
  return out;
}

}  // namespace vqunet
