#include "vqunet/layers.hpp"

#include <cmath>

namespace vqunet {

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

Conv2d::Conv2d(std::string name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng)
    : stride_(stride) {
  const double bound = std::sqrt(6.0 / static_cast<double>(kernel * kernel * in));
  kernel_ = Parameter(name + ".kernel", uniform_tensor({kernel, kernel, in, out}, bound, rng));
  bias_ = Parameter(name + ".bias", Tensor(Shape{out}));
}

Tensor Conv2d::operator()(const Tensor& x) const {
  return bias_add(conv2d(x, kernel_.tensor, stride_, Padding::kSame), bias_.tensor);
}

void Conv2d::collect(std::vector<Parameter*>& out) {
  out.push_back(&kernel_);
  out.push_back(&bias_);
}

void Conv2d::collect(std::vector<const Parameter*>& out) const {
  out.push_back(&kernel_);
  out.push_back(&bias_);
}

ConvTranspose2d::ConvTranspose2d(std::string name, std::size_t in, std::size_t out, std::size_t kernel,
                                 std::size_t stride, Rng& rng)
    : stride_(stride) {
  // Each output pixel sees about (kernel/stride)^2 input positions.
  const double fan_in = static_cast<double>(kernel * kernel * in) / static_cast<double>(stride * stride);
  const double bound = std::sqrt(6.0 / fan_in);
  kernel_ = Parameter(name + ".kernel", uniform_tensor({kernel, kernel, out, in}, bound, rng));
  bias_ = Parameter(name + ".bias", Tensor(Shape{out}));
}

Tensor ConvTranspose2d::operator()(const Tensor& x) const {
  return bias_add(conv_transpose2d(x, kernel_.tensor, stride_), bias_.tensor);
}

void ConvTranspose2d::collect(std::vector<Parameter*>& out) {
  out.push_back(&kernel_);
  out.push_back(&bias_);
}

void ConvTranspose2d::collect(std::vector<const Parameter*>& out) const {
  out.push_back(&kernel_);
  out.push_back(&bias_);
}

ResidualBlock::ResidualBlock(const std::string& name, std::size_t channels, Rng& rng)
    : first_(name + ".conv1", channels, channels, 3, 1, rng), second_(name + ".conv2", channels, channels, 3, 1, rng) {}

Tensor ResidualBlock::operator()(const Tensor& x) const { return relu(add(x, second_(relu(first_(x))))); }

void ResidualBlock::collect(std::vector<Parameter*>& out) {
  first_.collect(out);
  second_.collect(out);
}

void ResidualBlock::collect(std::vector<const Parameter*>& out) const {
  first_.collect(out);
  second_.collect(out);
}

Linear::Linear(std::string name, std::size_t in, std::size_t out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  weight_ = Parameter(name + ".weight", uniform_tensor({in, out}, bound, rng));
  bias_ = Parameter(name + ".bias", Tensor(Shape{out}));
}

Tensor Linear::operator()(const Tensor& x) const { return bias_add(matmul(x, weight_.tensor), bias_.tensor); }

void Linear::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

void Linear::collect(std::vector<const Parameter*>& out) const {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

}  // namespace vqunet
