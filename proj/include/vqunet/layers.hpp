#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vqunet/ops.hpp"
#include "vqunet/optim.hpp"
#include "vqunet/rng.hpp"

namespace vqunet {

/// Conv with bias. Kernel [k,k,in,out], He-uniform init, zero bias.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

 private:
  Parameter kernel_;
  Parameter bias_;
  std::size_t stride_ = 1;
};

/// Transposed conv with bias. Kernel [k,k,out,in].
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(std::string name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                  Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

 private:
  Parameter kernel_;
  Parameter bias_;
  std::size_t stride_ = 2;
};

/// relu(x + conv2(relu(conv1(x)))), channel count preserved.
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(const std::string& name, std::size_t channels, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

 private:
  Conv2d first_, second_;
};

/// [N,F] -> [N,O] affine map.
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, std::size_t in, std::size_t out, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

 private:
  Parameter weight_;
  Parameter bias_;
};

}  // namespace vqunet
