#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vqunet/tensor.hpp"

namespace vqunet {

/// A trainable tensor plus its adaptive-moment state.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value, bool lazy_rows = false);

  std::string name;
  Tensor tensor;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::int64_t steps = 0;
  /// Rows (leading axis) whose gradient is exactly zero keep their values and
  /// moments untouched. Used for codebooks so unselected codes stay put.
  bool lazy_rows = false;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update of every parameter from its accumulated
/// gradient, then resets the gradients to zero. Throws if a parameter has no
/// gradient buffer.
void optimizer_step(std::span<Parameter* const> params, double learning_rate, const AdamOptions& options = {});

}  // namespace vqunet
