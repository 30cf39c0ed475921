#include "vqunet/optim.hpp"

#include <cmath>

namespace vqunet {

Parameter::Parameter(std::string name_, Tensor value, bool lazy)
    : name(std::move(name_)), tensor(std::move(value)), lazy_rows(lazy) {
  tensor.set_requires_grad(true);
  first_moment.assign(tensor.size(), 0.0);
  second_moment.assign(tensor.size(), 0.0);
}

void optimizer_step(std::span<Parameter* const> params, double learning_rate, const AdamOptions& options) {
  if (learning_rate < 0.0) throw Error("optimizer_step: learning rate must be non-negative");
  for (Parameter* p : params) {
    if (!p->tensor.has_grad()) throw Error("optimizer_step: parameter '" + p->name + "' has no gradient");
  }
  for (Parameter* p : params) {
    auto value = p->tensor.mutable_data();
    auto grad = p->tensor.mutable_grad();
    p->steps += 1;
    const double c1 = 1.0 - std::pow(options.beta1, static_cast<double>(p->steps));
    const double c2 = 1.0 - std::pow(options.beta2, static_cast<double>(p->steps));
    const std::size_t rows = p->tensor.rank() > 0 ? p->tensor.dim(0) : 1;
    const std::size_t width = rows == 0 ? 0 : value.size() / rows;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t begin = r * width;
      if (p->lazy_rows) {
        bool touched = false;
        for (std::size_t i = begin; i < begin + width; ++i) touched |= grad[i] != 0.0;
        if (!touched) continue;
      }
      for (std::size_t i = begin; i < begin + width; ++i) {
        const double g = grad[i];
        auto& m = p->first_moment[i];
        auto& v = p->second_moment[i];
        m = options.beta1 * m + (1.0 - options.beta1) * g;
        v = options.beta2 * v + (1.0 - options.beta2) * g * g;
        value[i] -= learning_rate * (m / c1) / (std::sqrt(v / c2) + options.epsilon);
      }
    }
    p->tensor.zero_grad();
  }
}

}  // namespace vqunet
