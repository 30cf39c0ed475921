#include "vqunet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace vqunet {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

template <typename F>
Tensor unary(const Tensor& x, F&& value_fn, std::vector<double> local_grad) {
  std::vector<double> out(x.size());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = value_fn(in[i]);
  return make_result(x.shape(), std::move(out), {x},
                     [local = std::move(local_grad)](std::span<const double> g, std::span<std::vector<double>*> pg) {
                       if (!pg[0]) return;
                       auto& dx = *pg[0];
                       for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * local[i];
                     });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(out), {a, b},
                     [](std::span<const double> g, std::span<std::vector<double>*> pg) {
                       for (auto* dst : pg) {
                         if (!dst) continue;
                         for (std::size_t i = 0; i < g.size(); ++i) (*dst)[i] += g[i];
                       }
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result(a.shape(), std::move(out), {a, b},
                     [](std::span<const double> g, std::span<std::vector<double>*> pg) {
                       if (pg[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                       if (pg[1])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] -= g[i];
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(out), {a, b},
                     [a, b](std::span<const double> g, std::span<std::vector<double>*> pg) {
                       auto x = a.data();
                       auto y = b.data();
                       if (pg[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * y[i];
                       if (pg[1])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] += g[i] * x[i];
                     });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return make_result(a.shape(), std::move(out), {a},
                     [factor](std::span<const double> g, std::span<std::vector<double>*> pg) {
                       if (!pg[0]) return;
                       for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * factor;
                     });
}

Tensor add_scalar(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw ShapeError("add_scalar: expected a scalar, got " + shape_string(s.shape()));
  const double v = s.data()[0];
  std::vector<double> out(a.size());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + v;
  return make_result(a.shape(), std::move(out), {a, s},
                     [](std::span<const double> g, std::span<std::vector<double>*> pg) {
                       if (pg[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                       if (pg[1]) {
                         double total = 0.0;
                         for (double v : g) total += v;
                         (*pg[1])[0] += total;
                       }
                     });
}

Tensor relu(const Tensor& x) {
  auto in = x.data();
  std::vector<double> mask(x.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = in[i] > 0.0 ? 1.0 : 0.0;
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, std::move(mask));
}

Tensor clip(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw Error("clip: lo must not exceed hi");
  auto in = x.data();
  std::vector<double> mask(x.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = (in[i] >= lo && in[i] <= hi) ? 1.0 : 0.0;
  return unary(x, [lo, hi](double v) { return std::clamp(v, lo, hi); }, std::move(mask));
}

namespace {
thread_local FrozenConstants* g_frozen = nullptr;
}  // namespace

FrozenConstants::FrozenConstants(Mode mode) : mode_(mode), previous_(g_frozen) { g_frozen = this; }

FrozenConstants::~FrozenConstants() { g_frozen = previous_; }

void FrozenConstants::set_mode(Mode mode) {
  mode_ = mode;
  cursor_ = 0;
}

FrozenConstants* FrozenConstants::current() { return g_frozen; }

std::vector<double> FrozenConstants::pass(std::vector<double> value) {
  if (mode_ == Mode::kRecord) {
    values_.push_back(value);
    return value;
  }
  if (cursor_ >= values_.size() || values_[cursor_].size() != value.size()) {
    throw Error("FrozenConstants: replay diverged from the recorded call sequence");
  }
  return values_[cursor_++];
}

Tensor stop_gradient(const Tensor& x) {
  std::vector<double> value(x.data().begin(), x.data().end());
  if (auto* frozen = FrozenConstants::current()) value = frozen->pass(std::move(value));
  return Tensor(x.shape(), std::move(value));
}

Tensor straight_through(const Tensor& a, const Tensor& q) {
  require_same_shape(a, q, "straight_through");
  if (auto* frozen = FrozenConstants::current()) {
    // Explicit a + offset form so the offset q - a can be held fixed.
    auto av = a.data();
    auto qv = q.data();
    std::vector<double> offset(a.size());
    for (std::size_t i = 0; i < offset.size(); ++i) offset[i] = qv[i] - av[i];
    return add(a, Tensor(a.shape(), frozen->pass(std::move(offset))));
  }
  return make_result(q.shape(), std::vector<double>(q.data().begin(), q.data().end()), {a},
                     [](std::span<const double> g, std::span<std::vector<double>*> pg) {
                       if (!pg[0]) return;
                       for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                     });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result(Shape{}, {total}, {x}, [](std::span<const double> g, std::span<std::vector<double>*> pg) {
    if (!pg[0]) return;
    for (auto& v : *pg[0]) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  if (a.size() == 0) throw ShapeError("mse of empty tensors");
  const auto n = static_cast<double>(a.size());
  auto x = a.data();
  auto y = b.data();
  std::vector<double> diff(a.size());
  double total = 0.0;
  for (std::size_t i = 0; i < diff.size(); ++i) {
    diff[i] = x[i] - y[i];
    total += diff[i] * diff[i];
  }
  return make_result(Shape{}, {total / n}, {a, b},
                     [diff = std::move(diff), n](std::span<const double> g, std::span<std::vector<double>*> pg) {
                       const double c = 2.0 * g[0] / n;
                       if (pg[0])
                         for (std::size_t i = 0; i < diff.size(); ++i) (*pg[0])[i] += c * diff[i];
                       if (pg[1])
                         for (std::size_t i = 0; i < diff.size(); ++i) (*pg[1])[i] -= c * diff[i];
                     });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() == 0 || a.rank() != b.rank() ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    throw ShapeError("concat_channels: leading dims differ " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  const std::size_t ca = a.shape().back();
  const std::size_t cb = b.shape().back();
  const std::size_t rows = ca + cb == 0 ? 0 : (a.size() + b.size()) / (ca + cb);
  Shape shape = a.shape();
  shape.back() = ca + cb;
  std::vector<double> out(a.size() + b.size());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.begin() + r * ca, ca, out.begin() + r * (ca + cb));
    std::copy_n(y.begin() + r * cb, cb, out.begin() + r * (ca + cb) + ca);
  }
  return make_result(std::move(shape), std::move(out), {a, b},
                     [rows, ca, cb](std::span<const double> g, std::span<std::vector<double>*> pg) {
                       for (std::size_t r = 0; r < rows; ++r) {
                         if (pg[0])
                           for (std::size_t c = 0; c < ca; ++c) (*pg[0])[r * ca + c] += g[r * (ca + cb) + c];
                         if (pg[1])
                           for (std::size_t c = 0; c < cb; ++c) (*pg[1])[r * cb + c] += g[r * (ca + cb) + ca + c];
                       }
                     });
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin > end || end > x.shape().back()) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + shape_string(x.shape()));
  }
  const std::size_t c = x.shape().back();
  const std::size_t width = end - begin;
  const std::size_t rows = c == 0 ? 0 : x.size() / c;
  Shape shape = x.shape();
  shape.back() = width;
  std::vector<double> out(rows * width);
  auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(in.begin() + r * c + begin, width, out.begin() + r * width);
  return make_result(std::move(shape), std::move(out), {x},
                     [rows, c, begin, width](std::span<const double> g, std::span<std::vector<double>*> pg) {
                       if (!pg[0]) return;
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t k = 0; k < width; ++k) (*pg[0])[r * c + begin + k] += g[r * width + k];
                     });
}

Tensor bias_add(const Tensor& x, const Tensor& bias) {
  require_rank(bias, 1, "bias_add", "bias");
  if (x.rank() == 0 || x.shape().back() != bias.dim(0)) {
    throw ShapeError("bias_add: bias " + shape_string(bias.shape()) + " does not match channels of " +
                     shape_string(x.shape()));
  }
  const std::size_t c = bias.dim(0);
  std::vector<double> out(x.data().begin(), x.data().end());
  auto b = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % c];
  return make_result(x.shape(), std::move(out), {x, bias},
                     [c](std::span<const double> g, std::span<std::vector<double>*> pg) {
                       if (pg[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                       if (pg[1])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i % c] += g[i];
                     });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool", "input");
  const std::size_t n = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
  if (hw == 0) throw ShapeError("global_avg_pool: empty spatial dims");
  std::vector<double> out(n * c, 0.0);
  auto in = x.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t k = 0; k < c; ++k) out[b * c + k] += in[(b * hw + p) * c + k];
  const double inv = 1.0 / static_cast<double>(hw);
  for (auto& v : out) v *= inv;
  return make_result(Shape{n, c}, std::move(out), {x},
                     [n, hw, c, inv](std::span<const double> g, std::span<std::vector<double>*> pg) {
                       if (!pg[0]) return;
                       for (std::size_t b = 0; b < n; ++b)
                         for (std::size_t p = 0; p < hw; ++p)
                           for (std::size_t k = 0; k < c; ++k) (*pg[0])[(b * hw + p) * c + k] += g[b * c + k] * inv;
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul", "lhs");
  require_rank(b, 2, "matmul", "rhs");
  const std::size_t n = a.dim(0), f = a.dim(1), o = b.dim(1);
  if (b.dim(0) != f) {
    throw ShapeError("matmul: inner dims differ " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  auto x = a.data();
  auto w = b.data();
  std::vector<double> out(n * o, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < f; ++k) {
      const double xv = x[i * f + k];
      for (std::size_t j = 0; j < o; ++j) out[i * o + j] += xv * w[k * o + j];
    }
  return make_result(Shape{n, o}, std::move(out), {a, b},
                     [a, b, n, f, o](std::span<const double> g, std::span<std::vector<double>*> pg) {
                       auto x = a.data();
                       auto w = b.data();
                       if (pg[0]) {
                         auto& dx = *pg[0];
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t k = 0; k < f; ++k) {
                             double acc = 0.0;
                             for (std::size_t j = 0; j < o; ++j) acc += g[i * o + j] * w[k * o + j];
                             dx[i * f + k] += acc;
                           }
                       }
                       if (pg[1]) {
                         auto& dw = *pg[1];
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t k = 0; k < f; ++k) {
                             const double xv = x[i * f + k];
                             for (std::size_t j = 0; j < o; ++j) dw[k * o + j] += xv * g[i * o + j];
                           }
                       }
                     });
}

Tensor gather_rows(const Tensor& table, std::span<const std::int64_t> indices, Shape out_shape) {
  require_rank(table, 2, "gather_rows", "table");
  const std::size_t rows = table.dim(0), width = table.dim(1);
  if (out_shape.empty() || out_shape.back() != width || shape_size(out_shape) != indices.size() * width) {
    throw ShapeError("gather_rows: output shape " + shape_string(out_shape) + " incompatible with " +
                     std::to_string(indices.size()) + " rows of width " + std::to_string(width));
  }
  std::vector<double> out(indices.size() * width);
  auto t = table.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || static_cast<std::size_t>(indices[i]) >= rows) {
      throw ShapeError("gather_rows: index " + std::to_string(indices[i]) + " out of range");
    }
    std::copy_n(t.begin() + indices[i] * width, width, out.begin() + i * width);
  }
  std::vector<std::int64_t> idx(indices.begin(), indices.end());
  return make_result(std::move(out_shape), std::move(out), {table},
                     [idx = std::move(idx), width](std::span<const double> g, std::span<std::vector<double>*> pg) {
                       if (!pg[0]) return;
                       for (std::size_t i = 0; i < idx.size(); ++i)
                         for (std::size_t k = 0; k < width; ++k) (*pg[0])[idx[i] * width + k] += g[i * width + k];
                     });
}

std::vector<double> softmax(const Tensor& logits) {
  require_rank(logits, 2, "softmax", "logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  auto z = logits.data();
  std::vector<double> p(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) top = std::max(top, z[i * k + j]);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p[i * k + j] = std::exp(z[i * k + j] - top);
      total += p[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) p[i * k + j] /= total;
  }
  return p;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy", "logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                     " rows");
  }
  if (n == 0) throw ShapeError("softmax_cross_entropy: empty batch");
  auto p = softmax(logits);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw Error("softmax_cross_entropy: label " + std::to_string(labels[i]) + " out of range");
    }
    // log-sum-exp form keeps the loss finite for saturated probabilities.
    auto z = logits.data();
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) top = std::max(top, z[i * k + j]);
    double lse = 0.0;
    for (std::size_t j = 0; j < k; ++j) lse += std::exp(z[i * k + j] - top);
    total += std::log(lse) + top - z[i * k + labels[i]];
  }
  std::vector<int> y(labels.begin(), labels.end());
  return make_result(Shape{}, {total / static_cast<double>(n)}, {logits},
                     [p = std::move(p), y = std::move(y), n, k](std::span<const double> g,
                                                                std::span<std::vector<double>*> pg) {
                       if (!pg[0]) return;
                       const double c = g[0] / static_cast<double>(n);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < k; ++j) {
                           const double target = static_cast<std::size_t>(y[i]) == j ? 1.0 : 0.0;
                           (*pg[0])[i * k + j] += c * (p[i * k + j] - target);
                         }
                     });
}

}  // namespace vqunet
