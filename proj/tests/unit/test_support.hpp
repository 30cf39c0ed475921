#pragma once

// Test-only oracles. Nothing here calls into the code paths it checks except
// through the public forward functions.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "vqunet/ops.hpp"
#include "vqunet/rng.hpp"
#include "vqunet/tensor.hpp"

namespace vqunet::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
  Tensor t(std::move(shape), requires_grad);
  for (auto& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Norm-wise relative error ||a - n|| / max(||a||, ||n||, floor).
inline double relative_error(std::span<const double> analytic, std::span<const double> numeric,
                             double floor = 1e-12) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
}

/// Central finite differences of the scalar `loss_fn()` with respect to the
/// leaf `param`, perturbing one element at a time.
inline std::vector<double> numeric_gradient(const std::function<double()>& loss_fn, Tensor param,
                                            double step = 1e-5) {
  auto values = param.mutable_data();
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + step;
    const double up = loss_fn();
    values[i] = saved - step;
    const double down = loss_fn();
    values[i] = saved;
    out[i] = (up - down) / (2.0 * step);
  }
  return out;
}

/// Relative error between the reverse-mode gradient of `build()` and its
/// finite-difference gradient, with respect to `param`.
inline double gradient_error(const std::function<Tensor()>& build, Tensor param, double step = 1e-5) {
  const Tensor loss = build();
  const Tensor wrt[] = {param};
  const auto analytic = gradients(loss, wrt)[0];
  NoGradGuard no_grad;
  const auto numeric = numeric_gradient([&] { return build().item(); }, param, step);
  return relative_error(analytic, numeric);
}

/// Direct nested-loop cross-correlation, [N,H,W,Cin] * [Kh,Kw,Cin,Cout].
inline std::vector<double> conv_oracle(const Tensor& x, const Tensor& k, std::size_t stride, bool same,
                                       std::size_t* out_h = nullptr, std::size_t* out_w = nullptr) {
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
  const std::size_t kh = k.dim(0), kw = k.dim(1), cout = k.dim(3);
  std::size_t ho, wo;
  long pt = 0, pl = 0;
  if (same) {
    ho = (h + stride - 1) / stride;
    wo = (w + stride - 1) / stride;
    const long th = std::max<long>(0, static_cast<long>((ho - 1) * stride + kh) - static_cast<long>(h));
    const long tw = std::max<long>(0, static_cast<long>((wo - 1) * stride + kw) - static_cast<long>(w));
    pt = th / 2;
    pl = tw / 2;
  } else {
    ho = (h - kh) / stride + 1;
    wo = (w - kw) / stride + 1;
  }
  if (out_h) *out_h = ho;
  if (out_w) *out_w = wo;
  auto xv = x.data();
  auto kv = k.data();
  std::vector<double> out(n * ho * wo * cout, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox)
        for (std::size_t co = 0; co < cout; ++co) {
          double acc = 0.0;
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const long iy = static_cast<long>(oy * stride + ky) - pt;
              const long ix = static_cast<long>(ox * stride + kx) - pl;
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
              for (std::size_t ci = 0; ci < cin; ++ci) {
                acc += xv[((b * h + iy) * w + ix) * cin + ci] * kv[((ky * kw + kx) * cin + ci) * cout + co];
              }
            }
          out[((b * ho + oy) * wo + ox) * cout + co] = acc;
        }
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace vqunet::testing
