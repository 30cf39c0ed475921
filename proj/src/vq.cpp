#include "vqunet/vq.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "vqunet/ops.hpp"
#include "vqunet/rng.hpp"

namespace vqunet {

namespace {

void validate_codes(const Tensor& codes) {
  if (codes.rank() != 2 || codes.dim(0) < 2 || codes.dim(1) < 1) {
    throw ShapeError("codebook must be K x G with K >= 2 and G >= 1, got " + shape_string(codes.shape()));
  }
}

}  // namespace

Codebook::Codebook(std::size_t num_codes, std::size_t width, int depth_id, std::uint64_t seed)
    : depth_id_(depth_id) {
  Tensor codes(Shape{num_codes, width});
  validate_codes(codes);
  Rng rng(seed);
  const double bound = 1.0 / static_cast<double>(num_codes);
  for (auto& v : codes.mutable_data()) v = rng.uniform(-bound, bound);
  codes_ = Parameter("codebook_d" + std::to_string(depth_id), std::move(codes), /*lazy_rows=*/true);
}

Codebook::Codebook(Tensor codes, int depth_id) : depth_id_(depth_id) {
  validate_codes(codes);
  codes_ = Parameter("codebook_d" + std::to_string(depth_id), codes.detach(), /*lazy_rows=*/true);
}

std::span<const double> Codebook::row(std::size_t k) const { return codes().data().subspan(k * width(), width()); }

std::size_t nearest_code(std::span<const double> v, const Codebook& codebook) {
  const std::size_t g = codebook.width();
  if (v.size() != g) {
    throw ShapeError("nearest_code: vector of length " + std::to_string(v.size()) + " for codebook width " +
                     std::to_string(g));
  }
  auto codes = codebook.codes().data();
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < codebook.num_codes(); ++k) {
    const double* e = codes.data() + k * g;
    double dist = 0.0;
    for (std::size_t i = 0; i < g; ++i) {
      const double d = v[i] - e[i];
      dist += d * d;
    }
    if (dist < best_dist) {
      best_dist = dist;
      best = k;
    }
  }
  return best;
}

QuantizationResult quantize(const Tensor& a, const Codebook& codebook) {
  const std::size_t g = codebook.width();
  if (a.rank() == 0 || a.shape().back() != g) {
    throw ShapeError("quantize: feature map " + shape_string(a.shape()) + " does not match codebook width " +
                     std::to_string(g));
  }
  const std::size_t m = a.size() / g;
  QuantizationResult r;
  r.a = a;
  r.indices.resize(m);
  auto values = a.data();
  for (std::size_t i = 0; i < m; ++i) {
    r.indices[i] = static_cast<std::int64_t>(nearest_code(values.subspan(i * g, g), codebook));
  }
  r.q = gather_rows(codebook.codes(), r.indices, a.shape());
  r.q_star = straight_through(a, r.q);
  r.loss_e = mse(stop_gradient(r.q), a);
  r.loss_q = mse(r.q, stop_gradient(a));
  return r;
}

bool straight_through_check(const Tensor& a, const QuantizationResult& result, std::uint64_t seed,
                            double tolerance) {
  if (!result.q.defined() || !result.q_star.defined() || result.q.shape() != a.shape() ||
      result.q_star.shape() != a.shape()) {
    return false;
  }
  auto q = result.q.data();
  auto qs = result.q_star.data();
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (std::memcmp(&q[i], &qs[i], sizeof(double)) != 0) return false;
  }
  if (!a.requires_grad()) return false;

  Rng rng(seed);
  std::vector<double> w(a.size()), u(a.size());
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  for (auto& v : u) v = rng.uniform(-1.0, 1.0);

  // Analytic: <dF/da, u> with F = <w, q_star>.
  const Tensor functional = sum(mul(Tensor(a.shape(), w), result.q_star));
  const Tensor wrt[] = {a};
  const auto grad = gradients(functional, wrt)[0];
  double analytic = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) analytic += grad[i] * u[i];

  // Reference: central difference of F(a') = <w, a' + o> with o = q - a frozen.
  auto av = a.data();
  const double h = 1e-5;
  auto functional_at = [&](double step) {
    double total = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
      const double offset = q[i] - av[i];
      total += w[i] * (av[i] + step * u[i] + offset);
    }
    return total;
  };
  const double fd = (functional_at(h) - functional_at(-h)) / (2.0 * h);
  return std::abs(analytic - fd) <= tolerance * std::max(1.0, std::abs(fd));
}

}  // namespace vqunet
