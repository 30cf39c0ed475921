#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vqunet/optim.hpp"
#include "vqunet/tensor.hpp"

namespace vqunet {

/// Learnable K x G table of code vectors owned by a single depth level.
class Codebook {
 public:
  Codebook() = default;
  /// Rows drawn uniformly from [-1/K, 1/K].
  Codebook(std::size_t num_codes, std::size_t width, int depth_id, std::uint64_t seed);
  /// Copies explicit rows; `codes` must be [K, G] with K >= 2 and G >= 1.
  Codebook(Tensor codes, int depth_id);

  std::size_t num_codes() const { return codes_.tensor.dim(0); }
  std::size_t width() const { return codes_.tensor.dim(1); }
  int depth_id() const { return depth_id_; }

  const Tensor& codes() const { return codes_.tensor; }
  Parameter& parameter() { return codes_; }
  std::span<const double> row(std::size_t k) const;

 private:
  Parameter codes_;
  int depth_id_ = 0;
};

/// Everything one quantization step produces for a feature map `a`.
struct QuantizationResult {
  Tensor a;       ///< pre-quantization features
  Tensor q;       ///< codebook rows, differentiable w.r.t. the codebook
  Tensor q_star;  ///< a + stop_gradient(q - a): value of q, identity Jacobian in a
  std::vector<std::int64_t> indices;
  Tensor loss_e;  ///< mse(stop_gradient(q), a), pulls the encoder toward the codes
  Tensor loss_q;  ///< mse(q, stop_gradient(a)), pulls the codes toward the encoder
};

/// Index of the row nearest to `v` in squared Euclidean distance. Ties go to
/// the lowest index.
std::size_t nearest_code(std::span<const double> v, const Codebook& codebook);

/// Quantizes every G-length vector along the last axis of `a` [..., G].
QuantizationResult quantize(const Tensor& a, const Codebook& codebook);

/// True when the forward values of `q_star` equal `q` bit for bit and the
/// directional derivative of a random linear functional of `q_star` with
/// respect to `a` matches its finite difference under the frozen offset
/// q - a (i.e. the Jacobian is the identity). `a` must require a gradient.
bool straight_through_check(const Tensor& a, const QuantizationResult& result, std::uint64_t seed = 0,
                            double tolerance = 1e-6);

}  // namespace vqunet
