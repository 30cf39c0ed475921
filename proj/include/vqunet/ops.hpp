#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vqunet/tensor.hpp"

// Differentiable primitives. Image tensors are channel-last [N, H, W, C].
namespace vqunet {

enum class Padding { kSame, kValid };

/// Cross-correlation of `input` [N,H,W,Cin] with `kernel` [Kh,Kw,Cin,Cout].
///
/// `same` yields ceil(H/stride) rows and pads with zeros, the odd extra row or
/// column going to the high side. `valid` yields floor((H-Kh)/stride)+1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride,
              Padding padding = Padding::kSame);

/// Adjoint of a `same` conv2d with the same kernel and stride.
///
/// `input` is [N,H,W,Cin], `kernel` is [Kh,Kw,Cout,Cin] and the result is
/// [N,H*stride,W*stride,Cout].
Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, std::size_t stride);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// Adds a scalar tensor (shape {} or {1}) to every element.
Tensor add_scalar(const Tensor& a, const Tensor& s);

/// max(x, 0). The derivative at exactly 0 is taken to be 0.
Tensor relu(const Tensor& x);

/// Clamps into [lo, hi]. Gradient passes where lo <= x <= hi.
Tensor clip(const Tensor& x, double lo, double hi);

/// Forward identity, backward annihilator.
Tensor stop_gradient(const Tensor& x);

/// Value of `q`, gradient routed to `a` unchanged: a + stop_gradient(q - a)
/// without the rounding of the explicit sum, so the value equals `q` exactly.
Tensor straight_through(const Tensor& a, const Tensor& q);

/// While alive, captures (kRecord) or substitutes (kReplay) the constants that
/// stop_gradient and straight_through introduce, in call order. Replaying
/// holds them at the recorded point, so finite differences of the replayed
/// forward pass measure the same derivative the backward pass computes.
/// Replay requires the same sequence of calls and shapes as the recording.
class FrozenConstants {
 public:
  enum class Mode { kRecord, kReplay };

  explicit FrozenConstants(Mode mode);
  ~FrozenConstants();
  FrozenConstants(const FrozenConstants&) = delete;
  FrozenConstants& operator=(const FrozenConstants&) = delete;

  void set_mode(Mode mode);
  std::size_t size() const { return values_.size(); }

  /// Active instance on this thread, or nullptr.
  static FrozenConstants* current();
  /// Records `value` or returns the next recorded constant.
  std::vector<double> pass(std::vector<double> value);

 private:
  Mode mode_;
  std::vector<std::vector<double>> values_;
  std::size_t cursor_ = 0;
  FrozenConstants* previous_;
};

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse(const Tensor& a, const Tensor& b);

Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Channels [begin, end) of the last axis.
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end);

/// Adds `bias` [C] to every position of a channel-last tensor.
Tensor bias_add(const Tensor& x, const Tensor& bias);

/// [N,H,W,C] -> [N,C].
Tensor global_avg_pool(const Tensor& x);

/// [N,F] x [F,O] -> [N,O].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Row lookup: result[i] = table[indices[i]], shaped `out_shape` whose last
/// axis equals the table width. Differentiable with respect to `table`.
Tensor gather_rows(const Tensor& table, std::span<const std::int64_t> indices, Shape out_shape);

/// Mean softmax cross-entropy of `logits` [N,K] against integer labels.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Row-wise softmax of [N,K] logits (not recorded).
std::vector<double> softmax(const Tensor& logits);

}  // namespace vqunet
