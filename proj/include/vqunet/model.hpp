#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "vqunet/dataset.hpp"
#include "vqunet/layers.hpp"
#include "vqunet/optim.hpp"
#include "vqunet/vq.hpp"

namespace vqunet {

struct VQUNetConfig {
  std::array<std::size_t, 3> input_shape{32, 32, 1};  ///< H, W, C
  std::size_t depth = 4;
  std::size_t stem_channels = 32;
  std::vector<std::size_t> channels{64, 128, 256, 512};
  std::vector<std::size_t> codebook_k{128, 128, 128, 128};
  bool vq_enabled = true;
  double alpha = 1.0;
  double beta = 1.0;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const VQUNetConfig&) const = default;
};

struct ForwardResult {
  Tensor reconstruction;
  /// One entry per depth, shallowest first. Without VQ, `q` is undefined,
  /// `q_star` is `a`, `indices` is empty and both losses are zero.
  std::vector<QuantizationResult> per_depth;
  Shape bottleneck_shape;
};

/// Loss terms. `total` carries the graph; the doubles are its forward values.
struct LossBreakdown {
  Tensor total;
  double l_reconst = 0.0;
  double l_e = 0.0;
  double l_q = 0.0;
  double total_value = 0.0;
};

struct EpochLoss {
  double l_reconst = 0.0;
  double l_e = 0.0;
  double l_q = 0.0;
  double total = 0.0;
};

struct TrainingLog {
  std::vector<EpochLoss> epochs;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

/// U-shaped purifier with a vector-quantized bottleneck at every depth.
///
/// Encoder level d (1..depth) downsamples with a stride-2 conv and applies two
/// residual blocks to give a_d, which is quantized against its own codebook;
/// the straight-through tensor q_d* feeds level d+1. The deepest q* passes
/// through a conv block and two residual blocks, then each decoder level
/// upsamples by 2 with a transposed conv, concatenates q*_{d-1} (when d > 1)
/// and refines with a conv. A final conv projects to C channels and the output
/// is clipped to [0, 1].
class VQUNet {
 public:
  explicit VQUNet(VQUNetConfig config);
  VQUNet(const VQUNet&) = delete;
  VQUNet& operator=(const VQUNet&) = delete;
  VQUNet(VQUNet&&) = default;
  VQUNet& operator=(VQUNet&&) = default;

  const VQUNetConfig& config() const { return config_; }
  /// Every trainable parameter in a fixed declaration order.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  const std::vector<Codebook>& codebooks() const { return codebooks_; }

  ForwardResult forward(const Tensor& x) const;

 private:
  struct EncoderLevel {
    Conv2d down;
    ResidualBlock res1, res2;
  };
  struct DecoderLevel {
    ConvTranspose2d up;
    Conv2d refine;
  };

  VQUNetConfig config_;
  Conv2d stem_;
  std::vector<EncoderLevel> encoders_;
  std::vector<Codebook> codebooks_;
  Conv2d bottleneck_conv_;
  ResidualBlock bottleneck_res1_, bottleneck_res2_;
  std::vector<DecoderLevel> decoders_;  // decoders_[d-1] upsamples from depth d
  Conv2d output_;
};

/// alpha * l_reconst + beta * l_e + l_q with l_e, l_q summed over depths.
LossBreakdown compute_loss(const VQUNet& model, const Tensor& x);
LossBreakdown compute_loss(const ForwardResult& forward, const Tensor& x, const VQUNetConfig& config);

/// Mini-batch Adam on the total loss using the model's config for learning
/// rate, batch size, epoch count and shuffling seed.
TrainingLog train(VQUNet& model, const Dataset& data);

/// Forward pass without recording a graph; output clipped to [0,1].
Tensor purify(const VQUNet& model, const Tensor& x, std::size_t batch_size = 64);

void save(const VQUNet& model, const std::filesystem::path& path);
/// Loads a purifier checkpoint. When `expect_vq` is set, the stored
/// vq_enabled flag must match it.
VQUNet load_vqunet(const std::filesystem::path& path, std::optional<bool> expect_vq = std::nullopt);

}  // namespace vqunet
