#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "vqunet/tensor.hpp"

namespace vqunet {

enum class Split { kTrain, kTest };

/// Labelled images, channel-last [N,H,W,C] with pixels in [0,1].
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  Split split = Split::kTrain;

  std::size_t size() const { return labels.size(); }
  Shape image_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }

  /// Throws unless label count matches image count and every pixel is in [0,1].
  void validate() const;
};

/// Copies the selected samples (in order) into a new dataset.
Dataset subset(const Dataset& data, std::span<const std::size_t> indices, Split split);
Dataset head(const Dataset& data, std::size_t begin, std::size_t count, Split split);

/// Images for the given sample indices as one [B,H,W,C] tensor.
Tensor gather_images(const Tensor& images, std::span<const std::size_t> indices);

class IdxError : public Error {
 public:
  using Error::Error;
};
class IdxMagicError : public IdxError {
 public:
  using IdxError::IdxError;
};
class IdxTruncatedError : public IdxError {
 public:
  using IdxError::IdxError;
};
class IdxCountMismatchError : public IdxError {
 public:
  using IdxError::IdxError;
};

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are scaled by 1/255. Images smaller than 32x32 are zero-padded
/// symmetrically to 32x32 (28x28 gains a 2-pixel border). Both files are
/// validated in full; only the first `max_samples` samples are decoded.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 Split split = Split::kTrain, std::size_t max_samples = std::numeric_limits<std::size_t>::max());

/// Serializes images/labels to IDX bytes (used for fixtures and export).
std::vector<std::uint8_t> encode_idx_images(std::span<const std::uint8_t> pixels, std::uint32_t count,
                                            std::uint32_t rows, std::uint32_t cols);
std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels);

/// Procedurally rendered 32x32x1 shapes, one shape family per class, with
/// jittered position, size and intensity. Labels cycle 0..K-1 so classes are
/// balanced to within one sample. Requires 2 <= num_classes <= 10.
Dataset synthetic_dataset(std::size_t num_samples, std::size_t num_classes, std::uint64_t seed,
                          Split split = Split::kTrain);

}  // namespace vqunet
