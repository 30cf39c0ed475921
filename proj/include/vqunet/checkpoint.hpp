#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vqunet/optim.hpp"

// Binary checkpoint shared by the purifier and the classifier.
//
// Little-endian layout:
//   char[8]  magic "VQUNETCK"
//   u32      format version
//   u32      model kind (1 = purifier, 2 = classifier)
//   u64      config length, followed by that many bytes of JSON
//   u64      parameter count
//   per parameter, in declaration order:
//     u32 rank, u64 dims[rank], f64 values[prod(dims)]
namespace vqunet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class ModelKind : std::uint32_t { kPurifier = 1, kClassifier = 2 };

class CheckpointError : public Error {
 public:
  using Error::Error;
};

struct Checkpoint {
  ModelKind kind = ModelKind::kPurifier;
  std::string config_json;
  std::vector<Tensor> tensors;
};

void write_checkpoint(const std::filesystem::path& path, ModelKind kind, const std::string& config_json,
                      std::span<const Parameter* const> params);

/// Reads and validates the whole file; throws CheckpointError on a bad magic,
/// unknown version, or truncation.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint tensors into `params`, checking count and shapes first so
/// a failure leaves the parameters untouched.
void assign_parameters(const Checkpoint& ckpt, std::span<Parameter* const> params);

}  // namespace vqunet
