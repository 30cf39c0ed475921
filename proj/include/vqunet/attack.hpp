#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "vqunet/classifier.hpp"

namespace vqunet {

enum class AttackFamily { kFgsm, kBim, kPgd };

std::string_view to_string(AttackFamily family);
AttackFamily parse_attack_family(std::string_view name);

/// l-infinity attack settings. Pixels live in [clip_lo, clip_hi].
struct AttackConfig {
  AttackFamily family = AttackFamily::kFgsm;
  double epsilon = 0.0;
  std::size_t steps = 10;
  double step_size = 0.0;
  bool random_start = true;  ///< PGD only
  double clip_lo = 0.0;
  double clip_hi = 1.0;
  std::uint64_t seed = 0;

  /// Default settings for a family: FGSM is one step of size epsilon; BIM and
  /// PGD take 10 steps of epsilon / 4.
  static AttackConfig defaults(AttackFamily family, double epsilon, std::uint64_t seed = 0);

  /// Copy with the FGSM constraints (steps = 1, step_size = epsilon) applied.
  AttackConfig normalized() const;
  void validate() const;
};

/// Called after every iteration with the current adversarial batch.
using StepObserver = std::function<void(std::size_t step, const Tensor& x_adv)>;

/// Gradient of the mean cross-entropy with respect to the input pixels.
/// Leaves the classifier's parameters and stored gradients untouched.
std::vector<double> input_gradient(const Classifier& classifier, const Tensor& x, std::span<const int> labels);

/// clip(x + epsilon * sign(grad)), sign(0) = 0.
Tensor fgsm(const Classifier& classifier, const Tensor& x, std::span<const int> labels, double epsilon);

/// Iterated signed steps, each projected onto the epsilon-ball around x and
/// then onto the pixel box.
Tensor bim(const Classifier& classifier, const Tensor& x, std::span<const int> labels, const AttackConfig& config,
           const StepObserver& observer = {});

/// BIM from a uniform random start inside the epsilon-ball when
/// `random_start` is set.
Tensor pgd(const Classifier& classifier, const Tensor& x, std::span<const int> labels, const AttackConfig& config,
           const StepObserver& observer = {});

/// Dispatches on `config.family`.
Tensor run_attack(const Classifier& classifier, const Tensor& x, std::span<const int> labels,
                  const AttackConfig& config);

/// Crafts adversarial inputs on `surrogate` and returns the accuracy of
/// `target` (behind `purifier`, when given) on them.
double transfer_attack(const Classifier& surrogate, const Classifier& target, const Preprocessor& purifier,
                       const Tensor& x, std::span<const int> labels, const AttackConfig& config);

}  // namespace vqunet
