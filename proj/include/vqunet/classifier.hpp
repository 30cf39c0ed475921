#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "vqunet/dataset.hpp"
#include "vqunet/layers.hpp"

namespace vqunet {

struct ClassifierConfig {
  std::array<std::size_t, 3> input_shape{32, 32, 1};
  std::size_t num_classes = 10;
  std::vector<std::size_t> channels{32, 64, 128};
  double learning_rate = 1e-3;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const ClassifierConfig&) const = default;
};

/// Small residual CNN: a stem conv, then one stage per entry of `channels`
/// (stride-2 conv + residual block), global average pooling and a linear head.
class Classifier {
 public:
  explicit Classifier(ClassifierConfig config);
  Classifier(const Classifier&) = delete;
  Classifier& operator=(const Classifier&) = delete;
  Classifier(Classifier&&) = default;
  Classifier& operator=(Classifier&&) = default;

  const ClassifierConfig& config() const { return config_; }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  /// Unnormalized class scores [N, num_classes].
  Tensor logits(const Tensor& x) const;

 private:
  struct Stage {
    Conv2d down;
    ResidualBlock res;
  };

  ClassifierConfig config_;
  Conv2d stem_;
  std::vector<Stage> stages_;
  Linear head_;
};

/// Maps a batch of images to the images the classifier should see.
using Preprocessor = std::function<Tensor(const Tensor&)>;

Classifier train_classifier(const Dataset& data, const ClassifierConfig& config);

/// Per-class probabilities [N * num_classes], rows summing to one.
std::vector<double> predict(const Classifier& classifier, const Tensor& x, std::size_t batch_size = 128);
std::vector<int> predict_labels(const Classifier& classifier, const Tensor& x, std::size_t batch_size = 128);

/// Fraction of argmax-correct predictions; inputs go through `purifier` first
/// when one is given.
double accuracy(const Classifier& classifier, const Dataset& data, const Preprocessor& purifier = {});
double accuracy(const Classifier& classifier, const Tensor& images, std::span<const int> labels,
                const Preprocessor& purifier = {});

void save(const Classifier& classifier, const std::filesystem::path& path);
Classifier load_classifier(const std::filesystem::path& path);

}  // namespace vqunet
