#include "vqunet/classifier.hpp"

#include <numeric>

#include "vqunet/checkpoint.hpp"
#include "vqunet/config_io.hpp"

namespace vqunet {

void ClassifierConfig::validate() const {
  if (num_classes < 2) throw Error("ClassifierConfig: num_classes must be >= 2");
  if (channels.empty()) throw Error("ClassifierConfig: channels must be nonempty");
  if (std::find(channels.begin(), channels.end(), 0u) != channels.end()) {
    throw Error("ClassifierConfig: channel counts must be positive");
  }
  if (input_shape[0] == 0 || input_shape[1] == 0 || input_shape[2] == 0) {
    throw Error("ClassifierConfig: input_shape dims must be positive");
  }
  if (!(learning_rate >= 0.0)) throw Error("ClassifierConfig: learning_rate must be >= 0");
  if (batch_size == 0) throw Error("ClassifierConfig: batch_size must be positive");
}

Classifier::Classifier(ClassifierConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(config_.seed);
  const std::size_t stem = config_.channels.front();
  stem_ = Conv2d("stem", config_.input_shape[2], stem, 3, 1, rng);
  std::size_t prev = stem;
  for (std::size_t i = 0; i < config_.channels.size(); ++i) {
    const std::string name = "stage" + std::to_string(i + 1);
    const std::size_t ch = config_.channels[i];
    stages_.push_back({Conv2d(name + ".down", prev, ch, 3, 2, rng), ResidualBlock(name + ".res", ch, rng)});
    prev = ch;
  }
  head_ = Linear("head", prev, config_.num_classes, rng);
}

std::vector<Parameter*> Classifier::parameters() {
  std::vector<Parameter*> out;
  stem_.collect(out);
  for (auto& stage : stages_) {
    stage.down.collect(out);
    stage.res.collect(out);
  }
  head_.collect(out);
  return out;
}

std::vector<const Parameter*> Classifier::parameters() const {
  auto mutable_params = const_cast<Classifier*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

Tensor Classifier::logits(const Tensor& x) const {
  const auto& s = config_.input_shape;
  if (x.rank() != 4 || x.dim(1) != s[0] || x.dim(2) != s[1] || x.dim(3) != s[2]) {
    throw ShapeError("Classifier: input " + shape_string(x.shape()) + " does not match configured [N," +
                     std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) + "]");
  }
  Tensor h = relu(stem_(x));
  for (const auto& stage : stages_) h = stage.res(relu(stage.down(h)));
  return head_(global_avg_pool(h));
}

Classifier train_classifier(const Dataset& data, const ClassifierConfig& config) {
  data.validate();
  for (int label : data.labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= config.num_classes) {
      throw Error("train_classifier: label " + std::to_string(label) + " outside [0," +
                  std::to_string(config.num_classes) + ")");
    }
  }
  Classifier model(config);
  if (data.size() == 0) return model;
  auto params = model.parameters();
  Rng rng(derive_seed(config.seed, "classifier-batches"));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<int> labels;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      labels.clear();
      for (auto i : idx) labels.push_back(data.labels[i]);
      const Tensor loss = softmax_cross_entropy(model.logits(gather_images(data.images, idx)), labels);
      backward(loss);
      optimizer_step(params, config.learning_rate);
    }
  }
  return model;
}

std::vector<double> predict(const Classifier& classifier, const Tensor& x, std::size_t batch_size) {
  NoGradGuard no_grad;
  const std::size_t n = x.dim(0);
  std::vector<double> out;
  out.reserve(n * classifier.config().num_classes);
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    const std::size_t end = std::min(n, begin + batch_size);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const auto probs = softmax(classifier.logits(gather_images(x, idx)));
    out.insert(out.end(), probs.begin(), probs.end());
  }
  return out;
}

std::vector<int> predict_labels(const Classifier& classifier, const Tensor& x, std::size_t batch_size) {
  const auto probs = predict(classifier, x, batch_size);
  const std::size_t k = classifier.config().num_classes;
  std::vector<int> labels(probs.size() / k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = probs.begin() + static_cast<std::ptrdiff_t>(i * k);
    labels[i] = static_cast<int>(std::max_element(row, row + static_cast<std::ptrdiff_t>(k)) - row);
  }
  return labels;
}

double accuracy(const Classifier& classifier, const Tensor& images, std::span<const int> labels,
                const Preprocessor& purifier) {
  if (labels.empty()) throw Error("accuracy: empty dataset");
  if (images.dim(0) != labels.size()) throw Error("accuracy: image/label count mismatch");
  const Tensor inputs = purifier ? purifier(images) : images;
  const auto predicted = predict_labels(classifier, inputs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predicted[i] == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double accuracy(const Classifier& classifier, const Dataset& data, const Preprocessor& purifier) {
  if (data.size() == 0) throw Error("accuracy: empty dataset");
  return accuracy(classifier, data.images, data.labels, purifier);
}

void save(const Classifier& classifier, const std::filesystem::path& path) {
  const auto params = classifier.parameters();
  write_checkpoint(path, ModelKind::kClassifier, to_json(classifier.config()).dump(), params);
}

Classifier load_classifier(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  if (ckpt.kind != ModelKind::kClassifier) throw CheckpointError(path.string() + ": not a classifier checkpoint");
  ClassifierConfig config;
  try {
    config = classifier_config_from_json(nlohmann::json::parse(ckpt.config_json));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": unreadable config header: " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(path.string() + ": invalid config header: " + e.what());
  }
  Classifier model(config);
  assign_parameters(ckpt, model.parameters());
  return model;
}

}  // namespace vqunet
