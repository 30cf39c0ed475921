#include "vqunet/attack.hpp"

#include <algorithm>
#include <numeric>

#include "vqunet/ops.hpp"
#include "vqunet/rng.hpp"

namespace vqunet {

namespace {

constexpr std::size_t kAttackBatch = 64;

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_inputs(const Classifier& classifier, const Tensor& x, std::span<const int> labels) {
  if (x.rank() != 4 || x.dim(0) != labels.size()) {
    throw ShapeError("attack: " + std::to_string(labels.size()) + " labels for input " + shape_string(x.shape()));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classifier.config().num_classes) {
      throw Error("attack: label " + std::to_string(y) + " out of range");
    }
  }
}

}  // namespace

std::string_view to_string(AttackFamily family) {
  switch (family) {
    case AttackFamily::kFgsm:
      return "FGSM";
    case AttackFamily::kBim:
      return "BIM";
    case AttackFamily::kPgd:
      return "PGD";
  }
  return "?";
}

AttackFamily parse_attack_family(std::string_view name) {
  if (name == "FGSM") return AttackFamily::kFgsm;
  if (name == "BIM") return AttackFamily::kBim;
  if (name == "PGD") return AttackFamily::kPgd;
  throw Error("unknown attack family '" + std::string(name) + "'");
}

AttackConfig AttackConfig::defaults(AttackFamily family, double epsilon, std::uint64_t seed) {
  AttackConfig c;
  c.family = family;
  c.epsilon = epsilon;
  c.steps = 10;
  c.step_size = epsilon / 4.0;
  c.random_start = family == AttackFamily::kPgd;
  c.seed = seed;
  return c.normalized();
}

AttackConfig AttackConfig::normalized() const {
  AttackConfig c = *this;
  if (c.family == AttackFamily::kFgsm) {
    c.steps = 1;
    c.step_size = c.epsilon;
  }
  return c;
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0)) throw Error("AttackConfig: epsilon must be >= 0");
  if (steps < 1) throw Error("AttackConfig: steps must be >= 1");
  if (steps > 1 && epsilon > 0.0 && !(step_size > 0.0)) {
    throw Error("AttackConfig: step_size must be > 0 for iterative attacks");
  }
  if (!(clip_lo <= clip_hi)) throw Error("AttackConfig: clip range is empty");
}

std::vector<double> input_gradient(const Classifier& classifier, const Tensor& x, std::span<const int> labels) {
  check_inputs(classifier, x, labels);
  const std::size_t n = x.dim(0);
  const std::size_t per = n == 0 ? 0 : x.size() / n;
  std::vector<double> out(x.size());
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < n; begin += kAttackBatch) {
    const std::size_t end = std::min(n, begin + kAttackBatch);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    Tensor batch = gather_images(x, idx);
    batch.set_requires_grad(true);
    const Tensor loss = softmax_cross_entropy(classifier.logits(batch), labels.subspan(begin, end - begin));
    const Tensor wrt[] = {batch};
    const auto g = gradients(loss, wrt)[0];
    std::copy(g.begin(), g.end(), out.begin() + begin * per);
  }
  return out;
}

Tensor fgsm(const Classifier& classifier, const Tensor& x, std::span<const int> labels, double epsilon) {
  check_inputs(classifier, x, labels);
  if (!(epsilon >= 0.0)) throw Error("fgsm: epsilon must be >= 0");
  if (epsilon == 0.0) return x.detach();
  const auto g = input_gradient(classifier, x, labels);
  auto in = x.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(in[i] + epsilon * sign(g[i]), 0.0, 1.0);
  return Tensor(x.shape(), std::move(out));
}

namespace {

Tensor iterate(const Classifier& classifier, const Tensor& x, std::span<const int> labels, const AttackConfig& config,
               std::vector<double> start, const StepObserver& observer) {
  auto clean = x.data();
  std::vector<double> lower(x.size()), upper(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    lower[i] = std::max(clean[i] - config.epsilon, config.clip_lo);
    upper[i] = std::min(clean[i] + config.epsilon, config.clip_hi);
  }
  Tensor current(x.shape(), std::move(start));
  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto g = input_gradient(classifier, current, labels);
    auto cur = current.data();
    std::vector<double> next(x.size());
    for (std::size_t i = 0; i < next.size(); ++i) {
      next[i] = std::clamp(cur[i] + config.step_size * sign(g[i]), lower[i], upper[i]);
    }
    current = Tensor(x.shape(), std::move(next));
    if (observer) observer(step + 1, current);
  }
  return current;
}

}  // namespace

Tensor bim(const Classifier& classifier, const Tensor& x, std::span<const int> labels, const AttackConfig& config,
           const StepObserver& observer) {
  check_inputs(classifier, x, labels);
  config.validate();
  if (config.epsilon == 0.0) return x.detach();
  return iterate(classifier, x, labels, config, {x.data().begin(), x.data().end()}, observer);
}

Tensor pgd(const Classifier& classifier, const Tensor& x, std::span<const int> labels, const AttackConfig& config,
           const StepObserver& observer) {
  check_inputs(classifier, x, labels);
  config.validate();
  if (config.epsilon == 0.0) return x.detach();
  std::vector<double> start(x.data().begin(), x.data().end());
  if (config.random_start) {
    Rng rng(config.seed);
    for (auto& v : start) v = std::clamp(v + rng.uniform(-config.epsilon, config.epsilon), config.clip_lo, config.clip_hi);
  }
  return iterate(classifier, x, labels, config, std::move(start), observer);
}

Tensor run_attack(const Classifier& classifier, const Tensor& x, std::span<const int> labels,
                  const AttackConfig& config) {
  const AttackConfig c = config.normalized();
  switch (c.family) {
    case AttackFamily::kFgsm:
      return fgsm(classifier, x, labels, c.epsilon);
    case AttackFamily::kBim:
      return bim(classifier, x, labels, c);
    case AttackFamily::kPgd:
      return pgd(classifier, x, labels, c);
  }
  throw Error("run_attack: unknown family");
}

double transfer_attack(const Classifier& surrogate, const Classifier& target, const Preprocessor& purifier,
                       const Tensor& x, std::span<const int> labels, const AttackConfig& config) {
  const Tensor adversarial = run_attack(surrogate, x, labels, config);
  return accuracy(target, adversarial, labels, purifier);
}

}  // namespace vqunet
