#include "vqunet/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "vqunet/config_io.hpp"
#include "vqunet/rng.hpp"

#ifndef VQUNET_VERSION
#define VQUNET_VERSION "0.0.0"
#endif

namespace vqunet {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr AttackFamily kFamilies[] = {AttackFamily::kFgsm, AttackFamily::kBim, AttackFamily::kPgd};
constexpr ThreatModel kThreats[] = {ThreatModel::kWhite, ThreatModel::kBlack};
constexpr std::size_t kEvalBatch = 64;

template <typename F>
auto run_stage(std::string_view name, const ProgressFn& progress, F&& fn) -> decltype(fn()) {
  if (progress) progress(name);
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(std::string(name), e.what());
  }
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

std::string_view to_string(ThreatModel threat) { return threat == ThreatModel::kWhite ? "white" : "black"; }

std::string_view to_string(ClassifierRole role) {
  switch (role) {
    case ClassifierRole::kUndefended:
      return "undefended";
    case ClassifierRole::kDefended:
      return "defended";
    case ClassifierRole::kDefendedNonVq:
      return "defended_nonvq";
    case ClassifierRole::kSurrogate:
      return "surrogate";
  }
  return "?";
}

RunConfig RunConfig::desk_scale() {
  RunConfig c;
  c.purifier.depth = 4;
  c.purifier.stem_channels = 8;
  c.purifier.channels = {8, 16, 32, 64};
  c.purifier.codebook_k = {32, 32, 32, 32};
  c.purifier.epochs = 20;
  c.purifier.batch_size = 32;
  c.classifier.channels = {8, 16, 32};
  c.classifier.epochs = 10;
  c.classifier.batch_size = 32;
  const std::vector<double> grid{0.0, 0.02, 0.05, 0.1, 0.15, 0.2};
  for (auto family : kFamilies) c.attacks.epsilons[family] = grid;
  return c;
}

void RunConfig::validate() const {
  if (data.source != "synthetic" && data.source != "idx") {
    throw ConfigError("data.source must be 'synthetic' or 'idx', got '" + data.source + "'");
  }
  if (data.source == "idx" && (data.idx_images.empty() || data.idx_labels.empty())) {
    throw ConfigError("data.source 'idx' needs idx_images and idx_labels");
  }
  if (data.num_classes < 2) throw ConfigError("data.num_classes must be >= 2");
  if (data.source == "synthetic" && data.num_classes > 10) throw ConfigError("synthetic data supports <= 10 classes");
  if (data.train_size == 0 || data.test_size == 0) throw ConfigError("data.train_size and test_size must be positive");
  try {
    purifier.validate();
    classifier.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (purifier.input_shape != classifier.input_shape) {
    throw ConfigError("purifier and classifier input_shape differ");
  }
  if (classifier.num_classes != data.num_classes) {
    throw ConfigError("classifier.num_classes must equal data.num_classes");
  }
  if (attacks.epsilons.empty()) throw ConfigError("attacks.epsilons must name at least one family");
  for (const auto& [family, grid] : attacks.epsilons) {
    const std::string name(to_string(family));
    if (grid.empty()) throw ConfigError("attacks.epsilons." + name + " is empty");
    if (!std::is_sorted(grid.begin(), grid.end()) || std::adjacent_find(grid.begin(), grid.end()) != grid.end()) {
      throw ConfigError("attacks.epsilons." + name + " must be strictly ascending");
    }
    if (grid.front() < 0.0) throw ConfigError("attacks.epsilons." + name + " must be >= 0");
  }
  if (attacks.steps == 0) throw ConfigError("attacks.steps must be >= 1");
  if (!(attacks.step_fraction > 0.0)) throw ConfigError("attacks.step_fraction must be > 0");
  if (!attacks.epsilons.contains(diagnostics.family)) {
    throw ConfigError("diagnostics.family has no epsilon grid");
  }
  if (diagnostics.samples == 0) throw ConfigError("diagnostics.samples must be positive");
  if (diagnostics.depths == 0 || diagnostics.depths > purifier.depth) {
    throw ConfigError("diagnostics.depths must be in [1, purifier.depth]");
  }
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

json to_json(const RunConfig& c) {
  json eps = json::object();
  for (const auto& [family, grid] : c.attacks.epsilons) eps[std::string(to_string(family))] = grid;
  return json{{"data",
               {{"source", c.data.source},
                {"idx_images", c.data.idx_images},
                {"idx_labels", c.data.idx_labels},
                {"num_classes", c.data.num_classes},
                {"train_size", c.data.train_size},
                {"test_size", c.data.test_size}}},
              {"purifier", to_json(c.purifier)},
              {"classifier", to_json(c.classifier)},
              {"attacks", {{"epsilons", eps}, {"steps", c.attacks.steps}, {"step_fraction", c.attacks.step_fraction}}},
              {"diagnostics",
               {{"family", std::string(to_string(c.diagnostics.family))},
                {"samples", c.diagnostics.samples},
                {"depths", c.diagnostics.depths}}},
              {"out_dir", c.out_dir},
              {"seed", c.seed}};
}

RunConfig run_config_from_json(const json& j) {
  require_known_keys(j, {"data", "purifier", "classifier", "attacks", "diagnostics", "out_dir", "seed"}, "config");
  RunConfig c = RunConfig::desk_scale();
  if (j.contains("data")) {
    const json& d = j.at("data");
    require_known_keys(d, {"source", "idx_images", "idx_labels", "num_classes", "train_size", "test_size"}, "data");
    read_field(d, "source", c.data.source, "data");
    read_field(d, "idx_images", c.data.idx_images, "data");
    read_field(d, "idx_labels", c.data.idx_labels, "data");
    read_field(d, "num_classes", c.data.num_classes, "data");
    read_field(d, "train_size", c.data.train_size, "data");
    read_field(d, "test_size", c.data.test_size, "data");
  }
  // Nested configs start from the desk-scale values rather than the
  // full-size struct defaults; the nested parsers still reject unknown keys.
  if (j.contains("purifier")) {
    json merged = to_json(c.purifier);
    if (!j.at("purifier").is_object()) throw ConfigError("purifier: expected a JSON object");
    merged.update(j.at("purifier"));
    c.purifier = vqunet_config_from_json(merged);
  }
  if (j.contains("classifier")) {
    json merged = to_json(c.classifier);
    if (!j.at("classifier").is_object()) throw ConfigError("classifier: expected a JSON object");
    merged.update(j.at("classifier"));
    c.classifier = classifier_config_from_json(merged);
  }
  if (j.contains("attacks")) {
    const json& a = j.at("attacks");
    require_known_keys(a, {"epsilons", "steps", "step_fraction"}, "attacks");
    if (a.contains("epsilons")) {
      const json& eps = a.at("epsilons");
      require_known_keys(eps, {"FGSM", "BIM", "PGD"}, "attacks.epsilons");
      c.attacks.epsilons.clear();
      for (const auto& item : eps.items()) {
        std::vector<double> grid;
        read_field(eps, item.key().c_str(), grid, "attacks.epsilons");
        c.attacks.epsilons[parse_attack_family(item.key())] = std::move(grid);
      }
    }
    read_field(a, "steps", c.attacks.steps, "attacks");
    read_field(a, "step_fraction", c.attacks.step_fraction, "attacks");
  }
  if (j.contains("diagnostics")) {
    const json& d = j.at("diagnostics");
    require_known_keys(d, {"family", "samples", "depths"}, "diagnostics");
    std::string family(to_string(c.diagnostics.family));
    read_field(d, "family", family, "diagnostics");
    try {
      c.diagnostics.family = parse_attack_family(family);
    } catch (const Error& e) {
      throw ConfigError(std::string("diagnostics.family: ") + e.what());
    }
    read_field(d, "samples", c.diagnostics.samples, "diagnostics");
    read_field(d, "depths", c.diagnostics.depths, "diagnostics");
  }
  read_field(j, "out_dir", c.out_dir, "config");
  read_field(j, "seed", c.seed, "config");
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

StageSeeds stage_seeds(std::uint64_t seed) {
  return {derive_seed(seed, "data-train"),
          derive_seed(seed, "data-test"),
          derive_seed(seed, "purifier"),
          derive_seed(seed, "classifier-undefended"),
          derive_seed(seed, "classifier-defended"),
          derive_seed(seed, "classifier-defended-nonvq"),
          derive_seed(seed, "classifier-surrogate"),
          derive_seed(seed, "attack")};
}

json to_json(const StageSeeds& s) {
  return json{{"data_train", s.data_train},
              {"data_test", s.data_test},
              {"purifier", s.purifier},
              {"classifier_undefended", s.classifier_undefended},
              {"classifier_defended", s.classifier_defended},
              {"classifier_defended_nonvq", s.classifier_defended_nonvq},
              {"classifier_surrogate", s.classifier_surrogate},
              {"attack", s.attack}};
}

Splits load_splits(const RunConfig& config) {
  const StageSeeds seeds = stage_seeds(config.seed);
  const auto& d = config.data;
  Splits out;
  if (d.source == "synthetic") {
    out.train = synthetic_dataset(d.train_size, d.num_classes, seeds.data_train, Split::kTrain);
    out.test = synthetic_dataset(d.test_size, d.num_classes, seeds.data_test, Split::kTest);
  } else {
    const Dataset all = load_idx(d.idx_images, d.idx_labels, Split::kTrain, d.train_size + d.test_size);
    if (all.size() < d.train_size + d.test_size) {
      throw Error("IDX files hold " + std::to_string(all.size()) + " samples, need train_size + test_size = " +
                  std::to_string(d.train_size + d.test_size));
    }
    out.train = head(all, 0, d.train_size, Split::kTrain);
    out.test = head(all, d.train_size, d.test_size, Split::kTest);
  }
  const Shape expected{config.purifier.input_shape[0], config.purifier.input_shape[1], config.purifier.input_shape[2]};
  if (out.train.image_shape() != expected) {
    throw ShapeError("dataset images are " + shape_string(out.train.image_shape()) + ", config expects " +
                     shape_string(expected));
  }
  for (const Dataset* split : {&out.train, &out.test}) {
    for (int y : split->labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= d.num_classes) {
        throw Error("label " + std::to_string(y) + " outside [0," + std::to_string(d.num_classes) + ")");
      }
    }
  }
  return out;
}

VQUNet train_purifier_stage(const RunConfig& config, const Dataset& train, bool vq_enabled, TrainingLog* log) {
  VQUNetConfig cfg = config.purifier;
  // Both variants share one initialization stream so they differ only in VQ.
  cfg.seed = stage_seeds(config.seed).purifier;
  cfg.vq_enabled = vq_enabled;
  VQUNet model(cfg);
  TrainingLog result = vqunet::train(model, train);
  if (log) *log = std::move(result);
  return model;
}

Classifier train_classifier_stage(const RunConfig& config, const Dataset& train, ClassifierRole role,
                                  const VQUNet* purifier) {
  const StageSeeds seeds = stage_seeds(config.seed);
  ClassifierConfig cfg = config.classifier;
  switch (role) {
    case ClassifierRole::kUndefended:
      cfg.seed = seeds.classifier_undefended;
      break;
    case ClassifierRole::kDefended:
      cfg.seed = seeds.classifier_defended;
      break;
    case ClassifierRole::kDefendedNonVq:
      cfg.seed = seeds.classifier_defended_nonvq;
      break;
    case ClassifierRole::kSurrogate:
      cfg.seed = seeds.classifier_surrogate;
      break;
  }
  const bool defended = role == ClassifierRole::kDefended || role == ClassifierRole::kDefendedNonVq;
  if (!defended) return train_classifier(train, cfg);
  if (!purifier) throw Error(std::string(to_string(role)) + " classifier needs a purifier");
  if (purifier->config().vq_enabled != (role == ClassifierRole::kDefended)) {
    throw Error(std::string(to_string(role)) + " classifier got a purifier with the wrong vq_enabled flag");
  }
  const Dataset purified{purify(*purifier, train.images), train.labels, train.split};
  return train_classifier(purified, cfg);
}

namespace {

const std::pair<const char*, std::optional<VQUNet> Models::*> kPurifierFiles[] = {
    {"purifier.ckpt", &Models::purifier}, {"purifier_nonvq.ckpt", &Models::purifier_nonvq}};
const std::pair<const char*, std::optional<Classifier> Models::*> kClassifierFiles[] = {
    {"classifier_undefended.ckpt", &Models::undefended},
    {"classifier_defended.ckpt", &Models::defended},
    {"classifier_defended_nonvq.ckpt", &Models::defended_nonvq},
    {"classifier_surrogate.ckpt", &Models::surrogate}};

}  // namespace

void save_models(const Models& models, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& [file, member] : kPurifierFiles) {
    if (const auto& m = models.*member) save(*m, dir / file);
  }
  for (const auto& [file, member] : kClassifierFiles) {
    if (const auto& m = models.*member) save(*m, dir / file);
  }
}

Models load_models(const fs::path& dir) {
  Models models;
  if (fs::exists(dir / "purifier.ckpt")) models.purifier = load_vqunet(dir / "purifier.ckpt", true);
  if (fs::exists(dir / "purifier_nonvq.ckpt")) models.purifier_nonvq = load_vqunet(dir / "purifier_nonvq.ckpt", false);
  for (const auto& [file, member] : kClassifierFiles) {
    if (fs::exists(dir / file)) models.*member = load_classifier(dir / file);
  }
  return models;
}

AttackConfig attack_config(const AttackGridConfig& grid, AttackFamily family, double epsilon, std::uint64_t seed) {
  AttackConfig c = AttackConfig::defaults(family, epsilon, seed);
  if (family != AttackFamily::kFgsm) {
    c.steps = grid.steps;
    c.step_size = grid.step_fraction * epsilon;
  }
  return c.normalized();
}

AdversarialSweep make_sweep(const Classifier& classifier, const Dataset& data, const AttackGridConfig& grid,
                            AttackFamily family, std::uint64_t seed) {
  const auto it = grid.epsilons.find(family);
  if (it == grid.epsilons.end()) throw Error("make_sweep: no epsilon grid for " + std::string(to_string(family)));
  AdversarialSweep sweep;
  sweep.clean = data.images;
  sweep.epsilons = it->second;
  for (std::size_t i = 0; i < sweep.epsilons.size(); ++i) {
    const std::uint64_t cell_seed = derive_seed(seed, std::string(to_string(family)) + "/diag/" + std::to_string(i));
    sweep.attacked.push_back(
        run_attack(classifier, data.images, data.labels, attack_config(grid, family, sweep.epsilons[i], cell_seed)));
  }
  return sweep;
}

namespace {

double mean_l1(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("mean_l1: size mismatch or empty");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a[i] - b[i]);
  return total / static_cast<double>(a.size());
}

struct DepthFeatures {
  std::vector<double> a, q;
  std::vector<std::int64_t> indices;
};

// Pre- and post-quantization features for depths 1..depths, batched.
std::vector<DepthFeatures> collect_features(const VQUNet& model, const Tensor& x, std::size_t depths) {
  if (depths == 0 || depths > model.config().depth) {
    throw Error("depth " + std::to_string(depths) + " outside [1, " + std::to_string(model.config().depth) + "]");
  }
  NoGradGuard no_grad;
  std::vector<DepthFeatures> out(depths);
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < x.dim(0); begin += kEvalBatch) {
    const std::size_t end = std::min(x.dim(0), begin + kEvalBatch);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const ForwardResult fwd = model.forward(gather_images(x, idx));
    for (std::size_t d = 0; d < depths; ++d) {
      const auto& r = fwd.per_depth[d];
      out[d].a.insert(out[d].a.end(), r.a.data().begin(), r.a.data().end());
      if (r.q.defined()) out[d].q.insert(out[d].q.end(), r.q.data().begin(), r.q.data().end());
      out[d].indices.insert(out[d].indices.end(), r.indices.begin(), r.indices.end());
    }
  }
  return out;
}

void require_pair(const VQUNet& vq, const VQUNet& nonvq) {
  if (!vq.config().vq_enabled) throw Error("diagnostics need a VQ purifier");
  if (nonvq.config().vq_enabled) throw Error("diagnostics need the non-VQ ablation purifier");
}

}  // namespace

std::vector<ReconstructionRow> diag_reconstruction_divergence(const VQUNet& vq, const VQUNet& nonvq,
                                                              const AdversarialSweep& sweep) {
  require_pair(vq, nonvq);
  std::vector<ReconstructionRow> rows;
  for (std::size_t i = 0; i < sweep.epsilons.size(); ++i) {
    rows.push_back({sweep.epsilons[i], mean_l1(sweep.clean.data(), purify(vq, sweep.attacked[i]).data()),
                    mean_l1(sweep.clean.data(), purify(nonvq, sweep.attacked[i]).data())});
  }
  return rows;
}

std::vector<FeatureRow> diag_feature_divergence(const VQUNet& vq, const VQUNet& nonvq, const AdversarialSweep& sweep,
                                                std::size_t depths) {
  require_pair(vq, nonvq);
  if (depths > nonvq.config().depth) throw Error("depth outside the ablation's range");
  const auto clean = collect_features(vq, sweep.clean, depths);
  const auto clean_nonvq = collect_features(nonvq, sweep.clean, depths);
  std::vector<FeatureRow> rows;
  std::vector<std::vector<DepthFeatures>> attacked, attacked_nonvq;
  for (const Tensor& adv : sweep.attacked) {
    attacked.push_back(collect_features(vq, adv, depths));
    attacked_nonvq.push_back(collect_features(nonvq, adv, depths));
  }
  for (std::size_t d = 0; d < depths; ++d) {
    for (std::size_t i = 0; i < sweep.epsilons.size(); ++i) {
      rows.push_back({d + 1, sweep.epsilons[i], mean_l1(clean[d].a, attacked[i][d].a),
                      mean_l1(clean[d].q, attacked[i][d].q), mean_l1(clean_nonvq[d].a, attacked_nonvq[i][d].a)});
    }
  }
  return rows;
}

std::vector<ChurnRow> diag_code_churn(const VQUNet& vq, const AdversarialSweep& sweep, std::size_t depths) {
  if (!vq.config().vq_enabled) throw Error("code churn needs a VQ purifier");
  const auto clean = collect_features(vq, sweep.clean, depths);
  std::vector<std::vector<DepthFeatures>> attacked;
  for (const Tensor& adv : sweep.attacked) attacked.push_back(collect_features(vq, adv, depths));
  std::vector<ChurnRow> rows;
  for (std::size_t d = 0; d < depths; ++d) {
    for (std::size_t i = 0; i < sweep.epsilons.size(); ++i) {
      const auto& a = clean[d].indices;
      const auto& b = attacked[i][d].indices;
      std::size_t changed = 0;
      for (std::size_t k = 0; k < a.size(); ++k) changed += a[k] != b[k] ? 1 : 0;
      rows.push_back({d + 1, sweep.epsilons[i], static_cast<double>(changed) / static_cast<double>(a.size())});
    }
  }
  return rows;
}

EvalReport evaluate_models(const RunConfig& config, const Models& models, const Dataset& test,
                           const ProgressFn& progress) {
  const std::pair<const char*, bool> required[] = {
      {"purifier", models.purifier.has_value()},
      {"purifier_nonvq", models.purifier_nonvq.has_value()},
      {"classifier_undefended", models.undefended.has_value()},
      {"classifier_defended", models.defended.has_value()},
      {"classifier_defended_nonvq", models.defended_nonvq.has_value()},
      {"classifier_surrogate", models.surrogate.has_value()}};
  for (const auto& [name, present] : required) {
    if (!present) throw Error(std::string("evaluation needs the ") + name + " model");
  }
  const StageSeeds seeds = stage_seeds(config.seed);
  const VQUNet& vq = *models.purifier;
  const VQUNet& nonvq = *models.purifier_nonvq;
  const Preprocessor purify_vq = [&vq](const Tensor& x) { return purify(vq, x); };
  const Preprocessor purify_nonvq = [&nonvq](const Tensor& x) { return purify(nonvq, x); };

  EvalReport report;
  run_stage("clean-accuracy", progress, [&] {
    report.clean.unfiltered = accuracy(*models.undefended, test);
    report.clean.filtered = accuracy(*models.defended, test, purify_vq);
    report.clean.filtered_nonvq = accuracy(*models.defended_nonvq, test, purify_nonvq);
  });

  for (AttackFamily family : kFamilies) {
    const auto it = config.attacks.epsilons.find(family);
    if (it == config.attacks.epsilons.end()) continue;
    const std::string name(to_string(family));
    run_stage("attack-" + name, progress, [&] {
      for (std::size_t i = 0; i < it->second.size(); ++i) {
        const double eps = it->second[i];
        for (ThreatModel threat : kThreats) {
          const Classifier& source = threat == ThreatModel::kWhite ? *models.undefended : *models.surrogate;
          const std::uint64_t seed =
              derive_seed(seeds.attack, name + "/" + std::to_string(i) + "/" + std::string(to_string(threat)));
          const Tensor adv = run_attack(source, test.images, test.labels, attack_config(config.attacks, family, eps, seed));
          report.accuracy.push_back({family, eps, threat, accuracy(*models.undefended, adv, test.labels),
                                     accuracy(*models.defended, adv, test.labels, purify_vq)});
        }
      }
    });
  }

  run_stage("diagnostics", progress, [&] {
    const Dataset subset = head(test, 0, std::min(config.diagnostics.samples, test.size()), Split::kTest);
    const AdversarialSweep sweep =
        make_sweep(*models.undefended, subset, config.attacks, config.diagnostics.family, seeds.attack);
    report.reconstruction = diag_reconstruction_divergence(vq, nonvq, sweep);
    report.features = diag_feature_divergence(vq, nonvq, sweep, config.diagnostics.depths);
    report.churn = diag_code_churn(vq, sweep, config.diagnostics.depths);
  });
  return report;
}

EvalReport run_pipeline(const RunConfig& config, Models* trained, const ProgressFn& progress) {
  config.validate();
  const Splits splits = run_stage("data", progress, [&] { return load_splits(config); });
  Models models;
  models.purifier = run_stage("train-purifier", progress,
                              [&] { return train_purifier_stage(config, splits.train, true); });
  models.purifier_nonvq = run_stage("train-purifier-nonvq", progress,
                                    [&] { return train_purifier_stage(config, splits.train, false); });
  models.undefended = run_stage("train-classifier-undefended", progress, [&] {
    return train_classifier_stage(config, splits.train, ClassifierRole::kUndefended);
  });
  models.defended = run_stage("train-classifier-defended", progress, [&] {
    return train_classifier_stage(config, splits.train, ClassifierRole::kDefended, &*models.purifier);
  });
  models.defended_nonvq = run_stage("train-classifier-defended-nonvq", progress, [&] {
    return train_classifier_stage(config, splits.train, ClassifierRole::kDefendedNonVq, &*models.purifier_nonvq);
  });
  models.surrogate = run_stage("train-classifier-surrogate", progress, [&] {
    return train_classifier_stage(config, splits.train, ClassifierRole::kSurrogate);
  });
  EvalReport report = evaluate_models(config, models, splits.test, progress);
  if (trained) *trained = std::move(models);
  return report;
}

void ensure_writable_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error("output directory " + dir.string() + " cannot be created");
  const fs::path probe = dir / ".vqunet-write-probe";
  {
    std::ofstream out(probe);
    if (!out || !(out << "ok") || !out.flush()) {
      throw Error("output directory " + dir.string() + " is not writable");
    }
  }
  fs::remove(probe, ec);
}

namespace {

std::string accuracy_csv(const EvalReport& r) {
  std::ostringstream out;
  out << kAccuracyHeader << '\n';
  for (const auto& row : r.accuracy) {
    out << to_string(row.family) << ',' << format_number(row.epsilon) << ',' << to_string(row.threat) << ','
        << format_number(row.undefended_acc) << ',' << format_number(row.defended_acc) << '\n';
  }
  return out.str();
}

std::string clean_accuracy_csv(const EvalReport& r) {
  std::ostringstream out;
  out << kCleanAccuracyHeader << '\n';
  out << "vq," << format_number(r.clean.unfiltered) << ',' << format_number(r.clean.filtered) << ','
      << format_number(r.clean.unfiltered - r.clean.filtered) << '\n';
  out << "nonvq," << format_number(r.clean.unfiltered) << ',' << format_number(r.clean.filtered_nonvq) << ','
      << format_number(r.clean.unfiltered - r.clean.filtered_nonvq) << '\n';
  return out.str();
}

std::string reconstruction_csv(const EvalReport& r) {
  std::ostringstream out;
  out << kReconstructionHeader << '\n';
  for (const auto& row : r.reconstruction) {
    out << format_number(row.epsilon) << ',' << format_number(row.vq_l1) << ',' << format_number(row.nonvq_l1)
        << '\n';
  }
  return out.str();
}

std::string feature_csv(const EvalReport& r) {
  std::ostringstream out;
  out << kFeatureHeader << '\n';
  for (const auto& row : r.features) {
    out << row.depth << ',' << format_number(row.epsilon) << ',' << format_number(row.pre_vq_l1) << ','
        << format_number(row.post_vq_l1) << ',' << format_number(row.nonvq_pre_vq_l1) << '\n';
  }
  return out.str();
}

std::string churn_csv(const EvalReport& r) {
  std::ostringstream out;
  out << kChurnHeader << '\n';
  for (const auto& row : r.churn) {
    out << row.depth << ',' << format_number(row.epsilon) << ',' << format_number(row.churn_fraction) << '\n';
  }
  return out.str();
}

}  // namespace

void emit_report(const EvalReport& report, const RunConfig& config, const fs::path& out_dir) {
  ensure_writable_dir(out_dir);
  const json run{{"config", to_json(config)}, {"stage_seeds", to_json(stage_seeds(config.seed))},
                 {"version", version_string()}};
  const std::pair<std::string, std::string> files[] = {
      {"accuracy.csv", accuracy_csv(report)},
      {"clean_accuracy.csv", clean_accuracy_csv(report)},
      {"reconstruction_divergence.csv", reconstruction_csv(report)},
      {"feature_divergence.csv", feature_csv(report)},
      {"code_churn.csv", churn_csv(report)},
      {"run.json", run.dump(2) + "\n"}};
  std::vector<fs::path> staged;
  try {
    for (const auto& [name, content] : files) {
      const fs::path tmp = out_dir / ("." + name + ".tmp");
      staged.push_back(tmp);
      std::ofstream out(tmp, std::ios::binary);
      out << content;
      out.flush();
      if (!out) throw Error("failed writing " + tmp.string());
    }
  } catch (...) {
    std::error_code ec;
    for (const auto& p : staged) fs::remove(p, ec);
    throw;
  }
  for (std::size_t i = 0; i < staged.size(); ++i) fs::rename(staged[i], out_dir / files[i].first);
}

std::string version_string() {
#ifdef VQUNET_GIT_REVISION
  return std::string(VQUNET_VERSION) + "-g" + VQUNET_GIT_REVISION;
#else
  return VQUNET_VERSION;
#endif
}

}  // namespace vqunet
