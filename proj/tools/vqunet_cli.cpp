#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "vqunet/config_io.hpp"
#include "vqunet/harness.hpp"

namespace {

namespace fs = std::filesystem;
using namespace vqunet;

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string dataset;
  std::string idx_images;
  std::string idx_labels;
};

void add_common(CLI::App* app, CommonFlags& flags) {
  app->add_option("--config", flags.config, "JSON run config; missing keys keep desk-scale defaults")
      ->check(CLI::ExistingFile);
  app->add_option("--out", flags.out, "output directory (overrides out_dir)");
  app->add_option("--seed", flags.seed, "global seed (overrides seed)");
  app->add_option("--dataset", flags.dataset, "data source (overrides data.source)")
      ->check(CLI::IsMember({"idx", "synthetic"}));
  app->add_option("--idx-images", flags.idx_images, "IDX image file");
  app->add_option("--idx-labels", flags.idx_labels, "IDX label file");
}

RunConfig resolve(const CommonFlags& flags) {
  RunConfig c = flags.config.empty() ? RunConfig::desk_scale() : load_run_config(flags.config);
  if (!flags.out.empty()) c.out_dir = flags.out;
  if (flags.seed) c.seed = *flags.seed;
  if (!flags.idx_images.empty()) c.data.idx_images = flags.idx_images;
  if (!flags.idx_labels.empty()) c.data.idx_labels = flags.idx_labels;
  if (!flags.dataset.empty()) {
    c.data.source = flags.dataset;
  } else if (!flags.idx_images.empty() || !flags.idx_labels.empty()) {
    c.data.source = "idx";
  }
  c.validate();
  return c;
}

class Progress {
 public:
  void operator()(std::string_view stage) {
    finish();
    stage_ = std::string(stage);
    start_ = std::chrono::steady_clock::now();
    std::fprintf(stderr, "[vqunet] %s ...\n", stage_.c_str());
  }
  void finish() {
    if (stage_.empty()) return;
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::fprintf(stderr, "[vqunet] %s done in %.1fs\n", stage_.c_str(), s);
    stage_.clear();
  }

 private:
  std::string stage_;
  std::chrono::steady_clock::time_point start_;
};

void write_training_log(const TrainingLog& log, const fs::path& path) {
  std::FILE* f = std::fopen(path.string().c_str(), "w");
  if (!f) throw Error("cannot write " + path.string());
  std::fprintf(f, "epoch,l_reconst,l_e,l_q,total\n");
  for (std::size_t i = 0; i < log.epochs.size(); ++i) {
    const EpochLoss& e = log.epochs[i];
    std::fprintf(f, "%zu,%.10g,%.10g,%.10g,%.10g\n", i + 1, e.l_reconst, e.l_e, e.l_q, e.total);
  }
  std::fclose(f);
}

void print_clean(const CleanAccuracy& c) {
  std::printf("clean accuracy: unfiltered %.4f, VQ-filtered %.4f (degradation %+.4f), non-VQ-filtered %.4f "
              "(degradation %+.4f)\n",
              c.unfiltered, c.filtered, c.unfiltered - c.filtered, c.filtered_nonvq, c.unfiltered - c.filtered_nonvq);
}

int train_purifier_cmd(const CommonFlags& flags, bool vq_enabled) {
  const RunConfig c = resolve(flags);
  ensure_writable_dir(c.out_dir);
  Progress progress;
  progress("data");
  const Splits splits = load_splits(c);
  progress(vq_enabled ? "train-purifier" : "train-purifier-nonvq");
  TrainingLog log;
  Models models;
  (vq_enabled ? models.purifier : models.purifier_nonvq) = train_purifier_stage(c, splits.train, vq_enabled, &log);
  progress.finish();
  save_models(models, c.out_dir);
  const std::string stem = vq_enabled ? "purifier" : "purifier_nonvq";
  write_training_log(log, fs::path(c.out_dir) / (stem + "_training.csv"));
  if (!log.epochs.empty()) {
    const EpochLoss& last = log.epochs.back();
    std::printf("%s: final epoch l_reconst %.6g, l_e %.6g, l_q %.6g\n", stem.c_str(), last.l_reconst, last.l_e,
                last.l_q);
  }
  std::printf("wrote %s\n", (fs::path(c.out_dir) / (stem + ".ckpt")).string().c_str());
  return 0;
}

int train_classifier_cmd(const CommonFlags& flags, const std::string& role) {
  const RunConfig c = resolve(flags);
  ensure_writable_dir(c.out_dir);
  Models existing = load_models(c.out_dir);
  Progress progress;
  progress("data");
  const Splits splits = load_splits(c);
  Models trained;
  const auto want = [&](const char* name) { return role == "all" || role == name; };
  if (want("undefended")) {
    progress("train-classifier-undefended");
    trained.undefended = train_classifier_stage(c, splits.train, ClassifierRole::kUndefended);
  }
  if (want("surrogate")) {
    progress("train-classifier-surrogate");
    trained.surrogate = train_classifier_stage(c, splits.train, ClassifierRole::kSurrogate);
  }
  if (want("defended")) {
    if (!existing.purifier) throw Error("defended classifier needs purifier.ckpt in " + c.out_dir);
    progress("train-classifier-defended");
    trained.defended = train_classifier_stage(c, splits.train, ClassifierRole::kDefended, &*existing.purifier);
  }
  if (want("defended_nonvq")) {
    if (existing.purifier_nonvq) {
      progress("train-classifier-defended-nonvq");
      trained.defended_nonvq =
          train_classifier_stage(c, splits.train, ClassifierRole::kDefendedNonVq, &*existing.purifier_nonvq);
    } else if (role != "all") {
      throw Error("defended_nonvq classifier needs purifier_nonvq.ckpt in " + c.out_dir);
    } else {
      std::fprintf(stderr, "[vqunet] no purifier_nonvq.ckpt, skipping defended_nonvq (run `ablation` first)\n");
    }
  }
  progress.finish();
  save_models(trained, c.out_dir);
  for (const auto& [name, model] : {std::pair{"undefended", &trained.undefended}, {"surrogate", &trained.surrogate},
                                    {"defended", &trained.defended}, {"defended_nonvq", &trained.defended_nonvq}}) {
    if (*model) std::printf("trained %s classifier\n", name);
  }
  return 0;
}

void print_summary(const EvalReport& report, const fs::path& out) {
  print_clean(report.clean);
  for (const AccuracyRow& row : report.accuracy) {
    std::printf("%-4s eps=%-5g %-5s undefended %.4f defended %.4f\n", std::string(to_string(row.family)).c_str(),
                row.epsilon, std::string(to_string(row.threat)).c_str(), row.undefended_acc, row.defended_acc);
  }
  std::printf("report written to %s\n", out.string().c_str());
}

int evaluate_cmd(const CommonFlags& flags, const std::string& models_dir) {
  const RunConfig c = resolve(flags);
  ensure_writable_dir(c.out_dir);
  const Models models = load_models(models_dir.empty() ? fs::path(c.out_dir) : fs::path(models_dir));
  Progress progress;
  progress("data");
  const Splits splits = load_splits(c);
  const EvalReport report = evaluate_models(c, models, splits.test, std::ref(progress));
  progress.finish();
  emit_report(report, c, c.out_dir);
  print_summary(report, c.out_dir);
  return 0;
}

int full_run_cmd(const CommonFlags& flags) {
  const RunConfig c = resolve(flags);
  ensure_writable_dir(c.out_dir);
  Progress progress;
  Models models;
  const EvalReport report = run_pipeline(c, &models, std::ref(progress));
  progress.finish();
  save_models(models, c.out_dir);
  emit_report(report, c, c.out_dir);
  print_summary(report, c.out_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"VQUNet adversarial purification harness"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);

  CommonFlags flags;
  auto* purifier = app.add_subcommand("train-purifier", "train the VQ purifier on clean training data");
  auto* classifier = app.add_subcommand("train-classifier", "train target and surrogate classifiers");
  auto* evaluate = app.add_subcommand("evaluate", "attack grid and diagnostics from saved checkpoints");
  auto* ablation = app.add_subcommand("ablation", "train the non-VQ ablation purifier");
  auto* full = app.add_subcommand("full-run", "train every model, evaluate and write the report");
  for (auto* sub : {purifier, classifier, evaluate, ablation, full}) add_common(sub, flags);

  std::string role = "all";
  classifier->add_option("--role", role, "which classifier to train")
      ->check(CLI::IsMember({"all", "undefended", "defended", "defended_nonvq", "surrogate"}));
  std::string models_dir;
  evaluate->add_option("--models", models_dir, "checkpoint directory (defaults to --out)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (purifier->parsed()) return train_purifier_cmd(flags, true);
    if (ablation->parsed()) return train_purifier_cmd(flags, false);
    if (classifier->parsed()) return train_classifier_cmd(flags, role);
    if (evaluate->parsed()) return evaluate_cmd(flags, models_dir);
    if (full->parsed()) return full_run_cmd(flags);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
