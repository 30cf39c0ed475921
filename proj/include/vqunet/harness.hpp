#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vqunet/attack.hpp"
#include "vqunet/classifier.hpp"
#include "vqunet/dataset.hpp"
#include "vqunet/model.hpp"

namespace vqunet {

enum class ThreatModel { kWhite, kBlack };
std::string_view to_string(ThreatModel threat);

struct DataConfig {
  std::string source = "synthetic";  ///< "synthetic" or "idx"
  std::string idx_images;
  std::string idx_labels;
  std::size_t num_classes = 10;
  /// IDX: the first train_size samples train, the next test_size test.
  std::size_t train_size = 1000;
  std::size_t test_size = 300;
};

struct AttackGridConfig {
  /// Ascending epsilon list per family; families without an entry are skipped.
  std::map<AttackFamily, std::vector<double>> epsilons;
  std::size_t steps = 10;             ///< BIM and PGD iterations
  double step_fraction = 0.25;        ///< BIM and PGD step size as a fraction of epsilon
};

struct DiagnosticsConfig {
  AttackFamily family = AttackFamily::kFgsm;  ///< attack whose grid the diagnostics sweep
  std::size_t samples = 200;                  ///< leading test samples used
  std::size_t depths = 3;                     ///< depths 1..depths are measured
};

/// Everything a run needs. The global `seed` fans out to every stage; the
/// nested `seed` fields are overwritten from it (see stage_seeds).
struct RunConfig {
  DataConfig data;
  VQUNetConfig purifier;
  ClassifierConfig classifier;
  AttackGridConfig attacks;
  DiagnosticsConfig diagnostics;
  std::string out_dir = "vqunet-run";
  std::uint64_t seed = 0;

  /// Desk-scale defaults: reduced channel widths so a full run fits in
  /// minutes on one CPU core.
  static RunConfig desk_scale();
  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
/// Strict parse: unknown keys at any level are rejected, missing keys keep
/// their desk-scale default.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

struct StageSeeds {
  std::uint64_t data_train, data_test;
  std::uint64_t purifier;
  std::uint64_t classifier_undefended, classifier_defended, classifier_defended_nonvq, classifier_surrogate;
  std::uint64_t attack;
};
StageSeeds stage_seeds(std::uint64_t seed);
nlohmann::json to_json(const StageSeeds& seeds);

struct Splits {
  Dataset train;
  Dataset test;
};
Splits load_splits(const RunConfig& config);

/// Trains the purifier (or its non-VQ ablation) on clean training images.
VQUNet train_purifier_stage(const RunConfig& config, const Dataset& train, bool vq_enabled,
                            TrainingLog* log = nullptr);

enum class ClassifierRole { kUndefended, kDefended, kDefendedNonVq, kSurrogate };
std::string_view to_string(ClassifierRole role);

/// Trains one classifier role. Defended roles train on the training set as
/// seen through `purifier`; the others train on raw images.
Classifier train_classifier_stage(const RunConfig& config, const Dataset& train, ClassifierRole role,
                                  const VQUNet* purifier = nullptr);

/// Trained artifacts one evaluation consumes.
struct Models {
  std::optional<VQUNet> purifier;
  std::optional<VQUNet> purifier_nonvq;
  std::optional<Classifier> undefended;
  std::optional<Classifier> defended;
  std::optional<Classifier> defended_nonvq;
  std::optional<Classifier> surrogate;
};

void save_models(const Models& models, const std::filesystem::path& dir);
/// Loads whichever checkpoints exist in `dir`.
Models load_models(const std::filesystem::path& dir);

struct AccuracyRow {
  AttackFamily family;
  double epsilon;
  ThreatModel threat;
  double undefended_acc;
  double defended_acc;
};

struct CleanAccuracy {
  double unfiltered = 0.0;
  double filtered = 0.0;        ///< defended classifier behind the VQ purifier
  double filtered_nonvq = 0.0;  ///< defended classifier behind the non-VQ ablation
};

struct ReconstructionRow {
  double epsilon;
  double vq_l1;
  double nonvq_l1;
};

struct FeatureRow {
  std::size_t depth;
  double epsilon;
  double pre_vq_l1;
  double post_vq_l1;
  double nonvq_pre_vq_l1;
};

struct ChurnRow {
  std::size_t depth;
  double epsilon;
  double churn_fraction;
};

struct EvalReport {
  CleanAccuracy clean;
  std::vector<AccuracyRow> accuracy;
  std::vector<ReconstructionRow> reconstruction;
  std::vector<FeatureRow> features;
  std::vector<ChurnRow> churn;
};

/// Clean images and their adversarial versions, one per epsilon.
struct AdversarialSweep {
  Tensor clean;
  std::vector<double> epsilons;
  std::vector<Tensor> attacked;
};

AttackConfig attack_config(const AttackGridConfig& grid, AttackFamily family, double epsilon, std::uint64_t seed);

/// White-box adversarial examples crafted on `classifier` for every epsilon.
AdversarialSweep make_sweep(const Classifier& classifier, const Dataset& data, const AttackGridConfig& grid,
                            AttackFamily family, std::uint64_t seed);

/// Per epsilon: mean |x - purify(x_adv)| for the VQ model and its ablation.
std::vector<ReconstructionRow> diag_reconstruction_divergence(const VQUNet& vq, const VQUNet& nonvq,
                                                              const AdversarialSweep& sweep);
/// Per (depth, epsilon): mean |a_d(x) - a_d(x_adv)|, mean |q_d(x) - q_d(x_adv)|
/// and the ablation's mean |a_d(x) - a_d(x_adv)|.
std::vector<FeatureRow> diag_feature_divergence(const VQUNet& vq, const VQUNet& nonvq, const AdversarialSweep& sweep,
                                                std::size_t depths);
/// Per (depth, epsilon): fraction of positions whose code index changed.
std::vector<ChurnRow> diag_code_churn(const VQUNet& vq, const AdversarialSweep& sweep, std::size_t depths);

using ProgressFn = std::function<void(std::string_view)>;

/// Attack grid in both threat models plus the diagnostics. Needs every model.
EvalReport evaluate_models(const RunConfig& config, const Models& models, const Dataset& test,
                           const ProgressFn& progress = {});

/// Trains every model and evaluates. Stage failures are rethrown as
/// StageError naming the stage.
EvalReport run_pipeline(const RunConfig& config, Models* trained = nullptr, const ProgressFn& progress = {});

class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// Creates `dir` if needed and proves it writable; throws otherwise.
void ensure_writable_dir(const std::filesystem::path& dir);

inline constexpr std::string_view kAccuracyHeader = "family,epsilon,threat,undefended_acc,defended_acc";
inline constexpr std::string_view kCleanAccuracyHeader = "purifier,unfiltered_acc,filtered_acc,degradation";
inline constexpr std::string_view kReconstructionHeader = "epsilon,vq_l1,nonvq_l1";
inline constexpr std::string_view kFeatureHeader = "depth,epsilon,pre_vq_l1,post_vq_l1,nonvq_pre_vq_l1";
inline constexpr std::string_view kChurnHeader = "depth,epsilon,churn_fraction";

/// Writes the CSV tables and run.json. Files are staged under temporary names
/// and renamed once all are written.
void emit_report(const EvalReport& report, const RunConfig& config, const std::filesystem::path& out_dir);

/// Library version with the source revision when known.
std::string version_string();

}  // namespace vqunet
