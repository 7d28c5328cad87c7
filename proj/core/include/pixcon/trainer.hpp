#pragma once

// Semi-supervised training loop: supervised cross-entropy on the labeled
// stream plus λ1·(feature-space loss) + λ2·(label-space consistency) on weak
// and strong views of unlabeled images.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pixcon/config.hpp"
#include "pixcon/data.hpp"
#include "pixcon/model.hpp"
#include "pixcon/rng.hpp"

namespace pixcon {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

ModelConfig model_config(const TrainConfig& config, int num_classes);

struct MetricsRow {
  int step = 0;
  double supervised_ce = kNaN;
  double contrastive = kNaN;
  double consistency = kNaN;
  double total = kNaN;
  double fnr = kNaN;
  double eval_miou = kNaN;
  double lr = kNaN;
};

// Counters that are warnings rather than failures.
struct StepDiagnostics {
  std::size_t empty_densities = 0;  // anchors skipped: no admissible negative
  std::size_t shortfalls = 0;       // anchors that got fewer than N negatives
  std::size_t anchors = 0;
  bool unlabeled_active = false;
};

// Inputs of one step after augmentation.
struct StepInputs {
  std::vector<Sample> labeled;            // geometry-augmented
  std::vector<AugmentedPair> unlabeled;
  std::uint64_t sampling_seed = 0;
};

// Weak-branch quantities, computed once per step and held constant for
// differentiation.
struct FrozenWeak {
  std::vector<ForwardCache> caches;   // trunk activations, feature stage used
  std::vector<ProbMap> targets;       // sharpened weak probs, H×W×C
};

FrozenWeak freeze_weak_branch(const ToyNet& net, const StepInputs& inputs,
                              const TrainConfig& config);

struct Objective {
  LossBreakdown losses;
  double fnr = kNaN;
  StepDiagnostics diagnostics;
};

/// Evaluates the total loss and, when `grad` is non-null, accumulates its
/// gradient. With `unlabeled_active == false` only the supervised term is
/// computed. `frozen` must come from freeze_weak_branch on the same inputs.
Objective evaluate_objective(const ToyNet& net, const StepInputs& inputs,
                             const FrozenWeak& frozen, const TrainConfig& config,
                             bool unlabeled_active, std::vector<double>* grad);

/// Augments the given batches with seeds drawn from `rng` (two draws per
/// call, always), evaluates the objective and applies sgd_step.
MetricsRow train_step(ToyNet& net, std::span<const Sample> labeled_batch,
                      std::span<const Sample> unlabeled_batch,
                      const TrainConfig& config, Rng& rng, int step,
                      const std::array<double, 3>& fill_color,
                      StepDiagnostics* diagnostics = nullptr);

/// Labeled/unlabeled stream inputs from per-step seeds.
StepInputs prepare_step_inputs(std::span<const Sample> labeled_batch,
                               std::span<const Sample> unlabeled_batch,
                               std::uint64_t labeled_seed,
                               std::uint64_t unlabeled_seed,
                               const std::array<double, 3>& fill_color,
                               bool build_unlabeled);

// Accumulated confusion matrix; rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  /// Pixels whose truth is kIgnoreLabel are skipped.
  void add(std::span<const std::uint8_t> prediction,
           std::span<const std::uint8_t> truth);

  int num_classes() const noexcept { return num_classes_; }
  std::uint64_t count(int truth, int prediction) const;

  /// IoU_c = TP/(TP+FP+FN); NaN for classes absent from both.
  std::vector<double> per_class_iou() const;
  /// Mean over classes with a defined IoU; NaN if none.
  double mean_iou() const;

 private:
  int num_classes_;
  std::vector<std::uint64_t> counts_;
};

struct MiouResult {
  std::vector<double> per_class;
  double mean = kNaN;
};

LabelMap predict(const ToyNet& net, const Image& image);
MiouResult evaluate_miou(const ToyNet& net, const Dataset& eval_set);

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const MetricsRow& row);
const std::vector<std::string>& metrics_columns();

struct TrainingResult {
  std::vector<MetricsRow> rows;
  double final_miou = kNaN;
  double mean_fnr = kNaN;
  StepDiagnostics diagnostics;  // summed over steps
};

struct RunOutputs {
  std::string directory;  // empty: nothing written
};

/// Runs config.total_steps steps on `train` (split by labeled_fraction and
/// seed), evaluating on `eval` at step 0, every effective_eval_interval()
/// steps and at the end. When `outputs.directory` is set, writes
/// metrics.csv, config.txt and checkpoint.bin there.
TrainingResult run_training(const TrainConfig& config, const Dataset& train,
                            const Dataset& eval, const RunOutputs& outputs = {});

struct AblationCell {
  std::string name;
  TrainConfig config;
};

struct AblationResult {
  std::string name;
  double final_miou = kNaN;
  double mean_fnr = kNaN;
  std::string error;  // empty on success
};

/// Named presets: strategy, negatives, coefficients, feature-stage,
/// loss-variants, delay, projection.
std::vector<AblationCell> preset_grid(std::string_view axis, const TrainConfig& base);

/// One cell per non-empty line: "<name> key=value key=value ...".
std::vector<AblationCell> parse_grid(std::istream& in, const TrainConfig& base);

/// Runs cells on up to `jobs` worker threads; every cell keeps its own seed.
/// Failures are recorded per cell.
std::vector<AblationResult> run_ablation(const std::vector<AblationCell>& cells,
                                         const Dataset& train, const Dataset& eval,
                                         int jobs = 1);

void write_ablation_csv(std::ostream& out, const std::vector<AblationResult>& results);

}  // namespace pixcon
