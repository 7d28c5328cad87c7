#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "pixcon/core_math.hpp"
#include "pixcon/sampling.hpp"

namespace pixcon {

// Label-space loss between weak and strong outputs.
enum class OutputLoss { kL2, kCrossEntropy };

// Feature-space loss on projected features.
enum class FeatureLoss { kNone, kImageContrast, kPixelConsist, kPixelContrast };

std::string_view to_string(OutputLoss v);
std::string_view to_string(FeatureLoss v);
OutputLoss parse_output_loss(std::string_view s);
FeatureLoss parse_feature_loss(std::string_view s);

struct TrainConfig {
  double lambda_contrast = kDefaultLambdaContrast;        // λ1
  double lambda_consistency = kDefaultLambdaConsistency;  // λ2
  double temperature = kDefaultTemperature;               // τ
  int num_negatives = 200;
  double sharpen_temperature = kDefaultSharpenTemperature;
  StrategyKind strategy = StrategyKind::kDiffImagePseudo;
  OutputLoss output_loss = OutputLoss::kL2;
  FeatureLoss feature_loss = FeatureLoss::kPixelContrast;

  std::vector<int> stage_channels{16, 32, 64};
  int feature_stage = 3;
  int projection_dim = 16;
  bool shared_projection = false;

  int delay_steps = 0;
  int total_steps = 2000;
  int batch_labeled = 4;
  int batch_unlabeled = 4;
  double base_lr = 0.05;
  double weight_decay = 1e-4;
  double labeled_fraction = 0.125;
  int eval_interval = 0;  // 0: max(1, total_steps / 20)
  int checkpoint_interval = 0;  // 0: final checkpoint only
  std::uint64_t seed = 42;

  /// Throws InvalidParameter when an invariant is violated.
  void validate() const;

  /// Sets one field from its key=value spelling; throws InvalidParameter on
  /// unknown keys or malformed values.
  void set(std::string_view key, std::string_view value);

  /// key=value lines that parse back to an equal config.
  std::string to_text() const;

  int effective_eval_interval() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Flat key=value file; '#' starts a comment; later lines win.
TrainConfig parse_config(std::istream& in, TrainConfig base = {});
TrainConfig load_config(const std::string& path, TrainConfig base = {});

/// Every recognised key, in to_text() order.
const std::vector<std::string>& config_keys();

}  // namespace pixcon
