#pragma once

// Toy fully-convolutional segmentation network with a shared trunk, a
// per-branch linear projection head, and hand-written backpropagation.
//
// Layout: `stage_channels.size()` encoder stages, each a 3×3 stride-2
// convolution (padding 1) followed by ReLU. The decoder is a 1×1
// convolution on the last stage followed by bilinear upsampling to the input
// resolution. The projection head reads the output of `feature_stage`.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pixcon/tensor.hpp"

namespace pixcon {

enum class Branch {
  kLabeled,  // supervised stream: trunk gradients, no projection
  kWeak,     // stop-gradient on trunk and decoder outputs
  kStrong,
};

struct ModelConfig {
  std::vector<int> stage_channels{16, 32, 64};
  int input_channels = 3;
  int num_classes = 5;
  int feature_stage = 3;  // 1-based
  int projection_dim = 16;
  bool shared_projection = false;
  std::uint64_t seed = 42;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ParamSlice {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

class ToyNet {
 public:
  explicit ToyNet(ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }

  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }

  const std::vector<ParamSlice>& slices() const noexcept { return slices_; }
  const ParamSlice& slice(std::string_view name) const;
  std::span<double> slice_values(std::string_view name);
  std::span<const double> slice_values(std::string_view name) const;

  /// Slice name of the projection head used by `branch`
  /// ("projection_weak", "projection_strong" or "projection_shared").
  std::string projection_slice_name(Branch branch) const;

  int feature_dim() const;
  int stage_count() const noexcept {
    return static_cast<int>(config_.stage_channels.size());
  }

  /// Fan-in scaled uniform initialization from `seed`; biases are zero.
  void initialize(std::uint64_t seed);

 private:
  ModelConfig config_;
  std::vector<double> params_;
  std::vector<ParamSlice> slices_;
};

struct BranchOutput {
  FeatureMap features;   // stage `feature_stage` output, depth D
  FeatureMap projected;  // depth P; empty for kLabeled
  PixelMap logits;       // H×W×C
  ProbMap probs;         // rowwise softmax(logits)
};

// Activations retained by forward() for backward().
struct ForwardCache {
  bool valid = false;
  Branch branch = Branch::kStrong;
  Image input;
  std::vector<PixelMap> stage_outputs;  // post-ReLU
  PixelMap low_logits;                  // decoder output before upsampling
};

/// Throws NumericalFailure naming the layer if any activation is non-finite.
BranchOutput forward(const ToyNet& net, const Image& image, Branch branch,
                     ForwardCache* cache = nullptr);

/// Per-pixel linear map (no bias, no nonlinearity) through the branch's head.
FeatureMap project(const ToyNet& net, const FeatureMap& features, Branch branch);

/// Accumulates parameter gradients into `grad` (length parameter_count()).
///
/// `dlogits` is ∂L/∂logits (H×W×C) and `dprojected` is ∂L/∂projected; either
/// may be null. For the weak branch only the projection head receives
/// gradient; `dlogits` is ignored and nothing flows into the trunk.
/// Throws ContractViolation when the cache is not populated.
void backward(const ToyNet& net, const ForwardCache& cache,
              const PixelMap* dlogits, const FeatureMap* dprojected,
              std::span<double> grad);

std::vector<double> backward(const ToyNet& net, const ForwardCache& cache,
                             const PixelMap* dlogits,
                             const FeatureMap* dprojected);

struct LrSchedule {
  double base_lr = 0.05;
  int total_steps = 1;
  double weight_decay = 0.0;

  double lr(int step) const;
};

/// θ ← θ − lr(step)·(g + λ_wd·θ) with lr(step) = base_lr·(1 − step/total).
void sgd_step(ToyNet& net, std::span<const double> grad, int step,
              const LrSchedule& schedule);

// Checkpoint: text header terminated by "end\n", then the parameter vector
// as little-endian float32.
void write_checkpoint(std::ostream& out, const ToyNet& net, int step);
void save_checkpoint(const std::string& path, const ToyNet& net, int step);

struct LoadedCheckpoint {
  ToyNet net;
  int step = 0;
};

LoadedCheckpoint read_checkpoint(std::istream& in);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace pixcon
