#pragma once

// Negative-pixel sampling: per-anchor candidate densities, Gumbel top-k draws
// without replacement, false-negative rate and multiply-add accounting.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pixcon/rng.hpp"

namespace pixcon {

enum class StrategyKind {
  kUniform,
  kDiffImage,
  kPseudoDebiased,
  kDiffImagePseudo,
  kOracle,
};

inline constexpr StrategyKind kAllStrategies[] = {
    StrategyKind::kUniform, StrategyKind::kDiffImage,
    StrategyKind::kPseudoDebiased, StrategyKind::kDiffImagePseudo,
    StrategyKind::kOracle};

/// CLI spelling: uniform | diff | pseudo | diff+pseudo | oracle.
std::string_view to_string(StrategyKind kind);
StrategyKind parse_strategy(std::string_view name);

// The M candidate pixels of one mini-batch (both views concatenated).
struct CandidatePool {
  int num_classes = 0;
  std::vector<int> image_id;             // length M
  std::vector<double> probs;             // M × num_classes, row-major
  std::optional<std::vector<int>> gt_label;
  // Per-anchor excluded candidates. Either empty (only the anchor itself is
  // excluded) or of length M.
  std::vector<std::vector<std::size_t>> anchor_exclusions;

  std::size_t size() const noexcept { return image_id.size(); }
  std::span<const double> prob(std::size_t j) const {
    return {probs.data() + j * num_classes,
            static_cast<std::size_t>(num_classes)};
  }

  /// Throws InvalidParameter if array lengths or probability rows are
  /// inconsistent.
  void validate() const;

  /// Exclusion set {anchor, partner[anchor]} for every anchor, where
  /// `partner` maps each candidate to its counterpart in the other view.
  void exclude_self_and_partner(std::span<const std::size_t> partner);

  std::vector<std::size_t> exclusions(std::size_t anchor) const;
};

// p_ij over the M candidates for one anchor.
struct SamplingDensity {
  std::vector<double> weights;

  std::size_t support() const;
};

SamplingDensity density_uniform(std::size_t anchor, const CandidatePool& pool);
SamplingDensity density_diff_image(std::size_t anchor, const CandidatePool& pool);
SamplingDensity density_pseudo_debiased(std::size_t anchor,
                                        const CandidatePool& pool);
SamplingDensity density_combined(std::size_t anchor, const CandidatePool& pool);
SamplingDensity density_oracle(std::size_t anchor, const CandidatePool& pool);

SamplingDensity build_density(StrategyKind kind, std::size_t anchor,
                              const CandidatePool& pool);

/// Unnormalized weights, exclusions applied. Exposed so tests can compare
/// factorizations of the combined density.
std::vector<double> raw_weights(StrategyKind kind, std::size_t anchor,
                                const CandidatePool& pool);

/// Normalizes raw weights in place; throws EmptyDensity when they sum to 0.
SamplingDensity normalize_density(std::vector<double> raw, std::string_view what);

struct TopKDraw {
  std::vector<std::size_t> indices;
  bool shortfall = false;  // fewer than N positive-weight candidates
};

/// Draws min(N, support) distinct indices without replacement via
/// argtop-k of log(w_j) + Gumbel(0, 1). Equal keys break by ascending index.
TopKDraw gumbel_topk(const SamplingDensity& density, std::size_t n, Rng& rng);

/// Mean over anchors (that received at least one negative) of the fraction
/// of negatives sharing the anchor's ground-truth class.
double false_negative_rate(const std::vector<std::vector<std::size_t>>& sampled,
                           const CandidatePool& pool,
                           std::span<const std::size_t> anchors);

enum class OpCountMode { kAllPairs, kSampled };

/// Multiply-adds for the similarity matrix: M²·D for all pairs,
/// M·N·D + M²·C for sampled negatives (similarities plus pseudo-label
/// comparisons).
std::uint64_t op_count(std::uint64_t m, std::uint64_t n, std::uint64_t d,
                       std::uint64_t c, OpCountMode mode);

struct OpCountReport {
  std::uint64_t all_pairs = 0;
  std::uint64_t sampled_similarity = 0;  // M·N·D
  std::uint64_t pseudo_label_compare = 0;  // M²·C
  std::uint64_t sampled_total = 0;
  double reduction = 0.0;  // all_pairs / sampled_total
};

OpCountReport op_count_report(std::uint64_t m, std::uint64_t n, std::uint64_t d,
                              std::uint64_t c);

}  // namespace pixcon
