#include "pixcon/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pixcon/errors.hpp"

namespace pixcon {

std::string_view to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::kUniform: return "uniform";
    case StrategyKind::kDiffImage: return "diff";
    case StrategyKind::kPseudoDebiased: return "pseudo";
    case StrategyKind::kDiffImagePseudo: return "diff+pseudo";
    case StrategyKind::kOracle: return "oracle";
  }
  return "?";
}

StrategyKind parse_strategy(std::string_view name) {
  for (StrategyKind k : kAllStrategies) {
    if (to_string(k) == name) return k;
  }
  throw InvalidParameter("unknown strategy '" + std::string(name) +
                         "' (expected uniform|diff|pseudo|diff+pseudo|oracle)");
}

void CandidatePool::validate() const {
  const std::size_t m = size();
  if (m < 2) throw InvalidParameter("candidate pool: M must be >= 2");
  if (num_classes < 2) throw InvalidParameter("candidate pool: C must be >= 2");
  if (probs.size() != m * static_cast<std::size_t>(num_classes)) {
    throw InvalidParameter("candidate pool: probs must hold M×C entries");
  }
  if (gt_label && gt_label->size() != m) {
    throw InvalidParameter("candidate pool: gt_label must have length M");
  }
  if (!anchor_exclusions.empty() && anchor_exclusions.size() != m) {
    throw InvalidParameter("candidate pool: anchor_exclusions must have length M");
  }
  for (std::size_t j = 0; j < m; ++j) {
    auto p = prob(j);
    double s = 0.0;
    for (double v : p) {
      if (!(v >= -1e-12 && v <= 1.0 + 1e-12)) {
        throw InvalidParameter("candidate pool: probability outside [0,1]");
      }
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6) {
      throw InvalidParameter("candidate pool: probability row " +
                             std::to_string(j) + " does not sum to 1");
    }
  }
}

void CandidatePool::exclude_self_and_partner(std::span<const std::size_t> partner) {
  if (partner.size() != size()) {
    throw InvalidParameter("exclude_self_and_partner: partner map must have length M");
  }
  anchor_exclusions.assign(size(), {});
  for (std::size_t i = 0; i < size(); ++i) {
    anchor_exclusions[i] = {i};
    if (partner[i] != i) anchor_exclusions[i].push_back(partner[i]);
  }
}

std::vector<std::size_t> CandidatePool::exclusions(std::size_t anchor) const {
  if (anchor_exclusions.empty()) return {anchor};
  return anchor_exclusions.at(anchor);
}

std::size_t SamplingDensity::support() const {
  return static_cast<std::size_t>(
      std::count_if(weights.begin(), weights.end(), [](double w) { return w > 0.0; }));
}

namespace {

void check_anchor(std::size_t anchor, const CandidatePool& pool) {
  if (anchor >= pool.size()) {
    throw InvalidParameter("anchor index " + std::to_string(anchor) +
                           " outside pool of size " + std::to_string(pool.size()));
  }
}

double debiased_weight(std::size_t anchor, std::size_t j, const CandidatePool& pool) {
  auto a = pool.prob(anchor);
  auto b = pool.prob(j);
  const double same = std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
  return std::max(0.0, 1.0 - same);
}

}  // namespace

std::vector<double> raw_weights(StrategyKind kind, std::size_t anchor,
                                const CandidatePool& pool) {
  check_anchor(anchor, pool);
  const std::size_t m = pool.size();
  std::vector<double> w(m, 0.0);
  const int anchor_image = pool.image_id[anchor];
  switch (kind) {
    case StrategyKind::kUniform:
      std::fill(w.begin(), w.end(), 1.0);
      break;
    case StrategyKind::kDiffImage:
      for (std::size_t j = 0; j < m; ++j) {
        w[j] = pool.image_id[j] != anchor_image ? 1.0 : 0.0;
      }
      break;
    case StrategyKind::kPseudoDebiased:
      for (std::size_t j = 0; j < m; ++j) w[j] = debiased_weight(anchor, j, pool);
      break;
    case StrategyKind::kDiffImagePseudo:
      for (std::size_t j = 0; j < m; ++j) {
        w[j] = pool.image_id[j] != anchor_image ? debiased_weight(anchor, j, pool)
                                                : 0.0;
      }
      break;
    case StrategyKind::kOracle: {
      if (!pool.gt_label) {
        throw InvalidParameter("oracle strategy requires ground-truth labels");
      }
      const auto& gt = *pool.gt_label;
      for (std::size_t j = 0; j < m; ++j) w[j] = gt[j] != gt[anchor] ? 1.0 : 0.0;
      break;
    }
  }
  for (std::size_t j : pool.exclusions(anchor)) {
    if (j < m) w[j] = 0.0;
  }
  return w;
}

SamplingDensity normalize_density(std::vector<double> raw, std::string_view what) {
  const double total = std::accumulate(raw.begin(), raw.end(), 0.0);
  if (!(total > 0.0)) {
    throw EmptyDensity(std::string(what) + ": no admissible negative candidate");
  }
  for (double& w : raw) w /= total;
  return SamplingDensity{std::move(raw)};
}

SamplingDensity build_density(StrategyKind kind, std::size_t anchor,
                              const CandidatePool& pool) {
  return normalize_density(raw_weights(kind, anchor, pool), to_string(kind));
}

SamplingDensity density_uniform(std::size_t anchor, const CandidatePool& pool) {
  return build_density(StrategyKind::kUniform, anchor, pool);
}
SamplingDensity density_diff_image(std::size_t anchor, const CandidatePool& pool) {
  return build_density(StrategyKind::kDiffImage, anchor, pool);
}
SamplingDensity density_pseudo_debiased(std::size_t anchor,
                                        const CandidatePool& pool) {
  return build_density(StrategyKind::kPseudoDebiased, anchor, pool);
}
SamplingDensity density_combined(std::size_t anchor, const CandidatePool& pool) {
  return build_density(StrategyKind::kDiffImagePseudo, anchor, pool);
}
SamplingDensity density_oracle(std::size_t anchor, const CandidatePool& pool) {
  return build_density(StrategyKind::kOracle, anchor, pool);
}

TopKDraw gumbel_topk(const SamplingDensity& density, std::size_t n, Rng& rng) {
  struct Key {
    double key;
    std::size_t index;
  };
  std::vector<Key> keys;
  keys.reserve(density.weights.size());
  for (std::size_t j = 0; j < density.weights.size(); ++j) {
    const double w = density.weights[j];
    if (!(w > 0.0)) continue;
    const double gumbel = -std::log(-std::log(uniform_open(rng)));
    keys.push_back({std::log(w) + gumbel, j});
  }
  if (keys.empty()) throw EmptyDensity("gumbel_topk: density has no support");

  TopKDraw draw;
  const std::size_t k = std::min(n, keys.size());
  draw.shortfall = keys.size() < n;
  auto by_key = [](const Key& a, const Key& b) {
    return a.key > b.key || (a.key == b.key && a.index < b.index);
  };
  std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(k),
                    keys.end(), by_key);
  draw.indices.reserve(k);
  for (std::size_t i = 0; i < k; ++i) draw.indices.push_back(keys[i].index);
  return draw;
}

double false_negative_rate(const std::vector<std::vector<std::size_t>>& sampled,
                           const CandidatePool& pool,
                           std::span<const std::size_t> anchors) {
  if (!pool.gt_label) {
    throw InvalidParameter("false_negative_rate requires ground-truth labels");
  }
  if (sampled.size() != anchors.size()) {
    throw InvalidParameter("false_negative_rate: one sample list per anchor");
  }
  const auto& gt = *pool.gt_label;
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    if (sampled[a].empty()) continue;
    const int anchor_class = gt.at(anchors[a]);
    std::size_t same = 0;
    for (std::size_t j : sampled[a]) same += gt.at(j) == anchor_class ? 1 : 0;
    sum += static_cast<double>(same) / static_cast<double>(sampled[a].size());
    ++counted;
  }
  return counted ? sum / static_cast<double>(counted) : 0.0;
}

std::uint64_t op_count(std::uint64_t m, std::uint64_t n, std::uint64_t d,
                       std::uint64_t c, OpCountMode mode) {
  if (m == 0 || n == 0 || d == 0 || c == 0) {
    throw InvalidParameter("op_count: arguments must be positive");
  }
  switch (mode) {
    case OpCountMode::kAllPairs: return m * m * d;
    case OpCountMode::kSampled: return m * n * d + m * m * c;
  }
  return 0;
}

OpCountReport op_count_report(std::uint64_t m, std::uint64_t n, std::uint64_t d,
                              std::uint64_t c) {
  OpCountReport r;
  r.all_pairs = op_count(m, n, d, c, OpCountMode::kAllPairs);
  r.sampled_total = op_count(m, n, d, c, OpCountMode::kSampled);
  r.sampled_similarity = m * n * d;
  r.pseudo_label_compare = m * m * c;
  r.reduction = static_cast<double>(r.all_pairs) /
                static_cast<double>(r.sampled_total);
  return r;
}

}  // namespace pixcon
