#pragma once

#include <cstdint>
#include <span>

namespace pixcon::tools {

/// ‖a − b‖ / max(‖a‖, ‖b‖, 1e-8).
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

inline constexpr double kFdStep = 1e-5;

/// Max relative error over `instances` random InfoNCE terms.
double check_contrastive(int instances, std::uint64_t seed, int dim = 8,
                         int negatives = 5, double temperature = 0.07);

/// Max relative error of the strong-side consistency gradient.
double check_consistency(int instances, std::uint64_t seed, int classes = 8);

/// Relative error of the full objective's gradient over `coords_per_slice`
/// random coordinates of every parameter slice, on size×size inputs.
double check_network(std::uint64_t seed, int size = 16, int coords_per_slice = 12);

struct GradCheckReport {
  double contrastive = 0.0;
  double consistency = 0.0;
  double network = 0.0;  // 0 when skipped
  bool network_checked = false;
  double core_max() const { return contrastive > consistency ? contrastive : consistency; }
};

GradCheckReport grad_check(int instances, std::uint64_t seed, bool with_network);

}  // namespace pixcon::tools
