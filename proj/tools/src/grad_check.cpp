#include "pixcon/tools/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "pixcon/core_math.hpp"
#include "pixcon/data.hpp"
#include "pixcon/errors.hpp"
#include "pixcon/rng.hpp"
#include "pixcon/trainer.hpp"

namespace pixcon::tools {
namespace {

Vector random_vector(Rng& rng, int n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

// Central differences of f over every entry of `x`.
template <typename F>
Vector numeric_gradient(Vector& x, F&& f) {
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + kFdStep;
    const double up = f();
    x[i] = saved - kFdStep;
    const double down = f();
    x[i] = saved;
    g[i] = (up - down) / (2 * kFdStep);
  }
  return g;
}

}  // namespace

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) {
    throw InvalidParameter("relative_error: size mismatch");
  }
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
}

double check_contrastive(int instances, std::uint64_t seed, int dim, int negatives,
                         double temperature) {
  Rng rng(seed);
  double worst = 0.0;
  for (int k = 0; k < instances; ++k) {
    // Packed as [anchor | positive | negatives...].
    Vector x = random_vector(rng, dim * (negatives + 2));
    auto term_of = [&](const Vector& v) {
      ContrastiveTerm t;
      t.temperature = temperature;
      t.anchor = VectorView(v.data(), dim);
      t.positive = VectorView(v.data() + dim, dim);
      for (int n = 0; n < negatives; ++n) {
        t.negatives.emplace_back(v.data() + (n + 2) * dim, dim);
      }
      return t;
    };
    const ContrastiveGrad g = pixel_contrastive_grad(term_of(x));
    Vector analytic(g.anchor);
    analytic.insert(analytic.end(), g.positive.begin(), g.positive.end());
    for (const auto& n : g.negatives) analytic.insert(analytic.end(), n.begin(), n.end());
    const Vector numeric =
        numeric_gradient(x, [&] { return pixel_contrastive_loss(term_of(x)); });
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

double check_consistency(int instances, std::uint64_t seed, int classes) {
  Rng rng(seed);
  double worst = 0.0;
  for (int k = 0; k < instances; ++k) {
    const Vector weak = softmax_sharpen(random_vector(rng, classes), kDefaultSharpenTemperature);
    Vector strong = softmax(random_vector(rng, classes));
    const Vector analytic = consistency_grad(weak, strong).strong;
    const Vector numeric = numeric_gradient(strong, [&] { return consistency_loss(weak, strong); });
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

double check_network(std::uint64_t seed, int size, int coords_per_slice) {
  GeneratorConfig gen;
  gen.height = gen.width = size;
  const Dataset data = generate_dataset(4, mix_seed(seed, 1), gen);
  TrainConfig config;
  ToyNet net(model_config(config, data.num_classes));

  const std::vector<Sample> labeled(data.samples.begin(), data.samples.begin() + 2);
  const std::vector<Sample> unlabeled(data.samples.begin() + 2, data.samples.end());
  const StepInputs inputs = prepare_step_inputs(labeled, unlabeled, mix_seed(seed, 2),
                                                mix_seed(seed, 3), data.mean_color(), true);
  const FrozenWeak frozen = freeze_weak_branch(net, inputs, config);
  std::vector<double> grad(net.parameter_count(), 0.0);
  evaluate_objective(net, inputs, frozen, config, true, &grad);

  Rng rng(mix_seed(seed, 4));
  Vector analytic;
  Vector numeric;
  auto params = net.parameters();
  for (const ParamSlice& s : net.slices()) {
    for (int k = 0; k < coords_per_slice; ++k) {
      const std::size_t i = s.offset + uniform_int(rng, 0, static_cast<int>(s.size) - 1);
      const double saved = params[i];
      params[i] = saved + kFdStep;
      const double up =
          evaluate_objective(net, inputs, frozen, config, true, nullptr).losses.total;
      params[i] = saved - kFdStep;
      const double down =
          evaluate_objective(net, inputs, frozen, config, true, nullptr).losses.total;
      params[i] = saved;
      analytic.push_back(grad[i]);
      numeric.push_back((up - down) / (2 * kFdStep));
    }
  }
  return relative_error(analytic, numeric);
}

GradCheckReport grad_check(int instances, std::uint64_t seed, bool with_network) {
  if (instances < 1) throw InvalidParameter("grad-check: need >= 1 instance");
  GradCheckReport r;
  r.contrastive = check_contrastive(instances, mix_seed(seed, 10));
  r.consistency = check_consistency(instances, mix_seed(seed, 11));
  if (with_network) {
    r.network = check_network(mix_seed(seed, 12));
    r.network_checked = true;
  }
  return r;
}

}  // namespace pixcon::tools
