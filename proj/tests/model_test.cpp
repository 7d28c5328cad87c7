#include "pixcon/model.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "pixcon/core_math.hpp"
#include "pixcon/data.hpp"
#include "pixcon/errors.hpp"

namespace pixcon {
namespace {

Image random_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(h, w, 3);
  for (double& v : img.values) v = u(rng);
  return img;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.stage_channels = {4, 6, 8};
  c.num_classes = 3;
  c.projection_dim = 5;
  return c;
}

// Mean supervised CE of the labeled-stream output against `mask`.
double mean_ce(const ToyNet& net, const Image& img, const LabelMap& mask) {
  const BranchOutput out = forward(net, img, Branch::kLabeled);
  double s = 0;
  for (int p = 0; p < mask.pixels(); ++p) s += supervised_ce(out.logits.pixel(p), mask.labels[p]);
  return s / mask.pixels();
}

TEST(ToyNet, DefaultShapes) {
  const ToyNet net{ModelConfig{}};
  const BranchOutput out = forward(net, random_image(64, 64, 1), Branch::kStrong);
  EXPECT_EQ(out.logits.height, 64);
  EXPECT_EQ(out.logits.width, 64);
  EXPECT_EQ(out.logits.depth, 5);
  EXPECT_EQ(out.features.height, 8);
  EXPECT_EQ(out.features.width, 8);
  EXPECT_EQ(out.features.depth, 64);
  EXPECT_EQ(out.projected.height, 8);
  EXPECT_EQ(out.projected.depth, 16);
  EXPECT_EQ(net.feature_dim(), 64);
}

TEST(ToyNet, ZeroWeightsGiveUniformProbabilities) {
  ToyNet net{ModelConfig{}};
  std::fill(net.parameters().begin(), net.parameters().end(), 0.0);
  const BranchOutput out = forward(net, random_image(16, 16, 2), Branch::kWeak);
  for (double p : out.probs.values) EXPECT_DOUBLE_EQ(p, 0.2);
  for (double z : out.projected.values) EXPECT_EQ(z, 0.0);
}

TEST(ToyNet, BranchesShareTheTrunk) {
  const ToyNet net{ModelConfig{}};
  const Image img = random_image(32, 32, 3);
  const BranchOutput w = forward(net, img, Branch::kWeak);
  const BranchOutput s = forward(net, img, Branch::kStrong);
  const BranchOutput l = forward(net, img, Branch::kLabeled);
  EXPECT_EQ(w.features, s.features);
  EXPECT_EQ(w.logits, s.logits);
  EXPECT_EQ(w.logits, l.logits);
  EXPECT_NE(w.projected, s.projected);
  EXPECT_TRUE(l.projected.values.empty());

  ModelConfig shared;
  shared.shared_projection = true;
  const ToyNet shared_net{shared};
  EXPECT_EQ(forward(shared_net, img, Branch::kWeak).projected,
            forward(shared_net, img, Branch::kStrong).projected);
}

TEST(ToyNet, SingleStorageForTrunkWeights) {
  const ToyNet net{ModelConfig{}};
  std::set<std::string> names;
  std::size_t total = 0;
  for (const auto& s : net.slices()) {
    EXPECT_TRUE(names.insert(s.name).second);
    total += s.size;
  }
  EXPECT_EQ(total, net.parameter_count());
  const std::set<std::string> expected{"stage1.weight", "stage1.bias", "stage2.weight",
                                       "stage2.bias", "stage3.weight", "stage3.bias",
                                       "decoder.weight", "decoder.bias", "projection_weak",
                                       "projection_strong"};
  EXPECT_EQ(names, expected);
  EXPECT_NE(net.projection_slice_name(Branch::kWeak), net.projection_slice_name(Branch::kStrong));
}

TEST(ToyNet, DeterministicInitialization) {
  const ToyNet a{ModelConfig{}}, b{ModelConfig{}};
  EXPECT_TRUE(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
  ModelConfig other;
  other.seed = 7;
  const ToyNet c{other};
  EXPECT_FALSE(std::equal(a.parameters().begin(), a.parameters().end(), c.parameters().begin()));
}

TEST(ToyNet, NonFiniteActivationNamesTheLayer) {
  const ToyNet net{ModelConfig{}};
  Image img = random_image(16, 16, 4);
  img.values[5] = std::numeric_limits<double>::infinity();
  try {
    forward(net, img, Branch::kStrong);
    FAIL() << "expected NumericalFailure";
  } catch (const NumericalFailure& e) {
    EXPECT_NE(std::string(e.what()).find("stage1"), std::string::npos);
  }
}

TEST(Project, IdentityAndZeroHeads) {
  ModelConfig cfg;
  cfg.stage_channels = {4, 6, 8};
  cfg.projection_dim = 8;
  ToyNet net{cfg};
  auto w = net.slice_values("projection_strong");
  std::fill(w.begin(), w.end(), 0.0);
  for (int i = 0; i < 8; ++i) w[i * 8 + i] = 1.0;
  const BranchOutput out = forward(net, random_image(16, 16, 5), Branch::kStrong);
  EXPECT_EQ(project(net, out.features, Branch::kStrong), out.features);

  auto wk = net.slice_values("projection_weak");
  std::fill(wk.begin(), wk.end(), 0.0);
  for (double v : project(net, out.features, Branch::kWeak).values) EXPECT_EQ(v, 0.0);
}

TEST(Project, Errors) {
  const ToyNet net{ModelConfig{}};
  EXPECT_THROW(project(net, FeatureMap(2, 2, 64), Branch::kLabeled), InvalidParameter);
  EXPECT_THROW(project(net, FeatureMap(2, 2, 10), Branch::kStrong), InvalidParameter);
}

TEST(Backward, MissingCacheIsAContractViolation) {
  const ToyNet net{ModelConfig{}};
  ForwardCache empty;
  PixelMap d(16, 16, 5);
  EXPECT_THROW(backward(net, empty, &d, nullptr), ContractViolation);
}

TEST(Backward, ZeroUpstreamGivesZeroGradient) {
  const ToyNet net{ModelConfig{}};
  ForwardCache cache;
  const BranchOutput out = forward(net, random_image(16, 16, 6), Branch::kStrong, &cache);
  const PixelMap dl(16, 16, 5);
  const FeatureMap dp(out.projected.height, out.projected.width, out.projected.depth);
  for (double g : backward(net, cache, &dl, &dp)) EXPECT_EQ(g, 0.0);
}

TEST(Backward, SupervisedGradientMatchesFiniteDifferences) {
  ToyNet net{tiny_config()};
  const Image img = random_image(16, 16, 7);
  LabelMap mask(16, 16);
  std::mt19937_64 rng(8);
  for (auto& l : mask.labels) l = static_cast<std::uint8_t>(rng() % 3);

  ForwardCache cache;
  const BranchOutput out = forward(net, img, Branch::kLabeled, &cache);
  PixelMap dl(16, 16, 3);
  for (int p = 0; p < mask.pixels(); ++p) {
    const auto g = supervised_ce_grad(out.logits.pixel(p), mask.labels[p]);
    for (int c = 0; c < 3; ++c) dl.pixel(p)[c] = g[c] / mask.pixels();
  }
  const std::vector<double> analytic = backward(net, cache, &dl, nullptr);

  std::vector<double> params(net.parameters().begin(), net.parameters().end());
  std::vector<double> a, n;
  for (const auto& s : net.slices()) {
    if (s.name.rfind("projection", 0) == 0) continue;
    for (std::size_t k = 0; k < std::min<std::size_t>(s.size, 15); ++k) {
      const std::size_t i = s.offset + (k * 7919) % s.size;
      auto p = net.parameters();
      const double saved = p[i];
      p[i] = saved + 1e-5;
      const double up = mean_ce(net, img, mask);
      p[i] = saved - 1e-5;
      const double down = mean_ce(net, img, mask);
      p[i] = saved;
      a.push_back(analytic[i]);
      n.push_back((up - down) / 2e-5);
    }
  }
  EXPECT_LT(oracle::rel_error(a, n), 1e-3);
}

TEST(Backward, WeakBranchUpdatesOnlyItsHead) {
  const ToyNet net{ModelConfig{}};
  ForwardCache cache;
  const BranchOutput out = forward(net, random_image(16, 16, 9), Branch::kWeak, &cache);
  FeatureMap dp(out.projected.height, out.projected.width, out.projected.depth, 1.0);
  PixelMap dl(16, 16, 5, 1.0);
  const std::vector<double> g = backward(net, cache, &dl, &dp);
  const auto& head = net.slice("projection_weak");
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (k >= head.offset && k < head.offset + head.size) continue;
    EXPECT_EQ(g[k], 0.0) << "parameter " << k;
  }
  double head_norm = 0;
  for (std::size_t k = head.offset; k < head.offset + head.size; ++k) head_norm += g[k] * g[k];
  EXPECT_GT(head_norm, 0.0);
}

TEST(SgdStep, ScheduleAndUpdate) {
  const LrSchedule sched{0.05, 100, 0.0};
  EXPECT_DOUBLE_EQ(sched.lr(0), 0.05);
  EXPECT_NEAR(sched.lr(99), 0.05 / 100, 1e-15);

  ToyNet net{tiny_config()};
  const std::vector<double> before(net.parameters().begin(), net.parameters().end());
  const std::vector<double> grad(net.parameter_count(), 1.0);
  sgd_step(net, grad, 3, LrSchedule{0.0, 10, 0.0});
  EXPECT_TRUE(std::equal(before.begin(), before.end(), net.parameters().begin()));

  sgd_step(net, grad, 0, LrSchedule{0.1, 10, 0.5});
  for (std::size_t k = 0; k < before.size(); ++k) {
    EXPECT_DOUBLE_EQ(net.parameters()[k], before[k] - 0.1 * (1.0 + 0.5 * before[k]));
  }
  EXPECT_THROW(sgd_step(net, grad, 10, LrSchedule{0.1, 10, 0.0}), InvalidParameter);
  EXPECT_THROW(sgd_step(net, grad, -1, LrSchedule{0.1, 10, 0.0}), InvalidParameter);
}

TEST(SgdStep, EqualSeedsGiveBitIdenticalTrajectories) {
  GeneratorConfig gen;
  gen.height = gen.width = 16;
  const Sample s = generate_sample(3, gen);
  auto run = [&] {
    ToyNet net{tiny_config()};
    const LrSchedule sched{0.05, 100, 1e-4};
    for (int step = 0; step < 100; ++step) {
      ForwardCache cache;
      const BranchOutput out = forward(net, s.image, Branch::kLabeled, &cache);
      PixelMap dl(16, 16, 3);
      for (int p = 0; p < s.mask.pixels(); ++p) {
        const auto g = supervised_ce_grad(out.logits.pixel(p), s.mask.labels[p] % 3);
        std::copy(g.begin(), g.end(), dl.pixel(p).begin());
      }
      sgd_step(net, backward(net, cache, &dl, nullptr), step, sched);
    }
    return std::vector<double>(net.parameters().begin(), net.parameters().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  ModelConfig cfg = tiny_config();
  cfg.shared_projection = true;
  cfg.seed = 99;
  const ToyNet net{cfg};
  std::ostringstream first;
  write_checkpoint(first, net, 17);
  std::istringstream in(first.str());
  const LoadedCheckpoint loaded = read_checkpoint(in);
  EXPECT_EQ(loaded.step, 17);
  EXPECT_EQ(loaded.net.config(), cfg);
  std::ostringstream second;
  write_checkpoint(second, loaded.net, loaded.step);
  EXPECT_EQ(first.str(), second.str());
  for (std::size_t k = 0; k < net.parameter_count(); ++k) {
    EXPECT_EQ(loaded.net.parameters()[k], static_cast<double>(static_cast<float>(net.parameters()[k])));
  }
}

TEST(Checkpoint, RejectsCorruptInput) {
  std::istringstream bad_magic("not-a-checkpoint 1\n");
  EXPECT_THROW(read_checkpoint(bad_magic), ParseError);
  const ToyNet net{tiny_config()};
  std::ostringstream out;
  write_checkpoint(out, net, 0);
  const std::string text = out.str();
  std::istringstream truncated(text.substr(0, text.size() - 10));
  EXPECT_THROW(read_checkpoint(truncated), IoError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/ck.bin"), IoError);
}

}  // namespace
}  // namespace pixcon
