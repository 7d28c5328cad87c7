#include "pixcon/core_math.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "pixcon/errors.hpp"
#include "pixcon/tensor.hpp"

namespace pixcon {
namespace {

using Vec = std::vector<double>;

ContrastiveTerm make_term(const Vec& z, const Vec& zp, const std::vector<Vec>& negs,
                          double tau) {
  ContrastiveTerm t;
  t.anchor = z;
  t.positive = zp;
  for (const auto& n : negs) t.negatives.emplace_back(n);
  t.temperature = tau;
  return t;
}

TEST(CosineSimilarity, HandValues) {
  EXPECT_NEAR(cosine_similarity(Vec{3, 4}, Vec{3, 4}), 1.0, 1e-12);
  EXPECT_NEAR(cosine_similarity(Vec{1, 0}, Vec{0, 1}), 0.0, 1e-15);
  EXPECT_NEAR(cosine_similarity(Vec{1, 0}, Vec{1, 1}), 1.0 / std::sqrt(2.0), 1e-8);
}

TEST(CosineSimilarity, ZeroVectorsAreFlagged) {
  bool degenerate = false;
  EXPECT_EQ(cosine_similarity(Vec{0, 0}, Vec{0, 0}, &degenerate), 0.0);
  EXPECT_TRUE(degenerate);
  cosine_similarity(Vec{1, 0}, Vec{0, 1}, &degenerate);
  EXPECT_FALSE(degenerate);
}

TEST(CosineSimilarity, DimensionMismatchThrows) {
  EXPECT_THROW(cosine_similarity(Vec{1, 0}, Vec{1, 0, 0}), InvalidParameter);
}

TEST(CosineSimilarity, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 20; ++k) {
    Vec u = oracle::randn(rng, 6);
    Vec v = oracle::randn(rng, 6);
    const CosineGrad g = cosine_similarity_grad(u, v);
    EXPECT_LT(oracle::rel_error(g.du, oracle::fd_gradient(u, [&] { return oracle::cosine(u, v); })),
              1e-6);
    EXPECT_LT(oracle::rel_error(g.dv, oracle::fd_gradient(v, [&] { return oracle::cosine(u, v); })),
              1e-6);
  }
}

TEST(SoftmaxSharpen, HandValues) {
  for (double c : {-3.0, 0.0, 7.5}) {
    const Vec p = softmax_sharpen(Vec{c, c, c}, 0.5);
    for (double v : p) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  }
  const Vec p1 = softmax_sharpen(Vec{1, 0}, 1.0);
  EXPECT_NEAR(p1[0], std::exp(1.0) / (std::exp(1.0) + 1), 1e-12);
  EXPECT_NEAR(p1[0], 0.73106, 1e-5);
  EXPECT_NEAR(p1[1], 0.26894, 1e-5);
  const Vec p2 = softmax_sharpen(Vec{1, 0}, 0.5);
  EXPECT_NEAR(p2[0], 0.88080, 1e-5);
  EXPECT_NEAR(p2[1], 0.11920, 1e-5);
}

TEST(SoftmaxSharpen, RejectsNonPositiveTemperature) {
  EXPECT_THROW(softmax_sharpen(Vec{1, 2}, 0.0), InvalidParameter);
  EXPECT_THROW(softmax_sharpen(Vec{1, 2}, -1.0), InvalidParameter);
}

TEST(SoftmaxSharpen, SumsToOneAndIsShiftInvariant) {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 200; ++k) {
    Vec logits = oracle::randn(rng, 7);
    for (double& v : logits) v *= 30;
    const Vec p = softmax_sharpen(logits, 0.5);
    double s = 0;
    for (double v : p) s += v;
    EXPECT_NEAR(s, 1.0, 1e-9);
    Vec shifted = logits;
    for (double& v : shifted) v += 123.0;
    const Vec q = softmax_sharpen(shifted, 0.5);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
  }
}

TEST(SoftmaxSharpen, LargeLogitsDoNotOverflow) {
  const Vec p = softmax_sharpen(Vec{1000, 999}, 0.5);
  EXPECT_TRUE(std::isfinite(p[0]));
  EXPECT_NEAR(p[0] + p[1], 1.0, 1e-12);
}

TEST(ConsistencyLoss, HandValues) {
  // The norm epsilon biases 1 - cos by about 2e-12/|u| here.
  EXPECT_NEAR(consistency_loss(Vec{0.5, 0.5}, Vec{0.5, 0.5}), 0.0, 1e-11);
  EXPECT_NEAR(consistency_loss(Vec{1, 0}, Vec{0, 1}), 1.0, 1e-12);
  EXPECT_NEAR(consistency_loss(Vec{0.8, 0.2}, Vec{0.2, 0.8}), 1.0 - 0.32 / 0.68, 1e-9);
  EXPECT_NEAR(consistency_loss(Vec{0.8, 0.2}, Vec{0.2, 0.8}), 0.52941, 1e-5);
}

TEST(ConsistencyLoss, SymmetricWithZeroWeakGradient) {
  std::mt19937_64 rng(8);
  for (int k = 0; k < 100; ++k) {
    const Vec a = softmax(oracle::randn(rng, 5));
    const Vec b = softmax(oracle::randn(rng, 5));
    EXPECT_NEAR(consistency_loss(a, b), consistency_loss(b, a), 1e-15);
    const ConsistencyGrad g = consistency_grad(a, b);
    for (double v : g.weak) EXPECT_EQ(v, 0.0);
  }
}

TEST(ConsistencyLoss, DimensionMismatchThrows) {
  EXPECT_THROW(consistency_loss(Vec{0.5, 0.5}, Vec{1, 0, 0}), InvalidParameter);
}

TEST(PixelContrastiveLoss, EqualSimilaritiesGiveLogNPlusOne) {
  const Vec z{0.3, -1.2, 2.0};
  const std::vector<Vec> negs(4, z);
  EXPECT_NEAR(pixel_contrastive_loss(make_term(z, z, negs, 0.07)), std::log(5.0), 1e-9);
  EXPECT_NEAR(std::log(5.0), 1.60944, 1e-5);
}

TEST(PixelContrastiveLoss, HandValue) {
  const Vec z{1, 0};
  const std::vector<Vec> negs{{0, 1}, {0, -1}};
  const double expected = std::log(1.0 + 2.0 / std::exp(1.0));
  EXPECT_NEAR(pixel_contrastive_loss(make_term(z, z, negs, 1.0)), expected, 1e-12);
  EXPECT_NEAR(expected, 0.55144, 1e-5);
}

TEST(PixelContrastiveLoss, MatchesDirectOracle) {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 200; ++k) {
    const Vec z = oracle::randn(rng, 8);
    const Vec zp = oracle::randn(rng, 8);
    std::vector<Vec> negs;
    for (int n = 0; n < 5; ++n) negs.push_back(oracle::randn(rng, 8));
    EXPECT_NEAR(pixel_contrastive_loss(make_term(z, zp, negs, 0.07)),
                oracle::info_nce(z, zp, negs, 0.07), 1e-9);
  }
}

TEST(PixelContrastiveLoss, ScaleInvariance) {
  std::mt19937_64 rng(12);
  for (int k = 0; k < 50; ++k) {
    Vec z = oracle::randn(rng, 8);
    Vec zp = oracle::randn(rng, 8);
    std::vector<Vec> negs;
    for (int n = 0; n < 5; ++n) negs.push_back(oracle::randn(rng, 8));
    const double base = pixel_contrastive_loss(make_term(z, zp, negs, 0.07));
    for (double alpha : {0.5, 2.0, 10.0}) {
      Vec zs = z;
      for (double& v : zs) v *= alpha;
      EXPECT_NEAR(pixel_contrastive_loss(make_term(zs, zp, negs, 0.07)), base, 1e-9);
      std::vector<Vec> negs_s = negs;
      for (double& v : negs_s[2]) v *= alpha;
      EXPECT_NEAR(pixel_contrastive_loss(make_term(z, zp, negs_s, 0.07)), base, 1e-9);
    }
  }
}

TEST(PixelContrastiveLoss, MonotoneInSimilarities) {
  // Anchor e0; positive and negative rotate in the (e0, e1) plane.
  auto at = [](double angle) { return Vec{std::cos(angle), std::sin(angle)}; };
  const Vec z{1, 0};
  double prev = -1;
  for (double a = 3.0; a >= 0.0; a -= 0.25) {  // cos(z, z⁺) increasing
    const double l = pixel_contrastive_loss(make_term(z, at(a), {at(1.0)}, 0.5));
    if (prev >= 0) {
      EXPECT_LT(l, prev);
    }
    prev = l;
  }
  prev = -1;
  for (double a = 3.0; a >= 0.0; a -= 0.25) {  // cos(z, z⁻) increasing
    const double l = pixel_contrastive_loss(make_term(z, at(1.0), {at(a)}, 0.5));
    if (prev >= 0) {
      EXPECT_GT(l, prev);
    }
    prev = l;
  }
}

TEST(PixelContrastiveLoss, RejectsBadInputs) {
  const Vec z{1, 0};
  EXPECT_THROW(pixel_contrastive_loss(make_term(z, z, {Vec{1, 0}}, 0.0)), InvalidParameter);
  EXPECT_THROW(pixel_contrastive_loss(make_term(z, z, {Vec{1, 0, 0}}, 0.07)), InvalidParameter);
  EXPECT_THROW(pixel_contrastive_loss(make_term(z, z, {}, 0.07)), InvalidParameter);
}

TEST(PixelContrastiveGrad, MatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  for (int k = 0; k < 100; ++k) {
    const int d = 8, n = 5;
    Vec packed = oracle::randn(rng, d * (n + 2));
    auto slice = [&](int i) { return Vec(packed.begin() + i * d, packed.begin() + (i + 1) * d); };
    auto loss = [&] {
      std::vector<Vec> negs;
      for (int j = 0; j < n; ++j) negs.push_back(slice(j + 2));
      return oracle::info_nce(slice(0), slice(1), negs, 0.07);
    };
    std::vector<Vec> negs;
    for (int j = 0; j < n; ++j) negs.push_back(slice(j + 2));
    const Vec z = slice(0), zp = slice(1);
    const ContrastiveGrad g = pixel_contrastive_grad(make_term(z, zp, negs, 0.07));
    Vec analytic = g.anchor;
    analytic.insert(analytic.end(), g.positive.begin(), g.positive.end());
    for (const auto& gn : g.negatives) analytic.insert(analytic.end(), gn.begin(), gn.end());
    EXPECT_LT(oracle::rel_error(analytic, oracle::fd_gradient(packed, loss)), 1e-4);
  }
}

TEST(PixelContrastiveGrad, AnchorGradientIsOrthogonalToAnchor) {
  std::mt19937_64 rng(14);
  for (int k = 0; k < 50; ++k) {
    const Vec z = oracle::randn(rng, 8);
    const Vec zp = oracle::randn(rng, 8);
    std::vector<Vec> negs;
    for (int n = 0; n < 5; ++n) negs.push_back(oracle::randn(rng, 8));
    const ContrastiveGrad g = pixel_contrastive_grad(make_term(z, zp, negs, 0.07));
    EXPECT_NEAR(oracle::dot(g.anchor, z) / std::sqrt(oracle::dot(z, z)), 0.0, 1e-6);
  }
}

TEST(PixelContrastiveGrad, IdenticalVectorsHaveVanishingGradient) {
  const Vec z{0.5, -0.25, 1.0};
  const ContrastiveGrad g = pixel_contrastive_grad(make_term(z, z, {z, z, z}, 0.07));
  for (double v : g.anchor) EXPECT_NEAR(v, 0.0, 1e-9);
  for (double v : g.positive) EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(PixelContrastiveGrad, FusedVersionAgrees) {
  std::mt19937_64 rng(15);
  const Vec z = oracle::randn(rng, 8), zp = oracle::randn(rng, 8);
  std::vector<Vec> negs;
  for (int n = 0; n < 5; ++n) negs.push_back(oracle::randn(rng, 8));
  const ContrastiveTerm t = make_term(z, zp, negs, 0.07);
  ContrastiveGrad fused;
  EXPECT_DOUBLE_EQ(pixel_contrastive_loss_and_grad(t, fused), pixel_contrastive_loss(t));
  const ContrastiveGrad plain = pixel_contrastive_grad(t);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(fused.anchor[i], plain.anchor[i], 1e-12);
}

TEST(SupervisedCe, HandValues) {
  Vec peaked(5, 0.0);
  peaked[2] = 50.0;
  EXPECT_LT(supervised_ce(peaked, 2), 1e-6);
  EXPECT_NEAR(supervised_ce(Vec(21, 0.3), 7), std::log(21.0), 1e-12);
  EXPECT_NEAR(std::log(21.0), 3.04452, 1e-5);
  EXPECT_EQ(supervised_ce(peaked, kIgnoreLabel), 0.0);
  for (double v : supervised_ce_grad(peaked, kIgnoreLabel)) EXPECT_EQ(v, 0.0);
}

TEST(SupervisedCe, OutOfRangeLabelThrows) {
  EXPECT_THROW(supervised_ce(Vec{0, 0, 0}, 3), InvalidParameter);
  EXPECT_THROW(supervised_ce(Vec{0, 0, 0}, -1), InvalidParameter);
}

TEST(SupervisedCe, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(16);
  for (int k = 0; k < 50; ++k) {
    Vec logits = oracle::randn(rng, 6);
    const Vec g = supervised_ce_grad(logits, k % 6);
    EXPECT_LT(oracle::rel_error(g, oracle::fd_gradient(logits, [&] { return supervised_ce(logits, k % 6); })),
              1e-6);
  }
}

TEST(CombineLosses, Arithmetic) {
  EXPECT_EQ(combine_losses(1, 2, 3, 0, 0).total, 1.0);
  EXPECT_NEAR(combine_losses(1, 2, 3, 0.3, 1).total, 4.6, 1e-12);
  EXPECT_EQ(kDefaultLambdaContrast, 0.3);
  EXPECT_EQ(kDefaultLambdaConsistency, 1.0);
  EXPECT_EQ(kDefaultTemperature, 0.07);
  EXPECT_THROW(combine_losses(1, 2, 3, -0.1, 1), InvalidParameter);
  EXPECT_THROW(combine_losses(1, 2, 3, 0.3, -1), InvalidParameter);
}

TEST(CombineLosses, IdentityHoldsBitForBit) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int k = 0; k < 1000; ++k) {
    const double s = u(rng), c = u(rng), k2 = u(rng) / 2.5, l1 = u(rng), l2 = u(rng);
    const LossBreakdown b = combine_losses(s, c, k2, l1, l2);
    EXPECT_EQ(b.total, s + l1 * c + l2 * k2);
    EXPECT_EQ(b.lambda_contrast, l1);
    EXPECT_EQ(b.lambda_consistency, l2);
  }
}

TEST(ImageContrastiveLoss, EqualsPixelLossOnPooledVectors) {
  std::mt19937_64 rng(18);
  const Vec w = oracle::randn(rng, 8), s = oracle::randn(rng, 8);
  std::vector<Vec> negs;
  for (int n = 0; n < 6; ++n) negs.push_back(oracle::randn(rng, 8));
  std::vector<VectorView> views(negs.begin(), negs.end());
  EXPECT_EQ(image_contrastive_loss(w, s, views, 0.07),
            pixel_contrastive_loss(make_term(w, s, negs, 0.07)));
  const std::vector<VectorView> same(3, VectorView(w));
  EXPECT_NEAR(image_contrastive_loss(w, w, same, 0.07), std::log(4.0), 1e-9);
}

TEST(PixelFeatureConsistency, HandValues) {
  EXPECT_NEAR(pixel_feature_consistency(Vec{1, 2}, Vec{1, 2}), 0.0, 1e-12);
  EXPECT_NEAR(pixel_feature_consistency(Vec{1, 2}, Vec{-1, -2}), 2.0, 1e-12);
  EXPECT_NEAR(pixel_feature_consistency(Vec{1, 0}, Vec{1, 1}), 1 - 1 / std::sqrt(2.0), 1e-9);
  EXPECT_NEAR(pixel_feature_consistency(Vec{1, 0}, Vec{1, 1}), 0.29289, 1e-5);
}

TEST(PixelFeatureConsistency, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(19);
  for (int k = 0; k < 30; ++k) {
    const Vec w = oracle::randn(rng, 8);
    Vec s = oracle::randn(rng, 8);
    const Vec g = pixel_feature_consistency_grad(w, s);
    EXPECT_LT(oracle::rel_error(g, oracle::fd_gradient(s, [&] { return 1 - oracle::cosine(w, s); })),
              1e-6);
  }
}

TEST(OutputCeConsistency, HandValues) {
  Vec strong(4, 0.0);
  strong[1] = 50.0;
  EXPECT_LT(output_ce_consistency(Vec{0, 1, 0, 0}, strong), 1e-6);
  EXPECT_NEAR(output_ce_consistency(Vec{0.7, 0.3}, Vec{0, 0}), std::log(2.0), 1e-12);
  EXPECT_NEAR(std::log(2.0), 0.69315, 1e-5);
}

TEST(OutputCeConsistency, UniformTargetEntropyBound) {
  std::mt19937_64 rng(20);
  const Vec uniform(5, 0.2);
  for (int k = 0; k < 100; ++k) {
    EXPECT_GE(output_ce_consistency(uniform, oracle::randn(rng, 5)), std::log(5.0) - 1e-12);
  }
  EXPECT_NEAR(output_ce_consistency(uniform, Vec(5, 1.5)), std::log(5.0), 1e-12);
}

TEST(OutputCeConsistency, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  for (int k = 0; k < 30; ++k) {
    const Vec target = softmax_sharpen(oracle::randn(rng, 5), 0.5);
    Vec logits = oracle::randn(rng, 5);
    const Vec g = output_ce_consistency_grad(target, logits);
    EXPECT_LT(oracle::rel_error(g, oracle::fd_gradient(logits, [&] {
                                  return output_ce_consistency(target, logits);
                                })),
              1e-6);
  }
}

}  // namespace
}  // namespace pixcon
