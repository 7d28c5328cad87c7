#include "pixcon/sampling.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include <boost/math/special_functions/gamma.hpp>

#include "pixcon/errors.hpp"

namespace pixcon {
namespace {

// Pool with one-hot pseudo-labels equal to the given classes.
CandidatePool one_hot_pool(const std::vector<int>& image_ids, const std::vector<int>& classes,
                           int num_classes) {
  CandidatePool pool;
  pool.num_classes = num_classes;
  pool.image_id = image_ids;
  pool.probs.assign(image_ids.size() * num_classes, 0.0);
  for (std::size_t j = 0; j < classes.size(); ++j) pool.probs[j * num_classes + classes[j]] = 1.0;
  pool.gt_label = classes;
  return pool;
}

CandidatePool random_pool(std::mt19937_64& rng, std::size_t m, int images, int classes) {
  std::uniform_int_distribution<int> img(0, images - 1);
  std::uniform_int_distribution<int> cls(0, classes - 1);
  std::gamma_distribution<double> g(0.5, 1.0);
  CandidatePool pool;
  pool.num_classes = classes;
  std::vector<int> gt;
  for (std::size_t j = 0; j < m; ++j) {
    pool.image_id.push_back(img(rng));
    gt.push_back(cls(rng));
    double s = 0;
    std::vector<double> p(classes);
    for (double& v : p) s += (v = g(rng) + 1e-12);
    for (double v : p) pool.probs.push_back(v / s);
  }
  pool.gt_label = gt;
  return pool;
}

TEST(Strategy, NamesRoundTrip) {
  for (StrategyKind k : kAllStrategies) EXPECT_EQ(parse_strategy(to_string(k)), k);
  EXPECT_EQ(parse_strategy("diff+pseudo"), StrategyKind::kDiffImagePseudo);
  EXPECT_THROW(parse_strategy("random"), InvalidParameter);
}

TEST(CandidatePool, ValidateRejectsMalformedPools) {
  CandidatePool pool = one_hot_pool({0, 1}, {0, 1}, 2);
  EXPECT_NO_THROW(pool.validate());
  CandidatePool small = one_hot_pool({0}, {0}, 2);
  EXPECT_THROW(small.validate(), InvalidParameter);
  CandidatePool bad = pool;
  bad.probs[0] = 0.5;
  EXPECT_THROW(bad.validate(), InvalidParameter);
  CandidatePool short_gt = pool;
  short_gt.gt_label->pop_back();
  EXPECT_THROW(short_gt.validate(), InvalidParameter);
}

TEST(DensityUniform, RenormalizesAfterExclusions) {
  CandidatePool pool = one_hot_pool({0, 0, 0, 1, 1, 1}, {0, 0, 0, 0, 0, 0}, 2);
  pool.exclude_self_and_partner(std::vector<std::size_t>{3, 4, 5, 0, 1, 2});
  const SamplingDensity d = density_uniform(0, pool);
  EXPECT_EQ(d.weights[0], 0.0);
  EXPECT_EQ(d.weights[3], 0.0);
  for (std::size_t j : {1, 2, 4, 5}) EXPECT_DOUBLE_EQ(d.weights[j], 0.25);
  EXPECT_EQ(d.support(), 4u);
}

TEST(DensityUniform, FullyExcludedPoolIsEmpty) {
  CandidatePool pool = one_hot_pool({0, 1}, {0, 0}, 2);
  pool.exclude_self_and_partner(std::vector<std::size_t>{1, 0});
  EXPECT_THROW(density_uniform(0, pool), EmptyDensity);
}

TEST(DensityUniform, DefaultExclusionIsTheAnchor) {
  const CandidatePool pool = one_hot_pool({0, 0, 0, 0}, {0, 1, 0, 1}, 2);
  const SamplingDensity d = density_uniform(2, pool);
  EXPECT_EQ(d.weights[2], 0.0);
  EXPECT_DOUBLE_EQ(d.weights[0], 1.0 / 3.0);
}

TEST(DensityDiffImage, IndicatorArithmetic) {
  const CandidatePool pool = one_hot_pool({0, 0, 0, 0, 1, 1, 1, 1}, {0, 0, 0, 0, 0, 0, 0, 0}, 2);
  const SamplingDensity d = density_diff_image(1, pool);
  for (int j = 0; j < 4; ++j) EXPECT_EQ(d.weights[j], 0.0);
  for (int j = 4; j < 8; ++j) EXPECT_DOUBLE_EQ(d.weights[j], 0.25);
}

TEST(DensityDiffImage, SingleImageBatchIsEmpty) {
  const CandidatePool pool = one_hot_pool({3, 3, 3}, {0, 1, 0}, 2);
  EXPECT_THROW(density_diff_image(0, pool), EmptyDensity);
}

TEST(DensityPseudo, RawWeights) {
  CandidatePool pool = one_hot_pool({0, 1, 2}, {1, 1, 2}, 3);
  const auto w = raw_weights(StrategyKind::kPseudoDebiased, 0, pool);
  EXPECT_EQ(w[1], 0.0);
  EXPECT_EQ(w[2], 1.0);

  CandidatePool soft;
  soft.num_classes = 2;
  soft.image_id = {0, 1};
  soft.probs = {0.7, 0.3, 0.2, 0.8};
  EXPECT_NEAR(raw_weights(StrategyKind::kPseudoDebiased, 0, soft)[1], 0.62, 1e-12);
}

TEST(DensityPseudo, AllPseudoIdenticalIsEmpty) {
  const CandidatePool pool = one_hot_pool({0, 1, 2}, {1, 1, 1}, 3);
  EXPECT_THROW(density_pseudo_debiased(0, pool), EmptyDensity);
}

TEST(DensityCombined, IndicatorAndDotProductBothZeroOut) {
  const CandidatePool pool = one_hot_pool({0, 0, 1, 1}, {0, 1, 0, 1}, 2);
  const auto w = raw_weights(StrategyKind::kDiffImagePseudo, 0, pool);
  EXPECT_EQ(w[1], 0.0);  // same image, disjoint label
  EXPECT_EQ(w[2], 0.0);  // other image, identical label
  EXPECT_EQ(w[3], 1.0);
}

TEST(DensityCombined, EqualsRenormalizedProductOfFactors) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    CandidatePool pool = random_pool(rng, 24, 3, 4);
    std::vector<std::size_t> partner(24);
    for (std::size_t j = 0; j < 24; ++j) partner[j] = (j + 12) % 24;
    pool.exclude_self_and_partner(partner);
    const std::size_t anchor = trial % 24;
    std::vector<double> product(24);
    double total = 0;
    for (std::size_t j = 0; j < 24; ++j) {
      const double indicator = pool.image_id[j] != pool.image_id[anchor] ? 1.0 : 0.0;
      double dot = 0;
      for (int c = 0; c < 4; ++c) dot += pool.prob(anchor)[c] * pool.prob(j)[c];
      product[j] = (j == anchor || j == partner[anchor]) ? 0.0 : indicator * std::max(0.0, 1 - dot);
      total += product[j];
    }
    if (total == 0) continue;
    const SamplingDensity d = density_combined(anchor, pool);
    double sum = 0;
    for (std::size_t j = 0; j < 24; ++j) {
      EXPECT_NEAR(d.weights[j], product[j] / total, 1e-12);
      sum += d.weights[j];
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(DensityOracle, UniformOverOtherClasses) {
  const CandidatePool pool = one_hot_pool({0, 0, 0, 0, 0, 0, 0, 0}, {2, 2, 2, 0, 1, 3, 4, 1}, 5);
  const SamplingDensity d = density_oracle(0, pool);
  for (int j = 0; j < 3; ++j) EXPECT_EQ(d.weights[j], 0.0);
  for (int j = 3; j < 8; ++j) EXPECT_DOUBLE_EQ(d.weights[j], 0.2);
}

TEST(DensityOracle, ErrorsWithoutAlternativesOrLabels) {
  const CandidatePool same = one_hot_pool({0, 1, 2}, {1, 1, 1}, 2);
  EXPECT_THROW(density_oracle(0, same), EmptyDensity);
  CandidatePool no_gt = one_hot_pool({0, 1}, {0, 1}, 2);
  no_gt.gt_label.reset();
  EXPECT_THROW(density_oracle(0, no_gt), InvalidParameter);
}

TEST(Densities, NonNegativeNormalizedAndZeroOnExclusions) {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 100; ++trial) {
    CandidatePool pool = random_pool(rng, 16, 4, 3);
    std::vector<std::size_t> partner(16);
    for (std::size_t j = 0; j < 16; ++j) partner[j] = (j + 8) % 16;
    pool.exclude_self_and_partner(partner);
    for (StrategyKind k : kAllStrategies) {
      const std::size_t anchor = trial % 16;
      try {
        const SamplingDensity d = build_density(k, anchor, pool);
        double s = 0;
        for (double w : d.weights) {
          EXPECT_GE(w, 0.0);
          s += w;
        }
        EXPECT_NEAR(s, 1.0, 1e-9);
        EXPECT_EQ(d.weights[anchor], 0.0);
        EXPECT_EQ(d.weights[partner[anchor]], 0.0);
      } catch (const EmptyDensity&) {
      }
    }
  }
}

TEST(GumbelTopK, SinglePositiveWeight) {
  Rng rng(1);
  const SamplingDensity d{{0.0, 0.0, 1.0, 0.0}};
  for (int t = 0; t < 100; ++t) {
    const TopKDraw draw = gumbel_topk(d, 1, rng);
    ASSERT_EQ(draw.indices.size(), 1u);
    EXPECT_EQ(draw.indices[0], 2u);
    EXPECT_FALSE(draw.shortfall);
  }
}

TEST(GumbelTopK, ExhaustsUniformDensity) {
  Rng rng(2);
  const SamplingDensity d{{0.25, 0.25, 0.25, 0.25}};
  std::set<std::vector<std::size_t>> orders;
  for (int t = 0; t < 200; ++t) {
    TopKDraw draw = gumbel_topk(d, 4, rng);
    orders.insert(draw.indices);
    std::sort(draw.indices.begin(), draw.indices.end());
    EXPECT_EQ(draw.indices, (std::vector<std::size_t>{0, 1, 2, 3}));
  }
  EXPECT_GT(orders.size(), 10u);  // random order
}

TEST(GumbelTopK, ShortfallReturnsWholeSupport) {
  Rng rng(3);
  const SamplingDensity d{{0.5, 0.0, 0.5, 0.0}};
  const TopKDraw draw = gumbel_topk(d, 3, rng);
  EXPECT_TRUE(draw.shortfall);
  EXPECT_EQ(draw.indices.size(), 2u);
  EXPECT_THROW(gumbel_topk(SamplingDensity{{0.0, 0.0}}, 1, rng), EmptyDensity);
}

TEST(GumbelTopK, DeterministicPerSeed) {
  const SamplingDensity d{{0.1, 0.2, 0.3, 0.15, 0.25}};
  Rng a(77), b(77);
  for (int t = 0; t < 50; ++t) EXPECT_EQ(gumbel_topk(d, 3, a).indices, gumbel_topk(d, 3, b).indices);
}

TEST(GumbelTopK, NoDuplicatesNoZeroWeights) {
  std::mt19937_64 fuzz(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Rng rng(5);
  for (int t = 0; t < 20000; ++t) {
    const std::size_t m = 2 + fuzz() % 12;
    std::vector<double> w(m);
    for (double& v : w) v = u(fuzz) < 0.4 ? 0.0 : u(fuzz);
    w[fuzz() % m] = 0.5;
    double s = 0;
    for (double v : w) s += v;
    for (double& v : w) v /= s;
    const TopKDraw draw = gumbel_topk(SamplingDensity{w}, 1 + fuzz() % m, rng);
    std::set<std::size_t> seen;
    for (std::size_t j : draw.indices) {
      EXPECT_GT(w[j], 0.0);
      EXPECT_TRUE(seen.insert(j).second);
    }
  }
}

TEST(GumbelTopK, FirstDrawMarginalsMatchDensity) {
  const std::vector<double> w{0.05, 0.1, 0.15, 0.2, 0.25, 0.25};
  Rng rng(6);
  const int trials = 100000;
  std::vector<int> counts(w.size(), 0);
  for (int t = 0; t < trials; ++t) ++counts[gumbel_topk(SamplingDensity{w}, 2, rng).indices[0]];
  double chi2 = 0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    const double e = w[j] * trials;
    chi2 += (counts[j] - e) * (counts[j] - e) / e;
  }
  const double p = boost::math::gamma_q((w.size() - 1) / 2.0, chi2 / 2.0);
  EXPECT_GT(p, 0.01) << "chi2=" << chi2;
}

TEST(FalseNegativeRate, OracleAndSameClassExtremes) {
  const CandidatePool pool = one_hot_pool({0, 0, 1, 1, 1, 1}, {0, 0, 1, 1, 0, 0}, 2);
  Rng rng(7);
  std::vector<std::vector<std::size_t>> sampled;
  std::vector<std::size_t> anchors;
  for (std::size_t a = 0; a < pool.size(); ++a) {
    sampled.push_back(gumbel_topk(density_oracle(a, pool), 2, rng).indices);
    anchors.push_back(a);
  }
  EXPECT_EQ(false_negative_rate(sampled, pool, anchors), 0.0);
  const std::vector<std::vector<std::size_t>> same{{1, 4, 5}};
  const std::vector<std::size_t> anchor0{0};
  EXPECT_EQ(false_negative_rate(same, pool, anchor0), 1.0);
}

TEST(FalseNegativeRate, UniformMatchesClosedFormExpectation) {
  // Image 0: 6 of 10 pixels class A (0); image 1: 3 of 10. Anchor is class A
  // in image 0; the other 19 candidates hold 5 + 3 class-A pixels.
  std::vector<int> ids, cls;
  for (int j = 0; j < 10; ++j) {
    ids.push_back(0);
    cls.push_back(j < 6 ? 0 : 1);
  }
  for (int j = 0; j < 10; ++j) {
    ids.push_back(1);
    cls.push_back(j < 3 ? 0 : 1);
  }
  const CandidatePool pool = one_hot_pool(ids, cls, 2);
  const SamplingDensity d = density_uniform(0, pool);
  Rng rng(8);
  std::vector<std::vector<std::size_t>> sampled;
  std::vector<std::size_t> anchors;
  for (int t = 0; t < 20000; ++t) {
    sampled.push_back(gumbel_topk(d, 5, rng).indices);
    anchors.push_back(0);
  }
  EXPECT_NEAR(false_negative_rate(sampled, pool, anchors), 8.0 / 19.0, 0.01);
}

TEST(OpCount, SupplementaryArithmetic) {
  const std::uint64_t m = 4 * 33 * 33;
  EXPECT_EQ(m, 4356u);
  EXPECT_EQ(op_count(m, 200, 128, 20, OpCountMode::kAllPairs), 2428766208ull);
  EXPECT_EQ(m * 200 * 128, 111513600ull);
  EXPECT_EQ(op_count(m, 200, 128, 20, OpCountMode::kSampled), 111513600ull + 379494720ull);
  const OpCountReport r = op_count_report(m, 200, 128, 20);
  EXPECT_EQ(r.sampled_similarity, 111513600ull);
  EXPECT_EQ(r.pseudo_label_compare, 379494720ull);
  EXPECT_GE(r.reduction, 4.9);
  EXPECT_LT(r.reduction, 5.0);
  EXPECT_THROW(op_count(0, 1, 1, 1, OpCountMode::kAllPairs), InvalidParameter);
}

}  // namespace
}  // namespace pixcon
