#include "gradcheck.hpp"
#include "oracles.hpp"
#include "pdgn/discriminator.hpp"

#include <gtest/gtest.h>

using namespace pdgn;
using namespace pdgn::discriminator;

namespace {

DiscriminatorConfig small(bool bn = true) {
  DiscriminatorConfig c;
  c.point_widths = {{8, 16}, {8, 12, 16}};
  c.scorer_widths = {8, 1};
  c.batch_norm = bn;
  return c;
}

PointCloud shuffled(const PointCloud& c, std::mt19937_64& g) {
  std::vector<Index> perm(static_cast<std::size_t>(c.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), g);
  PointCloud out(c.rows(), 3);
  for (Index i = 0; i < c.rows(); ++i) out.row(i) = c.row(perm[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

TEST(Discriminator, IndependentParametersPerResolution) {
  Discriminator d(small(), {16, 32}, 1);
  EXPECT_EQ(d.levels(), 2u);
  const auto a = d.parameters(0).tensors();
  const auto b = d.parameters(1).tensors();
  for (const auto& x : a)
    for (const auto& y : b) EXPECT_NE(x.node().get(), y.node().get());
}

TEST(Discriminator, DefaultWidthsAreShallowerAtLowResolution) {
  Discriminator d(DiscriminatorConfig{}, {256, 512, 1024, 2048}, 0);
  const auto& w = d.config().point_widths;
  ASSERT_EQ(w.size(), 4u);
  EXPECT_LE(w[0].size(), w[3].size());
  EXPECT_LT(w[0].back(), w[3].back());
}

TEST(Discriminator, RejectsWrongResolution) {
  Discriminator d(small(), {16, 32}, 1);
  EXPECT_THROW(d.score(PointCloud::Zero(15, 3), 0), std::invalid_argument);
  EXPECT_THROW(d.score(PointCloud::Zero(16, 3), 1), std::invalid_argument);
  EXPECT_THROW(d.score(PointCloud::Zero(16, 3), 2), std::out_of_range);
}

TEST(Discriminator, PermutationInvariant) {
  std::mt19937_64 g(3);
  for (bool bn : {true, false}) {
    Discriminator d(small(bn), {16, 32}, 2);
    for (int s = 0; s < 10; ++s) {
      const PointCloud c = oracle::random_cloud(g, 32);
      const PointCloud p = shuffled(c, g);
      EXPECT_NEAR(d.score(c, 1), d.score(p, 1), 1e-12);
      EXPECT_LT((d.extract_features(c, 1) - d.extract_features(p, 1)).cwiseAbs().maxCoeff(), 1e-12);
      // Train mode normalises over the whole batch, which is order-free too.
      EXPECT_NEAR(d.score(c, 1, Mode::train), d.score(p, 1, Mode::train), 1e-12);
    }
  }
}

TEST(Discriminator, ZeroScorerGivesHalf) {
  Discriminator d(small(), {16, 32}, 4);
  d.scorer(0).layers().back().weight.mutable_value().setZero();
  d.scorer(0).layers().back().bias.mutable_value().setZero();
  std::mt19937_64 g(1);
  EXPECT_EQ(d.score(oracle::random_cloud(g, 16), 0), 0.5);
}

TEST(Discriminator, ScoreStrictlyInsideUnitInterval) {
  Discriminator d(small(false), {16, 32}, 5);
  for (auto& l : d.scorer(0).layers()) l.weight.mutable_value() *= 1e4;
  std::mt19937_64 g(2);
  for (int s = 0; s < 20; ++s) {
    const double p = d.score(oracle::random_cloud(g, 16, -50, 50), 0);
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
}

TEST(Discriminator, DuplicatePointLeavesPooledFeature) {
  Discriminator d(small(), {16, 32}, 6);
  std::mt19937_64 g(7);
  const PointCloud base = oracle::random_cloud(g, 15);
  PointCloud dup(16, 3);
  dup.topRows(15) = base;
  dup.row(15) = base.row(4);
  const Matrix per_point = d.point_mlp(0)(Tensor(Matrix(base)), false).value();
  const Eigen::RowVectorXd expect = per_point.colwise().maxCoeff();
  EXPECT_LT((d.extract_features(dup, 0) - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Discriminator, SinglePointFeatureIsItsMlpOutput) {
  DiscriminatorConfig c;
  c.point_widths = {{6, 9}, {6, 9}};
  c.scorer_widths = {4, 1};
  Discriminator d(c, {1, 2}, 8);
  PointCloud p(1, 3);
  p << 0.2, -0.4, 0.9;
  const Eigen::RowVectorXd f = d.extract_features(p, 0);
  EXPECT_EQ(f.size(), 9);
  const Matrix direct = d.point_mlp(0)(Tensor(Matrix(p)), false).value();
  EXPECT_LT((f - direct.row(0)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Discriminator, InputGradientMatchesFiniteDifferences) {
  for (bool bn : {false, true}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Discriminator d(small(bn), {16, 32}, seed);
      std::mt19937_64 g(seed);
      const std::vector<Matrix> in = {oracle::random_cloud(g, 2 * 16)};
      const double err = gradcheck::max_error(
          [&](const std::vector<Tensor>& x) { return ad::sum(ad::sigmoid(d.logits(x[0], 2, 0, Mode::train))); },
          in);
      EXPECT_LT(err, 1e-3) << "seed " << seed << " bn " << bn;
    }
  }
}

TEST(Discriminator, ParameterGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Discriminator d(small(), {16, 32}, seed);
    std::mt19937_64 g(seed + 50);
    const Tensor clouds(oracle::random_cloud(g, 3 * 32));
    auto loss = [&] { return gradcheck::weighted(d.logits(clouds, 3, 1, Mode::train), seed); };
    // Max-pool and leaky kinks sit within 1e-5 of some of these draws.
    EXPECT_LT(gradcheck::param_error(loss, d.parameters(1).tensors(), 1e-6), 1e-3) << "seed " << seed;
  }
}
