#include "gradcheck.hpp"
#include "oracles.hpp"
#include "pdgn/io.hpp"
#include "pdgn/training.hpp"

#include <gtest/gtest.h>

#include <cstring>

using namespace pdgn;
using namespace pdgn::training;
using losses::CentroidStart;
using losses::LossConfig;
using losses::LossVariant;

namespace {

TrainConfig tiny_config(LossVariant v = LossVariant::shape_preserving, double lambda = 0.1) {
  TrainConfig c;
  c.generator.latent_dim = 6;
  c.generator.stages = {{8, 4}, {16, 8}};
  c.generator.k = 3;
  c.generator.head_widths = {8, 3};
  c.discriminator.point_widths = {{8, 16}, {8, 16}};
  c.discriminator.scorer_widths = {8, 1};
  c.loss.variant = v;
  c.loss.lambda = lambda;
  c.loss.spl_centroids = 4;
  c.loss.spl_k = 3;
  c.batch_size = 4;
  c.seed = 17;
  c.adam.lr = 1e-3;
  return c;
}

std::vector<PointCloud> corpus() { return io::synth_corpus(io::SynthKind::sphere, 12, 24, 3).clouds; }

PointCloud pts(std::initializer_list<std::array<double, 3>> p) {
  PointCloud c(static_cast<Index>(p.size()), 3);
  Index i = 0;
  for (const auto& q : p) c.row(i++) << q[0], q[1], q[2];
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

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

bool same_records(const std::vector<LogRecord>& a, const std::vector<LogRecord>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].iter != b[i].iter || a[i].stage != b[i].stage || !same_bits(a[i].loss_d, b[i].loss_d) ||
        !same_bits(a[i].loss_g, b[i].loss_g) || !same_bits(a[i].spl, b[i].spl))
      return false;
  }
  return true;
}

std::vector<LogRecord> run(Trainer& t, int steps) {
  std::vector<LogRecord> all;
  for (int i = 0; i < steps; ++i) {
    const auto r = t.step();
    all.insert(all.end(), r.begin(), r.end());
  }
  return all;
}

double tensor_spl(const PointCloud& coarse, const PointCloud& fine, Index centroids, Index k) {
  LossConfig cfg;
  cfg.spl_centroids = centroids;
  cfg.spl_k = k;
  std::mt19937_64 unused(0);
  return losses::spl_pair(Tensor(Matrix(coarse)), coarse.rows(), Tensor(Matrix(fine)), fine.rows(), 1,
                          cfg, CentroidStart::canonical, unused)
      .item();
}

}  // namespace

TEST(Spl, SingletonCentroidOffset) {
  // One centroid per resolution; neighbourhood means differ by (1,0,0) and
  // both covariances are diag(2,0,0).
  const PointCloud coarse = pts({{0, 0, 0}, {2, 0, 0}});
  EXPECT_NEAR(losses::spl(std::vector<PointCloud>{coarse, pts({{1, 0, 0}, {3, 0, 0}})}, 1, 2), 1.0, 1e-12);
  PointCloud shifted = coarse.rowwise() + Eigen::RowVector3d(1, 0, 0);
  EXPECT_NEAR(losses::spl(std::vector<PointCloud>{coarse, shifted}, 1, 2), 1.0, 1e-12);
  EXPECT_NEAR(tensor_spl(coarse, shifted, 1, 2), 1.0, 1e-12);
}

TEST(Spl, ZeroForIdenticalStatistics) {
  std::mt19937_64 g(1);
  for (int s = 0; s < 10; ++s) {
    const PointCloud c = oracle::random_cloud(g, 20);
    EXPECT_NEAR(losses::spl(std::vector<PointCloud>{c, c, c}, 6, 4), 0.0, 1e-9);
    EXPECT_NEAR(tensor_spl(c, c, 6, 4), 0.0, 1e-9);
    // Same shape with the points stored in another order.
    EXPECT_NEAR(losses::spl(std::vector<PointCloud>{c, shuffled(c, g)}, 6, 4), 0.0, 1e-9);
  }
}

TEST(Spl, NonNegativeAndPermutationInvariant) {
  std::mt19937_64 g(2);
  for (int s = 0; s < 20; ++s) {
    const PointCloud a = oracle::random_cloud(g, 16), b = oracle::random_cloud(g, 32);
    const double v = losses::spl(std::vector<PointCloud>{a, b}, 5, 4);
    EXPECT_GE(v, 0.0);
    EXPECT_NEAR(losses::spl(std::vector<PointCloud>{shuffled(a, g), shuffled(b, g)}, 5, 4), v, 1e-12);
    EXPECT_NEAR(tensor_spl(shuffled(a, g), shuffled(b, g), 5, 4), v, 1e-12);
  }
}

TEST(Spl, TapedValueMatchesGeometryKernels) {
  generator::GeneratorConfig gc = tiny_config().generator;
  generator::Generator gen(gc, 4);
  const auto out = gen.generate(generator::sample_latent(std::uint64_t{3}, 3, 6, 0.2), false);
  LossConfig cfg;
  cfg.spl_centroids = 4;
  cfg.spl_k = 3;
  double expect = 0;
  for (Index b = 0; b < 3; ++b) expect += losses::spl(std::vector<PointCloud>{out.cloud(0, b), out.cloud(1, b)}, 4, 3);
  EXPECT_NEAR(losses::spl(out, cfg), expect / 3, 1e-12);
  EXPECT_THROW(losses::spl(std::vector<PointCloud>{out.cloud(0, 0)}, 4, 3), std::invalid_argument);
}

TEST(Spl, GradientMatchesFiniteDifferences) {
  LossConfig cfg;
  cfg.spl_centroids = 3;
  cfg.spl_k = 3;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 g(seed);
    const std::vector<Matrix> in = {oracle::random_cloud(g, 2 * 8), oracle::random_cloud(g, 2 * 16)};
    const double err = gradcheck::max_error(
        [&](const std::vector<Tensor>& x) {
          std::mt19937_64 unused(0);
          return losses::spl_pair(x[0], 8, x[1], 16, 2, cfg, CentroidStart::canonical, unused);
        },
        in, 1e-6);
    EXPECT_LT(err, 1e-3) << "seed " << seed;
  }
}

TEST(Coupling, AbsentAtLastLevelAndForPlainVariant) {
  generator::Generator gen(tiny_config().generator, 1);
  const auto out = gen.generate(generator::sample_latent(std::uint64_t{1}, 2, 6, 0.2), false);
  std::mt19937_64 rng(0);
  LossConfig cfg;
  cfg.spl_centroids = 4;
  cfg.spl_k = 3;
  cfg.lambda = 5.0;
  EXPECT_TRUE(losses::coupling(out, 0, cfg, CentroidStart::canonical, rng).has_value());
  EXPECT_FALSE(losses::coupling(out, 1, cfg, CentroidStart::canonical, rng).has_value());
  cfg.variant = LossVariant::plain_adversarial;
  cfg.spl_k = 1000;  // would be rejected if any geometry ran
  EXPECT_FALSE(losses::coupling(out, 0, cfg, CentroidStart::canonical, rng).has_value());
}

TEST(Coupling, EmdAndCdVariantsMatchKernels) {
  std::mt19937_64 g(5);
  const PointCloud coarse = oracle::random_cloud(g, 6), fine = oracle::random_cloud(g, 12);
  const auto keep = geometry::fps(fine, 6, geometry::canonical_seed(fine));
  PointCloud down(6, 3);
  for (Index i = 0; i < 6; ++i) down.row(i) = fine.row(keep[static_cast<std::size_t>(i)]);
  const Tensor tc{Matrix(coarse)}, tf{Matrix(fine)};
  EXPECT_NEAR(losses::emd_pair(tc, 6, tf, 12, 1).item(), oracle::emd_enumerate(coarse, down), 1e-12);
  EXPECT_NEAR(losses::cd_pair(tc, 6, tf, 12, 1).item(), oracle::chamfer(coarse, down), 1e-12);
}

TEST(Variants, NamesRoundTrip) {
  for (auto v : {LossVariant::shape_preserving, LossVariant::plain_adversarial, LossVariant::emd_coupled,
                 LossVariant::cd_coupled})
    EXPECT_EQ(losses::parse_variant(losses::to_string(v)), v);
  EXPECT_THROW(losses::parse_variant("spl"), std::invalid_argument);
}

TEST(AdversarialLosses, Values) {
  const Tensor zero(Matrix::Zero(5, 1));
  EXPECT_NEAR(losses::discriminator_loss(zero, zero).item(), 2 * std::log(2.0), 1e-15);
  const Tensor big(Matrix::Constant(3, 1, 40.0));
  EXPECT_LT(losses::discriminator_loss(big, -big).item(), 1e-15);
  EXPECT_GT(losses::discriminator_loss(big, -big).item(), 0.0);

  Matrix f(3, 1);
  f << -1.5, 0.2, 3.0;
  double sat = 0, ns = 0;
  for (Index i = 0; i < 3; ++i) {
    const double d = 1 / (1 + std::exp(-f(i, 0)));
    sat += std::log(1 - d);
    ns += -std::log(d);
  }
  EXPECT_NEAR(losses::generator_adversarial_loss(Tensor(f), false).item(), sat / 3, 1e-12);
  EXPECT_NEAR(losses::generator_adversarial_loss(Tensor(f), true).item(), ns / 3, 1e-12);
}

TEST(AdversarialLosses, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 g(seed);
    const std::vector<Matrix> in = {oracle::random_matrix(g, 4, 1, -4, 4), oracle::random_matrix(g, 4, 1, -4, 4)};
    EXPECT_LT(gradcheck::max_error([](const auto& x) { return losses::discriminator_loss(x[0], x[1]); }, in), 1e-4);
    EXPECT_LT(gradcheck::max_error([](const auto& x) { return losses::generator_adversarial_loss(x[0], false); }, in),
              1e-4);
    EXPECT_LT(gradcheck::max_error([](const auto& x) { return losses::generator_adversarial_loss(x[0], true); }, in),
              1e-4);
  }
}

TEST(EndToEnd, TinyGeneratorAndDiscriminatorLossGradients) {
  TrainConfig cfg = tiny_config();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    generator::Generator gen(cfg.generator, seed);
    discriminator::Discriminator disc(cfg.discriminator, cfg.resolutions(), seed + 9);
    const Matrix z = generator::sample_latent(seed, 2, 6, 0.2);
    std::mt19937_64 g(seed);
    const Tensor real(oracle::random_cloud(g, 2 * 16));
    auto g_loss = [&] {
      const auto out = gen.generate(Tensor(z), true);
      std::mt19937_64 unused(0);
      const Tensor lf = ad::slice_rows(
          disc.logits(ad::concat_rows({real, out.levels[1].coords}), 4, 1, discriminator::Mode::train), 2, 2);
      return losses::generator_adversarial_loss(lf, false) +
             ad::scale(*losses::coupling(out, 0, cfg.loss, CentroidStart::canonical, unused), 0.1);
    };
    auto d_loss = [&] {
      const Tensor fake = gen.generate(Tensor(z), true).levels[1].coords.detach();
      const Tensor l = disc.logits(ad::concat_rows({real, fake}), 4, 1, discriminator::Mode::train);
      return losses::discriminator_loss(ad::slice_rows(l, 0, 2), ad::slice_rows(l, 2, 2));
    };
    EXPECT_LT(gradcheck::param_error(g_loss, gen.parameters().tensors(), 1e-6), 1e-3) << seed;
    EXPECT_LT(gradcheck::param_error(d_loss, disc.parameters(1).tensors(), 1e-6), 1e-3) << seed;
  }
}

TEST(Phases, GradientsReachDisjointParameterSets) {
  TrainConfig cfg = tiny_config();
  generator::Generator gen(cfg.generator, 2);
  discriminator::Discriminator disc(cfg.discriminator, cfg.resolutions(), 3);
  std::mt19937_64 g(1);
  const Tensor real(oracle::random_cloud(g, 2 * 16));
  ad::Tape outer;
  const auto out = gen.generate(generator::sample_latent(std::uint64_t{0}, 2, 6, 0.2), true);
  auto gp = gen.parameters().tensors();
  auto dp = disc.parameters(1).tensors();
  {
    ad::Tape tape;
    const Tensor l = disc.logits(ad::concat_rows({real, out.levels[1].coords.detach()}), 4, 1,
                                 discriminator::Mode::train);
    std::vector<Tensor> all = gp;
    all.insert(all.end(), dp.begin(), dp.end());
    const auto grads = tape.gradients(losses::discriminator_loss(ad::slice_rows(l, 0, 2), ad::slice_rows(l, 2, 2)), all);
    for (std::size_t i = 0; i < gp.size(); ++i) EXPECT_EQ(grads[i].cwiseAbs().maxCoeff(), 0.0);
  }
  disc.parameters(1).set_requires_grad(false);
  const Tensor l = disc.logits(ad::concat_rows({real, out.levels[1].coords}), 4, 1, discriminator::Mode::train);
  const Tensor loss = losses::generator_adversarial_loss(ad::slice_rows(l, 2, 2), false);
  std::vector<Tensor> all = dp;
  all.insert(all.end(), gp.begin(), gp.end());
  const auto grads = outer.gradients(loss, all);
  for (std::size_t i = 0; i < dp.size(); ++i) EXPECT_EQ(grads[i].cwiseAbs().maxCoeff(), 0.0);
  double reach = 0;
  for (std::size_t i = dp.size(); i < all.size(); ++i) reach += grads[i].cwiseAbs().sum();
  EXPECT_GT(reach, 0.0);
  disc.parameters(1).set_requires_grad(true);
}

TEST(RealMultiresolution, SubsetsAndShrinkingChamfer) {
  std::mt19937_64 g(6);
  const PointCloud src = oracle::random_cloud(g, 128);
  const std::vector<Index> res = {16, 32, 64, 128};
  const auto levels = real_multiresolution(src, res);
  ASSERT_EQ(levels.size(), 4u);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < 4; ++l) {
    EXPECT_EQ(levels[l].rows(), res[l]);
    for (Index i = 0; i < levels[l].rows(); ++i) {
      bool found = false;
      for (Index j = 0; j < src.rows() && !found; ++j) found = levels[l].row(i) == src.row(j);
      EXPECT_TRUE(found);
    }
    const double cd = geometry::chamfer_distance(levels[l], src);
    EXPECT_LT(cd, prev);
    prev = cd;
  }
  EXPECT_THROW(real_multiresolution(src, {256}), std::invalid_argument);
}

TEST(Trainer, RecordsPerResolution) {
  Trainer t(tiny_config(), corpus());
  const auto r = t.step();
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].iter, 1);
  EXPECT_EQ(r[0].stage, 1);
  EXPECT_EQ(r[1].stage, 2);
  EXPECT_TRUE(std::isfinite(r[0].spl));
  EXPECT_TRUE(std::isnan(r[1].spl));
  EXPECT_EQ(t.iteration(), 1);
}

TEST(Trainer, ZeroLambdaEqualsPlainAdversarial) {
  Trainer a(tiny_config(LossVariant::shape_preserving, 0.0), corpus());
  Trainer b(tiny_config(LossVariant::plain_adversarial, 0.1), corpus());
  EXPECT_TRUE(same_records(run(a, 5), run(b, 5)));
  EXPECT_EQ(a.checkpoint().serialize(), b.checkpoint().serialize());
}

TEST(Trainer, BitwiseDeterministic) {
  for (auto v : {LossVariant::shape_preserving, LossVariant::emd_coupled, LossVariant::cd_coupled}) {
    TrainConfig cfg = tiny_config(v);
    cfg.spl_random_start = v == LossVariant::shape_preserving;
    Trainer a(cfg, corpus());
    Trainer b(cfg, corpus());
    EXPECT_TRUE(same_records(run(a, 4), run(b, 4)));
    EXPECT_EQ(a.checkpoint().serialize(), b.checkpoint().serialize());
  }
}

TEST(Trainer, ResumeReproducesUnbrokenTrajectory) {
  TrainConfig cfg = tiny_config();
  cfg.spl_random_start = true;
  Trainer full(cfg, corpus());
  const auto expect = run(full, 6);

  Trainer first(cfg, corpus());
  auto got = run(first, 3);
  const std::string bytes = first.checkpoint().serialize();
  Trainer second(cfg, corpus());
  second.restore(Checkpoint::deserialize(bytes));
  EXPECT_EQ(second.iteration(), 3);
  const auto rest = run(second, 3);
  got.insert(got.end(), rest.begin(), rest.end());
  EXPECT_TRUE(same_records(expect, got));
  EXPECT_EQ(full.checkpoint().serialize(), second.checkpoint().serialize());
}

TEST(Trainer, RestoreRejectsMismatchedShapes) {
  Trainer a(tiny_config(), corpus());
  TrainConfig other = tiny_config();
  other.generator.stages = {{8, 6}, {16, 8}};
  Trainer b(other, corpus());
  EXPECT_THROW(b.restore(a.checkpoint()), FormatError);
}

TEST(Trainer, ConfigValidation) {
  TrainConfig cfg = tiny_config();
  cfg.loss.spl_k = 9;
  EXPECT_THROW(Trainer(cfg, corpus()), std::invalid_argument);
  cfg = tiny_config();
  cfg.adam.lr = 0;
  EXPECT_THROW(Trainer(cfg, corpus()), std::invalid_argument);
  EXPECT_THROW(Trainer(tiny_config(), {}), std::invalid_argument);
}

TEST(Log, FormatRoundTripsDoubles) {
  EXPECT_EQ(log_header(), "iter,stage,loss_D,loss_G,spl");
  LogRecord r{12, 2, 0.1, -1.0 / 3.0, std::numeric_limits<double>::quiet_NaN()};
  const std::string s = format_record(r);
  EXPECT_EQ(s.substr(0, 9), "12,2,0.1,");
  const auto c1 = s.find(',', 9);
  EXPECT_EQ(std::stod(s.substr(9, c1 - 9)), -1.0 / 3.0);
  EXPECT_EQ(s.substr(s.rfind(',') + 1), "nan");
}
