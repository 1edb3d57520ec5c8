#include "pdgn/discriminator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace pdgn::discriminator {

std::vector<Index> DiscriminatorConfig::default_widths(std::size_t level) {
  static const std::vector<std::vector<Index>> table = {
      {32, 64, 128}, {64, 128, 256}, {64, 128, 512}, {64, 128, 256, 512}};
  return table[std::min(level, table.size() - 1)];
}

void DiscriminatorConfig::validate(std::size_t resolutions) const {
  if (point_widths.size() != resolutions) {
    throw std::invalid_argument("discriminator config: expected " + std::to_string(resolutions) +
                                " width lists, got " + std::to_string(point_widths.size()));
  }
  for (const auto& w : point_widths) {
    if (w.empty()) throw std::invalid_argument("discriminator config: empty width list");
    for (Index x : w) {
      if (x < 1) throw std::invalid_argument("discriminator config: widths must be positive");
    }
  }
  if (scorer_widths.empty() || scorer_widths.back() != 1) {
    throw std::invalid_argument("discriminator config: scorer widths must end in 1");
  }
}

Discriminator::Discriminator(DiscriminatorConfig cfg, std::vector<Index> resolutions,
                             std::uint64_t init_seed)
    : cfg_(std::move(cfg)), resolutions_(std::move(resolutions)) {
  if (cfg_.point_widths.empty()) {
    for (std::size_t l = 0; l < resolutions_.size(); ++l) {
      cfg_.point_widths.push_back(DiscriminatorConfig::default_widths(l));
    }
  }
  cfg_.validate(resolutions_.size());
  std::mt19937_64 rng(init_seed);
  nets_.reserve(resolutions_.size());
  for (std::size_t l = 0; l < resolutions_.size(); ++l) {
    nn::MlpSpec point;
    point.in = 3;
    point.widths = cfg_.point_widths[l];
    point.hidden = nn::Activation::leaky_relu;
    point.last = nn::Activation::leaky_relu;
    point.batch_norm_hidden = cfg_.batch_norm;
    point.batch_norm_last = cfg_.batch_norm;
    point.leaky_slope = cfg_.leaky_slope;
    point.bn = cfg_.bn;

    nn::MlpSpec scorer;
    scorer.in = point.widths.back();
    scorer.widths = cfg_.scorer_widths;
    scorer.hidden = nn::Activation::leaky_relu;
    scorer.last = nn::Activation::none;
    scorer.batch_norm_hidden = cfg_.batch_norm;
    scorer.leaky_slope = cfg_.leaky_slope;
    scorer.bn = cfg_.bn;

    Net net{nn::Mlp(point, rng), nn::Mlp(scorer, rng), {}};
    net.point.register_into(net.params, "point.");
    net.scorer.register_into(net.params, "scorer.");
    nets_.push_back(std::move(net));
  }
}

void Discriminator::check_input(const Tensor& clouds, Index batch, std::size_t level) const {
  if (level >= nets_.size()) throw std::out_of_range("discriminator: no such resolution");
  if (clouds.cols() != 3) throw ad::ShapeError("discriminator: clouds must have 3 columns");
  const Index n = resolutions_[level];
  if (batch < 1 || clouds.rows() != batch * n) {
    throw std::invalid_argument("discriminator: resolution " + std::to_string(level + 1) +
                                " expects " + std::to_string(n) + " points per cloud, got " +
                                std::to_string(batch > 0 ? clouds.rows() / batch : 0) + " (" +
                                std::to_string(clouds.rows()) + " rows, batch " +
                                std::to_string(batch) + ")");
  }
}

Tensor Discriminator::features(const Tensor& clouds, Index batch, std::size_t level, Mode mode) {
  check_input(clouds, batch, level);
  Net& net = nets_[level];
  const Tensor h = net.point(clouds, mode == Mode::train);
  return ad::segment_max(h, resolutions_[level]);
}

Tensor Discriminator::logits(const Tensor& clouds, Index batch, std::size_t level, Mode mode) {
  const Tensor f = features(clouds, batch, level, mode);
  return nets_[level].scorer(f, mode == Mode::train);
}

double Discriminator::score(const PointCloud& cloud, std::size_t level, Mode mode) {
  const Tensor logit = logits(Tensor(Matrix(cloud)), 1, level, mode);
  const double x = logit.item();
  const double p = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  return std::clamp(p, lo, hi);
}

Eigen::RowVectorXd Discriminator::extract_features(const PointCloud& cloud, std::size_t level,
                                                   Mode mode) {
  return features(Tensor(Matrix(cloud)), 1, level, mode).value().row(0);
}

}  // namespace pdgn::discriminator
