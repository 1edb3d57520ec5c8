#pragma once

// Per-resolution PointNet-style discriminators: shared per-point MLP,
// channel-wise max-pool per cloud, then a small scorer producing a logit.

#include "pdgn/geometry.hpp"
#include "pdgn/nn.hpp"

#include <random>
#include <vector>

namespace pdgn::discriminator {

using ad::Index;
using ad::Matrix;
using ad::Tensor;

enum class Mode { train, eval };

struct DiscriminatorConfig {
  /// Per-point MLP widths, one list per resolution (coarsest first).
  std::vector<std::vector<Index>> point_widths;
  /// Scorer widths after pooling; must end in 1.
  std::vector<Index> scorer_widths = {128, 1};
  bool batch_norm = true;
  double leaky_slope = 0.2;
  nn::BatchNormConfig bn;

  /// Default per-point widths for resolution `level`; coarser resolutions
  /// get shallower stacks.
  static std::vector<Index> default_widths(std::size_t level);
  void validate(std::size_t resolutions) const;
};

class Discriminator {
 public:
  Discriminator(DiscriminatorConfig cfg, std::vector<Index> resolutions, std::uint64_t init_seed);

  /// Pooled per-cloud features ((B) x width) for a stacked batch of clouds.
  Tensor features(const Tensor& clouds, Index batch, std::size_t level, Mode mode);
  /// Real/fake logits (B x 1).
  Tensor logits(const Tensor& clouds, Index batch, std::size_t level, Mode mode);

  /// Probability that a single cloud is real, strictly inside (0, 1).
  double score(const PointCloud& cloud, std::size_t level, Mode mode = Mode::eval);
  Eigen::RowVectorXd extract_features(const PointCloud& cloud, std::size_t level,
                                      Mode mode = Mode::eval);

  std::size_t levels() const { return nets_.size(); }
  Index resolution(std::size_t level) const { return resolutions_.at(level); }
  nn::ParameterSet& parameters(std::size_t level) { return nets_.at(level).params; }
  const nn::ParameterSet& parameters(std::size_t level) const { return nets_.at(level).params; }
  nn::Mlp& point_mlp(std::size_t level) { return nets_.at(level).point; }
  nn::Mlp& scorer(std::size_t level) { return nets_.at(level).scorer; }
  const DiscriminatorConfig& config() const { return cfg_; }

 private:
  struct Net {
    nn::Mlp point;
    nn::Mlp scorer;
    nn::ParameterSet params;
  };
  void check_input(const Tensor& clouds, Index batch, std::size_t level) const;

  DiscriminatorConfig cfg_;
  std::vector<Index> resolutions_;
  std::vector<Net> nets_;
};

}  // namespace pdgn::discriminator
