#pragma once

// Adversarial losses and the cross-resolution shape terms.
//
// The shape-preserving loss compares FPS-centroid neighbourhood statistics
// of adjacent resolutions: d1 is a symmetric-max Chamfer distance between
// neighbourhood means (L2), d2 the same between covariances (Frobenius).

#include "pdgn/generator.hpp"
#include "pdgn/geometry.hpp"
#include "pdgn/tensor.hpp"

#include <random>
#include <string>
#include <string_view>

namespace pdgn::losses {

using ad::Index;
using ad::Tensor;

enum class LossVariant { shape_preserving, plain_adversarial, emd_coupled, cd_coupled };

std::string_view to_string(LossVariant v);
LossVariant parse_variant(std::string_view text);

struct LossConfig {
  double lambda = 0.1;
  Index spl_centroids = 64;
  Index spl_k = 20;
  LossVariant variant = LossVariant::shape_preserving;
  /// Use -log D(G(z)) instead of log(1 - D(G(z))) for the generator.
  bool non_saturating = false;
  /// Stop gradients into the finer resolution of each coupled pair.
  bool detach_finer = false;

  void validate() const;
};

/// How FPS picks its first centroid: the point farthest from the cloud mean,
/// or a uniformly drawn one.
enum class CentroidStart { canonical, random };

/// Differentiable d1 + d2 between two stacked batches of clouds, averaged
/// over the batch. Centroid and neighbourhood selection are made on values.
Tensor spl_pair(const Tensor& coarse, Index coarse_points, const Tensor& fine, Index fine_points,
                Index batch, const LossConfig& cfg, CentroidStart start, std::mt19937_64& rng);

/// Differentiable EMD / CD between each coarse cloud and the fine cloud
/// FPS-downsampled to the coarse size, averaged over the batch.
Tensor emd_pair(const Tensor& coarse, Index coarse_points, const Tensor& fine, Index fine_points,
                Index batch);
Tensor cd_pair(const Tensor& coarse, Index coarse_points, const Tensor& fine, Index fine_points,
               Index batch);

/// Coupling term of the configured variant for resolutions (l, l+1); a
/// plain-adversarial config returns an empty optional and touches no
/// geometry.
std::optional<Tensor> coupling(const generator::MultiResolutionOutput& out, std::size_t level,
                               const LossConfig& cfg, CentroidStart start, std::mt19937_64& rng);

/// Sum over adjacent pairs of d1 + d2, averaged over the batch.
double spl(const generator::MultiResolutionOutput& out, const LossConfig& cfg);

/// Value-level shape-preserving loss for a list of single clouds, one per
/// resolution, using the geometry kernels directly.
double spl(const std::vector<PointCloud>& levels, Index centroids, Index k);

/// -[log D(real) + log(1 - D(fake))], batch-averaged, from logits.
Tensor discriminator_loss(const Tensor& real_logits, const Tensor& fake_logits);

/// log(1 - D(fake)) (saturating) or -log D(fake), batch-averaged, from logits.
Tensor generator_adversarial_loss(const Tensor& fake_logits, bool non_saturating);

}  // namespace pdgn::losses
