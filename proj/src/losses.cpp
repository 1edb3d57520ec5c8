#include "pdgn/losses.hpp"

#include <stdexcept>

namespace pdgn::losses {

using ad::IndexList;

std::string_view to_string(LossVariant v) {
  switch (v) {
    case LossVariant::shape_preserving:
      return "shape-preserving";
    case LossVariant::plain_adversarial:
      return "plain-adversarial";
    case LossVariant::emd_coupled:
      return "emd-coupled";
    case LossVariant::cd_coupled:
      return "cd-coupled";
  }
  return "?";
}

LossVariant parse_variant(std::string_view text) {
  for (auto v : {LossVariant::shape_preserving, LossVariant::plain_adversarial,
                 LossVariant::emd_coupled, LossVariant::cd_coupled}) {
    if (to_string(v) == text) return v;
  }
  throw std::invalid_argument("unknown loss variant '" + std::string(text) + "'");
}

void LossConfig::validate() const {
  if (!(lambda >= 0)) throw std::invalid_argument("loss config: lambda must be >= 0");
  if (spl_centroids < 1) throw std::invalid_argument("loss config: spl_centroids must be >= 1");
  if (spl_k < 2) throw std::invalid_argument("loss config: spl_k must be >= 2");
}

namespace {

struct Stats {
  Tensor mean;  // (B*m) x 3
  Tensor cov;   // (B*m) x 9, row-major 3x3
  Index per_cloud = 0;
};

Stats centroid_stats(const Tensor& coords, Index points, Index batch, Index centroids, Index k,
                     CentroidStart start, std::mt19937_64& rng) {
  const Index m = std::min(centroids, points);
  if (k > points) {
    throw std::invalid_argument("spl: neighbourhood size " + std::to_string(k) + " exceeds " +
                                std::to_string(points) + " points");
  }
  const ad::Matrix& v = coords.value();
  IndexList gather;
  gather.reserve(static_cast<std::size_t>(batch * m * k));
  for (Index b = 0; b < batch; ++b) {
    const auto cloud = v.middleRows(b * points, points);
    const auto picked = start == CentroidStart::random ? geometry::fps_random_start(cloud, m, rng)
                                                       : geometry::fps(cloud, m, geometry::canonical_seed(cloud));
    for (Index c : picked) {
      for (Index j : geometry::spatial_neighbors(cloud, c, k)) gather.push_back(b * points + j);
    }
  }
  const Tensor nbrs = ad::gather_rows(coords, gather);
  const Tensor mu = ad::segment_mean(nbrs, k);
  IndexList expand(gather.size());
  for (std::size_t r = 0; r < expand.size(); ++r) expand[r] = static_cast<Index>(r) / k;
  const Tensor centered = nbrs - ad::gather_rows(mu, expand);
  static const IndexList left = {0, 0, 0, 1, 1, 1, 2, 2, 2};
  static const IndexList right = {0, 1, 2, 0, 1, 2, 0, 1, 2};
  const Tensor outer = ad::gather_cols(centered, left) * ad::gather_cols(centered, right);
  const Tensor cov = ad::scale(ad::segment_sum(outer, k), 1.0 / static_cast<double>(k - 1));
  return {mu, cov, m};
}

// Per-cloud max of the two directed mean nearest-neighbour distances
// between row sets a (B*ma rows) and b (B*mb rows). Returns B x 1.
Tensor symmetric_chamfer(const Tensor& a, Index ma, const Tensor& b, Index mb, Index batch) {
  IndexList ai, bi;
  ai.reserve(static_cast<std::size_t>(batch * ma * mb));
  bi.reserve(ai.capacity());
  for (Index s = 0; s < batch; ++s) {
    for (Index i = 0; i < ma; ++i) {
      for (Index j = 0; j < mb; ++j) {
        ai.push_back(s * ma + i);
        bi.push_back(s * mb + j);
      }
    }
  }
  const Tensor d_ab = ad::row_norm(ad::gather_rows(a, ai) - ad::gather_rows(b, bi));
  const Tensor ab = ad::segment_mean(ad::reduce_min(ad::reshape(d_ab, batch * ma, mb), 1), ma);

  ai.clear();
  bi.clear();
  for (Index s = 0; s < batch; ++s) {
    for (Index j = 0; j < mb; ++j) {
      for (Index i = 0; i < ma; ++i) {
        ai.push_back(s * ma + i);
        bi.push_back(s * mb + j);
      }
    }
  }
  const Tensor d_ba = ad::row_norm(ad::gather_rows(b, bi) - ad::gather_rows(a, ai));
  const Tensor ba = ad::segment_mean(ad::reduce_min(ad::reshape(d_ba, batch * mb, ma), 1), mb);
  return ad::maximum(ab, ba);
}

// Fine cloud b, FPS-downsampled to `target` points (rows, global).
IndexList downsample_rows(const ad::Matrix& fine, Index fine_points, Index batch, Index target) {
  IndexList rows;
  rows.reserve(static_cast<std::size_t>(batch * target));
  for (Index b = 0; b < batch; ++b) {
    const auto cloud = fine.middleRows(b * fine_points, fine_points);
    for (Index j : geometry::fps(cloud, target, geometry::canonical_seed(cloud))) {
      rows.push_back(b * fine_points + j);
    }
  }
  return rows;
}

}  // namespace

Tensor spl_pair(const Tensor& coarse, Index coarse_points, const Tensor& fine, Index fine_points,
                Index batch, const LossConfig& cfg, CentroidStart start, std::mt19937_64& rng) {
  const Tensor finer = cfg.detach_finer ? fine.detach() : fine;
  const Stats a =
      centroid_stats(coarse, coarse_points, batch, cfg.spl_centroids, cfg.spl_k, start, rng);
  const Stats b =
      centroid_stats(finer, fine_points, batch, cfg.spl_centroids, cfg.spl_k, start, rng);
  const Tensor d1 = symmetric_chamfer(a.mean, a.per_cloud, b.mean, b.per_cloud, batch);
  const Tensor d2 = symmetric_chamfer(a.cov, a.per_cloud, b.cov, b.per_cloud, batch);
  return ad::mean(d1 + d2);
}

Tensor emd_pair(const Tensor& coarse, Index coarse_points, const Tensor& fine, Index fine_points,
                Index batch) {
  const Tensor down =
      ad::gather_rows(fine, downsample_rows(fine.value(), fine_points, batch, coarse_points));
  IndexList match;
  match.reserve(static_cast<std::size_t>(batch * coarse_points));
  for (Index b = 0; b < batch; ++b) {
    const auto assign =
        geometry::emd_matching(coarse.value().middleRows(b * coarse_points, coarse_points),
                               down.value().middleRows(b * coarse_points, coarse_points));
    for (Index j : assign) match.push_back(b * coarse_points + j);
  }
  const Tensor dist = ad::row_norm(coarse - ad::gather_rows(down, match));
  return ad::mean(dist);
}

Tensor cd_pair(const Tensor& coarse, Index coarse_points, const Tensor& fine, Index fine_points,
               Index batch) {
  const Tensor down =
      ad::gather_rows(fine, downsample_rows(fine.value(), fine_points, batch, coarse_points));
  Tensor total;
  for (Index b = 0; b < batch; ++b) {
    const Tensor d = ad::pairwise_sqdist(ad::slice_rows(coarse, b * coarse_points, coarse_points),
                                         ad::slice_rows(down, b * coarse_points, coarse_points));
    const Tensor cd = ad::mean(ad::reduce_min(d, 1)) + ad::mean(ad::reduce_min(d, 0));
    total = b == 0 ? cd : total + cd;
  }
  return ad::scale(total, 1.0 / static_cast<double>(batch));
}

std::optional<Tensor> coupling(const generator::MultiResolutionOutput& out, std::size_t level,
                               const LossConfig& cfg, CentroidStart start, std::mt19937_64& rng) {
  if (level + 1 >= out.levels.size()) return std::nullopt;
  const auto& lo = out.levels[level];
  const auto& hi = out.levels[level + 1];
  switch (cfg.variant) {
    case LossVariant::plain_adversarial:
      return std::nullopt;
    case LossVariant::shape_preserving:
      return spl_pair(lo.coords, lo.points, hi.coords, hi.points, out.batch, cfg, start, rng);
    case LossVariant::emd_coupled:
      return emd_pair(lo.coords, lo.points,
                      cfg.detach_finer ? hi.coords.detach() : hi.coords, hi.points, out.batch);
    case LossVariant::cd_coupled:
      return cd_pair(lo.coords, lo.points, cfg.detach_finer ? hi.coords.detach() : hi.coords,
                     hi.points, out.batch);
  }
  return std::nullopt;
}

double spl(const generator::MultiResolutionOutput& out, const LossConfig& cfg) {
  if (out.levels.size() < 2) throw std::invalid_argument("spl: needs at least two resolutions");
  std::mt19937_64 unused(0);
  double total = 0;
  for (std::size_t l = 0; l + 1 < out.levels.size(); ++l) {
    const auto& lo = out.levels[l];
    const auto& hi = out.levels[l + 1];
    total += spl_pair(lo.coords.detach(), lo.points, hi.coords.detach(), hi.points, out.batch, cfg,
                      CentroidStart::canonical, unused)
                 .item();
  }
  return total;
}

double spl(const std::vector<PointCloud>& levels, Index centroids, Index k) {
  if (levels.size() < 2) throw std::invalid_argument("spl: needs at least two resolutions");
  double total = 0;
  std::vector<geometry::CentroidSet<double>> sets;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const Index m = std::min<Index>(centroids, levels[l].rows());
    sets.push_back(geometry::neighborhood_stats(levels[l], geometry::fps(levels[l], m, geometry::canonical_seed(levels[l])), k,
                                                static_cast<int>(l)));
  }
  for (std::size_t l = 0; l + 1 < sets.size(); ++l) {
    total += geometry::stats_chamfer_mean(sets[l], sets[l + 1]) +
             geometry::stats_chamfer_cov(sets[l], sets[l + 1]);
  }
  return total;
}

Tensor discriminator_loss(const Tensor& real_logits, const Tensor& fake_logits) {
  // -log sigmoid(x) = softplus(-x);  -log(1 - sigmoid(x)) = softplus(x)
  return ad::mean(ad::softplus(-real_logits)) + ad::mean(ad::softplus(fake_logits));
}

Tensor generator_adversarial_loss(const Tensor& fake_logits, bool non_saturating) {
  if (non_saturating) return ad::mean(ad::softplus(-fake_logits));
  return -ad::mean(ad::softplus(fake_logits));
}

}  // namespace pdgn::losses
