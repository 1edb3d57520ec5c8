#pragma once

// Non-learned spatial and feature-space kernels: Gaussian feature
// similarity, k-NN graphs, farthest point sampling, neighbourhood
// mean/covariance, and point-set distances. Brute force throughout.

#include "pdgn/assignment.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pdgn {

using Index = Eigen::Index;

template <typename Scalar>
using Points = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;
template <typename Scalar>
using FeatureMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using IndexMatrix = Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using PointCloud = Points<double>;
using FeatureMap = FeatureMatrix<double>;

}  // namespace pdgn

namespace pdgn::geometry {

template <typename Scalar>
struct NeighborGraph {
  Index k = 0;
  IndexMatrix indices;                 // N x k, most similar first
  FeatureMatrix<Scalar> similarities;  // N x k, values a_ij in (0, 1]
};

template <typename Scalar>
struct NeighborhoodStats {
  Index centroid = 0;
  Eigen::Matrix<Scalar, 3, 1> mean;
  Eigen::Matrix<Scalar, 3, 3> covariance;
};

template <typename Scalar>
struct CentroidSet {
  int resolution = 0;
  std::vector<NeighborhoodStats<Scalar>> stats;
};

enum class DistanceForm { squared, euclidean };

/// exp(-beta * |a - b|^2)
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar similarity(const Eigen::MatrixBase<DerivedA>& a,
                                     const Eigen::MatrixBase<DerivedB>& b,
                                     typename DerivedA::Scalar beta) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("similarity: dimension mismatch " + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()));
  }
  if (!(beta > 0)) throw std::invalid_argument("similarity: beta must be positive");
  using std::exp;
  return exp(-beta * (a.derived().array() - b.derived().array()).square().sum());
}

namespace detail {

// Indices of the k smallest entries of `dist`, ordered by (distance, index).
template <typename Scalar>
std::vector<Index> k_smallest(const std::vector<Scalar>& dist, Index k, Index skip = -1) {
  std::vector<Index> order;
  order.reserve(dist.size());
  for (Index j = 0; j < static_cast<Index>(dist.size()); ++j) {
    if (j != skip) order.push_back(j);
  }
  auto less = [&](Index x, Index y) {
    const Scalar dx = dist[static_cast<std::size_t>(x)];
    const Scalar dy = dist[static_cast<std::size_t>(y)];
    return dx < dy || (dx == dy && x < y);
  };
  std::partial_sort(order.begin(), order.begin() + k, order.end(), less);
  order.resize(static_cast<std::size_t>(k));
  return order;
}

template <typename Derived>
void require_nonempty(const Eigen::MatrixBase<Derived>& m, const char* what) {
  if (m.rows() == 0) throw std::invalid_argument(std::string(what) + ": empty point set");
}

}  // namespace detail

/// Per row, the k most similar *other* rows under exp(-beta |xi - xj|^2),
/// ordered by decreasing similarity; ties go to the lower index.
template <typename Derived>
NeighborGraph<typename Derived::Scalar> knn_graph(const Eigen::MatrixBase<Derived>& features,
                                                  Index k, typename Derived::Scalar beta) {
  using Scalar = typename Derived::Scalar;
  const Index n = features.rows();
  if (k < 1) throw std::invalid_argument("knn_graph: k must be at least 1");
  if (k >= n) {
    throw std::invalid_argument("knn_graph: k=" + std::to_string(k) + " needs more than " +
                                std::to_string(k) + " points, got " + std::to_string(n));
  }
  if (!(beta > 0)) throw std::invalid_argument("knn_graph: beta must be positive");
  NeighborGraph<Scalar> g;
  g.k = k;
  g.indices.resize(n, k);
  g.similarities.resize(n, k);
  std::vector<Scalar> dist(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      dist[static_cast<std::size_t>(j)] = (features.row(i) - features.row(j)).squaredNorm();
    }
    const auto nearest = detail::k_smallest(dist, k, i);
    for (Index s = 0; s < k; ++s) {
      const Index j = nearest[static_cast<std::size_t>(s)];
      g.indices(i, s) = j;
      using std::exp;
      g.similarities(i, s) = exp(-beta * dist[static_cast<std::size_t>(j)]);
    }
  }
  return g;
}

/// Greedy farthest point sampling starting at `seed_index`. Each new index
/// maximises its minimum distance to the selected set; ties pick the
/// lowest index.
template <typename Derived>
std::vector<Index> fps(const Eigen::MatrixBase<Derived>& cloud, Index m, Index seed_index = 0) {
  using Scalar = typename Derived::Scalar;
  const Index n = cloud.rows();
  if (m < 1) throw std::invalid_argument("fps: sample count must be at least 1");
  if (m > n) {
    throw std::invalid_argument("fps: cannot pick " + std::to_string(m) + " of " +
                                std::to_string(n) + " points");
  }
  if (seed_index < 0 || seed_index >= n) throw std::invalid_argument("fps: seed index out of range");
  std::vector<Index> picked;
  picked.reserve(static_cast<std::size_t>(m));
  std::vector<Scalar> min_d(static_cast<std::size_t>(n), std::numeric_limits<Scalar>::infinity());
  Index cur = seed_index;
  for (Index s = 0; s < m; ++s) {
    picked.push_back(cur);
    min_d[static_cast<std::size_t>(cur)] = Scalar(-1);
    Index best = -1;
    Scalar best_d = Scalar(-1);
    for (Index j = 0; j < n; ++j) {
      Scalar& dj = min_d[static_cast<std::size_t>(j)];
      if (dj < 0) continue;
      dj = std::min(dj, static_cast<Scalar>((cloud.row(j) - cloud.row(cur)).squaredNorm()));
      if (dj > best_d) {
        best_d = dj;
        best = j;
      }
    }
    cur = best;
  }
  return picked;
}

/// Index of the point farthest from the cloud mean, lowest index on ties.
/// Seeding FPS here makes the selected set independent of point order.
template <typename Derived>
Index canonical_seed(const Eigen::MatrixBase<Derived>& cloud) {
  using Scalar = typename Derived::Scalar;
  detail::require_nonempty(cloud, "canonical_seed");
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mean = cloud.colwise().mean();
  Index best = 0;
  Scalar best_d = Scalar(-1);
  for (Index i = 0; i < cloud.rows(); ++i) {
    const Scalar d = (cloud.row(i) - mean).squaredNorm();
    if (d > best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

/// FPS with a seed index drawn from `rng`.
template <typename Derived, typename Rng>
std::vector<Index> fps_random_start(const Eigen::MatrixBase<Derived>& cloud, Index m, Rng& rng) {
  if (cloud.rows() == 0) throw std::invalid_argument("fps: empty cloud");
  std::uniform_int_distribution<Index> pick(0, cloud.rows() - 1);
  return fps(cloud, m, pick(rng));
}

/// The k spatially nearest points to cloud[center], the center first.
template <typename Derived>
std::vector<Index> spatial_neighbors(const Eigen::MatrixBase<Derived>& cloud, Index center,
                                     Index k) {
  using Scalar = typename Derived::Scalar;
  const Index n = cloud.rows();
  std::vector<Scalar> dist(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) {
    dist[static_cast<std::size_t>(j)] = (cloud.row(j) - cloud.row(center)).squaredNorm();
  }
  auto rest = detail::k_smallest(dist, k - 1, center);
  rest.insert(rest.begin(), center);
  return rest;
}

/// Mean and covariance (k-1 denominator) of each centroid's k-point
/// spatial neighbourhood.
template <typename Derived>
CentroidSet<typename Derived::Scalar> neighborhood_stats(const Eigen::MatrixBase<Derived>& cloud,
                                                         const std::vector<Index>& centroids,
                                                         Index k, int resolution = 0) {
  using Scalar = typename Derived::Scalar;
  if (k < 2) throw std::invalid_argument("neighborhood_stats: k must be at least 2");
  if (k > cloud.rows()) {
    throw std::invalid_argument("neighborhood_stats: k=" + std::to_string(k) + " exceeds " +
                                std::to_string(cloud.rows()) + " points");
  }
  CentroidSet<Scalar> out;
  out.resolution = resolution;
  out.stats.reserve(centroids.size());
  for (Index c : centroids) {
    if (c < 0 || c >= cloud.rows()) throw std::invalid_argument("neighborhood_stats: bad centroid");
    const auto nbrs = spatial_neighbors(cloud, c, k);
    NeighborhoodStats<Scalar> s;
    s.centroid = c;
    s.mean.setZero();
    for (Index j : nbrs) s.mean += cloud.row(j).transpose();
    s.mean /= static_cast<Scalar>(k);
    s.covariance.setZero();
    for (Index j : nbrs) {
      const Eigen::Matrix<Scalar, 3, 1> d = cloud.row(j).transpose() - s.mean;
      s.covariance += d * d.transpose();
    }
    s.covariance /= static_cast<Scalar>(k - 1);
    out.stats.push_back(s);
  }
  return out;
}

namespace detail {

// max of the two directed mean nearest-neighbour distances.
template <typename Scalar, typename Dist>
Scalar symmetric_max_chamfer(Index na, Index nb, Dist dist) {
  std::vector<Scalar> a_best(static_cast<std::size_t>(na), std::numeric_limits<Scalar>::infinity());
  std::vector<Scalar> b_best(static_cast<std::size_t>(nb), std::numeric_limits<Scalar>::infinity());
  for (Index i = 0; i < na; ++i) {
    for (Index j = 0; j < nb; ++j) {
      const Scalar d = dist(i, j);
      a_best[static_cast<std::size_t>(i)] = std::min(a_best[static_cast<std::size_t>(i)], d);
      b_best[static_cast<std::size_t>(j)] = std::min(b_best[static_cast<std::size_t>(j)], d);
    }
  }
  const Scalar fa = std::accumulate(a_best.begin(), a_best.end(), Scalar(0)) / Scalar(na);
  const Scalar fb = std::accumulate(b_best.begin(), b_best.end(), Scalar(0)) / Scalar(nb);
  return std::max(fa, fb);
}

template <typename Scalar>
void require_nonempty(const CentroidSet<Scalar>& s, const char* what) {
  if (s.stats.empty()) throw std::invalid_argument(std::string(what) + ": empty centroid set");
}

}  // namespace detail

/// Chamfer distance between neighbourhood means (unsquared L2, max of the
/// two directions).
template <typename Scalar>
Scalar stats_chamfer_mean(const CentroidSet<Scalar>& a, const CentroidSet<Scalar>& b) {
  detail::require_nonempty(a, "stats_chamfer_mean");
  detail::require_nonempty(b, "stats_chamfer_mean");
  return detail::symmetric_max_chamfer<Scalar>(
      static_cast<Index>(a.stats.size()), static_cast<Index>(b.stats.size()),
      [&](Index i, Index j) {
        return (a.stats[static_cast<std::size_t>(i)].mean - b.stats[static_cast<std::size_t>(j)].mean)
            .norm();
      });
}

/// Chamfer distance between neighbourhood covariances under the Frobenius norm.
template <typename Scalar>
Scalar stats_chamfer_cov(const CentroidSet<Scalar>& a, const CentroidSet<Scalar>& b) {
  detail::require_nonempty(a, "stats_chamfer_cov");
  detail::require_nonempty(b, "stats_chamfer_cov");
  return detail::symmetric_max_chamfer<Scalar>(
      static_cast<Index>(a.stats.size()), static_cast<Index>(b.stats.size()),
      [&](Index i, Index j) {
        return (a.stats[static_cast<std::size_t>(i)].covariance -
                b.stats[static_cast<std::size_t>(j)].covariance)
            .norm();
      });
}

/// Mean nearest-neighbour distance from A to B plus the same from B to A.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar chamfer_distance(const Eigen::MatrixBase<DerivedA>& a,
                                           const Eigen::MatrixBase<DerivedB>& b,
                                           DistanceForm form = DistanceForm::squared) {
  using Scalar = typename DerivedA::Scalar;
  detail::require_nonempty(a, "chamfer_distance");
  detail::require_nonempty(b, "chamfer_distance");
  if (a.cols() != b.cols()) throw std::invalid_argument("chamfer_distance: dimension mismatch");
  const Index na = a.rows();
  const Index nb = b.rows();
  std::vector<Scalar> a_best(static_cast<std::size_t>(na), std::numeric_limits<Scalar>::infinity());
  std::vector<Scalar> b_best(static_cast<std::size_t>(nb), std::numeric_limits<Scalar>::infinity());
  for (Index i = 0; i < na; ++i) {
    for (Index j = 0; j < nb; ++j) {
      const Scalar d = (a.row(i) - b.row(j)).squaredNorm();
      a_best[static_cast<std::size_t>(i)] = std::min(a_best[static_cast<std::size_t>(i)], d);
      b_best[static_cast<std::size_t>(j)] = std::min(b_best[static_cast<std::size_t>(j)], d);
    }
  }
  if (form == DistanceForm::euclidean) {
    using std::sqrt;
    for (auto& d : a_best) d = sqrt(d);
    for (auto& d : b_best) d = sqrt(d);
  }
  return std::accumulate(a_best.begin(), a_best.end(), Scalar(0)) / Scalar(na) +
         std::accumulate(b_best.begin(), b_best.end(), Scalar(0)) / Scalar(nb);
}

struct EmdOptions {
  DistanceForm form = DistanceForm::euclidean;
  /// Clouds larger than this use the auction solver.
  Index exact_limit = 512;
  /// Auction tolerance as a fraction of the median pairwise cost.
  double auction_relative_eps = 1e-3;
};

template <typename DerivedA, typename DerivedB>
FeatureMatrix<typename DerivedA::Scalar> pairwise_cost(const Eigen::MatrixBase<DerivedA>& a,
                                                       const Eigen::MatrixBase<DerivedB>& b,
                                                       DistanceForm form) {
  using Scalar = typename DerivedA::Scalar;
  FeatureMatrix<Scalar> cost(a.rows(), b.rows());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < b.rows(); ++j) {
      const Scalar d2 = (a.row(i) - b.row(j)).squaredNorm();
      using std::sqrt;
      cost(i, j) = form == DistanceForm::squared ? d2 : sqrt(d2);
    }
  }
  return cost;
}

/// Optimal bijection between equal-size clouds: assign[i] is the point of B
/// matched to point i of A.
template <typename DerivedA, typename DerivedB>
std::vector<Index> emd_matching(const Eigen::MatrixBase<DerivedA>& a,
                                const Eigen::MatrixBase<DerivedB>& b, const EmdOptions& opt = {}) {
  using Scalar = typename DerivedA::Scalar;
  if (a.rows() != b.rows()) {
    throw std::invalid_argument("emd: clouds differ in size (" + std::to_string(a.rows()) +
                                " vs " + std::to_string(b.rows()) + ")");
  }
  detail::require_nonempty(a, "emd");
  const auto cost = pairwise_cost(a, b, opt.form);
  if (a.rows() <= opt.exact_limit) return assignment::solve_exact(cost);
  std::vector<Scalar> all(cost.data(), cost.data() + cost.size());
  auto mid = all.begin() + static_cast<std::ptrdiff_t>(all.size() / 2);
  std::nth_element(all.begin(), mid, all.end());
  const Scalar median = *mid;
  const Scalar eps = median > 0 ? static_cast<Scalar>(opt.auction_relative_eps) * median
                                : std::numeric_limits<Scalar>::epsilon();
  return assignment::solve_auction(cost, eps);
}

/// Mean per-point transport cost under the optimal bijection.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar emd(const Eigen::MatrixBase<DerivedA>& a,
                              const Eigen::MatrixBase<DerivedB>& b, const EmdOptions& opt = {}) {
  using Scalar = typename DerivedA::Scalar;
  const auto match = emd_matching(a, b, opt);
  Scalar total = 0;
  for (Index i = 0; i < a.rows(); ++i) {
    const Scalar d2 = (a.row(i) - b.row(match[static_cast<std::size_t>(i)])).squaredNorm();
    using std::sqrt;
    total += opt.form == DistanceForm::squared ? d2 : sqrt(d2);
  }
  return total / Scalar(a.rows());
}

}  // namespace pdgn::geometry
