#pragma once

// Set-level generative metrics: JSD over voxel occupancy, MMD, COV and
// 1-NNA under Chamfer or earth mover's distance.

#include "pdgn/geometry.hpp"

#include <optional>
#include <string>
#include <vector>

namespace pdgn::metrics {

using CloudSet = std::vector<PointCloud>;

enum class DistanceKind { cd, emd };

struct DistanceOptions {
  DistanceKind kind = DistanceKind::cd;
  geometry::EmdOptions emd;
  /// Worker threads for the distance matrix; results do not depend on it.
  unsigned workers = 1;
};

/// rows x cols distances between every cloud of `rows` and of `cols`.
Eigen::MatrixXd distance_matrix(const CloudSet& rows, const CloudSet& cols,
                                const DistanceOptions& opt);

/// JSD (natural log) between pooled voxel-occupancy histograms over [-1,1]^3.
double jsd(const CloudSet& gen, const CloudSet& ref, int grid = 28);

/// Mean over ref of the distance to the nearest gen cloud.
double mmd(const CloudSet& gen, const CloudSet& ref, const DistanceOptions& opt);
double mmd(const Eigen::MatrixXd& gen_ref);

/// Fraction of distinct ref clouds that are the nearest ref of some gen cloud.
double cov(const CloudSet& gen, const CloudSet& ref, const DistanceOptions& opt);
double cov(const Eigen::MatrixXd& gen_ref);

/// Leave-one-out 1-NN accuracy over gen U ref; ties go to the other set.
double one_nna(const CloudSet& gen, const CloudSet& ref, const DistanceOptions& opt);
double one_nna(const Eigen::MatrixXd& gen_gen, const Eigen::MatrixXd& ref_ref,
               const Eigen::MatrixXd& gen_ref);

struct MetricReport {
  std::optional<double> jsd, mmd_cd, mmd_emd, cov_cd, cov_emd, nna_cd, nna_emd;

  /// `key = value` lines; raw values first, then `display.*` with the usual
  /// scalings (JSD x1e2, MMD-CD x1e3, MMD-EMD x1e2).
  std::string serialize() const;
  static MetricReport parse(const std::string& text);
};

struct EvaluateOptions {
  int jsd_grid = 28;
  unsigned workers = 1;
  geometry::EmdOptions emd;
};

/// Computes the named metrics (subset of jsd, mmd-cd, mmd-emd, cov-cd,
/// cov-emd, 1nna-cd, 1nna-emd; "all" for every one).
MetricReport evaluate(const CloudSet& gen, const CloudSet& ref,
                      const std::vector<std::string>& names, const EvaluateOptions& opt = {});

}  // namespace pdgn::metrics
