#pragma once

// Point-cloud files, normalization and synthetic corpora.
//
// XYZ:  one "x y z" triple per line, whitespace separated.
// PCF1: "PCF1" | u64 count | 3*count f32, all little-endian.

#include "pdgn/geometry.hpp"
#include "pdgn/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace pdgn::io {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Format { automatic, xyz, pcf1 };

PointCloud load_cloud(const std::filesystem::path& path, Format format = Format::automatic);
PointCloud parse_xyz(const std::string& text, const std::string& source = "<memory>");
PointCloud parse_pcf1(const std::string& bytes, const std::string& source = "<memory>");

void save_xyz(const std::filesystem::path& path, const PointCloud& cloud);
void save_pcf1(const std::filesystem::path& path, const PointCloud& cloud);
std::string format_xyz(const PointCloud& cloud);

struct NormalizationRecord {
  Eigen::RowVector3d centroid = Eigen::RowVector3d::Zero();
  double scale = 1.0;
};

/// Centres on the centroid and divides by the largest point norm.
PointCloud normalize(const PointCloud& cloud, NormalizationRecord* record = nullptr);
PointCloud denormalize(const PointCloud& cloud, const NormalizationRecord& record);

struct Corpus {
  std::vector<std::string> names;
  std::vector<PointCloud> clouds;  // normalized
  std::vector<NormalizationRecord> records;
};

enum class SynthKind { sphere, plane, two_clusters };
SynthKind parse_synth_kind(const std::string& text);
std::string to_string(SynthKind kind);

/// Samples inside the unit ball: sphere points have unit norm, planes lie in
/// z = 0 within [-0.7,0.7]^2, two-clusters are balls of radius 0.3 centred
/// at x = -0.5 and x = 0.5 (alternating points).
Corpus synth_corpus(SynthKind kind, std::size_t count, ad::Index points, std::uint64_t seed);

/// Every .xyz / .pcf file of `dir` in file-name order, normalized unless
/// `normalized` is false.
Corpus load_corpus_dir(const std::filesystem::path& dir, bool normalized = true);

}  // namespace pdgn::io
