#include "pdgn/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace pdgn::io {

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

template <typename T>
void put_le(std::string& s, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  s.append(buf, sizeof(T));
}

template <typename T>
T get_le(const std::string& s, std::size_t at) {
  T v;
  std::memcpy(&v, s.data() + at, sizeof(T));
  return v;
}

}  // namespace

PointCloud parse_xyz(const std::string& text, const std::string& source) {
  std::vector<double> vals;
  std::size_t pos = 0;
  int lineno = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    ++lineno;
    const std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;

    const char* p = line.data();
    const char* e = line.data() + line.size();
    auto skip_ws = [&] {
      while (p < e && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
    };
    skip_ws();
    if (p == e || *p == '#') continue;
    double xyz[3];
    for (double& v : xyz) {
      skip_ws();
      if (*p == '+') ++p;
      auto res = std::from_chars(p, e, v);
      if (res.ec != std::errc() || (res.ptr < e && !std::isspace(static_cast<unsigned char>(*res.ptr)))) {
        throw ParseError(source + ": line " + std::to_string(lineno) +
                         ": expected three decimal numbers");
      }
      p = res.ptr;
      if (!std::isfinite(v)) {
        throw ParseError(source + ": line " + std::to_string(lineno) + ": non-finite coordinate");
      }
    }
    skip_ws();
    if (p != e) {
      throw ParseError(source + ": line " + std::to_string(lineno) + ": trailing tokens");
    }
    vals.insert(vals.end(), xyz, xyz + 3);
  }
  if (vals.empty()) throw ParseError(source + ": no points");
  const auto n = static_cast<ad::Index>(vals.size() / 3);
  return Eigen::Map<PointCloud>(vals.data(), n, 3);
}

PointCloud parse_pcf1(const std::string& bytes, const std::string& source) {
  if (bytes.size() < 12 || bytes.compare(0, 4, "PCF1") != 0) {
    throw ParseError(source + ": byte 0: missing PCF1 header");
  }
  const auto n = get_le<std::uint64_t>(bytes, 4);
  if (n == 0) throw ParseError(source + ": byte 4: zero point count");
  const std::size_t need = 12 + n * 12;
  if (n > (bytes.size() / 12) || bytes.size() < need) {
    throw ParseError(source + ": byte " + std::to_string(bytes.size()) + ": truncated, expected " +
                     std::to_string(need) + " bytes");
  }
  if (bytes.size() != need) {
    throw ParseError(source + ": byte " + std::to_string(need) + ": trailing data");
  }
  PointCloud c(static_cast<ad::Index>(n), 3);
  for (std::size_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) {
      const std::size_t at = 12 + (i * 3 + a) * 4;
      const float v = get_le<float>(bytes, at);
      if (!std::isfinite(v)) {
        throw ParseError(source + ": byte " + std::to_string(at) + ": non-finite coordinate");
      }
      c(static_cast<ad::Index>(i), a) = v;
    }
  }
  return c;
}

PointCloud load_cloud(const fs::path& path, Format format) {
  const std::string bytes = read_file(path);
  if (format == Format::automatic) {
    format = bytes.compare(0, 4, "PCF1") == 0 ? Format::pcf1 : Format::xyz;
  }
  return format == Format::pcf1 ? parse_pcf1(bytes, path.string())
                                : parse_xyz(bytes, path.string());
}

std::string format_xyz(const PointCloud& cloud) {
  std::string s;
  char buf[64];
  for (ad::Index i = 0; i < cloud.rows(); ++i) {
    for (int a = 0; a < 3; ++a) {
      auto res = std::to_chars(buf, buf + sizeof buf, cloud(i, a));
      s.append(buf, res.ptr);
      s += a == 2 ? '\n' : ' ';
    }
  }
  return s;
}

void save_xyz(const fs::path& path, const PointCloud& cloud) { write_file(path, format_xyz(cloud)); }

void save_pcf1(const fs::path& path, const PointCloud& cloud) {
  std::string s = "PCF1";
  put_le<std::uint64_t>(s, static_cast<std::uint64_t>(cloud.rows()));
  for (ad::Index i = 0; i < cloud.rows(); ++i) {
    for (int a = 0; a < 3; ++a) put_le<float>(s, static_cast<float>(cloud(i, a)));
  }
  write_file(path, s);
}

PointCloud normalize(const PointCloud& cloud, NormalizationRecord* record) {
  if (cloud.rows() < 1) throw std::invalid_argument("normalize: empty cloud");
  NormalizationRecord r;
  r.centroid = cloud.colwise().mean();
  PointCloud out = cloud.rowwise() - r.centroid;
  const double radius = out.rowwise().norm().maxCoeff();
  r.scale = radius > 0 ? radius : 1.0;
  out /= r.scale;
  if (record != nullptr) *record = r;
  return out;
}

PointCloud denormalize(const PointCloud& cloud, const NormalizationRecord& record) {
  PointCloud out = cloud * record.scale;
  out.rowwise() += record.centroid;
  return out;
}

SynthKind parse_synth_kind(const std::string& text) {
  if (text == "sphere") return SynthKind::sphere;
  if (text == "plane") return SynthKind::plane;
  if (text == "two-clusters") return SynthKind::two_clusters;
  throw std::invalid_argument("unknown synthetic kind '" + text +
                              "' (expected sphere, plane or two-clusters)");
}

std::string to_string(SynthKind kind) {
  switch (kind) {
    case SynthKind::sphere:
      return "sphere";
    case SynthKind::plane:
      return "plane";
    case SynthKind::two_clusters:
      return "two-clusters";
  }
  return "?";
}

Corpus synth_corpus(SynthKind kind, std::size_t count, ad::Index points, std::uint64_t seed) {
  if (points < 1) throw std::invalid_argument("synth_corpus: points must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Corpus c;
  for (std::size_t s = 0; s < count; ++s) {
    PointCloud cloud(points, 3);
    for (ad::Index i = 0; i < points; ++i) {
      switch (kind) {
        case SynthKind::sphere: {
          Eigen::RowVector3d v;
          do {
            v << normal(rng), normal(rng), normal(rng);
          } while (v.norm() < 1e-12);
          cloud.row(i) = v / v.norm();
          break;
        }
        case SynthKind::plane:
          cloud.row(i) << 0.7 * unit(rng), 0.7 * unit(rng), 0.0;
          break;
        case SynthKind::two_clusters: {
          Eigen::RowVector3d v;
          do {
            v << unit(rng), unit(rng), unit(rng);
          } while (v.squaredNorm() > 1.0);
          const double cx = (i % 2 == 0) ? -0.5 : 0.5;
          cloud.row(i) = 0.3 * v;
          cloud(i, 0) += cx;
          break;
        }
      }
    }
    char name[32];
    std::snprintf(name, sizeof name, "%s_%05zu", to_string(kind).c_str(), s);
    c.names.emplace_back(name);
    c.clouds.push_back(std::move(cloud));
    c.records.emplace_back();
  }
  return c;
}

Corpus load_corpus_dir(const fs::path& dir, bool normalized) {
  if (!fs::is_directory(dir)) throw std::runtime_error("'" + dir.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension().string();
    if (ext == ".xyz" || ext == ".pcf") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .xyz or .pcf files in '" + dir.string() + "'");
  Corpus c;
  for (const auto& f : files) {
    NormalizationRecord r;
    PointCloud cloud = load_cloud(f);
    c.clouds.push_back(normalized ? normalize(cloud, &r) : std::move(cloud));
    c.records.push_back(r);
    c.names.push_back(f.stem().string());
  }
  return c;
}

}  // namespace pdgn::io
