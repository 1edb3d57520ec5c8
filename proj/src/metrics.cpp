#include "pdgn/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace pdgn::metrics {

namespace {

void require_nonempty(const CloudSet& s, const char* what) {
  if (s.empty()) throw std::invalid_argument(std::string(what) + ": empty cloud set");
}

double pair_distance(const PointCloud& a, const PointCloud& b, const DistanceOptions& opt) {
  if (opt.kind == DistanceKind::cd) return geometry::chamfer_distance(a, b);
  return geometry::emd(a, b, opt.emd);
}

void check_emd_sizes(const CloudSet& a, const CloudSet& b, const DistanceOptions& opt) {
  if (opt.kind != DistanceKind::emd) return;
  const Index n = a.front().rows();
  auto same = [n](const PointCloud& c) { return c.rows() == n; };
  if (!std::all_of(a.begin(), a.end(), same) || !std::all_of(b.begin(), b.end(), same)) {
    throw std::invalid_argument("EMD metrics need clouds of equal size");
  }
}

std::string format(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

Eigen::MatrixXd distance_matrix(const CloudSet& rows, const CloudSet& cols,
                                const DistanceOptions& opt) {
  require_nonempty(rows, "distance_matrix");
  require_nonempty(cols, "distance_matrix");
  check_emd_sizes(rows, cols, opt);
  const auto n = static_cast<Index>(rows.size());
  const auto m = static_cast<Index>(cols.size());
  Eigen::MatrixXd d(n, m);
  auto fill = [&](Index begin, Index end) {
    for (Index i = begin; i < end; ++i) {
      for (Index j = 0; j < m; ++j) {
        d(i, j) = pair_distance(rows[static_cast<std::size_t>(i)], cols[static_cast<std::size_t>(j)],
                                opt);
      }
    }
  };
  const Index workers = std::clamp<Index>(opt.workers, 1, n);
  if (workers == 1) {
    fill(0, n);
    return d;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (Index w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        fill(n * w / workers, n * (w + 1) / workers);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return d;
}

double jsd(const CloudSet& gen, const CloudSet& ref, int grid) {
  require_nonempty(gen, "jsd");
  require_nonempty(ref, "jsd");
  if (grid < 1) throw std::invalid_argument("jsd: grid resolution must be >= 1");
  const std::size_t cells = static_cast<std::size_t>(grid) * grid * grid;
  auto histogram = [&](const CloudSet& set) {
    std::vector<double> h(cells, 0.0);
    double total = 0;
    for (const auto& c : set) {
      for (Index i = 0; i < c.rows(); ++i) {
        std::size_t cell = 0;
        for (int a = 0; a < 3; ++a) {
          const double t = (c(i, a) + 1.0) / 2.0 * grid;
          const int v = std::clamp(static_cast<int>(std::floor(t)), 0, grid - 1);
          cell = cell * static_cast<std::size_t>(grid) + static_cast<std::size_t>(v);
        }
        h[cell] += 1;
        total += 1;
      }
    }
    if (total == 0) throw std::invalid_argument("jsd: cloud set has no points");
    for (auto& x : h) x = x > 0 ? x / total : 1e-12;
    return h;
  };
  const auto p = histogram(gen);
  const auto q = histogram(ref);
  double out = 0;
  for (std::size_t i = 0; i < cells; ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    out += 0.5 * p[i] * std::log(p[i] / m) + 0.5 * q[i] * std::log(q[i] / m);
  }
  return std::max(out, 0.0);
}

double mmd(const Eigen::MatrixXd& gen_ref) {
  if (gen_ref.size() == 0) throw std::invalid_argument("mmd: empty cloud set");
  return gen_ref.colwise().minCoeff().mean();
}

double mmd(const CloudSet& gen, const CloudSet& ref, const DistanceOptions& opt) {
  return mmd(distance_matrix(gen, ref, opt));
}

double cov(const Eigen::MatrixXd& gen_ref) {
  if (gen_ref.size() == 0) throw std::invalid_argument("cov: empty cloud set");
  std::set<Index> matched;
  for (Index g = 0; g < gen_ref.rows(); ++g) {
    Index best = 0;
    gen_ref.row(g).minCoeff(&best);
    matched.insert(best);
  }
  return static_cast<double>(matched.size()) / static_cast<double>(gen_ref.cols());
}

double cov(const CloudSet& gen, const CloudSet& ref, const DistanceOptions& opt) {
  return cov(distance_matrix(gen, ref, opt));
}

double one_nna(const Eigen::MatrixXd& gen_gen, const Eigen::MatrixXd& ref_ref,
               const Eigen::MatrixXd& gen_ref) {
  const Index ng = gen_gen.rows();
  const Index nr = ref_ref.rows();
  if (ng + nr < 2) throw std::invalid_argument("1-NNA: needs at least two clouds in total");
  if (gen_ref.rows() != ng || gen_ref.cols() != nr) {
    throw std::invalid_argument("1-NNA: distance matrix shapes disagree");
  }
  Index correct = 0;
  // Sample from set A is classified correctly when its nearest same-set
  // neighbour is strictly closer than every other-set sample.
  auto classify = [&](const Eigen::MatrixXd& same, Index i, auto other_row) {
    double best_same = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < same.cols(); ++j) {
      if (j != i) best_same = std::min(best_same, same(i, j));
    }
    const double best_other =
        other_row.size() > 0 ? other_row.minCoeff() : std::numeric_limits<double>::infinity();
    return best_same < best_other;
  };
  for (Index i = 0; i < ng; ++i) correct += classify(gen_gen, i, gen_ref.row(i)) ? 1 : 0;
  for (Index i = 0; i < nr; ++i) correct += classify(ref_ref, i, gen_ref.col(i).transpose()) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(ng + nr);
}

double one_nna(const CloudSet& gen, const CloudSet& ref, const DistanceOptions& opt) {
  require_nonempty(gen, "1-NNA");
  require_nonempty(ref, "1-NNA");
  return one_nna(distance_matrix(gen, gen, opt), distance_matrix(ref, ref, opt),
                 distance_matrix(gen, ref, opt));
}

namespace {

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"jsd",    "mmd-cd",  "mmd-emd", "cov-cd",
                                                 "cov-emd", "1nna-cd", "1nna-emd"};
  return names;
}

}  // namespace

MetricReport evaluate(const CloudSet& gen, const CloudSet& ref,
                      const std::vector<std::string>& names, const EvaluateOptions& opt) {
  require_nonempty(gen, "evaluate");
  require_nonempty(ref, "evaluate");
  std::set<std::string> want;
  for (const auto& n : names) {
    if (n == "all") {
      want.insert(metric_names().begin(), metric_names().end());
    } else if (std::find(metric_names().begin(), metric_names().end(), n) !=
               metric_names().end()) {
      want.insert(n);
    } else {
      throw std::invalid_argument("unknown metric '" + n + "'");
    }
  }
  MetricReport r;
  if (want.count("jsd")) r.jsd = jsd(gen, ref, opt.jsd_grid);
  for (auto kind : {DistanceKind::cd, DistanceKind::emd}) {
    const std::string suffix = kind == DistanceKind::cd ? "cd" : "emd";
    const bool need_gr = want.count("mmd-" + suffix) || want.count("cov-" + suffix) ||
                         want.count("1nna-" + suffix);
    if (!need_gr) continue;
    DistanceOptions d{kind, opt.emd, opt.workers};
    const auto gr = distance_matrix(gen, ref, d);
    auto& m = kind == DistanceKind::cd ? r.mmd_cd : r.mmd_emd;
    auto& c = kind == DistanceKind::cd ? r.cov_cd : r.cov_emd;
    auto& a = kind == DistanceKind::cd ? r.nna_cd : r.nna_emd;
    if (want.count("mmd-" + suffix)) m = mmd(gr);
    if (want.count("cov-" + suffix)) c = cov(gr);
    if (want.count("1nna-" + suffix)) {
      a = one_nna(distance_matrix(gen, gen, d), distance_matrix(ref, ref, d), gr);
    }
  }
  return r;
}

std::string MetricReport::serialize() const {
  std::string s;
  auto line = [&](const char* key, const std::optional<double>& v, double scale = 1.0) {
    if (v) s += std::string(key) + " = " + format(*v * scale) + "\n";
  };
  line("jsd", jsd);
  line("mmd_cd", mmd_cd);
  line("mmd_emd", mmd_emd);
  line("cov_cd", cov_cd);
  line("cov_emd", cov_emd);
  line("nna_cd", nna_cd);
  line("nna_emd", nna_emd);
  line("display.jsd", jsd, 1e2);
  line("display.mmd_cd", mmd_cd, 1e3);
  line("display.mmd_emd", mmd_emd, 1e2);
  line("display.cov_cd", cov_cd, 1e2);
  line("display.cov_emd", cov_emd, 1e2);
  line("display.nna_cd", nna_cd, 1e2);
  line("display.nna_emd", nna_emd, 1e2);
  return s;
}

MetricReport MetricReport::parse(const std::string& text) {
  MetricReport r;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("metric report line " + std::to_string(lineno) + ": no '='");
    }
    auto trim = [](std::string t) {
      t.erase(0, t.find_first_not_of(" \t"));
      t.erase(t.find_last_not_of(" \t\r") + 1);
      return t;
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    double v = 0;
    auto res = std::from_chars(val.data(), val.data() + val.size(), v);
    if (res.ec != std::errc() || res.ptr != val.data() + val.size()) {
      throw std::invalid_argument("metric report line " + std::to_string(lineno) +
                                  ": bad number '" + val + "'");
    }
    if (key == "jsd") r.jsd = v;
    else if (key == "mmd_cd") r.mmd_cd = v;
    else if (key == "mmd_emd") r.mmd_emd = v;
    else if (key == "cov_cd") r.cov_cd = v;
    else if (key == "cov_emd") r.cov_emd = v;
    else if (key == "nna_cd") r.nna_cd = v;
    else if (key == "nna_emd") r.nna_emd = v;
    else if (key.rfind("display.", 0) != 0) {
      throw std::invalid_argument("metric report line " + std::to_string(lineno) +
                                  ": unknown key '" + key + "'");
    }
  }
  return r;
}

}  // namespace pdgn::metrics
