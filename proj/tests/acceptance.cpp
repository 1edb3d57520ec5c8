// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--only N,...] [--expect-fail N,...]
//
// Exit status is 0 when every criterion passes or is listed in
// --expect-fail, 1 otherwise. Expected failures still print FAIL.

#include "gradcheck.hpp"
#include "op_cases.hpp"
#include "oracles.hpp"
#include "pdgn/config.hpp"
#include "pdgn/io.hpp"
#include "pdgn/metrics.hpp"
#include "pdgn/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>

using namespace pdgn;
namespace fs = std::filesystem;
using losses::LossVariant;

namespace {

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + fmt(x);
  return s;
}

// 1. Reverse-mode gradients against central differences.
void gradients(Verdict& v) {
  double worst_op = 0;
  for (const auto& c : op_table::op_cases()) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::mt19937_64 g(seed);
      const auto inputs = c.inputs(g);
      const double e = gradcheck::max_error(
          [&](const std::vector<ad::Tensor>& x) { return gradcheck::weighted(c.op(x), seed); }, inputs);
      if (e >= 1e-4) v.detail << c.name << "@" << seed << "=" << fmt(e) << " ";
      worst_op = std::max(worst_op, e);
    }
  }
  v.require(worst_op < 1e-4, "op error < 1e-4");

  training::TrainConfig cfg;
  cfg.generator.latent_dim = 6;
  cfg.generator.stages = {{8, 4}, {16, 8}};
  cfg.generator.k = 3;
  cfg.generator.head_widths = {8, 3};
  cfg.discriminator.point_widths = {{8, 16}, {8, 16}};
  cfg.discriminator.scorer_widths = {8, 1};
  cfg.loss.spl_centroids = 4;
  cfg.loss.spl_k = 3;
  double worst_e2e = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    generator::Generator gen(cfg.generator, seed);
    discriminator::Discriminator disc(cfg.discriminator, cfg.resolutions(), seed + 9);
    const ad::Matrix z = generator::sample_latent(seed, 2, 6, 0.2);
    std::mt19937_64 g(seed);
    const ad::Tensor real(oracle::random_cloud(g, 2 * 16));
    auto g_loss = [&] {
      const auto out = gen.generate(ad::Tensor(z), true);
      std::mt19937_64 unused(0);
      ad::Tensor total = ad::scale(
          *losses::coupling(out, 0, cfg.loss, losses::CentroidStart::canonical, unused), cfg.loss.lambda);
      for (std::size_t l = 0; l < 2; ++l) {
        const Index n = out.levels[l].points;
        const ad::Tensor lf = ad::slice_rows(
            disc.logits(ad::concat_rows({ad::slice_rows(real, 0, 2 * n), out.levels[l].coords}), 4, l,
                        discriminator::Mode::train),
            2, 2);
        total = total + losses::generator_adversarial_loss(lf, false);
      }
      return total;
    };
    auto d_loss = [&] {
      const ad::Tensor fake = gen.generate(ad::Tensor(z), true).levels[1].coords.detach();
      const ad::Tensor l = disc.logits(ad::concat_rows({real, fake}), 4, 1, discriminator::Mode::train);
      return losses::discriminator_loss(ad::slice_rows(l, 0, 2), ad::slice_rows(l, 2, 2));
    };
    // Kinks of relu and max-pool sit near some draws at h = 1e-5.
    worst_e2e = std::max(worst_e2e, gradcheck::param_error(g_loss, gen.parameters().tensors(), 1e-6));
    worst_e2e = std::max(worst_e2e, gradcheck::param_error(d_loss, disc.parameters(1).tensors(), 1e-6));
  }
  v.require(worst_e2e < 1e-3, "end-to-end error < 1e-3");
  v.detail << "ops " << fmt(worst_op) << ", end-to-end " << fmt(worst_e2e);
}

// 2. EMD, knn graph and FPS against brute force.
void oracles(Verdict& v) {
  std::mt19937_64 g(2024);
  double worst = 0;
  for (int s = 0; s < 200; ++s) {
    const Index n = 1 + s % 6;
    const PointCloud a = oracle::random_cloud(g, n), b = oracle::random_cloud(g, n);
    worst = std::max(worst, std::abs(geometry::emd(a, b) - oracle::emd_enumerate(a, b)));
  }
  v.require(worst <= 1e-9, "emd exact");
  int knn_bad = 0, fps_bad = 0;
  std::uniform_int_distribution<Index> n_dist(2, 200);
  for (int s = 0; s < 100; ++s) {
    const Index n = n_dist(g);
    const FeatureMap f = oracle::random_matrix(g, n, 1 + s % 5);
    const Index k = std::min<Index>(n - 1, 1 + s % 20);
    const auto graph = geometry::knn_graph(f, k, 1.0);
    const auto ref = oracle::knn(f, k);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < k; ++j)
        if (graph.indices(i, j) != ref[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) ++knn_bad;
    const PointCloud c = oracle::random_cloud(g, n);
    const Index m = 1 + (s * 7) % n;
    if (geometry::fps(c, m, s % n) != oracle::fps(c, m, s % n)) ++fps_bad;
  }
  v.require(knn_bad == 0, "knn graph");
  v.require(fps_bad == 0, "fps");
  v.detail << "emd max diff " << fmt(worst) << ", knn mismatches " << knn_bad << ", fps mismatches " << fps_bad;
}

// 3. Output sizes and range.
void structure(Verdict& v) {
  generator::Generator gen(generator::GeneratorConfig{}, 0);
  const auto out = gen.generate(generator::sample_latent(std::uint64_t{1}, 2, 128, 0.2), false);
  std::vector<Index> sizes;
  double peak = 0;
  for (const auto& l : out.levels) {
    sizes.push_back(l.points);
    peak = std::max(peak, l.coords.value().cwiseAbs().maxCoeff());
  }
  v.require(sizes == std::vector<Index>{256, 512, 1024, 2048}, "default sizes");
  v.require(peak <= 1.0, "coordinates in [-1,1]");

  std::mt19937_64 rng(3);
  int bad = 0;
  for (int s = 0; s < 12; ++s) {
    generator::GeneratorConfig c;
    c.latent_dim = 3 + s;
    const Index base = 6 + 2 * (s % 5);
    const std::size_t stages = 2 + s % 3;
    c.stages.clear();
    for (std::size_t l = 0; l < stages; ++l) c.stages.push_back({base << l, 2 + 2 * (s % 3) + 2 * static_cast<Index>(l)});
    c.k = 1 + s % 2;
    c.head_widths = {4 + s, 3};
    c.batch_norm = s % 2 == 1;
    c.separate_region_mlps = s % 3 == 0;
    generator::Generator g(c, static_cast<std::uint64_t>(s));
    const Index batch = 1 + s % 3;
    const auto o = g.generate(generator::sample_latent(rng, batch, c.latent_dim, 0.2), s % 2 == 0);
    Index prev = c.seed_points();
    for (const auto& l : o.levels) {
      if (l.points != 2 * prev || l.coords.rows() != batch * l.points) ++bad;
      if (l.coords.value().cwiseAbs().maxCoeff() > 1.0) ++bad;
      prev = l.points;
    }
  }
  v.require(bad == 0, "doubling for random configs");
  v.detail << "default sizes 256/512/1024/2048, max |coord| " << fmt(peak) << ", random-config violations " << bad;
}

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

// 4. Shape-preserving loss values.
void spl_values(Verdict& v) {
  std::mt19937_64 g(4);
  double zero = 0;
  for (int s = 0; s < 20; ++s) {
    const PointCloud c = oracle::random_cloud(g, 24);
    zero = std::max(zero, losses::spl(std::vector<PointCloud>{c, shuffled(c, g), c}, 6, 4));
  }
  v.require(zero <= 1e-9, "zero for identical statistics");
  // One centroid each: means differ by (1,0,0), covariances both diag(2,0,0).
  const double single = losses::spl(std::vector<PointCloud>{pts({{0, 0, 0}, {2, 0, 0}}), pts({{1, 0, 0}, {3, 0, 0}})}, 1, 2);
  v.require(std::abs(single - 1.0) <= 1e-9, "singleton offset = 1");
  double perm = 0;
  for (int s = 0; s < 20; ++s) {
    const PointCloud a = oracle::random_cloud(g, 16), b = oracle::random_cloud(g, 32);
    const double x = losses::spl(std::vector<PointCloud>{a, b}, 5, 4);
    perm = std::max(perm, std::abs(x - losses::spl(std::vector<PointCloud>{shuffled(a, g), shuffled(b, g)}, 5, 4)));
  }
  v.require(perm <= 1e-12, "permutation invariance");
  v.detail << "identical " << fmt(zero) << ", singleton " << single << ", permutation diff " << fmt(perm);
}

// 5. Metric sanity.
void metric_values(Verdict& v) {
  const auto a = io::synth_corpus(io::SynthKind::two_clusters, 8, 32, 5).clouds;
  const auto r = metrics::evaluate(a, a, {"all"});
  v.require(*r.jsd == 0 && *r.mmd_cd == 0 && *r.mmd_emd == 0, "identical jsd/mmd zero");
  v.require(*r.cov_cd == 1 && *r.cov_emd == 1, "identical cov one");
  v.require(*r.nna_cd == 0 && *r.nna_emd == 0, "identical 1-nna zero");
  const double j = metrics::jsd({PointCloud::Constant(4, 3, -0.9)}, {PointCloud::Constant(9, 3, 0.9)});
  v.require(std::abs(j - std::log(2.0)) <= 1e-9, "disjoint jsd = ln 2");
  std::vector<double> acc;
  int inside = 0;
  metrics::DistanceOptions cd;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto x = io::synth_corpus(io::SynthKind::sphere, 100, 64, 100 + 2 * seed).clouds;
    const auto y = io::synth_corpus(io::SynthKind::sphere, 100, 64, 101 + 2 * seed).clouds;
    acc.push_back(metrics::one_nna(x, y, cd));
    if (acc.back() >= 0.40 && acc.back() <= 0.60) ++inside;
  }
  v.require(inside >= 4, "same-distribution 1-nna in [0.4,0.6] for >= 4/5 seeds");
  v.detail << "disjoint jsd - ln2 = " << fmt(j - std::log(2.0)) << ", 1-NNA " << join(acc);
}

// Toy experiment shared by criteria 6 and 7.
const char* kToyConfig =
    "latent_dim = 16\n"
    "stage_points = 32,64\n"
    "stage_widths = 16,32\n"
    "k = 8\n"
    "head_widths = 32,16,3\n"
    "disc_widths = 16,32;16,32\n"
    "scorer_widths = 16,1\n"
    "spl_centroids = 16\n"
    "spl_k = 8\n"
    "batch_size = 8\n"
    "synth_count = 200\n"
    "synth_points = 64\n"
    "lr = 2e-4\n"
    "beta1 = 0.5\n"
    "non_saturating = true\n"
    "disc_batch_norm = false\n"
    "generator_batch_norm = true\n";

constexpr std::int64_t kToyIterations = 5000;
constexpr std::int64_t kAblationIterations = 3000;
constexpr Index kEvalCount = 32;

struct Snapshot {
  double cd = 0;   // median over generated clouds of CD to the nearest reference
  double spl = 0;  // d1 + d2 between the two resolutions, batch mean
  metrics::MetricReport report;
};

Snapshot measure(training::Trainer& t, std::uint64_t seed, bool with_report) {
  const auto& cfg = t.config();
  const ad::Matrix z =
      generator::sample_latent(1000 + seed, kEvalCount, cfg.generator.latent_dim, cfg.generator.latent_std);
  const auto out = t.generator().generate(z, false);
  const std::size_t top = out.levels.size() - 1;
  const auto& ref = t.real(top);
  Snapshot s;
  std::vector<double> nearest;
  metrics::CloudSet gen;
  for (Index b = 0; b < kEvalCount; ++b) {
    gen.push_back(out.cloud(top, b));
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : ref) best = std::min(best, geometry::chamfer_distance(gen.back(), r));
    nearest.push_back(best);
  }
  s.cd = median(nearest);
  losses::LossConfig lc = cfg.loss;
  s.spl = losses::spl(out, lc);
  if (with_report) {
    const metrics::CloudSet refs(ref.begin(), ref.begin() + kEvalCount);
    s.report = metrics::evaluate(gen, refs, {"jsd", "mmd-cd", "cov-cd", "1nna-cd"});
  }
  return s;
}

struct ToyRun {
  Snapshot init, ablation, final;
  bool completed = false;
  std::string error;
};

std::map<std::pair<LossVariant, std::uint64_t>, ToyRun>& toy_runs() {
  static std::map<std::pair<LossVariant, std::uint64_t>, ToyRun> runs;
  return runs;
}

const ToyRun& toy(LossVariant variant, std::uint64_t seed) {
  auto& runs = toy_runs();
  const auto key = std::make_pair(variant, seed);
  if (auto it = runs.find(key); it != runs.end()) return it->second;
  ToyRun run;
  Config cfg = Config::parse(kToyConfig, "toy");
  cfg.train.loss.variant = variant;
  cfg.train.seed = seed;
  const auto corpus = io::synth_corpus(cfg.synth_kind, cfg.synth_count, cfg.synth_points, cfg.synth_seed);
  const std::int64_t iters = variant == LossVariant::shape_preserving ? kToyIterations : kAblationIterations;
  try {
    training::Trainer t(cfg.train, corpus.clouds);
    run.init = measure(t, seed, false);
    while (t.iteration() < iters) {
      t.step();
      if (t.iteration() == kAblationIterations) run.ablation = measure(t, seed, true);
    }
    run.final = measure(t, seed, false);
    run.completed = true;
  } catch (const std::exception& e) {
    run.error = e.what();
  }
  return runs[key] = run;
}

// 6. Toy training efficacy.
void toy_efficacy(Verdict& v) {
  std::vector<double> ratio, spl0, spl1;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ToyRun& r = toy(LossVariant::shape_preserving, seed);
    v.require(r.completed, "seed " + std::to_string(seed) + " completed " + r.error);
    ratio.push_back(r.final.cd / r.init.cd);
    spl0.push_back(r.init.spl);
    spl1.push_back(r.final.spl);
  }
  v.require(median(ratio) < 0.5, "median CD ratio < 0.5");
  v.require(median(spl1) < median(spl0), "median final SPL < median initial SPL");
  v.detail << "CD final/init " << join(ratio) << " (median " << fmt(median(ratio)) << "); SPL init " << join(spl0)
           << " -> final " << join(spl1) << " (medians " << fmt(median(spl0)) << " -> " << fmt(median(spl1)) << ")";
}

// 7. Ablation parity.
void ablation(Verdict& v) {
  const LossVariant all[] = {LossVariant::shape_preserving, LossVariant::plain_adversarial, LossVariant::emd_coupled,
                             LossVariant::cd_coupled};
  std::map<LossVariant, double> med;
  for (LossVariant variant : all) {
    std::vector<double> d;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const ToyRun& r = toy(variant, seed);
      v.require(r.completed, std::string(losses::to_string(variant)) + " seed " + std::to_string(seed) + " " + r.error);
      const auto& rep = r.ablation.report;
      v.require(rep.jsd && rep.mmd_cd && rep.cov_cd && rep.nna_cd, "report fields");
      d.push_back(r.ablation.spl);
    }
    med[variant] = median(d);
    const auto& rep = toy(variant, 0).ablation.report;
    std::cout << "  " << losses::to_string(variant) << ": d1+d2 " << join(d) << " (median " << fmt(med[variant])
              << "); seed 0 jsd " << fmt(rep.jsd.value_or(NAN)) << " mmd-cd " << fmt(rep.mmd_cd.value_or(NAN))
              << " cov-cd " << fmt(rep.cov_cd.value_or(NAN)) << " 1nna-cd " << fmt(rep.nna_cd.value_or(NAN)) << "\n";
  }
  v.require(med[LossVariant::shape_preserving] <= med[LossVariant::plain_adversarial],
            "shape-preserving d1+d2 <= plain adversarial");
  v.detail << "median d1+d2 at " << kAblationIterations << " iterations: shape-preserving "
           << fmt(med[LossVariant::shape_preserving]) << ", plain " << fmt(med[LossVariant::plain_adversarial]);
}

bool same_bits(const std::vector<training::LogRecord>& a, const std::vector<training::LogRecord>& b) {
  std::string x, y;
  for (const auto& r : a) x += training::format_record(r) + "\n";
  for (const auto& r : b) y += training::format_record(r) + "\n";
  return x == y;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// 8. Determinism and persistence.
void determinism(Verdict& v) {
  Config cfg = Config::parse(kToyConfig, "toy");
  cfg.train.seed = 8;
  const auto corpus = io::synth_corpus(cfg.synth_kind, 40, cfg.synth_points, 2).clouds;
  auto run = [&](training::Trainer& t, int steps) {
    std::vector<training::LogRecord> all;
    for (int i = 0; i < steps; ++i) {
      const auto r = t.step();
      all.insert(all.end(), r.begin(), r.end());
    }
    return all;
  };
  training::Trainer a(cfg.train, corpus), b(cfg.train, corpus);
  const auto la = run(a, 20), lb = run(b, 20);
  v.require(same_bits(la, lb), "identical logs");
  v.require(a.checkpoint().serialize() == b.checkpoint().serialize(), "identical checkpoints");

  training::Trainer first(cfg.train, corpus);
  const auto head = run(first, 10);
  training::Trainer resumed(cfg.train, corpus);
  resumed.restore(Checkpoint::deserialize(first.checkpoint().serialize()));
  auto joined = head;
  const auto tail = run(resumed, 10);
  joined.insert(joined.end(), tail.begin(), tail.end());
  v.require(same_bits(joined, la), "resume log");
  v.require(resumed.checkpoint().serialize() == a.checkpoint().serialize(), "resume checkpoint");

  // Generated files through the command-line tool.
  const fs::path dir = fs::temp_directory_path() / "pdgn_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Checkpoint ck = a.checkpoint();
  ck.texts["config"] = cfg.serialize();
  ck.save(dir / "a.ckpt");
  int rc = 0;
  for (const char* out : {"g1", "g2"}) {
    const std::string cmd = std::string(PDGN_CLI) + " generate --checkpoint " + (dir / "a.ckpt").string() +
                            " --count 4 --seed 3 --out " + (dir / out).string() + " >/dev/null";
    rc |= std::system(cmd.c_str());
  }
  v.require(rc == 0, "generate ran");
  int files = 0, differ = 0;
  for (const auto& e : fs::directory_iterator(dir / "g1")) {
    ++files;
    if (slurp(e.path()) != slurp(dir / "g2" / e.path().filename())) ++differ;
  }
  v.require(files == 8 && differ == 0, "identical generated files");
  v.detail << "20-iteration logs and checkpoints bitwise equal, resume at 10 bitwise equal, " << files
           << " generated files, " << differ << " differ";
}

std::set<int> parse_list(const char* s) {
  std::set<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.insert(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only, expect_fail;
  for (int i = 1; i + 1 < argc; i += 2) {
    if (std::strcmp(argv[i], "--only") == 0) only = parse_list(argv[i + 1]);
    else if (std::strcmp(argv[i], "--expect-fail") == 0) expect_fail = parse_list(argv[i + 1]);
    else {
      std::cerr << "usage: acceptance [--only N,...] [--expect-fail N,...]\n";
      return 2;
    }
  }
  const std::vector<std::pair<const char*, void (*)(Verdict&)>> criteria = {
      {"gradient integrity", gradients},  {"oracle equivalence", oracles},
      {"structural contract", structure}, {"SPL correctness", spl_values},
      {"metric sanity", metric_values},   {"toy training efficacy", toy_efficacy},
      {"ablation parity", ablation},      {"determinism and persistence", determinism},
  };
  int unexpected = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    const auto start = std::chrono::steady_clock::now();
    try {
      criteria[i].second(v);
    } catch (const std::exception& e) {
      v.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << "criterion " << id << " " << (v.pass ? "PASS" : "FAIL") << ": " << criteria[i].first << " ("
              << v.detail.str() << "; " << fmt(secs) << " s)";
    if (!v.pass && expect_fail.count(id)) std::cout << " [expected]";
    if (v.pass && expect_fail.count(id)) std::cout << " [listed as expected failure]";
    std::cout << std::endl;
    if (!v.pass && !expect_fail.count(id)) ++unexpected;
  }
  return unexpected ? 1 : 0;
}
