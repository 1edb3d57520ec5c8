#include "pdgn/generator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace pdgn::generator {

using ad::IndexList;

namespace {

[[noreturn]] void invalid(const std::string& what) {
  throw std::invalid_argument("generator config: " + what);
}

nn::MlpSpec branch_spec(Index in, Index out, const GeneratorConfig& cfg) {
  nn::MlpSpec s;
  s.in = in;
  s.widths = {out};
  s.hidden = nn::Activation::leaky_relu;
  s.last = nn::Activation::leaky_relu;
  s.batch_norm_hidden = cfg.batch_norm;
  s.batch_norm_last = cfg.batch_norm;
  s.leaky_slope = cfg.leaky_slope;
  return s;
}

}  // namespace

void GeneratorConfig::validate() const {
  if (latent_dim < 1) invalid("latent_dim must be positive");
  if (!(latent_std > 0)) invalid("latent_std must be positive");
  if (stages.size() < 2) invalid("at least two stages are required");
  for (std::size_t l = 0; l < stages.size(); ++l) {
    const auto& s = stages[l];
    if (s.points < 2 || s.points % 2 != 0) invalid("stage point counts must be even");
    if (s.width < 2 || s.width % 2 != 0) invalid("stage widths must be even and positive");
    if (l > 0 && s.points != 2 * stages[l - 1].points) {
      invalid("stage " + std::to_string(l + 1) + " must double the point count of stage " +
              std::to_string(l));
    }
  }
  if (k < 1) invalid("k must be positive");
  if (k >= seed_points()) {
    invalid("k=" + std::to_string(k) + " must be smaller than the seed point count " +
            std::to_string(seed_points()));
  }
  if (!(beta > 0)) invalid("beta must be positive");
  if (head_widths.empty() || head_widths.back() != 3) invalid("head widths must end in 3");
  for (Index w : head_widths) {
    if (w < 1) invalid("head widths must be positive");
  }
  if (!(interp_eps > 0)) invalid("interp_eps must be positive");
}

BatchGraph batch_knn_graph(const Matrix& features, Index batch, Index k, double beta) {
  const Index total = features.rows();
  if (batch < 1 || total % batch != 0) throw std::invalid_argument("knn: bad batch layout");
  const Index n = total / batch;
  BatchGraph g;
  g.k = k;
  g.indices.resize(total, k);
  g.similarities.resize(total, k);
  for (Index b = 0; b < batch; ++b) {
    const auto local = geometry::knn_graph(features.middleRows(b * n, n), k, beta);
    g.indices.middleRows(b * n, n) = local.indices.array() + b * n;
    g.similarities.middleRows(b * n, n) = local.similarities;
  }
  return g;
}

DeconvParams::DeconvParams(Index in_width, Index out_width, Index k, const GeneratorConfig& cfg,
                           std::mt19937_64& rng) {
  w_theta.reserve(static_cast<std::size_t>(k));
  w_psi.reserve(static_cast<std::size_t>(k));
  for (Index s = 0; s < k; ++s) {
    w_theta.push_back(Tensor::parameter(nn::uniform_init(3, in_width, 3, rng)));
    w_psi.push_back(Tensor::parameter(nn::uniform_init(in_width, in_width, in_width, rng)));
  }
  const Index half = out_width / 2;
  region_mlp = nn::Mlp(branch_spec(in_width, half, cfg), rng);
  if (cfg.separate_region_mlps) region2_mlp.emplace(branch_spec(in_width, half, cfg), rng);
  global_mlp = nn::Mlp(branch_spec(in_width, half, cfg), rng);
}

void DeconvParams::register_into(nn::ParameterSet& set, const std::string& prefix) const {
  for (std::size_t s = 0; s < w_theta.size(); ++s) {
    set.add(prefix + "w_theta." + std::to_string(s), w_theta[s]);
    set.add(prefix + "w_psi." + std::to_string(s), w_psi[s]);
  }
  region_mlp.register_into(set, prefix + "region.");
  if (region2_mlp) region2_mlp->register_into(set, prefix + "region2.");
  global_mlp.register_into(set, prefix + "global.");
}

Tensor bilateral_interpolate(const Tensor* coords, const Tensor& feats, const BatchGraph& graph,
                             const DeconvParams& params, double eps) {
  const Index rows = feats.rows();
  const Index d = feats.cols();
  const Index k = graph.k;
  if (graph.indices.rows() != rows || graph.indices.cols() != k) {
    throw ad::ShapeError("bilateral_interpolate: graph does not match feature rows");
  }
  if (static_cast<Index>(params.w_psi.size()) != k) {
    throw ad::ShapeError("bilateral_interpolate: parameters hold " +
                         std::to_string(params.w_psi.size()) + " neighbour slots, graph has k=" +
                         std::to_string(k));
  }
  if (coords != nullptr && (coords->rows() != rows || coords->cols() != 3)) {
    throw ad::ShapeError("bilateral_interpolate: coordinates must be (rows x 3)");
  }
  const double slot_eps = eps / static_cast<double>(k);
  Tensor num;
  Tensor den;
  IndexList nbr(static_cast<std::size_t>(rows));
  for (Index s = 0; s < k; ++s) {
    if (params.w_psi[static_cast<std::size_t>(s)].rows() != d) {
      throw ad::ShapeError("bilateral_interpolate: W_psi width differs from feature width");
    }
    for (Index i = 0; i < rows; ++i) nbr[static_cast<std::size_t>(i)] = graph.indices(i, s);
    const Tensor xj = ad::gather_rows(feats, nbr);
    Tensor w = ad::relu(ad::matmul(feats - xj, params.w_psi[static_cast<std::size_t>(s)]));
    if (coords != nullptr) {
      const Tensor pj = ad::gather_rows(*coords, nbr);
      w = w * ad::relu(ad::matmul(*coords - pj, params.w_theta[static_cast<std::size_t>(s)]));
    }
    w = ad::add_scalar(w, slot_eps);
    const Tensor contrib = w * xj;
    if (s == 0) {
      num = contrib;
      den = w;
    } else {
      num = num + contrib;
      den = den + w;
    }
  }
  return num / den;
}

DeconvOutput deconv_block(const Tensor* coords, const Tensor& feats, Index batch,
                          DeconvParams& params, const GeneratorConfig& cfg, bool training) {
  const Index rows = feats.rows();
  if (batch < 1 || rows % batch != 0) throw ad::ShapeError("deconv_block: bad batch layout");
  const Index n = rows / batch;
  const Index k = static_cast<Index>(params.w_psi.size());
  if (n <= k) {
    throw std::invalid_argument("deconv_block: need more than k=" + std::to_string(k) +
                                " points per cloud, got " + std::to_string(n));
  }

  const BatchGraph graph = batch_knn_graph(feats.value(), batch, k, cfg.beta);
  const Tensor interp = bilateral_interpolate(coords, feats, graph, params, cfg.interp_eps);

  // Enlarged neighbourhood of point i: its k neighbours (rows j of [X; X~])
  // and their interpolants (rows rows + j), split by similarity to x_i.
  const Matrix& x = feats.value();
  const Matrix& xt = interp.value();
  IndexList region1(static_cast<std::size_t>(rows * k));
  IndexList region2(static_cast<std::size_t>(rows * k));
  std::vector<std::pair<double, Index>> members(static_cast<std::size_t>(2 * k));
  for (Index i = 0; i < rows; ++i) {
    for (Index s = 0; s < k; ++s) {
      const Index j = graph.indices(i, s);
      members[static_cast<std::size_t>(s)] = {-graph.similarities(i, s), j};
      const double sim = std::exp(-cfg.beta * (x.row(i) - xt.row(j)).squaredNorm());
      members[static_cast<std::size_t>(k + s)] = {-sim, rows + j};
    }
    // Stable on ties: originals, in slot order, precede interpolants.
    std::stable_sort(members.begin(), members.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (Index s = 0; s < k; ++s) {
      region1[static_cast<std::size_t>(i * k + s)] = members[static_cast<std::size_t>(s)].second;
      region2[static_cast<std::size_t>(i * k + s)] =
          members[static_cast<std::size_t>(k + s)].second;
    }
  }

  const Tensor stacked = ad::concat_rows({feats, interp});
  const Tensor h1 = params.region_mlp(stacked, training);
  const Tensor h2 = params.region2_mlp ? (*params.region2_mlp)(stacked, training) : h1;
  const Tensor pooled1 = ad::segment_max(ad::gather_rows(h1, region1), k);
  const Tensor pooled2 = ad::segment_max(ad::gather_rows(h2, region2), k);

  // Interleave so that output rows 2i, 2i+1 both descend from input row i.
  IndexList interleave(static_cast<std::size_t>(2 * rows));
  for (Index i = 0; i < rows; ++i) {
    interleave[static_cast<std::size_t>(2 * i)] = i;
    interleave[static_cast<std::size_t>(2 * i + 1)] = rows + i;
  }
  const Tensor local = ad::gather_rows(ad::concat_rows({pooled1, pooled2}), interleave);

  const Tensor global_per_cloud = ad::segment_max(params.global_mlp(feats, training), n);
  IndexList replicate(static_cast<std::size_t>(2 * rows));
  for (Index r = 0; r < 2 * rows; ++r) replicate[static_cast<std::size_t>(r)] = r / (2 * n);
  const Tensor global = ad::gather_rows(global_per_cloud, replicate);

  return {ad::concat_cols({local, global}), local, global, interp};
}

PointCloud MultiResolutionOutput::cloud(std::size_t level, Index b) const {
  const Level& lv = levels.at(level);
  if (b < 0 || b >= batch) throw std::out_of_range("cloud index out of range");
  return lv.coords.value().middleRows(b * lv.points, lv.points);
}

Matrix sample_latent(std::mt19937_64& rng, Index count, Index dim, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix z(count, dim);
  for (Index i = 0; i < z.size(); ++i) z.data()[i] = dist(rng);
  return z;
}

Matrix sample_latent(std::uint64_t seed, Index count, Index dim, double stddev) {
  std::mt19937_64 rng(seed);
  return sample_latent(rng, count, dim, stddev);
}

Generator::Generator(GeneratorConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(init_seed);
  seed_ = nn::Linear(cfg_.latent_dim, cfg_.seed_points() * cfg_.seed_width(), rng);
  seed_.register_into(params_, "seed.");
  for (std::size_t l = 0; l < cfg_.stages.size(); ++l) {
    blocks_.emplace_back(cfg_.stage_input_width(l), cfg_.stages[l].width, cfg_.k, cfg_, rng);
    blocks_.back().register_into(params_, "stage" + std::to_string(l) + ".");

    nn::MlpSpec head;
    head.in = cfg_.stages[l].width;
    head.widths = cfg_.head_widths;
    head.hidden = nn::Activation::leaky_relu;
    head.last = nn::Activation::tanh;
    head.batch_norm_hidden = cfg_.batch_norm;
    head.leaky_slope = cfg_.leaky_slope;
    heads_.emplace_back(head, rng);
    heads_.back().register_into(params_, "head" + std::to_string(l) + ".");
  }
}

Tensor Generator::seed_features(const Tensor& z) {
  if (z.cols() != cfg_.latent_dim) {
    throw std::invalid_argument("seed_features: latent vectors must have " +
                                std::to_string(cfg_.latent_dim) + " entries, got " +
                                std::to_string(z.cols()));
  }
  const Tensor flat = seed_(z);
  return ad::reshape(flat, z.rows() * cfg_.seed_points(), cfg_.seed_width());
}

Tensor Generator::coordinate_head(std::size_t stage, const Tensor& feats, bool training) {
  return heads_.at(stage)(feats, training);
}

MultiResolutionOutput Generator::generate(const Tensor& z, bool training) {
  MultiResolutionOutput out;
  out.batch = z.rows();
  Tensor feats = seed_features(z);
  std::optional<Tensor> coords;
  for (std::size_t l = 0; l < cfg_.stages.size(); ++l) {
    Tensor input = coords ? ad::concat_cols({*coords, feats}) : feats;
    DeconvOutput block =
        deconv_block(coords ? &*coords : nullptr, input, out.batch, blocks_[l], cfg_, training);
    Tensor xyz = coordinate_head(l, block.features, training);
    out.levels.push_back({cfg_.stages[l].points, xyz, block.features});
    coords = xyz;
    feats = block.features;
  }
  return out;
}

}  // namespace pdgn::generator
