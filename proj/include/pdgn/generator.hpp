#pragma once

// Progressive deconvolution generator.
//
// A latent vector is mapped by one fully-connected layer to a seed feature
// map. Each stage then runs a deconvolution block that doubles the point
// count (bilateral interpolation on a feature-space k-NN graph, two-region
// max-pooling, fused local/global features) followed by a per-point MLP
// head that emits coordinates in [-1, 1]^3. Stage l+1 consumes stage l's
// coordinates concatenated with its features.
//
// Batches are stacked along rows: a level with B clouds of N points holds
// B*N rows, cloud b occupying rows [b*N, (b+1)*N).

#include "pdgn/geometry.hpp"
#include "pdgn/nn.hpp"
#include "pdgn/tensor.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

namespace pdgn::generator {

using ad::Index;
using ad::Matrix;
using ad::Tensor;

struct StageSpec {
  Index points = 0;  // clouds emitted by this stage
  Index width = 0;   // concatenated local + global feature width
};

struct GeneratorConfig {
  Index latent_dim = 128;
  double latent_std = 0.2;
  std::vector<StageSpec> stages = {{256, 32}, {512, 64}, {1024, 128}, {2048, 256}};
  Index k = 20;
  double beta = 1.0;
  std::vector<Index> head_widths = {512, 256, 64, 3};
  bool separate_region_mlps = false;
  bool batch_norm = true;
  double leaky_slope = 0.2;
  /// Smoothing mass spread over the k interpolation weights.
  double interp_eps = 1e-8;

  Index seed_points() const { return stages.front().points / 2; }
  Index seed_width() const { return stages.front().width / 2; }
  Index stage_input_width(std::size_t stage) const {
    return stage == 0 ? seed_width() : stages[stage - 1].width + 3;
  }
  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Per-stage feature-space neighbourhoods of a batch, in global row indices.
struct BatchGraph {
  Index k = 0;
  IndexMatrix indices;  // (B*N) x k
  Matrix similarities;  // (B*N) x k
};

BatchGraph batch_knn_graph(const Matrix& features, Index batch, Index k, double beta);

struct DeconvParams {
  std::vector<Tensor> w_theta;  // k slots of 3 x d
  std::vector<Tensor> w_psi;    // k slots of d x d
  nn::Mlp region_mlp;           // d -> width/2, shared by both regions
  std::optional<nn::Mlp> region2_mlp;
  nn::Mlp global_mlp;           // d -> width/2

  DeconvParams() = default;
  DeconvParams(Index in_width, Index out_width, Index k, const GeneratorConfig& cfg,
               std::mt19937_64& rng);
  void register_into(nn::ParameterSet& set, const std::string& prefix) const;
};

/// Channel-wise bilateral interpolation: one interpolated feature per point,
/// a convex combination of its neighbours' features with weights
/// ReLU(W_theta,s^T (p_i - p_j)) * ReLU(W_psi,s^T (x_i - x_j)) + eps/k for
/// neighbour slot s. Without coordinates the spatial factor is 1.
Tensor bilateral_interpolate(const Tensor* coords, const Tensor& feats, const BatchGraph& graph,
                             const DeconvParams& params, double eps);

struct DeconvOutput {
  Tensor features;  // (2*B*N) x width, rows 2i and 2i+1 descend from point i
  Tensor local;     // (2*B*N) x width/2
  Tensor global;    // (2*B*N) x width/2
  Tensor interpolated;
};

/// Doubles a batch of feature maps. `coords` may be null (first stage).
DeconvOutput deconv_block(const Tensor* coords, const Tensor& feats, Index batch,
                          DeconvParams& params, const GeneratorConfig& cfg, bool training);

struct Level {
  Index points = 0;
  Tensor coords;    // (B*points) x 3
  Tensor features;  // (B*points) x width
};

struct MultiResolutionOutput {
  Index batch = 0;
  std::vector<Level> levels;

  /// Cloud b of level l as a plain point array.
  PointCloud cloud(std::size_t level, Index b) const;
};

/// i.i.d. normal latent vectors (count x dim) with the given std.
Matrix sample_latent(std::mt19937_64& rng, Index count, Index dim, double stddev);
Matrix sample_latent(std::uint64_t seed, Index count, Index dim, double stddev);

class Generator {
 public:
  Generator(GeneratorConfig cfg, std::uint64_t init_seed);

  /// Latent rows (B x latent_dim) -> seed feature map ((B*N0) x d0).
  Tensor seed_features(const Tensor& z);
  /// Per-point head of stage l; output in [-1, 1]^3.
  Tensor coordinate_head(std::size_t stage, const Tensor& feats, bool training);

  MultiResolutionOutput generate(const Tensor& z, bool training = false);
  MultiResolutionOutput generate(const Matrix& z, bool training = false) {
    return generate(Tensor(z), training);
  }

  const GeneratorConfig& config() const { return cfg_; }
  const nn::ParameterSet& parameters() const { return params_; }
  nn::ParameterSet& parameters() { return params_; }
  DeconvParams& stage(std::size_t l) { return blocks_[l]; }
  nn::Linear& seed_layer() { return seed_; }
  nn::Mlp& head(std::size_t l) { return heads_[l]; }

 private:
  GeneratorConfig cfg_;
  nn::Linear seed_;
  std::vector<DeconvParams> blocks_;
  std::vector<nn::Mlp> heads_;
  nn::ParameterSet params_;
};

}  // namespace pdgn::generator
