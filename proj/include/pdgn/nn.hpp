#pragma once

// Layers shared by the generator and the discriminators.

#include "pdgn/tensor.hpp"

#include <random>
#include <string>
#include <vector>

namespace pdgn::nn {

using ad::Index;
using ad::Matrix;
using ad::Tensor;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Ordered registry of trainable parameters and non-trainable buffers.
/// Tensors are shared handles, so the registry aliases the layer storage.
class ParameterSet {
 public:
  void add(std::string name, Tensor t) { params_.push_back({std::move(name), std::move(t)}); }
  void add_buffer(std::string name, Tensor t) {
    buffers_.push_back({std::move(name), std::move(t)});
  }
  void append(const std::string& prefix, const ParameterSet& other);

  const std::vector<NamedTensor>& params() const { return params_; }
  const std::vector<NamedTensor>& buffers() const { return buffers_; }
  std::vector<Tensor> tensors() const;

  void zero_grad();
  /// Freezing a set stops an optimisation phase from reaching it.
  void set_requires_grad(bool on);
  Index scalar_count() const;

 private:
  std::vector<NamedTensor> params_;
  std::vector<NamedTensor> buffers_;
};

/// Weight init: uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Matrix uniform_init(Index rows, Index cols, Index fan_in, std::mt19937_64& rng);

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // 1 x out

  Linear() = default;
  Linear(Index in, Index out, std::mt19937_64& rng);
  Tensor operator()(const Tensor& x) const;
  void register_into(ParameterSet& set, const std::string& prefix) const;
  Index in() const { return weight.rows(); }
  Index out() const { return weight.cols(); }
};

struct BatchNormConfig {
  double momentum = 0.9;
  double eps = 1e-5;
};

struct BatchNorm {
  Tensor gamma;
  Tensor beta;
  ad::BatchNormState state;
  BatchNormConfig config;

  BatchNorm() = default;
  BatchNorm(Index width, BatchNormConfig cfg);
  Tensor operator()(const Tensor& x, bool training);
  void register_into(ParameterSet& set, const std::string& prefix) const;
};

enum class Activation { none, relu, leaky_relu, tanh };

Tensor activate(const Tensor& x, Activation act, double leaky_slope);

struct MlpSpec {
  Index in = 0;
  std::vector<Index> widths;
  Activation hidden = Activation::leaky_relu;
  Activation last = Activation::leaky_relu;
  bool batch_norm_hidden = false;
  bool batch_norm_last = false;
  double leaky_slope = 0.2;
  BatchNormConfig bn;
};

/// Linear -> [batch norm] -> activation, per layer, applied row-wise.
class Mlp {
 public:
  Mlp() = default;
  Mlp(MlpSpec spec, std::mt19937_64& rng);

  Tensor operator()(const Tensor& x, bool training);
  void register_into(ParameterSet& set, const std::string& prefix) const;

  Index in() const { return spec_.in; }
  Index out() const { return spec_.widths.empty() ? spec_.in : spec_.widths.back(); }
  std::vector<Linear>& layers() { return layers_; }

 private:
  MlpSpec spec_;
  std::vector<Linear> layers_;
  std::vector<BatchNorm> norms_;  // empty entries when a layer has none
  std::vector<bool> has_norm_;
};

}  // namespace pdgn::nn
