#include "pdgn/nn.hpp"

#include <cmath>

namespace pdgn::nn {

void ParameterSet::append(const std::string& prefix, const ParameterSet& other) {
  for (const auto& p : other.params_) add(prefix + p.name, p.tensor);
  for (const auto& b : other.buffers_) add_buffer(prefix + b.name, b.tensor);
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void ParameterSet::set_requires_grad(bool on) {
  for (auto& p : params_) p.tensor.set_requires_grad(on);
}

Index ParameterSet::scalar_count() const {
  Index n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

Matrix uniform_init(Index rows, Index cols, Index fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Index>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Linear::Linear(Index in, Index out, std::mt19937_64& rng)
    : weight(Tensor::parameter(uniform_init(in, out, in, rng))),
      bias(Tensor::parameter(uniform_init(1, out, in, rng))) {}

Tensor Linear::operator()(const Tensor& x) const {
  return ad::add_row(ad::matmul(x, weight), bias);
}

void Linear::register_into(ParameterSet& set, const std::string& prefix) const {
  set.add(prefix + "weight", weight);
  set.add(prefix + "bias", bias);
}

BatchNorm::BatchNorm(Index width, BatchNormConfig cfg)
    : gamma(Tensor::parameter(Matrix::Ones(1, width))),
      beta(Tensor::parameter(Matrix::Zero(1, width))),
      state{Tensor(Matrix::Zero(1, width)), Tensor(Matrix::Ones(1, width))},
      config(cfg) {}

Tensor BatchNorm::operator()(const Tensor& x, bool training) {
  return ad::batch_norm(x, gamma, beta, state, training, config.momentum, config.eps);
}

void BatchNorm::register_into(ParameterSet& set, const std::string& prefix) const {
  set.add(prefix + "gamma", gamma);
  set.add(prefix + "beta", beta);
  set.add_buffer(prefix + "running_mean", state.running_mean);
  set.add_buffer(prefix + "running_var", state.running_var);
}

Tensor activate(const Tensor& x, Activation act, double leaky_slope) {
  switch (act) {
    case Activation::none:
      return x;
    case Activation::relu:
      return ad::relu(x);
    case Activation::leaky_relu:
      return ad::leaky_relu(x, leaky_slope);
    case Activation::tanh:
      return ad::tanh(x);
  }
  return x;
}

Mlp::Mlp(MlpSpec spec, std::mt19937_64& rng) : spec_(std::move(spec)) {
  Index in = spec_.in;
  const std::size_t n = spec_.widths.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Index out = spec_.widths[i];
    layers_.emplace_back(in, out, rng);
    const bool last = i + 1 == n;
    const bool bn = last ? spec_.batch_norm_last : spec_.batch_norm_hidden;
    has_norm_.push_back(bn);
    norms_.push_back(bn ? BatchNorm(out, spec_.bn) : BatchNorm());
    in = out;
  }
}

Tensor Mlp::operator()(const Tensor& x, bool training) {
  if (x.cols() != spec_.in) {
    throw ad::ShapeError("mlp: expected width " + std::to_string(spec_.in) + ", got " +
                         std::to_string(x.cols()));
  }
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i](h);
    if (has_norm_[i]) h = norms_[i](h, training);
    const bool last = i + 1 == layers_.size();
    h = activate(h, last ? spec_.last : spec_.hidden, spec_.leaky_slope);
  }
  return h;
}

void Mlp::register_into(ParameterSet& set, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string p = prefix + std::to_string(i) + ".";
    layers_[i].register_into(set, p);
    if (has_norm_[i]) norms_[i].register_into(set, p + "bn.");
  }
}

}  // namespace pdgn::nn
