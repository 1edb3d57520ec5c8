#include "pdgn/optim.hpp"

#include <cmath>
#include <string>

namespace pdgn::ad {

Adam::Adam(AdamConfig config, std::span<const Tensor> params) : config_(config) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.push_back(Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

void Adam::step(std::span<Tensor> params, std::span<const Matrix> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw ShapeError("adam: expected " + std::to_string(m_.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].rows() != m_[i].rows() || params[i].cols() != m_[i].cols() ||
        grads[i].rows() != m_[i].rows() || grads[i].cols() != m_[i].cols()) {
      throw ShapeError("adam: parameter " + std::to_string(i) + " changed shape");
    }
    if (!grads[i].allFinite()) {
      throw NonFiniteError("adam: non-finite gradient for parameter " + std::to_string(i));
    }
  }
  ++t_;
  const auto& c = config_;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = grads[i];
    m_[i] = c.beta1 * m_[i] + (1.0 - c.beta1) * g;
    v_[i] = c.beta2 * v_[i] + (1.0 - c.beta2) * g.cwiseProduct(g);
    auto m_hat = m_[i].array() / bc1;
    auto v_hat = v_[i].array() / bc2;
    params[i].mutable_value().array() -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
  }
}

void Adam::step(std::span<Tensor> params) {
  std::vector<Matrix> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(p.grad());
  step(params, grads);
}

}  // namespace pdgn::ad
