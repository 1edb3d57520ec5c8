#pragma once

#include "oracles.hpp"
#include "pdgn/tensor.hpp"

#include <functional>
#include <vector>

namespace gradcheck {

using pdgn::ad::Matrix;
using pdgn::ad::Tensor;
using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Largest relative error between taped and finite-difference gradients of
/// the scalar f over every input.
inline double max_error(const Fn& f, const std::vector<Matrix>& inputs, double h = 1e-5) {
  std::vector<Tensor> params;
  for (const auto& m : inputs) params.push_back(Tensor::parameter(m));
  std::vector<Matrix> analytic;
  {
    pdgn::ad::Tape tape;
    const Tensor loss = f(params);
    analytic = tape.gradients(loss, params);
  }
  const auto numeric = oracle::numeric_gradient(
      [&](const std::vector<Matrix>& x) {
        std::vector<Tensor> c;
        for (const auto& m : x) c.emplace_back(m);
        return f(c).item();
      },
      inputs, h);
  double worst = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    worst = std::max(worst, oracle::relative_error(analytic[i], numeric[i]));
  }
  return worst;
}

/// Same check against tensors that already live inside a model. The loss is
/// re-evaluated with each parameter entry nudged in place.
inline double param_error(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                          double h = 1e-5) {
  std::vector<Matrix> analytic;
  {
    pdgn::ad::Tape tape;
    analytic = tape.gradients(loss(), params);
  }
  double worst = 0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Matrix numeric(params[t].rows(), params[t].cols());
    Matrix& v = params[t].mutable_value();
    for (pdgn::ad::Index i = 0; i < v.size(); ++i) {
      const double keep = v.data()[i];
      v.data()[i] = keep + h;
      const double up = loss().item();
      v.data()[i] = keep - h;
      const double down = loss().item();
      v.data()[i] = keep;
      numeric.data()[i] = (up - down) / (2 * h);
    }
    worst = std::max(worst, oracle::relative_error(analytic[t], numeric));
  }
  return worst;
}

/// Weighted sum with fixed weights, so every output element gets a distinct
/// upstream gradient.
inline Tensor weighted(const Tensor& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const Tensor w(oracle::random_matrix(rng, out.rows(), out.cols()));
  return pdgn::ad::sum(out * w);
}

}  // namespace gradcheck
