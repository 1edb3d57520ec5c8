#pragma once

#include "pdgn/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace pdgn::ad {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed, ordered list of parameters.
class Adam {
 public:
  Adam() = default;
  Adam(AdamConfig config, std::span<const Tensor> params);

  /// Applies one update from explicit gradients. A non-finite gradient throws
  /// NonFiniteError and leaves both the parameters and the state untouched.
  void step(std::span<Tensor> params, std::span<const Matrix> grads);
  /// Same, reading the gradients accumulated on the parameters.
  void step(std::span<Tensor> params);

  std::int64_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

  // Exposed for checkpointing.
  std::vector<Matrix>& first_moments() { return m_; }
  std::vector<Matrix>& second_moments() { return v_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  AdamConfig config_;
  std::int64_t t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

}  // namespace pdgn::ad
