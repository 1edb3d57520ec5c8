#pragma once

// Alternating multi-resolution GAN training.
//
// One iteration draws a batch of real clouds and latent vectors, generates
// every resolution once, takes one discriminator Adam step per resolution,
// then one generator Adam step on the summed per-resolution generator
// losses. Each iteration appends one log record per resolution.

#include "pdgn/checkpoint.hpp"
#include "pdgn/discriminator.hpp"
#include "pdgn/generator.hpp"
#include "pdgn/losses.hpp"
#include "pdgn/optim.hpp"

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace pdgn::training {

using ad::Index;
using ad::Matrix;
using ad::Tensor;

struct TrainConfig {
  generator::GeneratorConfig generator;
  discriminator::DiscriminatorConfig discriminator;
  losses::LossConfig loss;
  ad::AdamConfig adam;
  Index batch_size = 32;
  std::int64_t iterations = 1000;
  std::int64_t checkpoint_every = 0;  // 0: only at the end
  std::uint64_t seed = 0;
  /// Random first FPS centroid during training instead of the canonical one.
  bool spl_random_start = false;

  std::vector<Index> resolutions() const;
  void validate() const;
};

/// FPS-downsampled copies of `cloud`, one per resolution.
std::vector<PointCloud> real_multiresolution(const PointCloud& cloud,
                                             const std::vector<Index>& resolutions);

struct LogRecord {
  std::int64_t iter = 0;
  int stage = 0;  // 1-based resolution index
  double loss_d = 0;
  double loss_g = 0;
  /// Coupling term between this resolution and the next (NaN when absent).
  double spl = 0;
};

/// `iter, stage, loss_D, loss_G, spl` with shortest round-trip decimals.
std::string format_record(const LogRecord& r);
std::string log_header();

class Trainer {
 public:
  /// `corpus` holds normalized clouds with at least the top resolution's
  /// point count each.
  Trainer(TrainConfig cfg, const std::vector<PointCloud>& corpus);

  /// Runs one iteration. Throws ad::NonFiniteError if a loss or gradient
  /// goes non-finite; parameters stay finite in that case.
  std::vector<LogRecord> step();

  std::int64_t iteration() const { return iteration_; }
  const TrainConfig& config() const { return cfg_; }
  generator::Generator& generator() { return *gen_; }
  discriminator::Discriminator& discriminator() { return *disc_; }
  /// Real clouds of the corpus at resolution l.
  const std::vector<PointCloud>& real(std::size_t level) const { return real_.at(level); }

  /// Full training state: parameters, buffers, Adam moments, iteration, RNG.
  Checkpoint checkpoint() const;
  /// Restores a state produced by checkpoint() under the same config.
  void restore(const Checkpoint& ckpt);

 private:
  Tensor real_batch(std::size_t level, const std::vector<std::size_t>& picks) const;

  TrainConfig cfg_;
  std::unique_ptr<generator::Generator> gen_;
  std::unique_ptr<discriminator::Discriminator> disc_;
  ad::Adam adam_g_;
  std::vector<ad::Adam> adam_d_;
  std::vector<std::vector<PointCloud>> real_;  // [level][cloud]
  std::mt19937_64 rng_;
  std::int64_t iteration_ = 0;
};

/// Parameters and buffers of a generator, keyed as in a trainer checkpoint.
void load_generator(generator::Generator& gen, const Checkpoint& ckpt);

}  // namespace pdgn::training
