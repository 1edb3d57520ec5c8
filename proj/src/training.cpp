#include "pdgn/training.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace pdgn::training {

std::vector<Index> TrainConfig::resolutions() const {
  std::vector<Index> out;
  for (const auto& s : generator.stages) out.push_back(s.points);
  return out;
}

void TrainConfig::validate() const {
  generator.validate();
  loss.validate();
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (iterations < 0) throw std::invalid_argument("train config: iterations must be >= 0");
  if (checkpoint_every < 0) {
    throw std::invalid_argument("train config: checkpoint_every must be >= 0");
  }
  if (!(adam.lr > 0) || !(adam.beta1 >= 0 && adam.beta1 < 1) ||
      !(adam.beta2 >= 0 && adam.beta2 < 1) || !(adam.eps > 0)) {
    throw std::invalid_argument("train config: invalid Adam hyperparameters");
  }
  const Index coarsest = generator.stages.front().points;
  if (loss.variant == losses::LossVariant::shape_preserving && loss.spl_k > coarsest) {
    throw std::invalid_argument("train config: spl_k exceeds the coarsest resolution");
  }
  if (!discriminator.point_widths.empty()) discriminator.validate(generator.stages.size());
}

std::vector<PointCloud> real_multiresolution(const PointCloud& cloud,
                                             const std::vector<Index>& resolutions) {
  std::vector<PointCloud> out;
  out.reserve(resolutions.size());
  for (Index r : resolutions) {
    if (r > cloud.rows()) {
      throw std::invalid_argument("real_multiresolution: cloud has " +
                                  std::to_string(cloud.rows()) + " points, resolution " +
                                  std::to_string(r) + " requested");
    }
    const auto idx = geometry::fps(cloud, r, 0);
    PointCloud c(r, 3);
    for (Index i = 0; i < r; ++i) c.row(i) = cloud.row(idx[static_cast<std::size_t>(i)]);
    out.push_back(std::move(c));
  }
  return out;
}

namespace {

void append_double(std::string& s, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  s.append(buf, res.ptr);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

Matrix scalar_matrix(double v) { return Matrix::Constant(1, 1, v); }

void store_set(Checkpoint& ckpt, const std::string& prefix, const nn::ParameterSet& set) {
  for (const auto& p : set.params()) ckpt.arrays[prefix + p.name] = p.tensor.value();
  for (const auto& b : set.buffers()) ckpt.arrays[prefix + "buffer." + b.name] = b.tensor.value();
}

void load_set(const Checkpoint& ckpt, const std::string& prefix, nn::ParameterSet& set) {
  auto assign = [&](const std::string& key, Tensor& t) {
    const Matrix& m = ckpt.array(key);
    if (m.rows() != t.rows() || m.cols() != t.cols()) {
      throw FormatError("checkpoint: '" + key + "' has the wrong shape");
    }
    t.mutable_value() = m;
  };
  for (auto p : set.params()) assign(prefix + p.name, p.tensor);
  for (auto b : set.buffers()) assign(prefix + "buffer." + b.name, b.tensor);
}

void store_adam(Checkpoint& ckpt, const std::string& prefix, const ad::Adam& adam) {
  ckpt.arrays[prefix + "t"] = scalar_matrix(static_cast<double>(adam.steps()));
  for (std::size_t i = 0; i < adam.first_moments().size(); ++i) {
    ckpt.arrays[prefix + "m." + std::to_string(i)] = adam.first_moments()[i];
    ckpt.arrays[prefix + "v." + std::to_string(i)] = adam.second_moments()[i];
  }
}

void load_adam(const Checkpoint& ckpt, const std::string& prefix, ad::Adam& adam) {
  adam.set_steps(static_cast<std::int64_t>(ckpt.array(prefix + "t")(0, 0)));
  for (std::size_t i = 0; i < adam.first_moments().size(); ++i) {
    const Matrix& m = ckpt.array(prefix + "m." + std::to_string(i));
    const Matrix& v = ckpt.array(prefix + "v." + std::to_string(i));
    if (m.rows() != adam.first_moments()[i].rows() || m.cols() != adam.first_moments()[i].cols() ||
        v.rows() != m.rows() || v.cols() != m.cols()) {
      throw FormatError("checkpoint: optimizer moment " + prefix + std::to_string(i) +
                        " has the wrong shape");
    }
    adam.first_moments()[i] = m;
    adam.second_moments()[i] = v;
  }
}

}  // namespace

std::string log_header() { return "iter,stage,loss_D,loss_G,spl"; }

std::string format_record(const LogRecord& r) {
  std::string s = std::to_string(r.iter) + "," + std::to_string(r.stage) + ",";
  append_double(s, r.loss_d);
  s += ",";
  append_double(s, r.loss_g);
  s += ",";
  append_double(s, r.spl);
  return s;
}

Trainer::Trainer(TrainConfig cfg, const std::vector<PointCloud>& corpus)
    : cfg_(std::move(cfg)), rng_(cfg_.seed) {
  cfg_.validate();
  if (corpus.empty()) throw std::invalid_argument("trainer: empty corpus");
  const auto res = cfg_.resolutions();
  gen_ = std::make_unique<generator::Generator>(cfg_.generator, derive_seed(cfg_.seed, 1));
  disc_ = std::make_unique<discriminator::Discriminator>(cfg_.discriminator, res,
                                                         derive_seed(cfg_.seed, 2));
  cfg_.discriminator = disc_->config();

  const auto gp = gen_->parameters().tensors();
  adam_g_ = ad::Adam(cfg_.adam, gp);
  for (std::size_t l = 0; l < res.size(); ++l) {
    const auto dp = disc_->parameters(l).tensors();
    adam_d_.emplace_back(cfg_.adam, dp);
  }

  real_.assign(res.size(), {});
  for (const auto& cloud : corpus) {
    auto levels = real_multiresolution(cloud, res);
    for (std::size_t l = 0; l < res.size(); ++l) real_[l].push_back(std::move(levels[l]));
  }
}

Tensor Trainer::real_batch(std::size_t level, const std::vector<std::size_t>& picks) const {
  const Index n = cfg_.generator.stages[level].points;
  Matrix m(static_cast<Index>(picks.size()) * n, 3);
  for (std::size_t b = 0; b < picks.size(); ++b) {
    m.middleRows(static_cast<Index>(b) * n, n) = real_[level][picks[b]];
  }
  return Tensor(std::move(m));
}

std::vector<LogRecord> Trainer::step() {
  const Index batch = cfg_.batch_size;
  const std::size_t levels = real_.size();

  std::uniform_int_distribution<std::size_t> pick(0, real_[0].size() - 1);
  std::vector<std::size_t> picks(static_cast<std::size_t>(batch));
  for (auto& p : picks) p = pick(rng_);
  const Matrix z = generator::sample_latent(rng_, batch, cfg_.generator.latent_dim,
                                            cfg_.generator.latent_std);

  std::vector<LogRecord> records(levels);
  nn::ParameterSet& gparams = gen_->parameters();

  ad::Tape gtape;
  const auto out = gen_->generate(Tensor(z), true);

  // Real and fake clouds go through each discriminator as one batch so that
  // batch norm sees shared statistics; per-source statistics would hide the
  // scale of the fakes. Fakes are detached here, so only D parameters move.
  for (std::size_t l = 0; l < levels; ++l) {
    ad::Tape dtape;
    const Tensor real = real_batch(l, picks);
    const Tensor fake = out.levels[l].coords.detach();
    const Tensor logits =
        disc_->logits(ad::concat_rows({real, fake}), 2 * batch, l, discriminator::Mode::train);
    const Tensor loss = losses::discriminator_loss(ad::slice_rows(logits, 0, batch),
                                                   ad::slice_rows(logits, batch, batch));
    auto dp = disc_->parameters(l).tensors();
    const auto grads = dtape.gradients(loss, dp);
    adam_d_[l].step(dp, grads);
    records[l].loss_d = loss.item();
  }

  // Generator phase with the discriminators frozen.
  for (std::size_t l = 0; l < levels; ++l) disc_->parameters(l).set_requires_grad(false);
  struct Unfreeze {
    discriminator::Discriminator& d;
    ~Unfreeze() {
      for (std::size_t l = 0; l < d.levels(); ++l) d.parameters(l).set_requires_grad(true);
    }
  } unfreeze{*disc_};

  const auto start =
      cfg_.spl_random_start ? losses::CentroidStart::random : losses::CentroidStart::canonical;
  Tensor total;
  for (std::size_t l = 0; l < levels; ++l) {
    const Tensor logits = disc_->logits(ad::concat_rows({real_batch(l, picks), out.levels[l].coords}),
                                        2 * batch, l, discriminator::Mode::train);
    const Tensor lf = ad::slice_rows(logits, batch, batch);
    Tensor lg = losses::generator_adversarial_loss(lf, cfg_.loss.non_saturating);
    records[l].spl = std::numeric_limits<double>::quiet_NaN();
    if (cfg_.loss.lambda > 0) {
      if (auto c = losses::coupling(out, l, cfg_.loss, start, rng_)) {
        records[l].spl = c->item();
        lg = lg + ad::scale(*c, cfg_.loss.lambda);
      }
    }
    records[l].loss_g = lg.item();
    total = l == 0 ? lg : total + lg;
  }
  auto gp = gparams.tensors();
  const auto grads = gtape.gradients(total, gp);
  adam_g_.step(gp, grads);

  ++iteration_;
  for (std::size_t l = 0; l < levels; ++l) {
    records[l].iter = iteration_;
    records[l].stage = static_cast<int>(l + 1);
  }
  return records;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ckpt;
  store_set(ckpt, "g.", gen_->parameters());
  for (std::size_t l = 0; l < disc_->levels(); ++l) {
    store_set(ckpt, "d" + std::to_string(l) + ".", disc_->parameters(l));
    store_adam(ckpt, "adam.d" + std::to_string(l) + ".", adam_d_[l]);
  }
  store_adam(ckpt, "adam.g.", adam_g_);
  ckpt.arrays["iteration"] = scalar_matrix(static_cast<double>(iteration_));
  std::ostringstream rng;
  rng << rng_;
  ckpt.texts["rng"] = rng.str();
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  load_set(ckpt, "g.", gen_->parameters());
  for (std::size_t l = 0; l < disc_->levels(); ++l) {
    load_set(ckpt, "d" + std::to_string(l) + ".", disc_->parameters(l));
    load_adam(ckpt, "adam.d" + std::to_string(l) + ".", adam_d_[l]);
  }
  load_adam(ckpt, "adam.g.", adam_g_);
  iteration_ = static_cast<std::int64_t>(ckpt.array("iteration")(0, 0));
  std::istringstream rng(ckpt.text("rng"));
  rng >> rng_;
  if (!rng) throw FormatError("checkpoint: malformed RNG state");
}

void load_generator(generator::Generator& gen, const Checkpoint& ckpt) {
  load_set(ckpt, "g.", gen.parameters());
}

}  // namespace pdgn::training
