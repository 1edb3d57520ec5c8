// pdgn: train, generate, evaluate and synth subcommands.
//
// Exit status: 0 success, 1 invalid usage or input, 2 runtime failure.

#include "pdgn/config.hpp"
#include "pdgn/io.hpp"
#include "pdgn/metrics.hpp"
#include "pdgn/training.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace pdgn;

namespace {

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

io::Corpus training_corpus(const Config& cfg) {
  if (!cfg.data_dir.empty()) return io::load_corpus_dir(cfg.data_dir);
  return io::synth_corpus(cfg.synth_kind, cfg.synth_count, cfg.synth_points, cfg.synth_seed);
}

// Keys that may differ between a checkpoint's config and the resuming one.
bool resumable(const std::string& a, const std::string& b) {
  auto strip = [](const std::string& text) {
    std::istringstream in(text);
    std::string line, out;
    while (std::getline(in, line)) {
      if (line.rfind("iterations ", 0) == 0 || line.rfind("checkpoint_every ", 0) == 0 ||
          line.rfind("out_dir ", 0) == 0)
        continue;
      out += line + "\n";
    }
    return out;
  };
  return strip(a) == strip(b);
}

Checkpoint with_config(Checkpoint ckpt, const Config& cfg) {
  ckpt.texts["config"] = cfg.serialize();
  return ckpt;
}

int run_train(const std::string& config_path, const std::string& resume) {
  const Config cfg = Config::load(config_path);
  const io::Corpus corpus = training_corpus(cfg);
  training::Trainer trainer(cfg.train, corpus.clouds);

  const fs::path out = cfg.out_dir;
  fs::create_directories(out);
  const fs::path log_path = out / "train.log";
  const fs::path ckpt_path = out / "checkpoint.ckpt";

  std::vector<std::string> kept;
  if (!resume.empty()) {
    const Checkpoint ckpt = Checkpoint::load(resume);
    if (!resumable(ckpt.text("config"), cfg.serialize())) {
      throw UsageError("checkpoint '" + resume + "' was written under a different config");
    }
    trainer.restore(ckpt);
    // Drop log records past the checkpoint so the log continues seamlessly.
    std::ifstream in(log_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line == training::log_header() || line.empty()) continue;
      if (std::stoll(line.substr(0, line.find(','))) <= trainer.iteration()) kept.push_back(line);
    }
  }
  {
    std::ofstream log(log_path, std::ios::trunc);
    log << training::log_header() << "\n";
    for (const auto& l : kept) log << l << "\n";
    if (!log) throw std::runtime_error("cannot write '" + log_path.string() + "'");
  }
  std::ofstream log(log_path, std::ios::app);

  try {
    while (trainer.iteration() < cfg.train.iterations) {
      for (const auto& r : trainer.step()) log << training::format_record(r) << "\n";
      log.flush();
      if (cfg.train.checkpoint_every > 0 && trainer.iteration() % cfg.train.checkpoint_every == 0) {
        with_config(trainer.checkpoint(), cfg).save(ckpt_path);
      }
    }
  } catch (const ad::NonFiniteError& e) {
    with_config(trainer.checkpoint(), cfg).save(ckpt_path);
    std::cerr << "training aborted at iteration " << trainer.iteration() + 1 << ": " << e.what()
              << "\nlast finite state saved to " << ckpt_path.string() << "\n";
    return 2;
  }
  with_config(trainer.checkpoint(), cfg).save(ckpt_path);
  std::cout << "trained " << trainer.iteration() << " iterations; checkpoint "
            << ckpt_path.string() << "\n";
  return 0;
}

int run_generate(const std::string& ckpt_path, ad::Index count, std::uint64_t seed,
                 const std::string& out_dir, const std::string& resolution) {
  if (count < 1) throw UsageError("--count must be >= 1");
  const Checkpoint ckpt = Checkpoint::load(ckpt_path);
  const Config cfg = Config::parse(ckpt.text("config"), ckpt_path + "[config]");
  generator::Generator gen(cfg.train.generator, 0);
  training::load_generator(gen, ckpt);

  const auto& stages = cfg.train.generator.stages;
  std::vector<std::size_t> levels;
  if (resolution == "all") {
    for (std::size_t l = 0; l < stages.size(); ++l) levels.push_back(l);
  } else {
    ad::Index r = 0;
    try {
      r = std::stoll(resolution);
    } catch (const std::exception&) {
      throw UsageError("--resolution must be a point count or 'all'");
    }
    for (std::size_t l = 0; l < stages.size(); ++l) {
      if (stages[l].points == r) levels.push_back(l);
    }
    if (levels.empty()) throw UsageError("--resolution " + resolution + " is not a generator stage");
  }

  fs::create_directories(out_dir);
  const ad::Matrix z =
      generator::sample_latent(seed, count, cfg.train.generator.latent_dim,
                               cfg.train.generator.latent_std);
  constexpr ad::Index chunk = 16;
  for (ad::Index start = 0; start < count; start += chunk) {
    const ad::Index n = std::min(chunk, count - start);
    const auto out = gen.generate(ad::Matrix(z.middleRows(start, n)), false);
    for (ad::Index b = 0; b < n; ++b) {
      for (std::size_t l : levels) {
        char name[64];
        std::snprintf(name, sizeof name, "sample_%05lld_r%lld.xyz",
                      static_cast<long long>(start + b), static_cast<long long>(stages[l].points));
        io::save_xyz(fs::path(out_dir) / name, out.cloud(l, b));
      }
    }
  }
  return 0;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int run_evaluate(const std::string& gen_dir, const std::string& ref_dir,
                 const std::string& metric_list, const std::string& report,
                 const metrics::EvaluateOptions& opt) {
  const auto names = split_list(metric_list);
  if (names.empty()) throw UsageError("--metrics is empty");
  const auto gen = io::load_corpus_dir(gen_dir, false);
  const auto ref = io::load_corpus_dir(ref_dir, false);
  const auto r = metrics::evaluate(gen.clouds, ref.clouds, names, opt);
  std::ofstream out(report, std::ios::trunc);
  out << r.serialize();
  if (!out) throw std::runtime_error("cannot write '" + report + "'");
  std::cout << r.serialize();
  return 0;
}

int run_synth(const std::string& kind, std::size_t count, ad::Index points, std::uint64_t seed,
              const std::string& out_dir) {
  const auto corpus = io::synth_corpus(io::parse_synth_kind(kind), count, points, seed);
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < corpus.clouds.size(); ++i) {
    io::save_xyz(fs::path(out_dir) / (corpus.names[i] + ".xyz"), corpus.clouds[i]);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Progressive point-cloud deconvolution GAN"};
  app.require_subcommand(1);

  std::string config_path, resume;
  auto* train = app.add_subcommand("train", "Train from a config file");
  train->add_option("--config", config_path, "Config file")->required();
  train->add_option("--resume", resume, "Checkpoint to resume from");

  std::string ckpt, gen_out, resolution = "all";
  ad::Index count = 0;
  std::uint64_t gen_seed = 0;
  auto* generate = app.add_subcommand("generate", "Sample clouds from a checkpoint");
  generate->add_option("--checkpoint", ckpt)->required();
  generate->add_option("--count", count)->required();
  generate->add_option("--seed", gen_seed)->required();
  generate->add_option("--out", gen_out)->required();
  generate->add_option("--resolution", resolution, "Point count or 'all'");

  std::string gen_dir, ref_dir, metric_list, report, metric_config;
  metrics::EvaluateOptions eval_opt;
  int grid = 0;
  unsigned workers = 0;
  ad::Index emd_limit = 0;
  auto* evaluate = app.add_subcommand("evaluate", "Compare two directories of clouds");
  evaluate->add_option("--generated", gen_dir)->required();
  evaluate->add_option("--reference", ref_dir)->required();
  evaluate->add_option("--metrics", metric_list,
                       "Comma list of jsd, mmd-cd, mmd-emd, cov-cd, cov-emd, 1nna-cd, 1nna-emd, all")
      ->required();
  evaluate->add_option("--report", report)->required();
  evaluate->add_option("--jsd-grid", grid);
  evaluate->add_option("--workers", workers);
  evaluate->add_option("--emd-exact-limit", emd_limit);
  evaluate->add_option("--config", metric_config, "Take metric defaults from a config file");

  std::string kind, synth_out;
  std::size_t synth_count = 0;
  ad::Index points = 0;
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus");
  synth->add_option("--kind", kind, "sphere, plane or two-clusters")->required();
  synth->add_option("--count", synth_count)->required();
  synth->add_option("--points", points)->required();
  synth->add_option("--seed", synth_seed)->required();
  synth->add_option("--out", synth_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*train) return run_train(config_path, resume);
    if (*generate) return run_generate(ckpt, count, gen_seed, gen_out, resolution);
    if (*evaluate) {
      if (!metric_config.empty()) {
        const Config cfg = Config::load(metric_config);
        eval_opt.jsd_grid = cfg.jsd_grid;
        eval_opt.workers = cfg.metric_workers;
        eval_opt.emd.exact_limit = cfg.emd_exact_limit;
      }
      if (evaluate->count("--jsd-grid")) eval_opt.jsd_grid = grid;
      if (evaluate->count("--workers")) eval_opt.workers = workers;
      if (evaluate->count("--emd-exact-limit")) eval_opt.emd.exact_limit = emd_limit;
      return run_evaluate(gen_dir, ref_dir, metric_list, report, eval_opt);
    }
    if (*synth) return run_synth(kind, synth_count, points, synth_seed, synth_out);
  } catch (const io::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
