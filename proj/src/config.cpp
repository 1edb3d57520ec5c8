#include "pdgn/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace pdgn {

namespace {

using ad::Index;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& v, const std::string& key) {
  T out{};
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": '" + v + "' is not a valid number");
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<Index> parse_list(const std::string& v, const std::string& key) {
  std::vector<Index> out;
  std::size_t pos = 0;
  while (pos <= v.size()) {
    auto end = v.find(',', pos);
    if (end == std::string::npos) end = v.size();
    out.push_back(parse_number<Index>(trim(std::string_view(v).substr(pos, end - pos)), key));
    pos = end + 1;
  }
  return out;
}

std::string join(const std::vector<Index>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::string key;
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

#define PDGN_NUM(KEY, EXPR, TYPE)                                                           \
  Field {                                                                                   \
    KEY, [](Config& c, const std::string& v) { c.EXPR = parse_number<TYPE>(v, KEY); },      \
        [](const Config& c) -> std::string {                                                \
          if constexpr (std::is_floating_point_v<TYPE>) return fmt(c.EXPR);                 \
          else return std::to_string(c.EXPR);                                               \
        }                                                                                   \
  }
#define PDGN_BOOL(KEY, EXPR)                                                                \
  Field {                                                                                   \
    KEY, [](Config& c, const std::string& v) { c.EXPR = parse_bool(v, KEY); },              \
        [](const Config& c) -> std::string { return c.EXPR ? "true" : "false"; }            \
  }
#define PDGN_LIST(KEY, EXPR)                                                                \
  Field {                                                                                   \
    KEY, [](Config& c, const std::string& v) { c.EXPR = parse_list(v, KEY); },              \
        [](const Config& c) { return join(c.EXPR); }                                        \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      PDGN_NUM("latent_dim", train.generator.latent_dim, Index),
      PDGN_NUM("latent_std", train.generator.latent_std, double),
      Field{"stage_points",
            [](Config& c, const std::string& v) {
              const auto pts = parse_list(v, "stage_points");
              c.train.generator.stages.resize(pts.size());
              for (std::size_t i = 0; i < pts.size(); ++i) c.train.generator.stages[i].points = pts[i];
            },
            [](const Config& c) {
              std::vector<Index> v;
              for (const auto& s : c.train.generator.stages) v.push_back(s.points);
              return join(v);
            }},
      Field{"stage_widths",
            [](Config& c, const std::string& v) {
              const auto w = parse_list(v, "stage_widths");
              c.train.generator.stages.resize(w.size());
              for (std::size_t i = 0; i < w.size(); ++i) c.train.generator.stages[i].width = w[i];
            },
            [](const Config& c) {
              std::vector<Index> v;
              for (const auto& s : c.train.generator.stages) v.push_back(s.width);
              return join(v);
            }},
      PDGN_NUM("k", train.generator.k, Index),
      PDGN_NUM("beta", train.generator.beta, double),
      PDGN_LIST("head_widths", train.generator.head_widths),
      PDGN_BOOL("separate_region_mlps", train.generator.separate_region_mlps),
      PDGN_BOOL("generator_batch_norm", train.generator.batch_norm),
      PDGN_NUM("interp_eps", train.generator.interp_eps, double),
      Field{"disc_widths",
            [](Config& c, const std::string& v) {
              auto& w = c.train.discriminator.point_widths;
              w.clear();
              if (v == "auto") return;
              std::size_t pos = 0;
              while (pos <= v.size()) {
                auto end = v.find(';', pos);
                if (end == std::string::npos) end = v.size();
                w.push_back(parse_list(trim(std::string_view(v).substr(pos, end - pos)),
                                       "disc_widths"));
                pos = end + 1;
              }
            },
            [](const Config& c) -> std::string {
              const auto& w = c.train.discriminator.point_widths;
              if (w.empty()) return "auto";
              std::string s;
              for (std::size_t i = 0; i < w.size(); ++i) s += (i ? ";" : "") + join(w[i]);
              return s;
            }},
      PDGN_LIST("scorer_widths", train.discriminator.scorer_widths),
      PDGN_BOOL("disc_batch_norm", train.discriminator.batch_norm),
      Field{"bn_momentum",
            [](Config& c, const std::string& v) {
              c.train.discriminator.bn.momentum = parse_number<double>(v, "bn_momentum");
            },
            [](const Config& c) { return fmt(c.train.discriminator.bn.momentum); }},
      Field{"bn_eps",
            [](Config& c, const std::string& v) {
              c.train.discriminator.bn.eps = parse_number<double>(v, "bn_eps");
            },
            [](const Config& c) { return fmt(c.train.discriminator.bn.eps); }},
      Field{"leaky_slope",
            [](Config& c, const std::string& v) {
              const double s = parse_number<double>(v, "leaky_slope");
              c.train.generator.leaky_slope = s;
              c.train.discriminator.leaky_slope = s;
            },
            [](const Config& c) { return fmt(c.train.generator.leaky_slope); }},
      PDGN_NUM("lambda", train.loss.lambda, double),
      Field{"loss_variant",
            [](Config& c, const std::string& v) {
              try {
                c.train.loss.variant = losses::parse_variant(v);
              } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("loss_variant: ") + e.what());
              }
            },
            [](const Config& c) { return std::string(losses::to_string(c.train.loss.variant)); }},
      PDGN_NUM("spl_centroids", train.loss.spl_centroids, Index),
      PDGN_NUM("spl_k", train.loss.spl_k, Index),
      PDGN_BOOL("spl_detach_finer", train.loss.detach_finer),
      PDGN_BOOL("spl_random_start", train.spl_random_start),
      PDGN_BOOL("non_saturating", train.loss.non_saturating),
      PDGN_NUM("batch_size", train.batch_size, Index),
      PDGN_NUM("iterations", train.iterations, std::int64_t),
      PDGN_NUM("checkpoint_every", train.checkpoint_every, std::int64_t),
      PDGN_NUM("lr", train.adam.lr, double),
      PDGN_NUM("beta1", train.adam.beta1, double),
      PDGN_NUM("beta2", train.adam.beta2, double),
      PDGN_NUM("adam_eps", train.adam.eps, double),
      PDGN_NUM("seed", train.seed, std::uint64_t),
      Field{"data_dir", [](Config& c, const std::string& v) { c.data_dir = v; },
            [](const Config& c) { return c.data_dir; }},
      Field{"synth_kind",
            [](Config& c, const std::string& v) {
              try {
                c.synth_kind = io::parse_synth_kind(v);
              } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("synth_kind: ") + e.what());
              }
            },
            [](const Config& c) { return io::to_string(c.synth_kind); }},
      PDGN_NUM("synth_count", synth_count, std::size_t),
      PDGN_NUM("synth_points", synth_points, Index),
      PDGN_NUM("synth_seed", synth_seed, std::uint64_t),
      Field{"out_dir", [](Config& c, const std::string& v) { c.out_dir = v; },
            [](const Config& c) { return c.out_dir; }},
      PDGN_NUM("jsd_grid", jsd_grid, int),
      PDGN_NUM("metric_workers", metric_workers, unsigned),
      PDGN_NUM("emd_exact_limit", emd_exact_limit, Index),
  };
  return table;
}

#undef PDGN_NUM
#undef PDGN_BOOL
#undef PDGN_LIST

}  // namespace

std::vector<std::string> Config::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

Config Config::parse(const std::string& text, const std::string& source) {
  Config c;
  std::map<std::string, const Field*> by_key;
  for (const auto& f : fields()) by_key[f.key] = &f;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::map<std::string, int> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string val = trim(std::string_view(t).substr(eq + 1));
    auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (seen.count(key)) throw ConfigError(where + "duplicate key '" + key + "'");
    seen[key] = lineno;
    try {
      it->second->set(c, val);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

std::string Config::serialize() const {
  std::string s;
  for (const auto& f : fields()) s += f.key + " = " + f.get(*this) + "\n";
  return s;
}

void Config::validate() const {
  train.validate();
  if (data_dir.empty()) {
    if (synth_count < 1) throw ConfigError("synth_count must be >= 1");
    if (synth_points < train.generator.stages.back().points) {
      throw ConfigError("synth_points must be at least the top resolution (" +
                        std::to_string(train.generator.stages.back().points) + ")");
    }
  }
  if (jsd_grid < 1) throw ConfigError("jsd_grid must be >= 1");
  if (metric_workers < 1) throw ConfigError("metric_workers must be >= 1");
  if (emd_exact_limit < 1) throw ConfigError("emd_exact_limit must be >= 1");
}

}  // namespace pdgn
