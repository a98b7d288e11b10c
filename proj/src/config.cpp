#include "lfg/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "lfg/error.hpp"

namespace lfg::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& what, const std::string& v) {
  throw_config("config: " + key + ": expected " + what + ", got '" + v + "'");
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) bad_value(key, "integer", v);
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) bad_value(key, "unsigned integer", v);
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) bad_value(key, "number", v);
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, "boolean", v);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(bool v) { return v ? "true" : "false"; }

struct Field {
  std::string key;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&, const std::string&)> set;
};

// Member-pointer helpers keep the table below one line per key.
template <typename T>
Field int_field(std::string key, T PipelineConfig::*sub, int T::*m) {
  return {key, [=](const PipelineConfig& c) { return std::to_string(c.*sub.*m); },
          [=](PipelineConfig& c, const std::string& k, const std::string& v) {
            c.*sub.*m = static_cast<int>(to_int(k, v));
          }};
}

template <typename T>
Field double_field(std::string key, T PipelineConfig::*sub, double T::*m) {
  return {key, [=](const PipelineConfig& c) { return fmt(c.*sub.*m); },
          [=](PipelineConfig& c, const std::string& k, const std::string& v) {
            c.*sub.*m = to_double(k, v);
          }};
}

template <typename T>
Field bool_field(std::string key, T PipelineConfig::*sub, bool T::*m) {
  return {key, [=](const PipelineConfig& c) { return fmt(c.*sub.*m); },
          [=](PipelineConfig& c, const std::string& k, const std::string& v) {
            c.*sub.*m = to_bool(k, v);
          }};
}

template <typename T>
Field u64_field(std::string key, T PipelineConfig::*sub, std::uint64_t T::*m) {
  return {key, [=](const PipelineConfig& c) { return std::to_string(c.*sub.*m); },
          [=](PipelineConfig& c, const std::string& k, const std::string& v) {
            c.*sub.*m = to_u64(k, v);
          }};
}

template <typename M>
Field top_field(std::string key, M PipelineConfig::*m) {
  return {key,
          [=](const PipelineConfig& c) {
            if constexpr (std::is_same_v<M, double>) return fmt(c.*m);
            else if constexpr (std::is_same_v<M, bool>) return fmt(c.*m);
            else if constexpr (std::is_same_v<M, std::string>) return c.*m;
            else if constexpr (std::is_same_v<M, std::filesystem::path>) return (c.*m).string();
            else return std::to_string(c.*m);
          },
          [=](PipelineConfig& c, const std::string& k, const std::string& v) {
            if constexpr (std::is_same_v<M, double>) c.*m = to_double(k, v);
            else if constexpr (std::is_same_v<M, bool>) c.*m = to_bool(k, v);
            else if constexpr (std::is_same_v<M, std::string>) c.*m = v;
            else if constexpr (std::is_same_v<M, std::filesystem::path>) c.*m = v;
            else if constexpr (std::is_same_v<M, std::uint64_t>) c.*m = to_u64(k, v);
            else c.*m = static_cast<M>(to_int(k, v));
          }};
}

const std::vector<Field>& fields() {
  using P = PipelineConfig;
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(top_field("general.seed", &P::seed));
    f.push_back(top_field("general.out_dir", &P::out_dir));
    f.push_back(top_field("general.threads", &P::threads));

    f.push_back(int_field("phantom.count", &P::phantom, &PhantomSpec::count));
    f.push_back(double_field("phantom.lesion_rate", &P::phantom, &PhantomSpec::lesion_rate));
    f.push_back(int_field("phantom.slices_per_patient", &P::phantom, &PhantomSpec::slices_per_patient));
    f.push_back(int_field("phantom.max_lesions", &P::phantom, &PhantomSpec::max_lesions));

    f.push_back(top_field("data.dims", &P::dims));
    f.push_back(top_field("data.hu_window", &P::hu_window));
    f.push_back(top_field("data.hu_lo", &P::hu_lo));
    f.push_back(top_field("data.hu_hi", &P::hu_hi));
    f.push_back(top_field("data.min_lesion_pixels", &P::min_lesion_pixels));

    f.push_back(double_field("split.train", &P::split, &SplitRatios::train));
    f.push_back(double_field("split.validation", &P::split, &SplitRatios::validation));
    f.push_back(double_field("split.test", &P::split, &SplitRatios::test));
    f.push_back(top_field("split.k_folds", &P::k_folds));

    f.push_back(top_field("shape.clip", &P::shape_clip));
    f.push_back(top_field("shape.placement_attempts", &P::placement_attempts));
    f.push_back(top_field("shape.min_area", &P::min_area));
    f.push_back(top_field("shape.max_area", &P::max_area));

    using G = pcgan::GeneratorConfig;
    f.push_back(int_field("generator.stages", &P::generator, &G::stages));
    f.push_back(int_field("generator.base_channels", &P::generator, &G::base_channels));
    f.push_back(int_field("generator.max_channels", &P::generator, &G::max_channels));
    f.push_back(int_field("generator.kernel", &P::generator, &G::kernel));
    f.push_back(bool_field("generator.swap_activations", &P::generator, &G::swap_activations));
    f.push_back(double_field("generator.leaky_slope", &P::generator, &G::leaky_slope));
    f.push_back(u64_field("generator.seed", &P::generator, &G::seed));

    using D = pcgan::DiscriminatorConfig;
    f.push_back(int_field("discriminator.base_channels", &P::discriminator, &D::base_channels));
    f.push_back(bool_field("discriminator.spectral_norm", &P::discriminator, &D::spectral_norm));
    f.push_back({"discriminator.leaky_slope",
                 [](const P& c) { return fmt(c.discriminator.act.slope); },
                 [](P& c, const std::string& k, const std::string& v) {
                   c.discriminator.act.slope = to_double(k, v);
                 }});
    f.push_back(u64_field("discriminator.seed", &P::discriminator, &D::seed));

    using W = losses::LossWeights;
    f.push_back(double_field("loss.reconstruction", &P::weights, &W::reconstruction));
    f.push_back(double_field("loss.perceptual", &P::weights, &W::perceptual));
    f.push_back(double_field("loss.texture", &P::weights, &W::texture));
    f.push_back(double_field("loss.w1", &P::weights, &W::w1));
    f.push_back(double_field("loss.w2", &P::weights, &W::w2));
    f.push_back(double_field("loss.gp", &P::weights, &W::gp));
    f.push_back(double_field("loss.ce", &P::weights, &W::ce));
    f.push_back(double_field("loss.dice", &P::weights, &W::dice));
    f.push_back(top_field("loss.extractor", &P::extractor));
    f.push_back(top_field("loss.extractor_seed", &P::extractor_seed));
    f.push_back(top_field("loss.extractor_weights", &P::extractor_weights));

    using T = train::TrainConfig;
    f.push_back(double_field("train.lr_g", &P::train, &T::lr_g));
    f.push_back(double_field("train.lr_d", &P::train, &T::lr_d));
    f.push_back(int_field("train.batch", &P::train, &T::batch));
    f.push_back({"train.iterations", [](const P& c) { return std::to_string(c.train.iterations); },
                 [](P& c, const std::string& k, const std::string& v) {
                   c.train.iterations = to_int(k, v);
                 }});
    f.push_back({"train.checkpoint_every",
                 [](const P& c) { return std::to_string(c.train.checkpoint_every); },
                 [](P& c, const std::string& k, const std::string& v) {
                   c.train.checkpoint_every = to_int(k, v);
                 }});
    f.push_back(int_field("train.patch", &P::train, &T::patch));
    f.push_back(bool_field("train.masked_patch", &P::train, &T::masked_patch));
    f.push_back(int_field("train.critic_steps", &P::train, &T::critic_steps));
    f.push_back(bool_field("train.bias_correction", &P::train, &T::bias_correction));
    f.push_back(bool_field("train.record_wall_time", &P::train, &T::record_wall_time));
    f.push_back({"train.deviations", [](const P& c) { return c.train.deviations; },
                 [](P& c, const std::string&, const std::string& v) { c.train.deviations = v; }});

    using R = radiomics::RadiomicsConfig;
    f.push_back(int_field("radiomics.levels", &P::radiomics, &R::levels));
    f.push_back(int_field("radiomics.bins", &P::radiomics, &R::bins));
    f.push_back(double_field("radiomics.eps", &P::radiomics, &R::eps));
    f.push_back(bool_field("radiomics.symmetric", &P::radiomics, &R::symmetric));

    f.push_back({"seg.levels", [](const P& c) { return std::to_string(c.seg.model.levels); },
                 [](P& c, const std::string& k, const std::string& v) {
                   c.seg.model.levels = static_cast<int>(to_int(k, v));
                 }});
    f.push_back({"seg.base_channels",
                 [](const P& c) { return std::to_string(c.seg.model.base_channels); },
                 [](P& c, const std::string& k, const std::string& v) {
                   c.seg.model.base_channels = static_cast<int>(to_int(k, v));
                 }});
    f.push_back({"seg.epochs", [](const P& c) { return std::to_string(c.seg.train.epochs); },
                 [](P& c, const std::string& k, const std::string& v) {
                   c.seg.train.epochs = static_cast<int>(to_int(k, v));
                 }});
    f.push_back({"seg.batch", [](const P& c) { return std::to_string(c.seg.train.batch); },
                 [](P& c, const std::string& k, const std::string& v) {
                   c.seg.train.batch = static_cast<int>(to_int(k, v));
                 }});
    f.push_back({"seg.lr", [](const P& c) { return fmt(c.seg.train.lr); },
                 [](P& c, const std::string& k, const std::string& v) {
                   c.seg.train.lr = to_double(k, v);
                 }});
    f.push_back({"seg.seeds",
                 [](const P& c) {
                   std::string s;
                   for (auto x : c.seg.seeds) s += (s.empty() ? "" : ",") + std::to_string(x);
                   return s;
                 },
                 [](P& c, const std::string& k, const std::string& v) {
                   c.seg.seeds.clear();
                   std::stringstream ss(v);
                   std::string item;
                   while (std::getline(ss, item, ',')) c.seg.seeds.push_back(to_u64(k, trim(item)));
                 }});
    f.push_back({"seg.per_patient", [](const P& c) { return fmt(c.seg.per_patient); },
                 [](P& c, const std::string& k, const std::string& v) {
                   c.seg.per_patient = to_bool(k, v);
                 }});
    f.push_back(top_field("synth.count", &P::synth_count));
    return f;
  }();
  return table;
}

}  // namespace

KeyValues parse_ini(const std::string& text, const std::string& source) {
  KeyValues out;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw_config(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw_config(where + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw_config(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw_config(where + ": empty key");
    if (section.empty()) throw_config(where + ": key '" + key + "' outside any section");
    out[section + "." + key] = trim(line.substr(eq + 1));
  }
  return out;
}

PipelineConfig default_config() {
  PipelineConfig c;
  c.generator.stages = 6;
  c.generator.base_channels = 16;
  c.generator.max_channels = 128;
  c.discriminator.patch = 64;
  c.train.patch = 64;
  c.phantom.dims = c.dims;
  c.generator.height = c.generator.width = c.dims;
  c.seg.model.height = c.seg.model.width = c.dims;
  return c;
}

void apply(PipelineConfig& cfg, const KeyValues& values) {
  for (const auto& [key, value] : values) {
    bool found = false;
    for (const auto& f : fields()) {
      if (f.key == key) {
        f.set(cfg, key, value);
        found = true;
        break;
      }
    }
    if (!found) throw_config("config: unknown key '" + key + "'");
  }
  cfg.phantom.dims = cfg.dims;
  cfg.generator.height = cfg.generator.width = cfg.dims;
  cfg.seg.model.height = cfg.seg.model.width = cfg.dims;
  cfg.phantom.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  cfg.discriminator.patch = cfg.train.patch;
  cfg.train.weights = cfg.weights;
  cfg.seg.train.lambda_ce = cfg.weights.ce;
  cfg.seg.train.lambda_dice = cfg.weights.dice;
}

KeyValues to_key_values(const PipelineConfig& cfg) {
  KeyValues out;
  for (const auto& f : fields()) out[f.key] = f.get(cfg);
  return out;
}

std::string to_ini(const PipelineConfig& cfg) {
  std::string out, section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string s = f.key.substr(0, dot);
    if (s != section) {
      out += (out.empty() ? "[" : "\n[") + s + "]\n";
      section = s;
    }
    out += f.key.substr(dot + 1) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

void validate(const PipelineConfig& c) {
  auto fail = [](const std::string& key, const std::string& why) {
    throw_config("config: " + key + ": " + why);
  };
  if (c.threads < 0) fail("general.threads", "must be >= 0");
  if (c.phantom.count < 1) fail("phantom.count", "must be >= 1");
  if (c.phantom.lesion_rate < 0 || c.phantom.lesion_rate > 1) fail("phantom.lesion_rate", "must be in [0, 1]");
  if (c.phantom.slices_per_patient < 1) fail("phantom.slices_per_patient", "must be >= 1");
  if (c.phantom.max_lesions < 1) fail("phantom.max_lesions", "must be >= 1");
  if (c.dims < 16) fail("data.dims", "must be >= 16");
  if (!(c.hu_hi > c.hu_lo)) fail("data.hu_hi", "must exceed data.hu_lo");
  if (c.split.train < 0 || c.split.validation < 0 || c.split.test < 0 ||
      std::abs(c.split.train + c.split.validation + c.split.test - 1.0) > 1e-9) {
    fail("split.train", "split ratios must be >= 0 and sum to 1");
  }
  if (c.k_folds < 0 || c.k_folds == 1) fail("split.k_folds", "must be 0 or >= 2");
  if (!(c.shape_clip > 0)) fail("shape.clip", "must be > 0");
  if (c.placement_attempts < 1) fail("shape.placement_attempts", "must be >= 1");
  if (c.min_area < 0 || c.max_area < 0 || (c.max_area > 0 && c.max_area < c.min_area)) {
    fail("shape.max_area", "areas must be >= 0 and max_area >= min_area");
  }
  const auto& g = c.generator;
  if (g.stages < 2 || g.stages > 12) fail("generator.stages", "must be in [2, 12]");
  if (g.height % (1 << g.stages) || g.width % (1 << g.stages) || g.height < 1 || g.width < 1) {
    fail("generator.stages", std::to_string(g.height) + "x" + std::to_string(g.width) +
                                 " input is not divisible by 2^" + std::to_string(g.stages));
  }
  if (g.base_channels < 1) fail("generator.base_channels", "must be >= 1");
  if (g.max_channels < 1) fail("generator.max_channels", "must be >= 1");
  if (g.kernel < 1 || g.kernel % 2 == 0) fail("generator.kernel", "must be odd and >= 1");
  if (c.discriminator.base_channels < 1) fail("discriminator.base_channels", "must be >= 1");
  if (c.train.patch < 8 || c.train.patch % 8 || c.train.patch > c.dims) {
    fail("train.patch", "must be a multiple of 8 no larger than data.dims");
  }
  try {
    c.weights.validate();
    c.train.validate();
  } catch (const Error& e) {
    throw_config(std::string("config: ") + e.what());
  }
  if (c.extractor != "random-pyramid" && c.extractor != "identity" && c.extractor != "external") {
    fail("loss.extractor", "must be random-pyramid, identity or external");
  }
  if (c.extractor == "external" && c.extractor_weights.empty()) {
    fail("loss.extractor_weights", "required when loss.extractor = external");
  }
  if (c.radiomics.levels < 2) fail("radiomics.levels", "must be >= 2");
  if (c.radiomics.bins < 2) fail("radiomics.bins", "must be >= 2");
  if (!(c.radiomics.eps > 0)) fail("radiomics.eps", "must be > 0");
  const auto& s = c.seg;
  if (s.model.levels < 2) fail("seg.levels", "must be >= 2");
  if (s.model.height % (1 << (s.model.levels - 1))) fail("seg.levels", "dims not divisible");
  if (s.model.base_channels < 1) fail("seg.base_channels", "must be >= 1");
  if (s.train.epochs < 0) fail("seg.epochs", "must be >= 0");
  if (s.train.batch < 1) fail("seg.batch", "must be >= 1");
  if (!(s.train.lr > 0)) fail("seg.lr", "must be > 0");
  if (s.seeds.empty()) fail("seg.seeds", "at least one seed required");
  if (c.synth_count < 0) fail("synth.count", "must be >= 0");
}

PipelineConfig load(const std::optional<std::filesystem::path>& file,
                    const std::vector<std::string>& sets, bool use_env) {
  PipelineConfig cfg = default_config();
  KeyValues values;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw_config("cannot read config " + file->string());
    std::stringstream ss;
    ss << in.rdbuf();
    values = parse_ini(ss.str(), file->string());
  }
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw_config("config override '" + s + "' is not key=value");
    values[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
  }
  if (use_env) {
    if (const char* env = std::getenv("LFG_SEED"); env && *env) {
      try {
        to_u64("general.seed", env);
      } catch (const Error& e) {
        throw_config(std::string("LFG_SEED: ") + e.what());
      }
      values["general.seed"] = env;
    }
  }
  config::apply(cfg, values);
  validate(cfg);
  return cfg;
}

void echo(const PipelineConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto path = dir / "config.resolved.ini";
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw_data("cannot write " + path.string());
  out << to_ini(cfg);
  if (!out) throw_data("write failed: " + path.string());
}

losses::FeatureExtractor make_extractor(const PipelineConfig& cfg) {
  if (cfg.extractor == "identity") return losses::FeatureExtractor::identity();
  if (cfg.extractor == "external") return losses::FeatureExtractor::load(cfg.extractor_weights);
  return losses::FeatureExtractor::random_pyramid(cfg.extractor_seed);
}

}  // namespace lfg::config
