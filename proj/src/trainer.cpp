#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lfg/error.hpp"
#include "lfg/train.hpp"

namespace lfg::train {

using nn::Tensor;

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int get_int(const Checkpoint& ck, const std::string& key) { return std::stoi(ck.require(key)); }

bool has_lesion(const SliceRecord& r) {
  for (const auto& m : r.lesions)
    if (mask_area(m) > 0) return true;
  return false;
}

// Crops images (n,1,h,w) at the selected windows, optionally keeping only the
// selected lesion's interior.
Tensor crop_patches(const Tensor& images, const std::vector<pcgan::PatchSelection>& where,
                    const Batch& batch, bool masked) {
  const int size = where.front().size;
  Tensor out({images.n(), 1, size, size});
  for (int b = 0; b < images.n(); ++b) {
    const auto& w = where[b];
    const LesionMask& lesion = batch.lesions[b][w.lesion];
    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) {
        const int y = w.y0 + r, x = w.x0 + c;
        out.at(b, 0, r, c) = (!masked || lesion(y, x)) ? images.at(b, 0, y, x) : 0.0;
      }
    }
  }
  return out;
}

void scatter_patch_grad(const Tensor& gpatch, const std::vector<pcgan::PatchSelection>& where,
                        const Batch& batch, bool masked, Tensor& grad_image) {
  const int size = where.front().size;
  for (int b = 0; b < gpatch.n(); ++b) {
    const auto& w = where[b];
    const LesionMask& lesion = batch.lesions[b][w.lesion];
    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) {
        const int y = w.y0 + r, x = w.x0 + c;
        if (!masked || lesion(y, x)) grad_image.at(b, 0, y, x) += gpatch.at(b, 0, r, c);
      }
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr_g > 0) || !(lr_d > 0)) throw_config("train: lr_g and lr_d must be > 0");
  if (batch < 1) throw_config("train: batch must be >= 1");
  if (iterations < 0) throw_config("train: iterations must be >= 0");
  if (checkpoint_every < 1) throw_config("train: checkpoint_every must be >= 1");
  if (critic_steps < 1) throw_config("train: critic_steps must be >= 1");
  if (patch < 8) throw_config("train: patch must be >= 8");
  weights.validate();
}

Tensor image_tensor(const IntensityGrid& image) {
  Tensor t({1, 1, image.height(), image.width()});
  for (std::size_t i = 0; i < image.size(); ++i) t[i] = image.values()[i];
  return t;
}

Tensor known_mask(const SliceRecord& record) {
  const LesionMask u = mask_union(record.lesions, record.image.dims());
  Tensor t({1, 1, u.height(), u.width()});
  for (std::size_t i = 0; i < u.size(); ++i) t[i] = u.values()[i] ? 0.0 : 1.0;
  return t;
}

Batch make_batch(const std::vector<SliceRecord>& records, std::span<const std::size_t> indices) {
  if (indices.empty()) throw_data("make_batch: empty batch");
  const Dims dims = records.at(indices[0]).image.dims();
  Batch b;
  b.image = Tensor({static_cast<int>(indices.size()), 1, dims.height, dims.width});
  b.mask = Tensor(b.image.shape());
  const std::size_t plane = b.image.shape().plane();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const SliceRecord& r = records.at(indices[k]);
    if (!(r.image.dims() == dims)) throw_data("make_batch: slices differ in size (" + r.slice_id + ")");
    const Tensor img = image_tensor(r.image);
    const Tensor m = known_mask(r);
    std::copy_n(img.data(), plane, b.image.plane(static_cast<int>(k), 0));
    std::copy_n(m.data(), plane, b.mask.plane(static_cast<int>(k), 0));
    b.lesions.push_back(r.lesions);
  }
  return b;
}

std::mt19937_64 step_rng(std::uint64_t seed, std::int64_t step) {
  const auto s = static_cast<std::uint64_t>(step);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32), 0x7a11u};
  return std::mt19937_64(seq);
}

std::vector<std::size_t> batch_indices(std::size_t dataset_size, int batch, std::int64_t step,
                                       std::uint64_t seed) {
  if (dataset_size == 0) throw_data("batch_indices: empty dataset");
  std::vector<std::size_t> out;
  std::int64_t cached_epoch = -1;
  std::vector<std::size_t> perm(dataset_size);
  for (int j = 0; j < batch; ++j) {
    const std::uint64_t i = static_cast<std::uint64_t>(step - 1) * batch + j;
    const auto epoch = static_cast<std::int64_t>(i / dataset_size);
    if (epoch != cached_epoch) {
      for (std::size_t k = 0; k < dataset_size; ++k) perm[k] = k;
      const auto e = static_cast<std::uint64_t>(epoch);
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(e), static_cast<std::uint32_t>(e >> 32),
                        0x5eedu};
      std::mt19937_64 rng(seq);
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[i % dataset_size]);
  }
  return out;
}

LossRecord train_step(pcgan::Generator& g, pcgan::Discriminator& d,
                      const losses::FeatureExtractor& phi, const Batch& batch,
                      const TrainConfig& config, OptimizerStates& opt, std::mt19937_64& rng) {
  const auto& w = config.weights;
  const int n = batch.image.n();
  pcgan::Generator::Cache cache;
  const Tensor xhat = g.forward(batch.image, batch.mask, nn::NormMode::kTrain, &cache);
  const Tensor z = losses::composite_image(batch.image, xhat, batch.mask);

  std::vector<pcgan::PatchSelection> where;
  for (int b = 0; b < n; ++b) {
    where.push_back(pcgan::select_lesion_patch(
        batch.lesions[b], {batch.image.h(), batch.image.w()}, rng, config.patch));
  }
  const Tensor real = crop_patches(batch.image, where, batch, config.masked_patch);
  const Tensor fake = crop_patches(z, where, batch, config.masked_patch);

  LossRecord rec;
  for (int k = 0; k < config.critic_steps; ++k) {
    d.zero_grad();
    d.prepare(true);
    const auto terms = losses::wgan_losses(d, real, fake, w.gp, rng, true);
    rec.gan_d = terms.loss_d;
    rec.gp = terms.gp;
    if (!std::isfinite(terms.loss_d)) throw_numeric("non-finite critic loss");
    amsgrad_step(d.parameters(), opt.d, config.lr_d);
    d.prepare(false);
  }

  g.zero_grad();
  Tensor g_fake;
  rec.gan_g = losses::generator_adversarial_loss(d, fake, &g_fake);
  Tensor g_z(z.shape());
  scatter_patch_grad(g_fake, where, batch, config.masked_patch, g_z);

  Tensor g_rec, g_ph, g_pz, g_th, g_tz;
  rec.rec = losses::reconstruction_loss(batch.image, xhat, batch.mask, w.w1, w.w2, &g_rec);
  rec.perc = losses::perceptual_loss(batch.image, xhat, z, phi, &g_ph, &g_pz);
  rec.tex = losses::texture_loss(batch.image, xhat, z, phi, &g_th, &g_tz);
  rec.total = losses::total_loss({rec.gan_g, rec.rec, rec.perc, rec.tex}, w);

  nn::axpy(w.perceptual, g_pz, g_z);
  nn::axpy(w.texture, g_tz, g_z);
  Tensor grad(xhat.shape());
  nn::axpy(w.reconstruction, g_rec, grad);
  nn::axpy(w.perceptual, g_ph, grad);
  nn::axpy(w.texture, g_th, grad);
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += (1.0 - batch.mask[i]) * g_z[i];
  g.backward(cache, grad);
  amsgrad_step(g.parameters(), opt.g, config.lr_g);
  return rec;
}

void write_model_config(Checkpoint& ck, const pcgan::GeneratorConfig& g,
                        const pcgan::DiscriminatorConfig& d) {
  ck.config["gen.height"] = std::to_string(g.height);
  ck.config["gen.width"] = std::to_string(g.width);
  ck.config["gen.stages"] = std::to_string(g.stages);
  ck.config["gen.base_channels"] = std::to_string(g.base_channels);
  ck.config["gen.max_channels"] = std::to_string(g.max_channels);
  ck.config["gen.kernel"] = std::to_string(g.kernel);
  ck.config["gen.swap_activations"] = g.swap_activations ? "1" : "0";
  ck.config["gen.leaky_slope"] = fmt_double(g.leaky_slope);
  ck.config["gen.seed"] = std::to_string(g.seed);
  ck.config["disc.patch"] = std::to_string(d.patch);
  ck.config["disc.base_channels"] = std::to_string(d.base_channels);
  ck.config["disc.spectral_norm"] = d.spectral_norm ? "1" : "0";
  ck.config["disc.act_kind"] = std::to_string(static_cast<int>(d.act.kind));
  ck.config["disc.act_slope"] = fmt_double(d.act.slope);
  ck.config["disc.seed"] = std::to_string(d.seed);
}

pcgan::GeneratorConfig read_generator_config(const Checkpoint& ck) {
  pcgan::GeneratorConfig g;
  try {
    g.height = get_int(ck, "gen.height");
    g.width = get_int(ck, "gen.width");
    g.stages = get_int(ck, "gen.stages");
    g.base_channels = get_int(ck, "gen.base_channels");
    g.max_channels = get_int(ck, "gen.max_channels");
    g.kernel = get_int(ck, "gen.kernel");
    g.swap_activations = ck.require("gen.swap_activations") == "1";
    g.leaky_slope = std::stod(ck.require("gen.leaky_slope"));
    g.seed = std::stoull(ck.require("gen.seed"));
  } catch (const std::logic_error& e) {
    throw_data(std::string("checkpoint: bad generator config (") + e.what() + ")");
  }
  return g;
}

pcgan::DiscriminatorConfig read_discriminator_config(const Checkpoint& ck) {
  pcgan::DiscriminatorConfig d;
  try {
    d.patch = get_int(ck, "disc.patch");
    d.base_channels = get_int(ck, "disc.base_channels");
    d.spectral_norm = ck.require("disc.spectral_norm") == "1";
    d.act.kind = static_cast<nn::ActKind>(get_int(ck, "disc.act_kind"));
    d.act.slope = std::stod(ck.require("disc.act_slope"));
    d.seed = std::stoull(ck.require("disc.seed"));
  } catch (const std::logic_error& e) {
    throw_data(std::string("checkpoint: bad discriminator config (") + e.what() + ")");
  }
  return d;
}

std::string telemetry_header() { return "step,gan_d,gan_g,gp,rec,perc,tex,total,wall_ms"; }

std::string telemetry_row(const LossRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g",
                static_cast<long long>(r.step), r.gan_d, r.gan_g, r.gp, r.rec, r.perc, r.tex,
                r.total, r.wall_ms);
  return buf;
}

std::vector<LossRecord> read_telemetry(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open telemetry " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != telemetry_header()) throw_data(path.string() + ": unexpected telemetry header");
  std::vector<LossRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    LossRecord r;
    long long step = 0;
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &step, &r.gan_d,
                    &r.gan_g, &r.gp, &r.rec, &r.perc, &r.tex, &r.total, &r.wall_ms) != 9) {
      throw_data(path.string() + ":" + std::to_string(lineno) + ": malformed telemetry row");
    }
    r.step = step;
    out.push_back(r);
  }
  return out;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::int64_t step) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "ckpt_%08lld.lfgc", static_cast<long long>(step));
  return out_dir / buf;
}

namespace {

void save_checkpoint(const std::filesystem::path& path, std::int64_t step,
                     const TrainConfig& config, const pcgan::Generator& g,
                     const pcgan::Discriminator& d, const OptimizerStates& opt) {
  Checkpoint ck;
  write_model_config(ck, g.config(), d.config());
  ck.config["step"] = std::to_string(step);
  ck.config["train.seed"] = std::to_string(config.seed);
  ck.config["train.batch"] = std::to_string(config.batch);
  ck.config["train.lr_g"] = fmt_double(config.lr_g);
  ck.config["train.lr_d"] = fmt_double(config.lr_d);
  if (!config.deviations.empty()) ck.config["train.deviations"] = config.deviations;
  g.export_state(ck);
  d.export_state(ck);
  opt.g.export_state(ck, "opt_g");
  opt.d.export_state(ck, "opt_d");
  ck.save(path);
}

}  // namespace

TrainSummary train_loop(const TrainConfig& config, const std::vector<SliceRecord>& dataset,
                        pcgan::Generator& g, pcgan::Discriminator& d,
                        const losses::FeatureExtractor& phi, const std::filesystem::path& out_dir,
                        const std::optional<std::filesystem::path>& resume) {
  config.validate();
  if (d.config().patch != config.patch) throw_config("train: critic patch differs from train patch");
  std::vector<SliceRecord> items;
  for (const auto& r : dataset)
    if (has_lesion(r)) items.push_back(r);
  if (items.empty()) throw_data("train: dataset has no lesion-bearing slices");
  for (const auto& r : items) {
    if (r.image.height() != g.config().height || r.image.width() != g.config().width) {
      throw_data("train: slice " + r.slice_id + " does not match generator input size");
    }
  }
  std::filesystem::create_directories(out_dir);

  OptimizerStates opt;
  opt.g.config.bias_correction = config.bias_correction;
  opt.d.config.bias_correction = config.bias_correction;
  TrainSummary summary;
  std::int64_t start = 0;
  const auto telemetry = out_dir / "telemetry.csv";
  std::vector<std::string> kept;
  if (resume) {
    const Checkpoint ck = Checkpoint::load(*resume);
    g.import_state(ck);
    d.import_state(ck);
    opt.g.import_state(ck, "opt_g", g.parameters());
    opt.d.import_state(ck, "opt_d", d.parameters());
    start = std::stoll(ck.require("step"));
    if (std::filesystem::exists(telemetry)) {
      for (const auto& r : read_telemetry(telemetry))
        if (r.step <= start) kept.push_back(telemetry_row(r));
    }
  } else {
    save_checkpoint(checkpoint_path(out_dir, 0), 0, config, g, d, opt);
    summary.checkpoints.push_back(checkpoint_path(out_dir, 0));
  }

  std::ofstream tel(telemetry, std::ios::trunc);
  if (!tel) throw_data("cannot write telemetry " + telemetry.string());
  tel << telemetry_header() << "\n";
  for (const auto& row : kept) tel << row << "\n";

  summary.first_step = start + 1;
  summary.last_step = start;
  for (std::int64_t step = start + 1; step <= config.iterations; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto idx = batch_indices(items.size(), config.batch, step, config.seed);
    const Batch batch = make_batch(items, idx);
    auto rng = step_rng(config.seed, step);
    LossRecord rec;
    try {
      rec = train_step(g, d, phi, batch, config, opt, rng);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kNumeric) {
        tel.flush();
        std::ofstream dump(out_dir / ("abort_" + std::to_string(step) + ".txt"));
        dump << "step=" << step << "\nerror=" << e.what() << "\n";
        if (!summary.records.empty()) dump << "last=" << telemetry_row(summary.records.back()) << "\n";
      }
      throw;
    }
    rec.step = step;
    if (config.record_wall_time) {
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                        .count();
    }
    tel << telemetry_row(rec) << "\n";
    summary.records.push_back(rec);
    summary.last_step = step;
    if (step % config.checkpoint_every == 0 || step == config.iterations) {
      tel.flush();
      save_checkpoint(checkpoint_path(out_dir, step), step, config, g, d, opt);
      summary.checkpoints.push_back(checkpoint_path(out_dir, step));
    }
  }
  tel.flush();
  if (!tel) throw_data("write failed: " + telemetry.string());
  return summary;
}

}  // namespace lfg::train
