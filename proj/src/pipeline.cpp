#include "lfg/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "lfg/error.hpp"
#include "lfg/radiomics.hpp"
#include "lfg/report.hpp"
#include "lfg/segeval.hpp"
#include "lfg/train.hpp"

namespace lfg::pipeline {

namespace fs = std::filesystem;
using config::PipelineConfig;

namespace {

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw_data("cannot write " + p.string());
  out << text;
  if (!out) throw_data("write failed: " + p.string());
}

std::vector<SliceRecord> require_dataset(const fs::path& dir, const std::string& what) {
  if (!fs::exists(dir / "manifest.csv")) {
    throw_data(what + " not found at " + dir.string() + " (run the earlier stage first)");
  }
  return read_dataset(dir);
}

// Replaces a dataset directory so reruns do not leave stale grids behind.
void replace_dataset(const fs::path& dir, const std::vector<SliceRecord>& records) {
  fs::remove_all(dir);
  write_dataset(dir, records);
}

shape::SizeRange effective_range(const PipelineConfig& cfg, const Layout& lay) {
  shape::SizeRange r = read_size_range(lay.shape_sizes());
  if (cfg.min_area > 0) r.min_area = cfg.min_area;
  if (cfg.max_area > 0) r.max_area = cfg.max_area;
  return r;
}

std::string seg_model_path(const Layout& lay, const std::string& regime, std::uint64_t seed) {
  return (lay.seg_dir() / "models" / seg::regime_tag(regime) /
          ("seed" + std::to_string(seed) + ".lfgc"))
      .string();
}

}  // namespace

Layout layout(const PipelineConfig& cfg) { return {cfg.out_dir}; }

ShapePool lesion_shapes(const std::vector<SliceRecord>& records) {
  ShapePool pool;
  for (const auto& r : records) {
    for (const auto& lesion : r.lesions) {
      const auto contour = shape::trace_outer_contour(lesion);
      if (contour.size() < 3) continue;
      pool.shapes.push_back(shape::normalize_shape(shape::resample_contour(contour)));
      pool.areas.push_back(static_cast<double>(mask_area(lesion)));
    }
  }
  return pool;
}

void write_size_range(const fs::path& path, const shape::SizeRange& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "min_area=%.17g\nmax_area=%.17g\n", r.min_area, r.max_area);
  write_text(path, buf);
}

shape::SizeRange read_size_range(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot read size range " + path.string());
  const auto kv = config::parse_ini("[sizes]\n" + std::string(std::istreambuf_iterator<char>(in), {}),
                                    path.string());
  shape::SizeRange r;
  try {
    r.min_area = std::stod(kv.at("sizes.min_area"));
    r.max_area = std::stod(kv.at("sizes.max_area"));
  } catch (const std::exception&) {
    throw_data(path.string() + ": expected min_area and max_area");
  }
  return r;
}

std::vector<SliceRecord> synthesize(pcgan::Generator& g, const shape::ShapeModel& model,
                                    const std::vector<SliceRecord>& healthy,
                                    const SynthesisOptions& options) {
  if (healthy.empty()) throw_data("synthesize: no healthy source slices");
  if (options.masks_per_slice < 1) throw_config("synthesize: masks_per_slice must be >= 1");
  constexpr int kShapeRetries = 8;
  std::vector<SliceRecord> out;
  for (int k = 0; k < options.count; ++k) {
    const auto& src = healthy[static_cast<std::size_t>(k / options.masks_per_slice) % healthy.size()];
    std::seed_seq seq{static_cast<std::uint32_t>(options.seed),
                      static_cast<std::uint32_t>(options.seed >> 32), static_cast<std::uint32_t>(k),
                      0x5a17u};
    std::mt19937_64 rng(seq);
    std::optional<shape::Placement> placed;
    for (int attempt = 0; attempt < kShapeRetries && !placed; ++attempt) {
      const auto s = shape::sample_shape(model, rng, options.shape_clip);
      try {
        placed = shape::place_and_rasterize(s, src.liver, rng, options.size_range,
                                            options.placement_attempts);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kData) throw;
      }
    }
    if (!placed) throw_data("synthesize: no placement found in slice " + src.slice_id);

    SliceRecord rec;
    rec.image = src.image;
    rec.liver = src.liver;
    rec.lesions = {placed->mask};
    rec.patient_id = src.patient_id;
    rec.slice_id = src.slice_id + "_syn" + std::to_string(k);
    rec.has_lesion = true;
    const nn::Tensor x = train::image_tensor(src.image);
    const nn::Tensor m = train::known_mask(rec);
    const nn::Tensor xhat = g.forward(x, m, nn::NormMode::kEval);
    const nn::Tensor z = losses::composite_image(x, xhat, m);
    for (std::size_t i = 0; i < rec.image.size(); ++i) {
      rec.image.values()[i] = static_cast<float>(std::clamp(z[i], 0.0, 1.0));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

fs::path latest_checkpoint(const fs::path& dir) {
  fs::path best;
  std::string best_name;
  if (fs::is_directory(dir)) {
    for (const auto& e : fs::directory_iterator(dir)) {
      const std::string name = e.path().filename().string();
      if (name.rfind("ckpt_", 0) == 0 && e.path().extension() == ".lfgc" && name > best_name) {
        best_name = name;
        best = e.path();
      }
    }
  }
  if (best.empty()) throw_data("no checkpoint found in " + dir.string());
  return best;
}

pcgan::Generator load_generator(const fs::path& checkpoint) {
  const Checkpoint ck = Checkpoint::load(checkpoint);
  pcgan::Generator g(train::read_generator_config(ck));
  g.import_state(ck);
  return g;
}

void run_phantom(const PipelineConfig& cfg, std::ostream& log) {
  const auto lay = layout(cfg);
  config::echo(cfg, lay.root);
  const auto records = generate_phantoms(cfg.phantom);
  replace_dataset(lay.raw(), records);
  const auto lesions = std::count_if(records.begin(), records.end(),
                                     [](const SliceRecord& r) { return r.has_lesion; });
  log << "phantom: " << records.size() << " slices (" << lesions << " with lesions) -> "
      << lay.raw().string() << "\n";
}

void run_preprocess(const PipelineConfig& cfg, const std::optional<fs::path>& input,
                    std::ostream& log) {
  const auto lay = layout(cfg);
  config::echo(cfg, lay.root);
  auto records = require_dataset(input.value_or(lay.raw()), "input dataset");
  const Dims target{cfg.dims, cfg.dims};
  for (auto& r : records) {
    if (cfg.hu_window) r.image = window_normalize(r.image, cfg.hu_lo, cfg.hu_hi);
    if (!(r.image.dims() == target)) {
      r.image = resize(r.image, target);
      r.liver = resize(r.liver, target);
      for (auto& l : r.lesions) l = resize(l, target);
    }
  }
  records = filter_small_lesions(std::move(records), cfg.min_lesion_pixels);
  const auto split = split_patients(std::move(records), cfg.split, cfg.k_folds);
  replace_dataset(lay.train_set(), split.train);
  replace_dataset(lay.test_set(), split.test);
  if (!split.validation.empty()) replace_dataset(lay.validation_set(), split.validation);
  if (split.k_folds > 0) {
    std::string folds = "slice_id,fold\n";
    for (std::size_t i = 0; i < split.train.size(); ++i) {
      folds += split.train[i].slice_id + "," + std::to_string(split.train_fold[i]) + "\n";
    }
    write_text(lay.root / "data" / "folds.csv", folds);
  }
  log << "preprocess: train " << split.train.size() << ", validation " << split.validation.size()
      << ", test " << split.test.size() << " slices\n";
}

void run_shape_fit(const PipelineConfig& cfg, std::ostream& log) {
  const auto lay = layout(cfg);
  config::echo(cfg, lay.root);
  const auto pool = lesion_shapes(require_dataset(lay.train_set(), "training set"));
  if (pool.shapes.size() < 2) throw_data("shape-fit: need at least 2 lesion contours");
  const auto model = shape::fit_shape_model(pool.shapes);
  fs::create_directories(lay.shape_dir());
  shape::write_shape_model(lay.shape_model(), model);
  write_size_range(lay.shape_sizes(), shape::size_range_from_areas(pool.areas));
  log << "shape-fit: " << pool.shapes.size() << " contours -> " << lay.shape_model().string()
      << "\n";
}

void run_shape_sample(const PipelineConfig& cfg, int count, std::ostream& log) {
  const auto lay = layout(cfg);
  config::echo(cfg, lay.root);
  if (count < 1) throw_config("shape-sample: count must be >= 1");
  const auto model = shape::read_shape_model(lay.shape_model());
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    0x5a3au};
  std::mt19937_64 rng(seq);
  std::string csv = "sample,landmark,x,y\n";
  char buf[96];
  for (int k = 0; k < count; ++k) {
    const auto s = shape::sample_shape(model, rng, cfg.shape_clip);
    for (int i = 0; i < shape::kLandmarks; ++i) {
      std::snprintf(buf, sizeof buf, "%d,%d,%.9g,%.9g\n", k, i, s.x(i), s.y(i));
      csv += buf;
    }
  }
  write_text(lay.shape_dir() / "samples.csv", csv);
  log << "shape-sample: " << count << " shapes -> " << (lay.shape_dir() / "samples.csv").string()
      << "\n";
}

void run_synth_train(const PipelineConfig& cfg, const std::optional<fs::path>& resume,
                     std::ostream& log) {
  const auto lay = layout(cfg);
  config::echo(cfg, lay.root);
  const auto records = require_dataset(lay.train_set(), "training set");
  pcgan::Generator g(cfg.generator);
  pcgan::Discriminator d(cfg.discriminator);
  const auto phi = config::make_extractor(cfg);
  std::optional<fs::path> from = resume;
  if (from && from->string() == "latest") from = latest_checkpoint(lay.train_dir());
  const auto summary = train::train_loop(cfg.train, records, g, d, phi, lay.train_dir(), from);
  log << "synth-train: steps " << summary.first_step << ".." << summary.last_step << ", "
      << summary.checkpoints.size() << " checkpoints -> " << lay.train_dir().string() << "\n";
}

void run_synthesize(const PipelineConfig& cfg, const std::optional<fs::path>& checkpoint,
                    int masks_per_slice, std::ostream& log) {
  const auto lay = layout(cfg);
  config::echo(cfg, lay.root);
  const auto records = require_dataset(lay.train_set(), "training set");
  std::vector<SliceRecord> healthy;
  for (const auto& r : records) {
    if (!r.has_lesion && mask_area(r.liver) > 0) healthy.push_back(r);
  }
  auto g = load_generator(checkpoint.value_or(latest_checkpoint(lay.train_dir())));
  SynthesisOptions opt;
  opt.count = cfg.synth_count;
  opt.masks_per_slice = masks_per_slice;
  opt.seed = cfg.seed;
  opt.shape_clip = cfg.shape_clip;
  opt.placement_attempts = cfg.placement_attempts;
  opt.size_range = effective_range(cfg, lay);
  const auto out = synthesize(g, shape::read_shape_model(lay.shape_model()), healthy, opt);
  replace_dataset(lay.synth_set(), out);
  log << "synthesize: " << out.size() << " slices from " << healthy.size() << " healthy sources -> "
      << lay.synth_set().string() << "\n";
}

void run_eval_texture(const PipelineConfig& cfg, const std::optional<fs::path>& real,
                      const std::optional<fs::path>& synthetic, std::ostream& log) {
  const auto lay = layout(cfg);
  config::echo(cfg, lay.root);
  const auto r = radiomics::extract_features(
      require_dataset(real.value_or(lay.test_set()), "real set"), "real", cfg.radiomics);
  const auto s = radiomics::extract_features(
      require_dataset(synthetic.value_or(lay.synth_set()), "synthetic set"), "synthetic",
      cfg.radiomics);
  auto rows = r;
  rows.insert(rows.end(), s.begin(), s.end());
  fs::create_directories(lay.texture_dir());
  radiomics::write_feature_csv(lay.texture_dir() / "features.csv", rows);
  const auto kl = radiomics::compare_features(r, s, cfg.radiomics);
  radiomics::write_kl_csv(lay.texture_dir() / "kl.csv", kl);
  char buf[160];
  std::snprintf(buf, sizeof buf, "eval-texture: KL energy %.6f, correlation %.6f (%zu real, %zu synthetic)\n",
                kl.energy, kl.correlation, kl.real_count, kl.synthetic_count);
  log << buf;
}

void run_seg_train(const PipelineConfig& cfg, std::ostream& log) {
  const auto lay = layout(cfg);
  config::echo(cfg, lay.root);
  const auto real = require_dataset(lay.train_set(), "training set");
  const auto syn = require_dataset(lay.synth_set(), "synthetic set");
  std::vector<std::string> test_patients;
  for (const auto& r : require_dataset(lay.test_set(), "test set")) test_patients.push_back(r.patient_id);
  const auto models = seg::train_regimes(real, syn, test_patients, cfg.seg);
  std::string losses = "regime,seed,final_loss\n";
  char buf[64];
  for (const auto& m : models) {
    const fs::path p = seg_model_path(lay, m.regime, m.seed);
    fs::create_directories(p.parent_path());
    seg::write_segmenter(p, m.model);
    std::snprintf(buf, sizeof buf, ",%.9g\n", m.final_loss);
    losses += m.regime + "," + std::to_string(m.seed) + buf;
  }
  write_text(lay.seg_dir() / "train_losses.csv", losses);
  log << "seg-train: " << models.size() << " models -> " << (lay.seg_dir() / "models").string()
      << "\n";
}

void run_seg_eval(const PipelineConfig& cfg, std::ostream& log) {
  const auto lay = layout(cfg);
  config::echo(cfg, lay.root);
  const auto test = require_dataset(lay.test_set(), "test set");
  std::vector<seg::TrainedModel> models;
  for (const auto seed : cfg.seg.seeds) {
    for (const std::string regime : {seg::kRealRegime, seg::kAugmentedRegime}) {
      const fs::path p = seg_model_path(lay, regime, seed);
      if (!fs::exists(p)) throw_data("seg-eval: missing model " + p.string() + " (run seg-train)");
      models.push_back({regime, seed, seg::read_segmenter(p), 0.0});
    }
  }
  const auto result = seg::evaluate_regimes(models, test, cfg.seg, lay.seg_dir());
  const std::string table = report::comparison_table(seg::metrics_csv(result));
  write_text(lay.seg_dir() / "table.txt", table);
  log << table;
  char buf[96];
  for (std::size_t k = 0; k < result.dsc_delta.size(); ++k) {
    std::snprintf(buf, sizeof buf, "seed %llu: DSC delta %+.4f\n",
                  static_cast<unsigned long long>(result.runs[2 * k].seed), result.dsc_delta[k]);
    log << buf;
  }
}

void run_report(const PipelineConfig& cfg, std::ostream& log) {
  const auto lay = layout(cfg);
  config::echo(cfg, lay.root);
  const auto out = report::report_figures(lay.root, cfg.radiomics);
  for (const auto& n : out.notices) log << "report: " << n << "\n";
  log << "report: " << out.files.size() << " files -> " << lay.report_dir().string() << "\n";
}

}  // namespace lfg::pipeline
