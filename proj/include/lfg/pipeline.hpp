#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "lfg/config.hpp"
#include "lfg/imageio.hpp"
#include "lfg/pcgan.hpp"
#include "lfg/shapemodel.hpp"

namespace lfg::pipeline {

// Output tree under the configured out_dir.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path raw() const { return root / "data" / "raw"; }
  std::filesystem::path train_set() const { return root / "data" / "train"; }
  std::filesystem::path validation_set() const { return root / "data" / "validation"; }
  std::filesystem::path test_set() const { return root / "data" / "test"; }
  std::filesystem::path shape_dir() const { return root / "shape"; }
  std::filesystem::path shape_model() const { return shape_dir() / "model.lfgs"; }
  std::filesystem::path shape_sizes() const { return shape_dir() / "model.sizes"; }
  std::filesystem::path train_dir() const { return root / "train"; }
  std::filesystem::path synth_set() const { return root / "synth"; }
  std::filesystem::path texture_dir() const { return root / "texture"; }
  std::filesystem::path seg_dir() const { return root / "seg"; }
  std::filesystem::path report_dir() const { return root / "report"; }
};

Layout layout(const config::PipelineConfig& cfg);

// Landmark shapes (resampled, unit area) of every lesion in the records,
// with their pixel areas.
struct ShapePool {
  std::vector<shape::ShapeVector> shapes;
  std::vector<double> areas;
};
ShapePool lesion_shapes(const std::vector<SliceRecord>& records);

void write_size_range(const std::filesystem::path& path, const shape::SizeRange& r);
shape::SizeRange read_size_range(const std::filesystem::path& path);

struct SynthesisOptions {
  int count = 100;
  int masks_per_slice = 1;
  std::uint64_t seed = 7;
  double shape_clip = 3.0;
  int placement_attempts = 100;
  shape::SizeRange size_range;
};

// Item k draws its own rng from (seed, k), samples a shape, places it in the
// liver of healthy slice k / masks_per_slice (cycling), inpaints the hole
// with the generator in eval mode and keeps the composite. Ids are
// <source slice_id>_syn<k>.
std::vector<SliceRecord> synthesize(pcgan::Generator& g, const shape::ShapeModel& model,
                                    const std::vector<SliceRecord>& healthy,
                                    const SynthesisOptions& options);

// Highest-step ckpt_*.lfgc in dir.
std::filesystem::path latest_checkpoint(const std::filesystem::path& dir);
pcgan::Generator load_generator(const std::filesystem::path& checkpoint);

// Subcommands. Each echoes the resolved config to the output root first.
void run_phantom(const config::PipelineConfig& cfg, std::ostream& log);
void run_preprocess(const config::PipelineConfig& cfg,
                    const std::optional<std::filesystem::path>& input, std::ostream& log);
void run_shape_fit(const config::PipelineConfig& cfg, std::ostream& log);
void run_shape_sample(const config::PipelineConfig& cfg, int count, std::ostream& log);
void run_synth_train(const config::PipelineConfig& cfg,
                     const std::optional<std::filesystem::path>& resume, std::ostream& log);
void run_synthesize(const config::PipelineConfig& cfg,
                    const std::optional<std::filesystem::path>& checkpoint, int masks_per_slice,
                    std::ostream& log);
void run_eval_texture(const config::PipelineConfig& cfg,
                      const std::optional<std::filesystem::path>& real,
                      const std::optional<std::filesystem::path>& synthetic, std::ostream& log);
void run_seg_train(const config::PipelineConfig& cfg, std::ostream& log);
void run_seg_eval(const config::PipelineConfig& cfg, std::ostream& log);
void run_report(const config::PipelineConfig& cfg, std::ostream& log);

}  // namespace lfg::pipeline
