#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lfg/imageio.hpp"
#include "lfg/losses.hpp"
#include "lfg/pcgan.hpp"
#include "lfg/radiomics.hpp"
#include "lfg/segeval.hpp"
#include "lfg/shapemodel.hpp"
#include "lfg/train.hpp"

namespace lfg::config {

// "section.key" -> raw value
using KeyValues = std::map<std::string, std::string>;

// [section] headers, key = value lines, '#' or ';' comments.
KeyValues parse_ini(const std::string& text, const std::string& source = "<config>");

struct PipelineConfig {
  std::uint64_t seed = 7;
  std::filesystem::path out_dir = "lfg_out";
  int threads = 0;  // 0 = OpenMP default

  PhantomSpec phantom;
  double hu_lo = -100;
  double hu_hi = 200;
  bool hu_window = false;
  int dims = 64;
  std::size_t min_lesion_pixels = 10;
  SplitRatios split{0.8, 0.0, 0.2};
  int k_folds = 0;

  double shape_clip = 3.0;
  int placement_attempts = 100;
  // 0 means take the range from the fitted pool.
  double min_area = 0;
  double max_area = 0;

  pcgan::GeneratorConfig generator;
  pcgan::DiscriminatorConfig discriminator;
  losses::LossWeights weights;
  std::string extractor = "random-pyramid";
  std::uint64_t extractor_seed = 1234;
  std::filesystem::path extractor_weights;
  train::TrainConfig train;

  radiomics::RadiomicsConfig radiomics;
  seg::ExperimentConfig seg;
  int synth_count = 100;
};

// Desk-scale defaults: 64x64 slices and a 6-stage generator.
PipelineConfig default_config();

// Applies overrides on top of cfg. Unknown keys and malformed values raise a
// config error naming the key.
void apply(PipelineConfig& cfg, const KeyValues& values);
KeyValues to_key_values(const PipelineConfig& cfg);
std::string to_ini(const PipelineConfig& cfg);

void validate(const PipelineConfig& cfg);

// Defaults, then the file, then `sets` (key=value strings), then LFG_SEED;
// validated.
PipelineConfig load(const std::optional<std::filesystem::path>& file,
                    const std::vector<std::string>& sets = {}, bool use_env = true);

// Writes the resolved config to dir/config.resolved.ini.
void echo(const PipelineConfig& cfg, const std::filesystem::path& dir);

losses::FeatureExtractor make_extractor(const PipelineConfig& cfg);

}  // namespace lfg::config
