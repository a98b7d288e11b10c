#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lfg/checkpoint.hpp"
#include "lfg/imageio.hpp"
#include "lfg/losses.hpp"
#include "lfg/pcgan.hpp"

namespace lfg::train {

struct AMSGradConfig {
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool bias_correction = true;
};

struct AMSGradState {
  AMSGradConfig config;
  std::vector<nn::Tensor> m;
  std::vector<nn::Tensor> v;
  std::vector<nn::Tensor> vhat;
  std::int64_t step = 0;
  std::int64_t skipped = 0;

  void export_state(Checkpoint& ck, const std::string& prefix) const;
  void import_state(const Checkpoint& ck, const std::string& prefix,
                    std::span<nn::Param* const> params);
};

// Applies one update from the grads stored in params. Returns false (and
// leaves params and state untouched apart from the skip counter) when any
// gradient is non-finite.
bool amsgrad_step(std::span<nn::Param* const> params, AMSGradState& state, double lr);

struct TrainConfig {
  double lr_g = 1e-4;
  double lr_d = 1e-5;
  int batch = 6;
  std::int64_t iterations = 5000;
  std::uint64_t seed = 42;
  std::int64_t checkpoint_every = 1000;
  int patch = 64;
  bool masked_patch = true;
  int critic_steps = 1;
  bool bias_correction = true;
  // wall_ms telemetry column is 0 unless set, keeping traces byte-comparable.
  bool record_wall_time = false;
  std::string deviations;
  losses::LossWeights weights;

  void validate() const;
};

struct LossRecord {
  std::int64_t step = 0;
  double gan_d = 0;
  double gan_g = 0;
  double gp = 0;
  double rec = 0;
  double perc = 0;
  double tex = 0;
  double total = 0;
  double wall_ms = 0;
};

struct Batch {
  nn::Tensor image;  // (n, 1, h, w)
  nn::Tensor mask;   // 1 = healthy / known
  std::vector<std::vector<LesionMask>> lesions;
};

Batch make_batch(const std::vector<SliceRecord>& records, std::span<const std::size_t> indices);

// Inpainting mask of one record: 1 outside the union of its lesions.
nn::Tensor known_mask(const SliceRecord& record);
nn::Tensor image_tensor(const IntensityGrid& image);

struct OptimizerStates {
  AMSGradState g;
  AMSGradState d;
};

// One critic update followed by one generator update on the same batch.
LossRecord train_step(pcgan::Generator& g, pcgan::Discriminator& d,
                      const losses::FeatureExtractor& phi, const Batch& batch,
                      const TrainConfig& config, OptimizerStates& opt, std::mt19937_64& rng);

// Indices of the items used at a given step (1-based): a seeded permutation
// per epoch over the dataset.
std::vector<std::size_t> batch_indices(std::size_t dataset_size, int batch, std::int64_t step,
                                       std::uint64_t seed);

// Rng used inside step `step`; independent of history so runs can resume.
std::mt19937_64 step_rng(std::uint64_t seed, std::int64_t step);

void write_model_config(Checkpoint& ck, const pcgan::GeneratorConfig& g,
                        const pcgan::DiscriminatorConfig& d);
pcgan::GeneratorConfig read_generator_config(const Checkpoint& ck);
pcgan::DiscriminatorConfig read_discriminator_config(const Checkpoint& ck);

struct TrainSummary {
  std::int64_t first_step = 1;
  std::int64_t last_step = 0;
  std::vector<LossRecord> records;  // steps run by this call
  std::vector<std::filesystem::path> checkpoints;
};

std::string telemetry_header();
std::string telemetry_row(const LossRecord& r);
std::vector<LossRecord> read_telemetry(const std::filesystem::path& path);

// Runs steps until config.iterations, writing out_dir/telemetry.csv and
// out_dir/ckpt_<step>.lfgc (an initial one at step 0, then at the cadence
// and at the last step). With resume the nets, optimizer states and step
// come from that checkpoint and telemetry rows after its step are dropped.
TrainSummary train_loop(const TrainConfig& config, const std::vector<SliceRecord>& dataset,
                        pcgan::Generator& g, pcgan::Discriminator& d,
                        const losses::FeatureExtractor& phi, const std::filesystem::path& out_dir,
                        const std::optional<std::filesystem::path>& resume = std::nullopt);

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::int64_t step);

}  // namespace lfg::train
