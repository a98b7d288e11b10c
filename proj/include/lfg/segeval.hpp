#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lfg/checkpoint.hpp"
#include "lfg/imageio.hpp"
#include "lfg/losses.hpp"
#include "lfg/nn/layers.hpp"
#include "lfg/train.hpp"

namespace lfg::seg {

struct SegMetrics {
  double dsc = 0;   // percent
  double vpsc = 0;  // percent
  double vsen = 0;  // percent
  std::size_t pred_area = 0;
  std::size_t gt_area = 0;
  std::size_t intersection = 0;
  // Set when a denominator was empty and a convention filled the value in.
  bool flagged = false;
};

SegMetrics seg_metrics(const LesionMask& pred, const LesionMask& gt);
SegMetrics metrics_from_counts(std::size_t pred_area, std::size_t gt_area,
                               std::size_t intersection);

struct MetricSummary {
  double dsc_mean = 0, dsc_std = 0;
  double vpsc_mean = 0, vpsc_std = 0;
  double vsen_mean = 0, vsen_std = 0;
  std::size_t count = 0;
};

// Sample standard deviation (0 for a single value).
MetricSummary summarize(const std::vector<SegMetrics>& metrics);

// Sums the pixel counts of the slices of each patient, then scores each
// patient once. Patients in order of first appearance.
std::vector<SegMetrics> per_patient(const std::vector<SegMetrics>& per_slice,
                                    const std::vector<std::string>& patient_ids);

struct SegmenterConfig {
  int height = 64;
  int width = 64;
  int levels = 3;
  int base_channels = 8;
  std::uint64_t seed = 3;
};

// Plain U-shaped network: stride-2 conv downsampling, nearest upsampling
// with skip concatenation, BN + relu, 1x1 head and sigmoid.
class Segmenter {
 public:
  explicit Segmenter(const SegmenterConfig& config);

  struct Cache {
    nn::NormMode mode = nn::NormMode::kTrain;
    std::vector<nn::Tensor> enc_in, enc_pre, enc_out;
    std::vector<nn::BatchNormCache> enc_bn;
    std::vector<nn::Tensor> dec_in, dec_pre;
    std::vector<nn::BatchNormCache> dec_bn;
    nn::Tensor head_in;
    nn::Tensor prob;
  };

  // (n,1,h,w) image -> (n,1,h,w) probability.
  nn::Tensor forward(const nn::Tensor& image, nn::NormMode mode, Cache* cache = nullptr);
  void backward(const Cache& cache, const nn::Tensor& grad_prob);
  LesionMask predict(const IntensityGrid& image, double threshold = 0.5);

  std::vector<nn::Param*> parameters();
  void zero_grad();
  const SegmenterConfig& config() const { return config_; }

  void export_state(Checkpoint& ck, const std::string& prefix = "seg") const;
  void import_state(const Checkpoint& ck, const std::string& prefix = "seg");

 private:
  SegmenterConfig config_;
  std::vector<int> channels_;
  std::vector<nn::ConvParams> enc_;
  std::vector<nn::BatchNorm> enc_bn_;
  std::vector<nn::ConvParams> dec_;  // index l-1 for decoder level l
  std::vector<nn::BatchNorm> dec_bn_;
  nn::ConvParams head_;
};

void write_segmenter(const std::filesystem::path& path, const Segmenter& s);
Segmenter read_segmenter(const std::filesystem::path& path);

struct SegTrainConfig {
  int epochs = 40;
  int batch = 16;
  double lr = 3e-3;
  std::uint64_t seed = 11;
  double lambda_ce = 0.5;
  double lambda_dice = 1.0;
};

struct SegTrainResult {
  std::vector<double> step_losses;
};

// Target per slice is the union of its lesion masks.
SegTrainResult train_segmenter(Segmenter& model, const std::vector<SliceRecord>& train,
                               const SegTrainConfig& config);

// One model per fold, each trained on the slices outside that fold.
std::vector<Segmenter> train_segmenter_folds(const SegmenterConfig& model_config,
                                             const std::vector<SliceRecord>& train,
                                             const std::vector<int>& folds, int k_folds,
                                             const SegTrainConfig& config);

struct RegimeRun {
  std::string regime;  // Real | Real+Syn[PCGAN]
  std::uint64_t seed = 0;
  std::vector<std::string> slice_ids;
  std::vector<std::string> patient_ids;
  std::vector<SegMetrics> per_image;
  MetricSummary summary;
  double final_loss = 0;
};

struct ExperimentResult {
  std::vector<RegimeRun> runs;        // for each seed: Real then Real+Syn[PCGAN]
  std::vector<double> dsc_delta;      // per seed, Real+Syn minus Real
  std::vector<MetricSummary> pooled;  // per regime over all seeds
  std::vector<std::string> regimes;
};

inline constexpr const char* kRealRegime = "Real";
inline constexpr const char* kAugmentedRegime = "Real+Syn[PCGAN]";

struct ExperimentConfig {
  SegmenterConfig model;
  SegTrainConfig train;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  bool per_patient = false;
};

struct TrainedModel {
  std::string regime;
  std::uint64_t seed = 0;
  Segmenter model;
  double final_loss = 0;
};

// For every seed: a Real model then a Real+Syn[PCGAN] model. Rejects any
// training patient that also appears in test_patients.
std::vector<TrainedModel> train_regimes(const std::vector<SliceRecord>& real,
                                        const std::vector<SliceRecord>& synthetic,
                                        const std::vector<std::string>& test_patients,
                                        const ExperimentConfig& config);

// Predicts the test set with every model, persists the masks and writes the
// metric CSVs.
ExperimentResult evaluate_regimes(std::vector<TrainedModel>& models,
                                  const std::vector<SliceRecord>& test,
                                  const ExperimentConfig& config,
                                  const std::filesystem::path& out_dir);

// Trains both regimes for every seed, persists predictions under
// out_dir/predictions/<regime_tag>/seed<k>/<slice_id>.lfg1 and writes
// metrics.csv, per_image.csv and deltas.csv.
ExperimentResult run_augmentation_experiment(const std::vector<SliceRecord>& real,
                                             const std::vector<SliceRecord>& synthetic,
                                             const std::vector<SliceRecord>& test,
                                             const ExperimentConfig& config,
                                             const std::filesystem::path& out_dir);

std::string regime_tag(const std::string& regime);

// Recomputes metrics.csv from the persisted predictions and the test set;
// returns the text it would contain.
std::string recompute_metrics_csv(const std::filesystem::path& out_dir,
                                  const std::vector<SliceRecord>& test,
                                  const ExperimentConfig& config);

std::string metrics_csv(const ExperimentResult& result);

}  // namespace lfg::seg
