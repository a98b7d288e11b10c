#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "lfg/checkpoint.hpp"
#include "lfg/imageio.hpp"
#include "lfg/nn/layers.hpp"

namespace lfg::pcgan {

struct GeneratorConfig {
  int height = 256;
  int width = 256;
  int stages = 8;
  int base_channels = 16;
  int max_channels = 128;
  int kernel = 3;
  // Default: relu encoder, leaky decoder. true swaps them.
  bool swap_activations = false;
  double leaky_slope = 0.2;
  std::uint64_t seed = 1;
};

// Unet of partial convolutions. Encoder stage s halves the spatial dims;
// decoder stage s upsamples and concatenates the encoder features (and
// masks) of stage s-1, with the raw masked input as the outermost skip.
class Generator {
 public:
  explicit Generator(const GeneratorConfig& config);

  struct Cache {
    nn::NormMode mode = nn::NormMode::kTrain;
    std::vector<nn::Tensor> enc_feat;  // [0] = masked input
    std::vector<nn::Tensor> enc_mask;
    std::vector<nn::PartialConvResult> enc_pc;
    std::vector<nn::BatchNormCache> enc_bn;
    std::vector<nn::Tensor> enc_pre;  // activation inputs
    std::vector<nn::Tensor> dec_mask_in;
    std::vector<nn::PartialConvResult> dec_pc;
    std::vector<nn::BatchNormCache> dec_bn;
    std::vector<nn::Tensor> dec_pre;
    nn::Tensor out_mask;
  };

  // image: (n, 1, h, w); mask: (n, 1, h, w) with 1 = known pixel.
  nn::Tensor forward(const nn::Tensor& image, const nn::Tensor& mask, nn::NormMode mode,
                     Cache* cache = nullptr);
  // Accumulates parameter grads.
  void backward(const Cache& cache, const nn::Tensor& grad_out);

  std::vector<nn::Param*> parameters();
  std::vector<const nn::Param*> parameters() const;
  void zero_grad();
  const GeneratorConfig& config() const { return config_; }
  int stage_channels(int s) const { return channels_[s]; }

  void export_state(Checkpoint& ck, const std::string& prefix = "gen") const;
  void import_state(const Checkpoint& ck, const std::string& prefix = "gen");
  // Bit-level digest of all parameter values.
  std::uint64_t checksum() const;

 private:
  nn::Activation encoder_act() const;
  nn::Activation decoder_act() const;

  GeneratorConfig config_;
  std::vector<int> channels_;  // [0] = 1 input channel
  std::vector<nn::ConvParams> enc_conv_;  // index s-1 for stage s
  std::vector<nn::BatchNorm> enc_bn_;     // index s-1; unused for s = 1
  std::vector<nn::ConvParams> dec_conv_;
  std::vector<nn::BatchNorm> dec_bn_;
};

Generator build_generator(const GeneratorConfig& config);

struct SpectralNormState {
  std::vector<double> u;  // left singular vector estimate (rows)
  std::vector<double> v;  // right singular vector estimate (cols)
  double sigma = 1.0;
};

// W viewed as (out-ch) x (in * kh * kw): runs power_iters steps updating u, v
// then returns W / sigma with sigma = u^T W v floored at 1e-12.
nn::Tensor spectral_normalize(const nn::Tensor& weight, SpectralNormState& state,
                              int power_iters = 1);
void init_spectral_state(SpectralNormState& state, int rows, int cols, std::mt19937_64& rng);
double spectral_sigma(const nn::Tensor& weight, const SpectralNormState& state);

struct DiscriminatorConfig {
  int patch = 64;
  int base_channels = 16;
  bool spectral_norm = true;
  nn::Activation act = nn::Activation::leaky(0.2);
  std::uint64_t seed = 2;
};

// Four conv layers: three k4/s2/p1 downsampling layers (spectral-normalized)
// and a final layer reducing the 1/8-scale map to one score. No sigmoid.
class Discriminator {
 public:
  explicit Discriminator(const DiscriminatorConfig& config);

  static constexpr int kLayers = 4;
  static constexpr int kWarmupIterations = 20;

  struct Cache {
    std::vector<nn::Tensor> inputs;  // layer inputs
    std::vector<nn::Tensor> pre;     // pre-activations
  };

  // Recomputes effective weights from the current raw weights; with
  // power_iteration the singular-vector estimates advance one step first.
  void prepare(bool power_iteration);

  // patch: (n, 1, patch, patch); returns (n, 1, 1, 1) scores.
  nn::Tensor forward(const nn::Tensor& patch, Cache* cache = nullptr) const;
  // Backprop of scores; effective-weight grads accumulate when
  // accumulate_params is set. Input gradient written to *grad_input.
  void backward(const Cache& cache, const nn::Tensor& grad_scores, nn::Tensor* grad_input,
                bool accumulate_params);

  struct PenaltyResult {
    double penalty = 0;              // mean (||grad_u D|| - 1)^2
    std::vector<double> grad_norms;  // per item
  };
  // Gradient penalty at the given inputs. When param_weight != 0 the exact
  // gradient of param_weight * penalty w.r.t. the weights is accumulated
  // (second-order pass; exact for piecewise-linear activations).
  PenaltyResult gradient_penalty(const nn::Tensor& points, double param_weight);

  // Maps accumulated effective-weight grads onto the raw parameters
  // (through the spectral normalization) and clears them.
  void finish_backward();

  std::vector<nn::Param*> parameters();
  void zero_grad();
  const DiscriminatorConfig& config() const { return config_; }
  const nn::ConvParams& layer(int i) const { return layers_[i]; }
  nn::ConvParams& layer(int i) { return layers_[i]; }
  const nn::Tensor& effective_weight(int i) const { return effective_[i]; }
  const SpectralNormState& spectral_state(int i) const { return sn_[i]; }
  bool normalized(int i) const { return config_.spectral_norm && i < kLayers - 1; }

  void export_state(Checkpoint& ck, const std::string& prefix = "disc") const;
  void import_state(const Checkpoint& ck, const std::string& prefix = "disc");

 private:
  nn::Activation act(int layer) const;

  DiscriminatorConfig config_;
  std::vector<nn::ConvParams> layers_;
  std::vector<SpectralNormState> sn_;
  std::vector<nn::Tensor> effective_;
  std::vector<nn::Tensor> effective_grad_;
};

struct PatchSelection {
  int lesion = 0;
  int y0 = 0;
  int x0 = 0;
  int size = 64;
};

struct LesionPatch {
  IntensityGrid patch;
  LesionMask patch_mask;  // selected lesion's interior within the crop
  PatchSelection where;
};

// Uniform lesion choice; crop centred on the lesion bounding-box centre,
// shifted to stay inside the image.
PatchSelection select_lesion_patch(const std::vector<LesionMask>& lesions, Dims dims,
                                   std::mt19937_64& rng, int size = 64);

// With masked = true the patch is multiplied by the lesion-interior indicator.
LesionPatch crop_lesion_patch(const IntensityGrid& image, const std::vector<LesionMask>& lesions,
                              std::mt19937_64& rng, int size = 64, bool masked = true);

}  // namespace lfg::pcgan
