#pragma once

#include <filesystem>
#include <random>
#include <vector>

#include "lfg/checkpoint.hpp"
#include "lfg/nn/layers.hpp"
#include "lfg/pcgan.hpp"

namespace lfg::losses {

struct LossWeights {
  double reconstruction = 1.0;
  double perceptual = 0.05;
  double texture = 100.0;
  double w1 = 1.0;  // healthy tissue
  double w2 = 5.0;  // lesion
  double gp = 10.0;
  double ce = 0.5;
  double dice = 1.0;

  void validate() const;
};

enum class ExtractorKind { kIdentity, kRandomPyramid, kExternal };

// Fixed feature stages Phi_1..Phi_L. Each stage is a conv followed by a
// leaky relu applied to the previous stage output; the identity extractor
// has one stage equal to the image.
class FeatureExtractor {
 public:
  static FeatureExtractor identity();
  static FeatureExtractor random_pyramid(std::uint64_t seed = 1234,
                                         const std::vector<int>& channels = {8, 16, 32},
                                         double slope = 0.2);
  // Stage parameters from a checkpoint container with blocks
  // stage<j>.weight / stage<j>.bias and config keys stages, stage<j>.stride,
  // stage<j>.padding, slope.
  static FeatureExtractor from_checkpoint(const Checkpoint& ck);
  static FeatureExtractor load(const std::filesystem::path& path);
  Checkpoint to_checkpoint() const;

  ExtractorKind kind() const { return kind_; }
  int stages() const { return kind_ == ExtractorKind::kIdentity ? 1 : static_cast<int>(convs_.size()); }
  std::vector<nn::Shape> stage_dims(const nn::Shape& input) const;

  struct Trace {
    std::vector<nn::Tensor> inputs;
    std::vector<nn::Tensor> pre;
  };
  std::vector<nn::Tensor> forward(const nn::Tensor& x, Trace* trace = nullptr) const;
  // Input gradient given the gradient of every stage output.
  nn::Tensor backward(const Trace& trace, const std::vector<nn::Tensor>& grad_stages) const;

 private:
  ExtractorKind kind_ = ExtractorKind::kIdentity;
  std::vector<nn::ConvParams> convs_;
  double slope_ = 0.2;
};

// w1 * mean|m (x - xhat)| + w2 * mean|(1 - m)(x - xhat)|, means over all
// pixels of the batch. grad (w.r.t. xhat) is overwritten when given.
double reconstruction_loss(const nn::Tensor& x, const nn::Tensor& xhat, const nn::Tensor& m,
                           double w1, double w2, nn::Tensor* grad = nullptr);

// m * x + (1 - m) * xhat
nn::Tensor composite_image(const nn::Tensor& x, const nn::Tensor& xhat, const nn::Tensor& m);

// Sum over stages of mean|Phi(xhat) - Phi(x)| + mean|Phi(z) - Phi(x)|.
// Gradients w.r.t. xhat and z are overwritten when given.
double perceptual_loss(const nn::Tensor& x, const nn::Tensor& xhat, const nn::Tensor& z,
                       const FeatureExtractor& phi, nn::Tensor* grad_xhat = nullptr,
                       nn::Tensor* grad_z = nullptr);

// (n, 1, C, C): F F^T / (C H W) per item.
nn::Tensor gram_matrix(const nn::Tensor& f);

// Sum over stages of mean|G(xhat) - G(x)| + mean|G(z) - G(x)|, the means
// taken over Gram entries.
double texture_loss(const nn::Tensor& x, const nn::Tensor& xhat, const nn::Tensor& z,
                    const FeatureExtractor& phi, nn::Tensor* grad_xhat = nullptr,
                    nn::Tensor* grad_z = nullptr);

struct WganTerms {
  double loss_d = 0;
  double loss_g = 0;
  double gp = 0;
};

// Critic objective at u = eps real + (1 - eps) fake with eps ~ U(0,1) per
// item. With accumulate the gradient of loss_d is added to the critic
// parameters.
WganTerms wgan_losses(pcgan::Discriminator& d, const nn::Tensor& real, const nn::Tensor& fake,
                      double lambda_gp, std::mt19937_64& rng, bool accumulate = false);

// -mean D(fake) and its gradient w.r.t. the fake patches.
double generator_adversarial_loss(pcgan::Discriminator& d, const nn::Tensor& fake,
                                  nn::Tensor* grad_fake = nullptr);

struct LossParts {
  double gan = 0;
  double rec = 0;
  double perc = 0;
  double tex = 0;
};

// gan + w_rec rec + w_perc perc + w_tex tex; throws a numeric error when any
// part is non-finite.
double total_loss(const LossParts& parts, const LossWeights& weights);

// lambda_ce * mean BCE + lambda_dice * mean over items of Dice loss with
// +1 smoothing. prob is clamped to [1e-7, 1 - 1e-7] inside the log.
double ce_dice_loss(const nn::Tensor& prob, const nn::Tensor& target, double lambda_ce = 0.5,
                    double lambda_dice = 1.0, nn::Tensor* grad = nullptr);

}  // namespace lfg::losses
