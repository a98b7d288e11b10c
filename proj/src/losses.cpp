#include "lfg/losses.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "lfg/error.hpp"

namespace lfg::losses {

using nn::Tensor;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double sign(double v) { return static_cast<double>((v > 0) - (v < 0)); }

void check_binary(const Tensor& m, const char* what) {
  for (double v : m.values()) {
    if (v != 0.0 && v != 1.0) throw_data(std::string(what) + ": mask must be binary");
  }
}

void overwrite(Tensor* out, Tensor value) {
  if (out) *out = std::move(value);
}

}  // namespace

void LossWeights::validate() const {
  const std::pair<const char*, double> fields[] = {
      {"reconstruction", reconstruction}, {"perceptual", perceptual}, {"texture", texture},
      {"w1", w1}, {"w2", w2}, {"gp", gp}, {"ce", ce}, {"dice", dice}};
  for (const auto& [name, v] : fields) {
    if (!(v >= 0) || !std::isfinite(v)) {
      throw_config(std::string("loss weight '") + name + "' must be finite and >= 0");
    }
  }
}

FeatureExtractor FeatureExtractor::identity() { return FeatureExtractor{}; }

FeatureExtractor FeatureExtractor::random_pyramid(std::uint64_t seed,
                                                  const std::vector<int>& channels, double slope) {
  if (channels.empty()) throw_config("feature extractor: at least one stage required");
  FeatureExtractor fx;
  fx.kind_ = ExtractorKind::kRandomPyramid;
  fx.slope_ = slope;
  std::mt19937_64 rng(seed);
  int in = 1;
  for (std::size_t j = 0; j < channels.size(); ++j) {
    if (channels[j] < 1) throw_config("feature extractor: stage channels must be >= 1");
    fx.convs_.emplace_back("stage" + std::to_string(j + 1), in, channels[j], 3, 2, 1);
    nn::he_init(fx.convs_.back(), rng);
    in = channels[j];
  }
  return fx;
}

FeatureExtractor FeatureExtractor::from_checkpoint(const Checkpoint& ck) {
  FeatureExtractor fx;
  fx.kind_ = ExtractorKind::kExternal;
  try {
    fx.slope_ = std::stod(ck.require("slope"));
    const int stages = std::stoi(ck.require("stages"));
    if (stages < 1) throw_data("feature extractor: stages must be >= 1");
    int in = 1;
    for (int j = 1; j <= stages; ++j) {
      const std::string name = "stage" + std::to_string(j);
      const auto& w = ck.get(name + ".weight");
      if (w.shape.c != in || w.shape.h != w.shape.w) {
        throw_data("feature extractor: " + name + ".weight has shape " + w.shape.str());
      }
      fx.convs_.emplace_back(name, in, w.shape.n, w.shape.h, std::stoi(ck.require(name + ".stride")),
                             std::stoi(ck.require(name + ".padding")));
      ck.load_into(name + ".weight", fx.convs_.back().weight.value);
      ck.load_into(name + ".bias", fx.convs_.back().bias.value);
      in = w.shape.n;
    }
  } catch (const std::logic_error& e) {
    throw_data(std::string("feature extractor: bad config value (") + e.what() + ")");
  }
  return fx;
}

FeatureExtractor FeatureExtractor::load(const std::filesystem::path& path) {
  return from_checkpoint(Checkpoint::load(path));
}

Checkpoint FeatureExtractor::to_checkpoint() const {
  if (kind_ == ExtractorKind::kIdentity) throw_config("identity extractor has no parameters");
  Checkpoint ck;
  ck.config["stages"] = std::to_string(convs_.size());
  ck.config["slope"] = std::to_string(slope_);
  for (const auto& c : convs_) {
    const std::string name = c.weight.name.substr(0, c.weight.name.find('.'));
    ck.config[name + ".stride"] = std::to_string(c.stride);
    ck.config[name + ".padding"] = std::to_string(c.padding);
    ck.put(c.weight.name, c.weight.value);
    ck.put(c.bias.name, c.bias.value);
  }
  return ck;
}

std::vector<nn::Shape> FeatureExtractor::stage_dims(const nn::Shape& input) const {
  if (kind_ == ExtractorKind::kIdentity) return {input};
  std::vector<nn::Shape> out;
  nn::Shape s = input;
  for (const auto& c : convs_) {
    s = nn::kernels::conv_output_shape(s, c.out_channels(), c.geometry());
    out.push_back(s);
  }
  return out;
}

std::vector<Tensor> FeatureExtractor::forward(const Tensor& x, Trace* trace) const {
  if (kind_ == ExtractorKind::kIdentity) return {x};
  if (x.c() != convs_.front().in_channels()) {
    throw_data("feature extractor: expected " + std::to_string(convs_.front().in_channels()) +
               " input channels, got " + x.shape().str());
  }
  if (trace) *trace = Trace{};
  std::vector<Tensor> out;
  out.reserve(convs_.size());
  const Tensor* in = &x;
  for (const auto& c : convs_) {
    if (in->h() < 2 || in->w() < 2) throw_data("feature extractor: input too small for stage");
    Tensor z = nn::conv2d(*in, c);
    Tensor a = nn::activation(z, nn::Activation::leaky(slope_));
    if (trace) {
      trace->inputs.push_back(*in);
      trace->pre.push_back(std::move(z));
    }
    out.push_back(std::move(a));
    in = &out.back();
  }
  return out;
}

Tensor FeatureExtractor::backward(const Trace& trace, const std::vector<Tensor>& grad_stages) const {
  if (kind_ == ExtractorKind::kIdentity) return grad_stages.at(0);
  const int L = static_cast<int>(convs_.size());
  if (static_cast<int>(grad_stages.size()) != L || static_cast<int>(trace.pre.size()) != L) {
    throw_data("feature extractor backward: stage count mismatch");
  }
  Tensor g = grad_stages[L - 1];
  for (int j = L - 1; j >= 0; --j) {
    if (j < L - 1) nn::axpy(1.0, grad_stages[j], g);
    const Tensor delta = nn::activation_backward(trace.pre[j], g, nn::Activation::leaky(slope_));
    Tensor gx(trace.inputs[j].shape());
    nn::kernels::conv2d_backward(trace.inputs[j], convs_[j].weight.value, convs_[j].geometry(),
                                 delta, &gx, nullptr, {});
    g = std::move(gx);
  }
  return g;
}

double reconstruction_loss(const Tensor& x, const Tensor& xhat, const Tensor& m, double w1,
                           double w2, Tensor* grad) {
  nn::check_same_shape(x, xhat, "reconstruction_loss");
  nn::check_same_shape(x, m, "reconstruction_loss mask");
  check_binary(m, "reconstruction_loss");
  const double count = static_cast<double>(x.size());
  double healthy = 0, lesion = 0;
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - xhat[i];
    if (m[i] != 0.0) {
      healthy += std::abs(d);
      g[i] = -w1 * sign(d) / count;
    } else {
      lesion += std::abs(d);
      g[i] = -w2 * sign(d) / count;
    }
  }
  overwrite(grad, std::move(g));
  return (w1 * healthy + w2 * lesion) / count;
}

Tensor composite_image(const Tensor& x, const Tensor& xhat, const Tensor& m) {
  nn::check_same_shape(x, xhat, "composite_image");
  nn::check_same_shape(x, m, "composite_image mask");
  Tensor z(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) z[i] = m[i] * x[i] + (1.0 - m[i]) * xhat[i];
  return z;
}

double perceptual_loss(const Tensor& x, const Tensor& xhat, const Tensor& z,
                       const FeatureExtractor& phi, Tensor* grad_xhat, Tensor* grad_z) {
  nn::check_same_shape(x, xhat, "perceptual_loss");
  nn::check_same_shape(x, z, "perceptual_loss");
  const bool want = grad_xhat || grad_z;
  FeatureExtractor::Trace th, tz;
  const auto fx = phi.forward(x);
  const auto fh = phi.forward(xhat, want ? &th : nullptr);
  const auto fz = phi.forward(z, want ? &tz : nullptr);
  double loss = 0;
  std::vector<Tensor> gh, gz;
  for (std::size_t j = 0; j < fx.size(); ++j) {
    const double count = static_cast<double>(fx[j].size());
    Tensor a(fx[j].shape()), b(fx[j].shape());
    double sa = 0, sb = 0;
    for (std::size_t i = 0; i < fx[j].size(); ++i) {
      const double da = fh[j][i] - fx[j][i];
      const double db = fz[j][i] - fx[j][i];
      sa += std::abs(da);
      sb += std::abs(db);
      a[i] = sign(da) / count;
      b[i] = sign(db) / count;
    }
    loss += (sa + sb) / count;
    gh.push_back(std::move(a));
    gz.push_back(std::move(b));
  }
  if (grad_xhat) *grad_xhat = phi.backward(th, gh);
  if (grad_z) *grad_z = phi.backward(tz, gz);
  return loss;
}

Tensor gram_matrix(const Tensor& f) {
  const int C = f.c();
  const int hw = static_cast<int>(f.shape().plane());
  Tensor g({f.n(), 1, C, C});
  const double norm = static_cast<double>(C) * hw;
  for (int b = 0; b < f.n(); ++b) {
    Eigen::Map<const RowMat> F(f.plane(b, 0), C, hw);
    Eigen::Map<RowMat> G(g.plane(b, 0), C, C);
    G.noalias() = F * F.transpose();
    G /= norm;
  }
  return g;
}

namespace {

// dL/dF for L = sum <dG, gram(F)>.
Tensor gram_backward(const Tensor& f, const Tensor& dG) {
  const int C = f.c();
  const int hw = static_cast<int>(f.shape().plane());
  const double norm = static_cast<double>(C) * hw;
  Tensor gf(f.shape());
  for (int b = 0; b < f.n(); ++b) {
    Eigen::Map<const RowMat> F(f.plane(b, 0), C, hw);
    Eigen::Map<const RowMat> D(dG.plane(b, 0), C, C);
    Eigen::Map<RowMat> out(gf.plane(b, 0), C, hw);
    out.noalias() = (D + D.transpose()) * F / norm;
  }
  return gf;
}

}  // namespace

double texture_loss(const Tensor& x, const Tensor& xhat, const Tensor& z,
                    const FeatureExtractor& phi, Tensor* grad_xhat, Tensor* grad_z) {
  nn::check_same_shape(x, xhat, "texture_loss");
  nn::check_same_shape(x, z, "texture_loss");
  const bool want = grad_xhat || grad_z;
  FeatureExtractor::Trace th, tz;
  const auto fx = phi.forward(x);
  const auto fh = phi.forward(xhat, want ? &th : nullptr);
  const auto fz = phi.forward(z, want ? &tz : nullptr);
  double loss = 0;
  std::vector<Tensor> gh, gz;
  for (std::size_t j = 0; j < fx.size(); ++j) {
    const Tensor gx = gram_matrix(fx[j]);
    const Tensor gmh = gram_matrix(fh[j]);
    const Tensor gmz = gram_matrix(fz[j]);
    const double count = static_cast<double>(gx.size());
    Tensor dh(gx.shape()), dz(gx.shape());
    double sa = 0, sb = 0;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      sa += std::abs(gmh[i] - gx[i]);
      sb += std::abs(gmz[i] - gx[i]);
      dh[i] = sign(gmh[i] - gx[i]) / count;
      dz[i] = sign(gmz[i] - gx[i]) / count;
    }
    loss += (sa + sb) / count;
    if (want) {
      gh.push_back(gram_backward(fh[j], dh));
      gz.push_back(gram_backward(fz[j], dz));
    }
  }
  if (grad_xhat) *grad_xhat = phi.backward(th, gh);
  if (grad_z) *grad_z = phi.backward(tz, gz);
  return loss;
}

WganTerms wgan_losses(pcgan::Discriminator& d, const Tensor& real, const Tensor& fake,
                      double lambda_gp, std::mt19937_64& rng, bool accumulate) {
  nn::check_same_shape(real, fake, "wgan_losses");
  const int batch = real.n();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Tensor u(real.shape());
  const std::size_t per_item = real.size() / batch;
  for (int b = 0; b < batch; ++b) {
    const double eps = unit(rng);
    for (std::size_t j = 0; j < per_item; ++j) {
      const std::size_t k = b * per_item + j;
      u[k] = eps * real[k] + (1.0 - eps) * fake[k];
    }
  }

  pcgan::Discriminator::Cache cr, cf;
  const Tensor sr = d.forward(real, accumulate ? &cr : nullptr);
  const Tensor sf = d.forward(fake, accumulate ? &cf : nullptr);
  double mean_r = 0, mean_f = 0;
  for (int b = 0; b < batch; ++b) {
    mean_r += sr[b];
    mean_f += sf[b];
  }
  mean_r /= batch;
  mean_f /= batch;

  WganTerms t;
  if (accumulate) {
    d.backward(cf, Tensor(sf.shape(), 1.0 / batch), nullptr, true);
    d.backward(cr, Tensor(sr.shape(), -1.0 / batch), nullptr, true);
  }
  t.gp = d.gradient_penalty(u, accumulate ? lambda_gp : 0.0).penalty;
  if (accumulate) d.finish_backward();
  t.loss_d = mean_f - mean_r + lambda_gp * t.gp;
  t.loss_g = -mean_f;
  return t;
}

double generator_adversarial_loss(pcgan::Discriminator& d, const Tensor& fake, Tensor* grad_fake) {
  pcgan::Discriminator::Cache cache;
  const Tensor s = d.forward(fake, grad_fake ? &cache : nullptr);
  const int batch = fake.n();
  double mean = 0;
  for (int b = 0; b < batch; ++b) mean += s[b];
  mean /= batch;
  if (grad_fake) d.backward(cache, Tensor(s.shape(), -1.0 / batch), grad_fake, false);
  return -mean;
}

double total_loss(const LossParts& parts, const LossWeights& weights) {
  const std::pair<const char*, double> named[] = {
      {"gan", parts.gan}, {"rec", parts.rec}, {"perc", parts.perc}, {"tex", parts.tex}};
  for (const auto& [name, v] : named) {
    if (!std::isfinite(v)) throw_numeric(std::string("non-finite loss part '") + name + "'");
  }
  return parts.gan + weights.reconstruction * parts.rec + weights.perceptual * parts.perc +
         weights.texture * parts.tex;
}

double ce_dice_loss(const Tensor& prob, const Tensor& target, double lambda_ce, double lambda_dice,
                    Tensor* grad) {
  nn::check_same_shape(prob, target, "ce_dice_loss");
  constexpr double kLo = 1e-7, kHi = 1.0 - 1e-7;
  const int batch = prob.n();
  const std::size_t per_item = prob.size() / batch;
  const double count = static_cast<double>(prob.size());
  Tensor g(prob.shape());
  double ce = 0, dice = 0;
  for (int b = 0; b < batch; ++b) {
    double inter = 0, sum = 0;
    for (std::size_t j = 0; j < per_item; ++j) {
      const std::size_t k = b * per_item + j;
      const double y = target[k];
      const double p = std::clamp(prob[k], kLo, kHi);
      ce -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
      if (prob[k] == p) g[k] = -lambda_ce * (y / p - (1.0 - y) / (1.0 - p)) / count;
      inter += y * prob[k];
      sum += y + prob[k];
    }
    const double num = 2 * inter + 1, den = sum + 1;
    dice += 1.0 - num / den;
    for (std::size_t j = 0; j < per_item; ++j) {
      const std::size_t k = b * per_item + j;
      g[k] -= lambda_dice * (2 * target[k] * den - num) / (den * den) / batch;
    }
  }
  overwrite(grad, std::move(g));
  return lambda_ce * ce / count + lambda_dice * dice / batch;
}

}  // namespace lfg::losses
