#include <algorithm>
#include <cmath>

#include "lfg/error.hpp"
#include "lfg/pcgan.hpp"

namespace lfg::pcgan {

using nn::Tensor;

namespace {

void normalize(std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  s = std::sqrt(s);
  if (s < 1e-12) s = 1e-12;
  for (double& x : v) x /= s;
}

// Rows of W (out channels) times v.
std::vector<double> mat_vec(const Tensor& w, const std::vector<double>& v) {
  const int rows = w.n();
  const std::size_t cols = w.size() / rows;
  std::vector<double> out(rows, 0.0);
  for (int r = 0; r < rows; ++r) {
    const double* row = w.data() + r * cols;
    double s = 0;
    for (std::size_t j = 0; j < cols; ++j) s += row[j] * v[j];
    out[r] = s;
  }
  return out;
}

std::vector<double> mat_t_vec(const Tensor& w, const std::vector<double>& u) {
  const int rows = w.n();
  const std::size_t cols = w.size() / rows;
  std::vector<double> out(cols, 0.0);
  for (int r = 0; r < rows; ++r) {
    const double* row = w.data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += row[j] * u[r];
  }
  return out;
}

void check_state(const Tensor& w, const SpectralNormState& s) {
  if (s.u.size() != static_cast<std::size_t>(w.n()) || s.v.size() != w.size() / w.n()) {
    throw_data("spectral norm: state does not match weight " + w.shape().str());
  }
}

}  // namespace

void init_spectral_state(SpectralNormState& state, int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  state.u.resize(rows);
  state.v.resize(cols);
  for (double& x : state.u) x = dist(rng);
  for (double& x : state.v) x = dist(rng);
  normalize(state.u);
  normalize(state.v);
  nn::round_to_float(state.u);
  nn::round_to_float(state.v);
  state.sigma = 1.0;
}

double spectral_sigma(const Tensor& weight, const SpectralNormState& state) {
  check_state(weight, state);
  const auto wv = mat_vec(weight, state.v);
  double s = 0;
  for (std::size_t r = 0; r < wv.size(); ++r) s += state.u[r] * wv[r];
  return std::max(s, 1e-12);
}

Tensor spectral_normalize(const Tensor& weight, SpectralNormState& state, int power_iters) {
  check_state(weight, state);
  for (int it = 0; it < power_iters; ++it) {
    state.v = mat_t_vec(weight, state.u);
    normalize(state.v);
    state.u = mat_vec(weight, state.v);
    normalize(state.u);
    nn::round_to_float(state.u);
    nn::round_to_float(state.v);
  }
  state.sigma = spectral_sigma(weight, state);
  Tensor out = weight;
  for (double& x : out.values()) x /= state.sigma;
  return out;
}

Discriminator::Discriminator(const DiscriminatorConfig& config) : config_(config) {
  if (config.patch < 8 || config.patch % 8 != 0) {
    throw_config("discriminator: patch must be a positive multiple of 8");
  }
  if (config.base_channels < 1) throw_config("discriminator: base_channels must be >= 1");
  const int c = config.base_channels;
  std::mt19937_64 rng(config.seed);
  layers_.emplace_back("conv1", 1, c, 4, 2, 1);
  layers_.emplace_back("conv2", c, 2 * c, 4, 2, 1);
  layers_.emplace_back("conv3", 2 * c, 4 * c, 4, 2, 1);
  layers_.emplace_back("conv4", 4 * c, 1, config.patch / 8, 1, 0);
  sn_.resize(kLayers);
  for (int i = 0; i < kLayers; ++i) {
    nn::he_init(layers_[i], rng);
    const Tensor& w = layers_[i].weight.value;
    init_spectral_state(sn_[i], w.n(), static_cast<int>(w.size() / w.n()), rng);
    // Random u, v give a poor first sigma; converge before the first step.
    if (normalized(i)) spectral_normalize(w, sn_[i], kWarmupIterations);
    effective_grad_.emplace_back(w.shape());
  }
  effective_.resize(kLayers);
  prepare(false);
}

nn::Activation Discriminator::act(int layer) const {
  return layer < kLayers - 1 ? config_.act : nn::Activation::identity();
}

void Discriminator::prepare(bool power_iteration) {
  for (int i = 0; i < kLayers; ++i) {
    if (normalized(i)) {
      effective_[i] = spectral_normalize(layers_[i].weight.value, sn_[i], power_iteration ? 1 : 0);
    } else {
      effective_[i] = layers_[i].weight.value;
    }
  }
}

Tensor Discriminator::forward(const Tensor& patch, Cache* cache) const {
  if (patch.c() != 1 || patch.h() != config_.patch || patch.w() != config_.patch) {
    throw_data("discriminator: expected (n,1," + std::to_string(config_.patch) + "," +
               std::to_string(config_.patch) + ") input, got " + patch.shape().str());
  }
  if (cache) {
    cache->inputs.assign(kLayers, Tensor());
    cache->pre.assign(kLayers, Tensor());
  }
  Tensor x = patch;
  for (int i = 0; i < kLayers; ++i) {
    Tensor z;
    nn::kernels::conv2d_forward(x, effective_[i], layers_[i].bias.value.values(),
                                layers_[i].geometry(), z);
    Tensor a = nn::activation(z, act(i));
    if (cache) {
      cache->inputs[i] = std::move(x);
      cache->pre[i] = std::move(z);
    }
    x = std::move(a);
  }
  return x;
}

void Discriminator::backward(const Cache& cache, const Tensor& grad_scores, Tensor* grad_input,
                             bool accumulate_params) {
  Tensor g = grad_scores;
  for (int i = kLayers - 1; i >= 0; --i) {
    const Tensor delta = nn::activation_backward(cache.pre[i], g, act(i));
    const bool need_gx = i > 0 || grad_input;
    Tensor gx;
    if (need_gx) gx = Tensor(cache.inputs[i].shape());
    nn::kernels::conv2d_backward(cache.inputs[i], effective_[i], layers_[i].geometry(), delta,
                                 need_gx ? &gx : nullptr,
                                 accumulate_params ? &effective_grad_[i] : nullptr,
                                 accumulate_params ? layers_[i].bias.grad.values()
                                                   : std::span<double>{});
    g = std::move(gx);
  }
  if (grad_input) *grad_input = std::move(g);
}

Discriminator::PenaltyResult Discriminator::gradient_penalty(const Tensor& points,
                                                             double param_weight) {
  Cache cache;
  const Tensor scores = forward(points, &cache);
  const int batch = points.n();

  // deltas[i] = dD/dz_i for unit output gradient
  std::vector<Tensor> deltas(kLayers);
  Tensor g(scores.shape(), 1.0);
  for (int i = kLayers - 1; i >= 0; --i) {
    deltas[i] = nn::activation_backward(cache.pre[i], g, act(i));
    Tensor gx(cache.inputs[i].shape());
    nn::kernels::conv2d_backward(cache.inputs[i], effective_[i], layers_[i].geometry(), deltas[i],
                                 &gx, nullptr, {});
    g = std::move(gx);
  }

  PenaltyResult result;
  result.grad_norms.resize(batch);
  const std::size_t per_item = g.size() / batch;
  for (int b = 0; b < batch; ++b) {
    double s = 0;
    const double* p = g.data() + b * per_item;
    for (std::size_t j = 0; j < per_item; ++j) s += p[j] * p[j];
    result.grad_norms[b] = std::sqrt(s);
    result.penalty += (result.grad_norms[b] - 1.0) * (result.grad_norms[b] - 1.0);
  }
  result.penalty /= batch;
  if (param_weight == 0.0) return result;

  // Directional pass: d/dtheta <r, grad_x D> with r = dP/d(grad_x D) held fixed.
  Tensor t(g.shape());
  for (int b = 0; b < batch; ++b) {
    const double norm = result.grad_norms[b];
    if (norm == 0.0) continue;
    const double k = param_weight * 2.0 * (norm - 1.0) / norm / batch;
    for (std::size_t j = 0; j < per_item; ++j) t[b * per_item + j] = k * g[b * per_item + j];
  }
  for (int i = 0; i < kLayers; ++i) {
    nn::kernels::conv2d_backward(t, effective_[i], layers_[i].geometry(), deltas[i], nullptr,
                                 &effective_grad_[i], {});
    if (i == kLayers - 1) break;
    Tensor tz;
    nn::kernels::conv2d_forward(t, effective_[i], {}, layers_[i].geometry(), tz);
    for (std::size_t j = 0; j < tz.size(); ++j) tz[j] *= nn::activation_slope(cache.pre[i][j], act(i));
    t = std::move(tz);
  }
  return result;
}

void Discriminator::finish_backward() {
  for (int i = 0; i < kLayers; ++i) {
    Tensor& G = effective_grad_[i];
    Tensor& dw = layers_[i].weight.grad;
    if (!normalized(i)) {
      nn::axpy(1.0, G, dw);
      G.zero();
      continue;
    }
    const SpectralNormState& s = sn_[i];
    double inner = 0;
    for (std::size_t j = 0; j < G.size(); ++j) inner += G[j] * effective_[i][j];
    const std::size_t cols = s.v.size();
    for (std::size_t r = 0; r < s.u.size(); ++r) {
      for (std::size_t j = 0; j < cols; ++j) {
        const std::size_t k = r * cols + j;
        dw[k] += (G[k] - inner * s.u[r] * s.v[j]) / s.sigma;
      }
    }
    G.zero();
  }
}

std::vector<nn::Param*> Discriminator::parameters() {
  std::vector<nn::Param*> out;
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

void Discriminator::zero_grad() {
  for (auto* p : parameters()) p->grad.zero();
  for (auto& g : effective_grad_) g.zero();
}

void Discriminator::export_state(Checkpoint& ck, const std::string& prefix) const {
  for (int i = 0; i < kLayers; ++i) {
    const auto& l = layers_[i];
    ck.put(prefix + "." + l.weight.name, l.weight.value);
    ck.put(prefix + "." + l.bias.name, l.bias.value);
    ck.put(prefix + ".conv" + std::to_string(i + 1) + ".sn_u", sn_[i].u);
    ck.put(prefix + ".conv" + std::to_string(i + 1) + ".sn_v", sn_[i].v);
  }
}

void Discriminator::import_state(const Checkpoint& ck, const std::string& prefix) {
  for (int i = 0; i < kLayers; ++i) {
    auto& l = layers_[i];
    ck.load_into(prefix + "." + l.weight.name, l.weight.value);
    ck.load_into(prefix + "." + l.bias.name, l.bias.value);
    ck.load_into(prefix + ".conv" + std::to_string(i + 1) + ".sn_u", sn_[i].u);
    ck.load_into(prefix + ".conv" + std::to_string(i + 1) + ".sn_v", sn_[i].v);
  }
  prepare(false);
}

PatchSelection select_lesion_patch(const std::vector<LesionMask>& lesions, Dims dims,
                                   std::mt19937_64& rng, int size) {
  if (dims.height < size || dims.width < size) {
    throw_data("lesion patch: image " + std::to_string(dims.height) + "x" +
               std::to_string(dims.width) + " smaller than patch " + std::to_string(size));
  }
  std::vector<int> candidates;
  for (std::size_t k = 0; k < lesions.size(); ++k) {
    if (mask_area(lesions[k]) > 0) candidates.push_back(static_cast<int>(k));
  }
  if (candidates.empty()) throw_data("lesion patch: no lesion to select");
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  PatchSelection sel;
  sel.size = size;
  sel.lesion = candidates[pick(rng)];
  const LesionMask& m = lesions[sel.lesion];
  int r0 = dims.height, r1 = -1, c0 = dims.width, c1 = -1;
  for (int r = 0; r < m.dims().height; ++r) {
    for (int c = 0; c < m.dims().width; ++c) {
      if (!m(r, c)) continue;
      r0 = std::min(r0, r);
      r1 = std::max(r1, r);
      c0 = std::min(c0, c);
      c1 = std::max(c1, c);
    }
  }
  sel.y0 = std::clamp((r0 + r1) / 2 - size / 2, 0, dims.height - size);
  sel.x0 = std::clamp((c0 + c1) / 2 - size / 2, 0, dims.width - size);
  return sel;
}

LesionPatch crop_lesion_patch(const IntensityGrid& image, const std::vector<LesionMask>& lesions,
                              std::mt19937_64& rng, int size, bool masked) {
  LesionPatch out;
  out.where = select_lesion_patch(lesions, image.dims(), rng, size);
  const LesionMask& m = lesions[out.where.lesion];
  if (!(m.dims() == image.dims())) throw_data("lesion patch: mask/image dims differ");
  out.patch = IntensityGrid(size, size);
  out.patch_mask = LesionMask(size, size);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const int y = out.where.y0 + r, x = out.where.x0 + c;
      out.patch_mask(r, c) = m(y, x);
      out.patch(r, c) = (!masked || m(y, x)) ? image(y, x) : 0.0f;
    }
  }
  return out;
}

}  // namespace lfg::pcgan
