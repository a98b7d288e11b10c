#include <algorithm>
#include <cmath>
#include <numeric>

#include "lfg/error.hpp"
#include "lfg/segeval.hpp"

namespace lfg::seg {

using nn::Tensor;

Segmenter::Segmenter(const SegmenterConfig& config) : config_(config) {
  if (config.levels < 2) throw_config("segmenter: levels must be >= 2");
  if (config.base_channels < 1) throw_config("segmenter: base_channels must be >= 1");
  const int div = 1 << (config.levels - 1);
  if (config.height % div || config.width % div) {
    throw_config("segmenter: dims must be divisible by 2^(levels-1)");
  }
  std::mt19937_64 rng(config.seed);
  for (int l = 0; l < config.levels; ++l) channels_.push_back(config.base_channels << l);
  for (int l = 0; l < config.levels; ++l) {
    const std::string name = "enc" + std::to_string(l);
    enc_.emplace_back(name + ".conv", l == 0 ? 1 : channels_[l - 1], channels_[l], 3,
                      l == 0 ? 1 : 2, 1);
    nn::he_init(enc_.back(), rng);
    enc_bn_.emplace_back(name + ".bn", channels_[l]);
  }
  for (int l = 1; l < config.levels; ++l) {
    const std::string name = "dec" + std::to_string(l);
    dec_.emplace_back(name + ".conv", channels_[l] + channels_[l - 1], channels_[l - 1], 3, 1, 1);
    nn::he_init(dec_.back(), rng);
    dec_bn_.emplace_back(name + ".bn", channels_[l - 1]);
  }
  head_ = nn::ConvParams("head", channels_[0], 1, 1, 1, 0);
  nn::he_init(head_, rng);
}

Tensor Segmenter::forward(const Tensor& image, nn::NormMode mode, Cache* cache_out) {
  if (image.c() != 1 || image.h() != config_.height || image.w() != config_.width) {
    throw_data("segmenter: expected (n,1," + std::to_string(config_.height) + "," +
               std::to_string(config_.width) + "), got " + image.shape().str());
  }
  Cache local;
  Cache& c = cache_out ? *cache_out : local;
  const int L = config_.levels;
  c = Cache{};
  c.mode = mode;
  c.enc_in.resize(L);
  c.enc_pre.resize(L);
  c.enc_out.resize(L);
  c.enc_bn.resize(L);
  c.dec_in.resize(L);
  c.dec_pre.resize(L);
  c.dec_bn.resize(L);
  const auto relu = nn::Activation::relu();

  for (int l = 0; l < L; ++l) {
    c.enc_in[l] = l == 0 ? image : c.enc_out[l - 1];
    c.enc_pre[l] = nn::batch_norm(nn::conv2d(c.enc_in[l], enc_[l]), enc_bn_[l], mode, c.enc_bn[l]);
    c.enc_out[l] = nn::activation(c.enc_pre[l], relu);
  }
  Tensor feat = c.enc_out[L - 1];
  for (int l = L - 1; l >= 1; --l) {
    c.dec_in[l] = nn::concat_channels(nn::upsample2x(feat), c.enc_out[l - 1]);
    c.dec_pre[l] =
        nn::batch_norm(nn::conv2d(c.dec_in[l], dec_[l - 1]), dec_bn_[l - 1], mode, c.dec_bn[l]);
    feat = nn::activation(c.dec_pre[l], relu);
  }
  c.head_in = std::move(feat);
  c.prob = nn::sigmoid(nn::conv2d(c.head_in, head_));
  return c.prob;
}

void Segmenter::backward(const Cache& c, const Tensor& grad_prob) {
  const int L = config_.levels;
  const auto relu = nn::Activation::relu();
  std::vector<Tensor> g_enc(L);
  for (int l = 0; l < L; ++l) g_enc[l] = Tensor(c.enc_out[l].shape());

  Tensor g(c.head_in.shape());
  nn::conv2d_backward(c.head_in, head_, nn::sigmoid_backward(c.prob, grad_prob), &g);
  for (int l = 1; l < L; ++l) {
    const Tensor g_bn = nn::activation_backward(c.dec_pre[l], g, relu);
    const Tensor g_conv = nn::batch_norm_backward(g_bn, dec_bn_[l - 1], c.dec_bn[l]);
    Tensor g_cat(c.dec_in[l].shape());
    nn::conv2d_backward(c.dec_in[l], dec_[l - 1], g_conv, &g_cat);
    auto [g_up, g_skip] = nn::concat_channels_backward(g_cat, channels_[l]);
    nn::axpy(1.0, g_skip, g_enc[l - 1]);
    g = nn::upsample2x_backward(g_up);
  }
  nn::axpy(1.0, g, g_enc[L - 1]);
  for (int l = L - 1; l >= 0; --l) {
    const Tensor g_bn = nn::activation_backward(c.enc_pre[l], g_enc[l], relu);
    const Tensor g_conv = nn::batch_norm_backward(g_bn, enc_bn_[l], c.enc_bn[l]);
    nn::conv2d_backward(c.enc_in[l], enc_[l], g_conv, l > 0 ? &g_enc[l - 1] : nullptr);
  }
}

LesionMask Segmenter::predict(const IntensityGrid& image, double threshold) {
  const Tensor prob = forward(train::image_tensor(image), nn::NormMode::kEval);
  LesionMask out(image.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = prob[i] > threshold ? 1 : 0;
  return out;
}

std::vector<nn::Param*> Segmenter::parameters() {
  std::vector<nn::Param*> out;
  for (int l = 0; l < config_.levels; ++l) {
    out.push_back(&enc_[l].weight);
    out.push_back(&enc_[l].bias);
    out.push_back(&enc_bn_[l].gamma);
    out.push_back(&enc_bn_[l].beta);
  }
  for (std::size_t l = 0; l < dec_.size(); ++l) {
    out.push_back(&dec_[l].weight);
    out.push_back(&dec_[l].bias);
    out.push_back(&dec_bn_[l].gamma);
    out.push_back(&dec_bn_[l].beta);
  }
  out.push_back(&head_.weight);
  out.push_back(&head_.bias);
  return out;
}

void Segmenter::zero_grad() {
  for (auto* p : parameters()) p->grad.zero();
}

void Segmenter::export_state(Checkpoint& ck, const std::string& prefix) const {
  auto put_bn = [&](const nn::BatchNorm& bn) {
    ck.put(prefix + "." + bn.gamma.name, bn.gamma.value);
    ck.put(prefix + "." + bn.beta.name, bn.beta.value);
    const std::string base = bn.gamma.name.substr(0, bn.gamma.name.rfind('.'));
    ck.put(prefix + "." + base + ".running_mean", bn.running_mean);
    ck.put(prefix + "." + base + ".running_var", bn.running_var);
  };
  auto put_conv = [&](const nn::ConvParams& p) {
    ck.put(prefix + "." + p.weight.name, p.weight.value);
    ck.put(prefix + "." + p.bias.name, p.bias.value);
  };
  for (std::size_t l = 0; l < enc_.size(); ++l) {
    put_conv(enc_[l]);
    put_bn(enc_bn_[l]);
  }
  for (std::size_t l = 0; l < dec_.size(); ++l) {
    put_conv(dec_[l]);
    put_bn(dec_bn_[l]);
  }
  put_conv(head_);
}

void Segmenter::import_state(const Checkpoint& ck, const std::string& prefix) {
  auto get_bn = [&](nn::BatchNorm& bn) {
    ck.load_into(prefix + "." + bn.gamma.name, bn.gamma.value);
    ck.load_into(prefix + "." + bn.beta.name, bn.beta.value);
    const std::string base = bn.gamma.name.substr(0, bn.gamma.name.rfind('.'));
    ck.load_into(prefix + "." + base + ".running_mean", bn.running_mean);
    ck.load_into(prefix + "." + base + ".running_var", bn.running_var);
  };
  auto get_conv = [&](nn::ConvParams& p) {
    ck.load_into(prefix + "." + p.weight.name, p.weight.value);
    ck.load_into(prefix + "." + p.bias.name, p.bias.value);
  };
  for (std::size_t l = 0; l < enc_.size(); ++l) {
    get_conv(enc_[l]);
    get_bn(enc_bn_[l]);
  }
  for (std::size_t l = 0; l < dec_.size(); ++l) {
    get_conv(dec_[l]);
    get_bn(dec_bn_[l]);
  }
  get_conv(head_);
}

void write_segmenter(const std::filesystem::path& path, const Segmenter& s) {
  Checkpoint ck;
  const auto& c = s.config();
  ck.config["seg.height"] = std::to_string(c.height);
  ck.config["seg.width"] = std::to_string(c.width);
  ck.config["seg.levels"] = std::to_string(c.levels);
  ck.config["seg.base_channels"] = std::to_string(c.base_channels);
  ck.config["seg.seed"] = std::to_string(c.seed);
  s.export_state(ck);
  ck.save(path);
}

Segmenter read_segmenter(const std::filesystem::path& path) {
  const Checkpoint ck = Checkpoint::load(path);
  SegmenterConfig c;
  try {
    c.height = std::stoi(ck.require("seg.height"));
    c.width = std::stoi(ck.require("seg.width"));
    c.levels = std::stoi(ck.require("seg.levels"));
    c.base_channels = std::stoi(ck.require("seg.base_channels"));
    c.seed = std::stoull(ck.require("seg.seed"));
  } catch (const std::logic_error& e) {
    throw_data(path.string() + ": bad segmenter config (" + e.what() + ")");
  }
  Segmenter s(c);
  s.import_state(ck);
  return s;
}

namespace {

Tensor target_tensor(const SliceRecord& r) {
  const LesionMask u = mask_union(r.lesions, r.image.dims());
  Tensor t({1, 1, u.height(), u.width()});
  for (std::size_t i = 0; i < u.size(); ++i) t[i] = u.values()[i];
  return t;
}

}  // namespace

SegTrainResult train_segmenter(Segmenter& model, const std::vector<SliceRecord>& train,
                               const SegTrainConfig& config) {
  if (train.empty()) throw_data("train_segmenter: empty training set");
  if (config.epochs < 0 || config.batch < 1 || !(config.lr > 0)) {
    throw_config("train_segmenter: epochs >= 0, batch >= 1 and lr > 0 required");
  }
  const auto& mc = model.config();
  std::vector<Tensor> images, targets;
  for (const auto& r : train) {
    if (r.image.height() != mc.height || r.image.width() != mc.width) {
      throw_data("train_segmenter: slice " + r.slice_id + " does not match model input size");
    }
    images.push_back(train::image_tensor(r.image));
    targets.push_back(target_tensor(r));
  }
  const std::size_t plane = static_cast<std::size_t>(mc.height) * mc.width;
  train::AMSGradState opt;
  SegTrainResult result;
  std::vector<std::size_t> order(train.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed),
                      static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(epoch), 0x5e9u};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const int n = static_cast<int>(std::min<std::size_t>(config.batch, order.size() - start));
      Tensor x({n, 1, mc.height, mc.width}), y(x.shape());
      for (int b = 0; b < n; ++b) {
        std::copy_n(images[order[start + b]].data(), plane, x.plane(b, 0));
        std::copy_n(targets[order[start + b]].data(), plane, y.plane(b, 0));
      }
      Segmenter::Cache cache;
      const Tensor prob = model.forward(x, nn::NormMode::kTrain, &cache);
      Tensor grad;
      const double loss = losses::ce_dice_loss(prob, y, config.lambda_ce, config.lambda_dice, &grad);
      if (!std::isfinite(loss)) throw_numeric("train_segmenter: non-finite loss");
      model.zero_grad();
      model.backward(cache, grad);
      train::amsgrad_step(model.parameters(), opt, config.lr);
      result.step_losses.push_back(loss);
    }
  }
  return result;
}

std::vector<Segmenter> train_segmenter_folds(const SegmenterConfig& model_config,
                                             const std::vector<SliceRecord>& train,
                                             const std::vector<int>& folds, int k_folds,
                                             const SegTrainConfig& config) {
  if (folds.size() != train.size()) throw_data("train_segmenter_folds: fold list size mismatch");
  if (k_folds < 2) throw_config("train_segmenter_folds: k_folds must be >= 2");
  std::vector<Segmenter> models;
  for (int f = 0; f < k_folds; ++f) {
    std::vector<SliceRecord> subset;
    for (std::size_t i = 0; i < train.size(); ++i)
      if (folds[i] != f) subset.push_back(train[i]);
    Segmenter m(model_config);
    train_segmenter(m, subset, config);
    models.push_back(std::move(m));
  }
  return models;
}

}  // namespace lfg::seg
