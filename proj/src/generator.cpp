#include <bit>
#include <cstring>
#include <type_traits>

#include "lfg/error.hpp"
#include "lfg/pcgan.hpp"

namespace lfg::pcgan {

using nn::Tensor;

Generator::Generator(const GeneratorConfig& config) : config_(config) {
  if (config.stages < 2) throw_config("generator: stages must be >= 2");
  if (config.base_channels < 1 || config.max_channels < 1) {
    throw_config("generator: channel counts must be >= 1");
  }
  if (config.kernel < 1 || config.kernel % 2 == 0) throw_config("generator: kernel must be odd");
  const int div = 1 << config.stages;
  if (config.height % div != 0 || config.width % div != 0 || config.height < div ||
      config.width < div) {
    throw_config("generator: input dims " + std::to_string(config.height) + "x" +
                 std::to_string(config.width) + " not divisible by 2^" +
                 std::to_string(config.stages));
  }
  const int pad = config.kernel / 2;
  channels_.push_back(1);
  for (int s = 1; s <= config.stages; ++s) {
    channels_.push_back(std::min(config.base_channels << (s - 1), config.max_channels));
  }
  std::mt19937_64 rng(config.seed);
  for (int s = 1; s <= config.stages; ++s) {
    const std::string name = "enc" + std::to_string(s);
    enc_conv_.emplace_back(name + ".conv", channels_[s - 1], channels_[s], config.kernel, 2, pad);
    nn::he_init(enc_conv_.back(), rng);
    enc_bn_.emplace_back(name + ".bn", channels_[s]);
  }
  for (int s = 1; s <= config.stages; ++s) {
    const std::string name = "dec" + std::to_string(s);
    const int out = s > 1 ? channels_[s - 1] : 1;
    dec_conv_.emplace_back(name + ".conv", channels_[s] + channels_[s - 1], out, config.kernel, 1,
                           pad);
    nn::he_init(dec_conv_.back(), rng);
    dec_bn_.emplace_back(name + ".bn", out);
  }
}

Generator build_generator(const GeneratorConfig& config) { return Generator(config); }

nn::Activation Generator::encoder_act() const {
  return config_.swap_activations ? nn::Activation::leaky(config_.leaky_slope)
                                  : nn::Activation::relu();
}

nn::Activation Generator::decoder_act() const {
  return config_.swap_activations ? nn::Activation::relu()
                                  : nn::Activation::leaky(config_.leaky_slope);
}

Tensor Generator::forward(const Tensor& image, const Tensor& mask, nn::NormMode mode,
                          Cache* cache_out) {
  if (image.c() != 1 || image.h() != config_.height || image.w() != config_.width) {
    throw_data("generator: expected input (n,1," + std::to_string(config_.height) + "," +
               std::to_string(config_.width) + "), got " + image.shape().str());
  }
  if (!(mask.shape() == image.shape())) throw_data("generator: mask/image shape mismatch");
  nn::check_binary_mask(mask, "generator");

  Cache local;
  Cache& c = cache_out ? *cache_out : local;
  const int stages = config_.stages;
  c = Cache{};
  c.mode = mode;
  c.enc_feat.resize(stages + 1);
  c.enc_mask.resize(stages + 1);
  c.enc_pc.resize(stages + 1);
  c.enc_bn.resize(stages + 1);
  c.enc_pre.resize(stages + 1);
  c.dec_mask_in.resize(stages + 1);
  c.dec_pc.resize(stages + 1);
  c.dec_bn.resize(stages + 1);
  c.dec_pre.resize(stages + 1);

  c.enc_feat[0] = Tensor(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) c.enc_feat[0][i] = mask[i] != 0.0 ? image[i] : 0.0;
  c.enc_mask[0] = mask;

  for (int s = 1; s <= stages; ++s) {
    c.enc_pc[s] = nn::partial_conv2d(c.enc_feat[s - 1], c.enc_mask[s - 1], enc_conv_[s - 1]);
    c.enc_mask[s] = c.enc_pc[s].mask;
    c.enc_pre[s] = s > 1 ? nn::batch_norm(c.enc_pc[s].out, enc_bn_[s - 1], mode, c.enc_bn[s])
                         : c.enc_pc[s].out;
    c.enc_feat[s] = nn::activation(c.enc_pre[s], encoder_act());
  }

  Tensor feat = c.enc_feat[stages];
  Tensor fmask = c.enc_mask[stages];
  Tensor out;
  for (int s = stages; s >= 1; --s) {
    const Tensor up = nn::upsample2x(feat);
    const Tensor up_mask = nn::upsample2x(fmask);
    const Tensor cat = nn::concat_channels(up, c.enc_feat[s - 1]);
    c.dec_mask_in[s] = nn::concat_channels(nn::broadcast_channels(up_mask, up.c()),
                                           nn::broadcast_channels(c.enc_mask[s - 1],
                                                                  c.enc_feat[s - 1].c()));
    c.dec_pc[s] = nn::partial_conv2d(cat, c.dec_mask_in[s], dec_conv_[s - 1]);
    fmask = c.dec_pc[s].mask;
    if (s > 1) {
      c.dec_pre[s] = nn::batch_norm(c.dec_pc[s].out, dec_bn_[s - 1], mode, c.dec_bn[s]);
      feat = nn::activation(c.dec_pre[s], decoder_act());
    } else {
      out = c.dec_pc[s].out;
    }
  }
  c.out_mask = fmask;
  return out;
}

void Generator::backward(const Cache& c, const Tensor& grad_out) {
  const int stages = config_.stages;
  std::vector<Tensor> g_enc(stages + 1);
  for (int s = 1; s <= stages; ++s) g_enc[s] = Tensor(c.enc_feat[s].shape());

  Tensor g = grad_out;  // gradient w.r.t. the output of decoder stage s
  for (int s = 1; s <= stages; ++s) {
    Tensor g_pc;
    if (s > 1) {
      g_pc = nn::batch_norm_backward(nn::activation_backward(c.dec_pre[s], g, decoder_act()),
                                     dec_bn_[s - 1], c.dec_bn[s]);
    } else {
      g_pc = g;
    }
    const Tensor& cat_in = c.dec_pc[s].masked_input;
    Tensor g_cat(cat_in.shape());
    nn::partial_conv2d_backward(c.dec_pc[s], c.dec_mask_in[s], dec_conv_[s - 1], g_pc, &g_cat);
    const int up_channels = channels_[s];
    auto [g_up, g_skip] = nn::concat_channels_backward(g_cat, up_channels);
    if (s > 1) axpy(1.0, g_skip, g_enc[s - 1]);
    g = nn::upsample2x_backward(g_up);
  }
  axpy(1.0, g, g_enc[stages]);

  for (int s = stages; s >= 1; --s) {
    Tensor g_pre = nn::activation_backward(c.enc_pre[s], g_enc[s], encoder_act());
    Tensor g_pc = s > 1 ? nn::batch_norm_backward(g_pre, enc_bn_[s - 1], c.enc_bn[s]) : g_pre;
    nn::partial_conv2d_backward(c.enc_pc[s], c.enc_mask[s - 1], enc_conv_[s - 1], g_pc,
                                s > 1 ? &g_enc[s - 1] : nullptr);
  }
}

template <typename Self>
auto collect_params(Self&, int stages, auto& enc_conv, auto& enc_bn, auto& dec_conv,
                    auto& dec_bn) {
  using P = std::conditional_t<std::is_const_v<Self>, const nn::Param*, nn::Param*>;
  std::vector<P> out;
  for (int s = 1; s <= stages; ++s) {
    out.push_back(&enc_conv[s - 1].weight);
    out.push_back(&enc_conv[s - 1].bias);
    if (s > 1) {
      out.push_back(&enc_bn[s - 1].gamma);
      out.push_back(&enc_bn[s - 1].beta);
    }
  }
  for (int s = stages; s >= 1; --s) {
    out.push_back(&dec_conv[s - 1].weight);
    out.push_back(&dec_conv[s - 1].bias);
    if (s > 1) {
      out.push_back(&dec_bn[s - 1].gamma);
      out.push_back(&dec_bn[s - 1].beta);
    }
  }
  return out;
}

std::vector<nn::Param*> Generator::parameters() {
  return collect_params(*this, config_.stages, enc_conv_, enc_bn_, dec_conv_, dec_bn_);
}

std::vector<const nn::Param*> Generator::parameters() const {
  return collect_params(*this, config_.stages, enc_conv_, enc_bn_, dec_conv_, dec_bn_);
}

void Generator::zero_grad() {
  for (auto* p : parameters()) p->grad.zero();
}

void Generator::export_state(Checkpoint& ck, const std::string& prefix) const {
  for (const auto* p : parameters()) ck.put(prefix + "." + p->name, p->value);
  for (int s = 2; s <= config_.stages; ++s) {
    const auto& e = enc_bn_[s - 1];
    ck.put(prefix + ".enc" + std::to_string(s) + ".bn.running_mean", e.running_mean);
    ck.put(prefix + ".enc" + std::to_string(s) + ".bn.running_var", e.running_var);
    const auto& d = dec_bn_[s - 1];
    ck.put(prefix + ".dec" + std::to_string(s) + ".bn.running_mean", d.running_mean);
    ck.put(prefix + ".dec" + std::to_string(s) + ".bn.running_var", d.running_var);
  }
}

void Generator::import_state(const Checkpoint& ck, const std::string& prefix) {
  for (auto* p : parameters()) ck.load_into(prefix + "." + p->name, p->value);
  for (int s = 2; s <= config_.stages; ++s) {
    auto& e = enc_bn_[s - 1];
    ck.load_into(prefix + ".enc" + std::to_string(s) + ".bn.running_mean", e.running_mean);
    ck.load_into(prefix + ".enc" + std::to_string(s) + ".bn.running_var", e.running_var);
    auto& d = dec_bn_[s - 1];
    ck.load_into(prefix + ".dec" + std::to_string(s) + ".bn.running_mean", d.running_mean);
    ck.load_into(prefix + ".dec" + std::to_string(s) + ".bn.running_var", d.running_var);
  }
}

std::uint64_t Generator::checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto* p : parameters()) {
    for (double v : p->value.values()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xff;
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

}  // namespace lfg::pcgan
