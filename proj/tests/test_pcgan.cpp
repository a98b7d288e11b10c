#include <doctest.h>

#include <Eigen/SVD>
#include <cmath>
#include <map>
#include <random>

#include "lfg/error.hpp"
#include "lfg/nn/gradcheck.hpp"
#include "lfg/pcgan.hpp"

using namespace lfg;
using namespace lfg::pcgan;
using nn::Tensor;

namespace {

Tensor random_tensor(nn::Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(s);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

Tensor random_mask(nn::Shape s, std::mt19937_64& rng, double hole_fraction) {
  std::bernoulli_distribution hole(hole_fraction);
  Tensor m(s);
  for (auto& v : m.values()) v = hole(rng) ? 0.0 : 1.0;
  return m;
}

double weighted_sum(const Tensor& y, const Tensor& r) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

GeneratorConfig small_generator(int stages, int size, std::uint64_t seed = 1) {
  GeneratorConfig c;
  c.height = c.width = size;
  c.stages = stages;
  c.base_channels = 2;
  c.max_channels = 4;
  c.seed = seed;
  return c;
}

DiscriminatorConfig small_discriminator(int patch, bool sn) {
  DiscriminatorConfig c;
  c.patch = patch;
  c.base_channels = 2;
  c.spectral_norm = sn;
  c.seed = 3;
  return c;
}

LesionMask box(Dims d, int r0, int r1, int c0, int c1) {
  LesionMask m(d);
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) m(r, c) = 1;
  return m;
}

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind{};
}

}  // namespace

TEST_CASE("generator construction") {
  GeneratorConfig c;
  c.height = c.width = 64;
  c.stages = 8;
  CHECK(kind_of([&] { Generator{c}; }) == ErrorKind::kConfig);
  c.stages = 6;
  c.kernel = 4;
  CHECK(kind_of([&] { Generator{c}; }) == ErrorKind::kConfig);

  GeneratorConfig full;  // 256x256, 8 stages
  Generator g(full);
  Generator::Cache cache;
  const Tensor out =
      g.forward(Tensor({1, 1, 256, 256}, 0.5), Tensor({1, 1, 256, 256}, 1.0), nn::NormMode::kEval, &cache);
  CHECK(out.shape() == nn::Shape{1, 1, 256, 256});
  CHECK(cache.enc_feat[8].h() == 1);
  CHECK(cache.enc_feat[8].w() == 1);
  CHECK(g.stage_channels(8) == 128);
  CHECK(g.stage_channels(1) == 16);
}

TEST_CASE("generator initialization is deterministic") {
  const auto c = small_generator(3, 32, 11);
  CHECK(Generator(c).checksum() == Generator(c).checksum());
  CHECK(Generator(c).checksum() != Generator(small_generator(3, 32, 12)).checksum());
  const Generator g(c);
  for (const auto* p : g.parameters())
    for (double v : p->value.values()) CHECK(static_cast<double>(static_cast<float>(v)) == v);
}

TEST_CASE("generator output ignores hole contents") {
  std::mt19937_64 rng(1);
  Generator g(small_generator(3, 32));
  const Tensor x = random_tensor({2, 1, 32, 32}, rng, 0, 1);
  const Tensor m = random_mask(x.shape(), rng, 0.3);
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (m[i] == 0) y[i] = 1000.0 + static_cast<double>(i);
  for (auto mode : {nn::NormMode::kEval, nn::NormMode::kTrain}) {
    Generator a = g, b = g;
    const Tensor oa = a.forward(x, m, mode), ob = b.forward(y, m, mode);
    for (std::size_t i = 0; i < oa.size(); ++i) CHECK(oa[i] == ob[i]);
  }
  CHECK(kind_of([&] { g.forward(x, Tensor({2, 1, 32, 32}, 0.5), nn::NormMode::kEval); }) == ErrorKind::kData);
  CHECK(kind_of([&] { g.forward(Tensor({1, 1, 16, 16}), Tensor({1, 1, 16, 16}), nn::NormMode::kEval); }) ==
        ErrorKind::kData);
}

TEST_CASE("generator forward matches a layer-by-layer replay") {
  std::mt19937_64 rng(2);
  const auto cfg = small_generator(3, 32);
  Generator g(cfg);
  const Tensor x = random_tensor({1, 1, 32, 32}, rng, 0, 1);
  const Tensor m = random_mask(x.shape(), rng, 0.3);
  const Tensor out = g.forward(x, m, nn::NormMode::kEval);

  // Replay from the checkpoint blocks with plain layer calls.
  Checkpoint ck;
  g.export_state(ck);
  auto conv = [&](const std::string& name, int stride) {
    const auto& w = ck.get("gen." + name + ".conv.weight");
    nn::ConvParams p(name, w.shape.c, w.shape.n, w.shape.h, stride, w.shape.h / 2);
    ck.load_into("gen." + name + ".conv.weight", p.weight.value);
    ck.load_into("gen." + name + ".conv.bias", p.bias.value);
    return p;
  };
  auto bn = [&](const std::string& name, int ch) {
    nn::BatchNorm b(name, ch);
    ck.load_into("gen." + name + ".bn.gamma", b.gamma.value);
    ck.load_into("gen." + name + ".bn.beta", b.beta.value);
    ck.load_into("gen." + name + ".bn.running_mean", b.running_mean);
    ck.load_into("gen." + name + ".bn.running_var", b.running_var);
    return b;
  };
  std::vector<Tensor> feats{x}, masks{m};
  for (std::size_t i = 0; i < x.size(); ++i) feats[0][i] *= m[i];
  for (int s = 1; s <= 3; ++s) {
    auto p = conv("enc" + std::to_string(s), 2);
    auto r = nn::partial_conv2d(feats.back(), masks.back(), p);
    Tensor z = r.out;
    if (s > 1) {
      auto b = bn("enc" + std::to_string(s), p.out_channels());
      nn::BatchNormCache bc;
      z = nn::batch_norm(z, b, nn::NormMode::kEval, bc);
    }
    feats.push_back(nn::activation(z, nn::Activation::relu()));
    masks.push_back(r.mask);
  }
  Tensor f = feats[3], fm = masks[3], replay;
  for (int s = 3; s >= 1; --s) {
    auto p = conv("dec" + std::to_string(s), 1);
    const Tensor up = nn::upsample2x(f);
    const Tensor cat = nn::concat_channels(up, feats[s - 1]);
    const Tensor cm = nn::concat_channels(nn::broadcast_channels(nn::upsample2x(fm), up.c()),
                                          nn::broadcast_channels(masks[s - 1], feats[s - 1].c()));
    auto r = nn::partial_conv2d(cat, cm, p);
    fm = r.mask;
    if (s > 1) {
      auto b = bn("dec" + std::to_string(s), p.out_channels());
      nn::BatchNormCache bc;
      f = nn::activation(nn::batch_norm(r.out, b, nn::NormMode::kEval, bc),
                         nn::Activation::leaky(0.2));
    } else {
      replay = r.out;
    }
  }
  REQUIRE(replay.shape() == out.shape());
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(replay[i]).epsilon(1e-12));
}

TEST_CASE("generator backward matches finite differences") {
  std::mt19937_64 rng(3);
  Generator g(small_generator(2, 8));
  const Tensor x = random_tensor({2, 1, 8, 8}, rng, 0, 1);
  const Tensor m = random_mask(x.shape(), rng, 0.3);
  const Tensor r = random_tensor({2, 1, 8, 8}, rng);
  Generator::Cache cache;
  g.zero_grad();
  g.forward(x, m, nn::NormMode::kTrain, &cache);
  g.backward(cache, r);
  auto loss = [&] {
    Generator copy = g;
    return weighted_sum(copy.forward(x, m, nn::NormMode::kTrain), r);
  };
  for (auto* p : g.parameters()) {
    const Tensor grad = p->grad;
    const auto rep = nn::grad_check(loss, p->value.values(), grad.values(), 1e-6, 1e-4);
    INFO(p->name << " rel " << rep.max_rel_error);
    CHECK(rep.passed(1e-4));
  }
}

TEST_CASE("spectral normalization") {
  SpectralNormState st;
  std::mt19937_64 rng(4);
  Tensor d({2, 2, 1, 1});
  d[0] = 3;
  d[3] = 1;
  init_spectral_state(st, 2, 2, rng);
  spectral_normalize(d, st, 50);
  CHECK(st.sigma == doctest::Approx(3.0).epsilon(1e-6));

  for (int trial = 0; trial < 5; ++trial) {
    const Tensor w = random_tensor({16, 16, 1, 1}, rng);
    Eigen::MatrixXd em(16, 16);
    for (int r = 0; r < 16; ++r)
      for (int c = 0; c < 16; ++c) em(r, c) = w[r * 16 + c];
    const double sv = Eigen::JacobiSVD<Eigen::MatrixXd>(em).singularValues()(0);
    SpectralNormState s;
    init_spectral_state(s, 16, 16, rng);
    const Tensor wn = spectral_normalize(w, s, 50);
    CHECK(std::abs(s.sigma - sv) / sv < 1e-3);
    Eigen::MatrixXd en(16, 16);
    for (int r = 0; r < 16; ++r)
      for (int c = 0; c < 16; ++c) en(r, c) = wn[r * 16 + c];
    CHECK(Eigen::JacobiSVD<Eigen::MatrixXd>(en).singularValues()(0) <= 1.01);
  }
  SpectralNormState wrong;
  init_spectral_state(wrong, 3, 2, rng);
  CHECK(kind_of([&] { spectral_normalize(d, wrong, 1); }) == ErrorKind::kData);
}

TEST_CASE("discriminator examples") {
  std::mt19937_64 rng(5);
  Discriminator disc(small_discriminator(16, true));
  const Tensor zero = disc.forward(Tensor({1, 1, 16, 16}));
  CHECK(zero.shape() == nn::Shape{1, 1, 1, 1});
  CHECK(zero[0] == 0.0);
  CHECK(disc.forward(random_tensor({6, 1, 16, 16}, rng)).shape() == nn::Shape{6, 1, 1, 1});
  CHECK(kind_of([&] { disc.forward(Tensor({1, 1, 32, 32})); }) == ErrorKind::kData);
  CHECK(kind_of([&] { Discriminator(small_discriminator(12, true)); }) == ErrorKind::kConfig);
  CHECK(disc.layer(3).kernel_h() == 2);
  CHECK(disc.normalized(2));
  for (int l = 0; l < 3; ++l) {
    const auto& w = disc.layer(l).weight.value;
    Eigen::MatrixXd em(w.n(), w.size() / w.n());
    for (int r = 0; r < em.rows(); ++r)
      for (int c = 0; c < em.cols(); ++c) em(r, c) = w[r * em.cols() + c];
    const double sv = Eigen::JacobiSVD<Eigen::MatrixXd>(em).singularValues()(0);
    CHECK(disc.spectral_state(l).sigma == doctest::Approx(sv).epsilon(1e-2));
  }
  CHECK_FALSE(disc.normalized(3));

  const Tensor x = random_tensor({3, 1, 16, 16}, rng);
  SUBCASE("positive homogeneity in the input") {
    Tensor cx = x;
    for (auto& v : cx.values()) v *= 2.5;
    const Tensor a = disc.forward(x), b = disc.forward(cx);
    for (int i = 0; i < 3; ++i) CHECK(b[i] == doctest::Approx(2.5 * a[i]).epsilon(1e-10));
  }
  SUBCASE("weight scaling") {
    Discriminator plain(small_discriminator(16, false));
    const Tensor a = plain.forward(x);
    for (int l = 0; l < 4; ++l)
      for (auto& v : plain.layer(l).weight.value.values()) v *= 1.5;
    plain.prepare(false);
    const Tensor b = plain.forward(x);
    for (int i = 0; i < 3; ++i) CHECK(b[i] == doctest::Approx(std::pow(1.5, 4) * a[i]).epsilon(1e-10));

    const Tensor sa = disc.forward(x);
    for (int l = 0; l < 3; ++l)
      for (auto& v : disc.layer(l).weight.value.values()) v *= 1.5;
    disc.prepare(false);
    const Tensor sb = disc.forward(x);
    for (int i = 0; i < 3; ++i) CHECK(sb[i] == doctest::Approx(sa[i]).epsilon(1e-10));
  }
}

TEST_CASE("discriminator gradients") {
  std::mt19937_64 rng(6);
  for (bool sn : {false, true}) {
    Discriminator disc(small_discriminator(16, sn));
    for (int l = 0; l < 4; ++l)
      for (auto& v : disc.layer(l).bias.value.values()) v = 0.05 * (l + 1);
    disc.prepare(false);
    Tensor x = random_tensor({2, 1, 16, 16}, rng);
    const Tensor r = random_tensor({2, 1, 1, 1}, rng);
    Discriminator::Cache cache;
    disc.zero_grad();
    disc.forward(x, &cache);
    Tensor gx;
    disc.backward(cache, r, &gx, true);
    disc.finish_backward();
    auto loss = [&] {
      disc.prepare(false);
      return weighted_sum(disc.forward(x), r);
    };
    CHECK(nn::grad_check(loss, x.values(), gx.values(), 1e-6, 1e-4).passed(1e-4));
    for (auto* p : disc.parameters()) {
      const Tensor g = p->grad;
      const auto rep = nn::grad_check(loss, p->value.values(), g.values(), 1e-6, 1e-4);
      INFO(p->name << " sn=" << sn << " rel " << rep.max_rel_error);
      CHECK(rep.passed(1e-4));
    }
  }
}

TEST_CASE("gradient penalty parameter gradient") {
  std::mt19937_64 rng(7);
  for (bool sn : {false, true}) {
    Discriminator disc(small_discriminator(16, sn));
    const Tensor pts = random_tensor({2, 1, 16, 16}, rng);
    disc.zero_grad();
    disc.gradient_penalty(pts, 2.0);
    disc.finish_backward();
    auto loss = [&] {
      disc.prepare(false);
      Discriminator copy = disc;
      return 2.0 * copy.gradient_penalty(pts, 0.0).penalty;
    };
    for (auto* p : disc.parameters()) {
      const Tensor g = p->grad;
      const auto rep = nn::grad_check(loss, p->value.values(), g.values(), 1e-6, 1e-4);
      INFO(p->name << " sn=" << sn << " rel " << rep.max_rel_error);
      CHECK(rep.passed(1e-4));
    }
  }
}

TEST_CASE("lesion patch selection") {
  std::mt19937_64 rng(8);
  const Dims d{128, 128};
  SUBCASE("centred crop") {
    const std::vector<LesionMask> ls{box(d, 60, 69, 50, 59)};
    const auto s = select_lesion_patch(ls, d, rng, 64);
    CHECK(s.y0 == 64 - 32);
    CHECK(s.x0 == 54 - 32);
  }
  SUBCASE("corner lesions shift inside the image") {
    const std::vector<LesionMask> a{box(d, 0, 4, 0, 4)}, b{box(d, 120, 127, 123, 127)};
    const auto sa = select_lesion_patch(a, d, rng, 64);
    const auto sb = select_lesion_patch(b, d, rng, 64);
    CHECK(sa.y0 == 0);
    CHECK(sa.x0 == 0);
    CHECK(sb.y0 == 64);
    CHECK(sb.x0 == 64);
  }
  SUBCASE("uniform lesion choice") {
    const std::vector<LesionMask> ls{box(d, 10, 20, 10, 20), LesionMask(d), box(d, 40, 50, 40, 50),
                                     box(d, 90, 100, 90, 100)};
    std::map<int, int> counts;
    for (int i = 0; i < 3000; ++i) ++counts[select_lesion_patch(ls, d, rng, 32).lesion];
    CHECK(counts.count(1) == 0);
    for (int k : {0, 2, 3}) CHECK(std::abs(counts[k] / 3000.0 - 1.0 / 3) < 0.05);
  }
  SUBCASE("masked and unmasked crops") {
    IntensityGrid img(d);
    for (int r = 0; r < 128; ++r)
      for (int c = 0; c < 128; ++c) img(r, c) = static_cast<float>((r * 128 + c) % 97) / 97.0f;
    const std::vector<LesionMask> ls{box(d, 60, 69, 50, 59)};
    const auto m = crop_lesion_patch(img, ls, rng, 32, true);
    const auto u = crop_lesion_patch(img, ls, rng, 32, false);
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c) {
        const float src = img(m.where.y0 + r, m.where.x0 + c);
        CHECK(u.patch(r, c) == src);
        CHECK(m.patch(r, c) == (m.patch_mask(r, c) ? src : 0.0f));
      }
    CHECK(mask_area(m.patch_mask) == 100);
  }
  CHECK(kind_of([&] { select_lesion_patch({LesionMask(d)}, d, rng, 64); }) == ErrorKind::kData);
  CHECK(kind_of([&] { select_lesion_patch({box(d, 1, 2, 1, 2)}, d, rng, 256); }) == ErrorKind::kData);
}

TEST_CASE("checkpoint round trip") {
  std::mt19937_64 rng(9);
  Generator g(small_generator(3, 32, 21));
  Discriminator disc(small_discriminator(16, true));
  disc.prepare(true);
  Checkpoint ck;
  g.export_state(ck);
  disc.export_state(ck);
  const Checkpoint back = Checkpoint::decode(ck.encode());
  CHECK(back.encode() == ck.encode());
  Generator g2(small_generator(3, 32, 99));
  g2.import_state(back);
  CHECK(g2.checksum() == g.checksum());
  DiscriminatorConfig dc = small_discriminator(16, true);
  dc.seed = 77;
  Discriminator d2(dc);
  d2.import_state(back);
  const Tensor x = random_tensor({2, 1, 16, 16}, rng);
  const Tensor a = disc.forward(x), b = d2.forward(x);
  for (int i = 0; i < 2; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  auto wider = small_generator(3, 32);
  wider.base_channels = 3;
  Generator other(wider);
  CHECK_THROWS(other.import_state(back));
}
