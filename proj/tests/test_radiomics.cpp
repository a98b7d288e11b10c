#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "lfg/error.hpp"
#include "lfg/radiomics.hpp"

using namespace lfg;
using namespace lfg::radiomics;

namespace {

// Brute-force pair counter over every (pixel, offset) pair inside the mask.
std::vector<double> brute_glcm(const LevelGrid& lv, const LesionMask& m, int levels, bool symmetric) {
  std::vector<double> c(static_cast<std::size_t>(levels) * levels, 0.0);
  double total = 0;
  for (const auto& o : default_offsets())
    for (int r = 0; r < lv.height(); ++r)
      for (int col = 0; col < lv.width(); ++col) {
        const int r2 = r + o.dy, c2 = col + o.dx;
        if (!lv.contains(r2, c2) || !m(r, col) || !m(r2, c2)) continue;
        c[lv(r, col) * levels + lv(r2, c2)] += 1;
        total += 1;
        if (symmetric) {
          c[lv(r2, c2) * levels + lv(r, col)] += 1;
          total += 1;
        }
      }
  for (auto& v : c) v /= total;
  return c;
}

IntensityGrid random_image(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  IntensityGrid g(h, w);
  for (auto& v : g.values()) v = u(rng);
  return g;
}

LesionMask random_region(int h, int w, std::mt19937_64& rng) {
  std::bernoulli_distribution in(0.7);
  LesionMask m(h, w);
  for (auto& v : m.values()) v = in(rng) ? 1 : 0;
  return m;
}

template <typename T>
Grid<T> transform(const Grid<T>& g, int kind) {
  Grid<T> out(kind == 2 ? g.width() : g.height(), kind == 2 ? g.height() : g.width());
  for (int r = 0; r < g.height(); ++r)
    for (int c = 0; c < g.width(); ++c) {
      if (kind == 0) out(r, g.width() - 1 - c) = g(r, c);
      if (kind == 1) out(g.height() - 1 - r, c) = g(r, c);
      if (kind == 2) out(c, r) = g(r, c);
    }
  return out;
}

FeatureHistogram hist(std::vector<double> h) {
  FeatureHistogram f;
  f.h = std::move(h);
  return f;
}

}  // namespace

TEST_CASE("quantize") {
  IntensityGrid g(1, 3);
  g(0, 0) = 0.1f;
  g(0, 1) = 0.5f;
  g(0, 2) = 0.9f;
  const LesionMask all(1, 3, 1);
  const auto q = quantize(g, all, 4);
  CHECK(q(0, 0) == 0);
  CHECK(q(0, 1) == 2);
  CHECK(q(0, 2) == 3);

  IntensityGrid ends(1, 2);
  ends(0, 1) = 1.0f;
  const auto e = quantize(ends, LesionMask(1, 2, 1), 2);
  CHECK(e(0, 0) == 0);
  CHECK(e(0, 1) == 1);

  const auto c = quantize(IntensityGrid(3, 3, 0.4f), LesionMask(3, 3, 1), 32);
  for (int v : c.values()) CHECK(v == 12);

  LesionMask part(1, 3, 1);
  part(0, 1) = 0;
  CHECK(quantize(g, part, 4)(0, 1) == -1);
  LesionMask single(1, 3);
  single(0, 0) = 1;
  CHECK_THROWS_AS(quantize(g, single, 4), Error);
}

TEST_CASE("glcm examples") {
  LevelGrid lv(1, 2);
  lv(0, 0) = 0;
  lv(0, 1) = 1;
  const std::vector<Offset> right{{0, 1}};
  const auto p = compute_glcm(lv, LesionMask(1, 2, 1), 2, right, true);
  CHECK(p(0, 0) == 0.0);
  CHECK(p(0, 1) == 0.5);
  CHECK(p(1, 0) == 0.5);
  CHECK(p(1, 1) == 0.0);
  const auto f = glcm_features(p);
  CHECK(f.energy == doctest::Approx(0.5));
  CHECK(f.correlation == doctest::Approx(-1.0));

  LevelGrid flat(4, 4, 3);
  const auto pc = compute_glcm(flat, LesionMask(4, 4, 1), 8);
  CHECK(pc(3, 3) == doctest::Approx(1.0));
  const auto fc = glcm_features(pc);
  CHECK(fc.energy == doctest::Approx(1.0));
  CHECK(fc.correlation == 1.0);

  LesionMask iso(3, 3);
  iso(0, 0) = iso(2, 2) = 1;
  CHECK_FALSE(compute_glcm(LevelGrid(3, 3, 1), iso, 8).defined());
}

TEST_CASE("glcm matches the brute-force counter") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    const auto img = random_image(8, 8, rng);
    const auto m = random_region(8, 8, rng);
    if (mask_area(m) < 2) continue;
    const int levels = 4 + t % 5;
    const auto lv = quantize(img, m, levels);
    for (bool sym : {true, false}) {
      const auto p = compute_glcm(lv, m, levels, default_offsets(), sym);
      const auto want = brute_glcm(lv, m, levels, sym);
      double sum = 0;
      for (std::size_t k = 0; k < want.size(); ++k) {
        CHECK(p.p[k] == want[k]);
        CHECK(p.p[k] >= 0);
        sum += p.p[k];
      }
      CHECK(std::abs(sum - 1) < 1e-9);
      if (sym)
        for (int i = 0; i < levels; ++i)
          for (int j = 0; j < levels; ++j) CHECK(p(i, j) == p(j, i));
      const auto f = glcm_features(p);
      CHECK(f.correlation >= -1 - 1e-9);
      CHECK(f.correlation <= 1 + 1e-9);
      CHECK(f.energy > 0);
      CHECK(f.energy <= 1 + 1e-12);
    }
  }
}

TEST_CASE("features are invariant to reflections and transposition") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const auto img = random_image(9, 7, rng);
    const auto m = random_region(9, 7, rng);
    const auto base = region_features(img, m);
    REQUIRE(base.has_value());
    for (int kind : {0, 1, 2}) {
      const auto f = region_features(transform(img, kind), transform(m, kind));
      REQUIRE(f.has_value());
      CHECK(f->energy == doctest::Approx(base->energy).epsilon(1e-12));
      CHECK(f->correlation == doctest::Approx(base->correlation).epsilon(1e-12));
    }
  }
}

TEST_CASE("feature histograms") {
  const std::vector<double> two{0.0, 1.0};
  const auto h = feature_histogram(two, 2, 0.0, 1.0);
  CHECK(h.h == std::vector<double>{0.5, 0.5});

  const std::vector<double> same(10, 0.3);
  const auto [a, b] = joint_histograms(same, same, 64);
  double mass = 0;
  for (double v : a.h) mass = std::max(mass, v);
  CHECK(mass == doctest::Approx(1.0));

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> samples(100000);
  for (auto& v : samples) v = u(rng);
  const auto uh = feature_histogram(samples, 64, 0.0, 1.0);
  double sum = 0, worst = 0;
  for (double v : uh.h) {
    sum += v;
    worst = std::max(worst, std::abs(v - 1.0 / 64));
  }
  CHECK(std::abs(sum - 1) < 1e-9);
  CHECK(worst < 3.0 / std::sqrt(100000.0));

  const std::vector<double> outside{-5.0, 0.5, 7.0};
  const auto oh = feature_histogram(outside, 4, 0.0, 1.0);
  CHECK(oh.h.front() == doctest::Approx(1.0 / 3));
  CHECK(oh.h.back() == doctest::Approx(1.0 / 3));
  CHECK_THROWS_AS(feature_histogram(two, 1, 0, 1), Error);
}

TEST_CASE("kl divergence") {
  const auto h1 = hist({0.5, 0.5}), h2 = hist({0.25, 0.75});
  const double kl12 = kl_divergence(h1, h2), kl21 = kl_divergence(h2, h1);
  CHECK(kl12 == doctest::Approx(0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3)).epsilon(1e-6));
  CHECK(kl12 == doctest::Approx(0.1438).epsilon(1e-3));
  CHECK(kl21 == doctest::Approx(0.25 * std::log(0.5) + 0.75 * std::log(1.5)).epsilon(1e-6));
  CHECK(kl21 == doctest::Approx(0.1308).epsilon(1e-3));
  CHECK(kl12 != kl21);
  CHECK(kl_divergence(h1, h1) == 0.0);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a(16), b(16);
    for (std::size_t i = 0; i < 16; ++i) {
      a[i] = (i % 3 == 0) ? 0.0 : u(rng);
      b[i] = u(rng);
    }
    const auto [ha, hb] = joint_histograms(a, b, 8);
    CHECK(kl_divergence(ha, hb) >= 0);
    CHECK(kl_divergence(ha, ha) == 0.0);
  }
  CHECK_THROWS_AS(kl_divergence(hist({0.5, 0.5}), hist({0.2, 0.3, 0.5})), Error);
}

TEST_CASE("feature extraction and csv round trip") {
  std::mt19937_64 rng(5);
  std::vector<SliceRecord> records(3);
  for (int k = 0; k < 3; ++k) {
    auto& r = records[k];
    r.image = random_image(16, 16, rng);
    r.liver = LesionMask(16, 16, 1);
    LesionMask a(16, 16), tiny(16, 16);
    for (int y = 2; y < 8; ++y)
      for (int x = 3; x < 9; ++x) a(y, x) = 1;
    tiny(12, 12) = 1;
    r.lesions = {a, tiny};
    r.slice_id = "s" + std::to_string(k);
  }
  const auto rows = extract_features(records, "real");
  REQUIRE(rows.size() == 3);
  CHECK(rows[1].lesion_id == "s1_l0");
  CHECK(rows[1].source == "real");
  const auto path = std::filesystem::temp_directory_path() / "lfg_test_features.csv";
  write_feature_csv(path, rows);
  const auto back = read_feature_csv(path);
  std::filesystem::remove(path);
  REQUIRE(back.size() == 3);
  for (int k = 0; k < 3; ++k) {
    CHECK(back[k].lesion_id == rows[k].lesion_id);
    CHECK(back[k].energy == rows[k].energy);
    CHECK(back[k].correlation == rows[k].correlation);
  }
  const auto kl = compare_features(rows, rows);
  CHECK(kl.energy == 0.0);
  CHECK(kl.correlation == 0.0);
  CHECK(kl.real_count == 3);
}
