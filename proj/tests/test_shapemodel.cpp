#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "lfg/error.hpp"
#include "lfg/shapemodel.hpp"

using namespace lfg;
using namespace lfg::shape;

namespace {

constexpr double kPi = std::numbers::pi;

Polygon radial_polygon(const std::vector<double>& harmonics, double phase, int vertices = 720) {
  Polygon p;
  for (int k = 0; k < vertices; ++k) {
    const double t = 2 * kPi * k / vertices;
    double r = 1.0;
    for (std::size_t h = 0; h < harmonics.size(); ++h) r += harmonics[h] * std::cos((h + 2) * t + phase * (h + 1));
    p.push_back({r * std::cos(t), r * std::sin(t)});
  }
  return p;
}

std::vector<ShapeVector> random_pool(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.12, 0.12), ph(0, 2 * kPi), sc(0.5, 3.0);
  std::vector<ShapeVector> pool;
  for (int i = 0; i < n; ++i) {
    auto poly = radial_polygon({u(rng), u(rng), u(rng), u(rng)}, ph(rng));
    const double s = sc(rng), dx = u(rng) * 10, dy = u(rng) * 10;
    for (auto& q : poly) q = {q.x * s + dx, q.y * s + dy};
    pool.push_back(resample_contour(poly));
  }
  return pool;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Centroid to the origin, shoelace area scaled to 1.
ShapeVector oracle_normalize(const ShapeVector& s) {
  double cx = 0, cy = 0, area = 0;
  for (int i = 0; i < kLandmarks; ++i) {
    cx += s.x(i) / kLandmarks;
    cy += s.y(i) / kLandmarks;
    const int j = (i + 1) % kLandmarks;
    area += 0.5 * (s.x(i) * s.y(j) - s.x(j) * s.y(i));
  }
  const double k = 1 / std::sqrt(std::abs(area));
  ShapeVector out;
  for (int i = 0; i < kLandmarks; ++i) {
    out.x(i) = (s.x(i) - cx) * k;
    out.y(i) = (s.y(i) - cy) * k;
  }
  return out;
}

bool even_odd_inside(const Polygon& poly, double x, double y) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) inside = !inside;
  }
  return inside;
}

}  // namespace

TEST_CASE("resample_contour spacing") {
  const Polygon square{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  const auto s = resample_contour(square);
  const auto pts = s.points();
  REQUIRE(pts.size() == kLandmarks);
  // Positions along the boundary from (0,1), the max-y/min-x vertex, going ccw.
  double lo = 1e9, hi = 0;
  auto arc_pos = [](const Point& p) {
    if (std::abs(p.x) < 1e-12) return 1.0 - p.y;
    if (std::abs(p.y) < 1e-12) return 1.0 + p.x;
    if (std::abs(p.x - 1) < 1e-12) return 2.0 + p.y;
    return 3.0 + (1.0 - p.x);
  };
  for (int i = 0; i < kLandmarks; ++i) {
    const double d = std::fmod(arc_pos(pts[(i + 1) % kLandmarks]) - arc_pos(pts[i]) + 4.0, 4.0);
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  CHECK(hi - lo < 1e-9);
  CHECK(lo == doctest::Approx(0.02).epsilon(1e-9));
  CHECK(pts[0].x == doctest::Approx(0.0));
  CHECK(pts[0].y == doctest::Approx(1.0));
  CHECK(signed_area(s) > 0);

  Polygon circle;
  for (int k = 0; k < 4000; ++k) circle.push_back({std::cos(2 * kPi * k / 4000), std::sin(2 * kPi * k / 4000)});
  for (const auto& p : resample_contour(circle).points()) CHECK(std::hypot(p.x, p.y) == doctest::Approx(1.0).epsilon(1e-6));

  const Polygon tri{{0, 0}, {4, 0}, {0, 3}};
  CHECK(perimeter(tri) == doctest::Approx(12.0));
  const auto t = resample_contour(tri).points();
  // Start (0,3); every step advances 12 / 200 = 0.06 along the edges.
  CHECK(t[0].x == doctest::Approx(0.0));
  CHECK(t[0].y == doctest::Approx(3.0));
  CHECK(t[1].y == doctest::Approx(3.0 - 0.06));
  CHECK(t[50].y == doctest::Approx(0.0));  // 3 / 0.06 = 50
  CHECK(t[50].x == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(t[100].x == doctest::Approx(3.0));  // 50 more steps along the base
  CHECK_THROWS_AS(resample_contour(Polygon{{1, 1}, {1, 1}, {1, 1}}), Error);
}

TEST_CASE("procrustes self and similarity copies") {
  const auto s = random_pool(1, 11)[0];
  const auto self = procrustes_align(s, s);
  CHECK(self.residual == doctest::Approx(0.0));
  CHECK(self.residual < 1e-20);
  CHECK(self.shift == 0);
  CHECK(std::abs(self.transform.rotation) < 1e-12);

  ShapeVector rot;
  for (int i = 0; i < kLandmarks; ++i) {
    rot.x(i) = 2.0 * -s.y(i) + 5;
    rot.y(i) = 2.0 * s.x(i) - 3;
  }
  CHECK(procrustes_align(rot, s).residual < 1e-9);
  CHECK(procrustes_align(s, rot).residual < 1e-9);
  ShapeVector zero;
  CHECK_THROWS_AS(procrustes_align(zero, s), Error);
}

TEST_CASE("procrustes residual matches a dense rotation grid over all shifts") {
  const auto a = normalize_shape(resample_contour(Polygon{{0, 0}, {5, 0}, {1, 3}}));
  const auto b = normalize_shape(resample_contour(Polygon{{0, 0}, {3, 1}, {-1, 4}}));
  auto residual = [&](int shift, double th) {
    double r = 0;
    const double c = std::cos(th), s = std::sin(th);
    for (int i = 0; i < kLandmarks; ++i) {
      const int j = (i + shift) % kLandmarks;
      const double x = c * a.x(j) - s * a.y(j), y = s * a.x(j) + c * a.y(j);
      r += (x - b.x(i)) * (x - b.x(i)) + (y - b.y(i)) * (y - b.y(i));
    }
    return r;
  };
  double best = std::numeric_limits<double>::infinity();
  constexpr int kGrid = 720;
  for (int shift = 0; shift < kLandmarks; ++shift) {
    int arg = 0;
    double gbest = std::numeric_limits<double>::infinity();
    for (int g = 0; g < kGrid; ++g) {
      const double r = residual(shift, 2 * kPi * g / kGrid);
      if (r < gbest) {
        gbest = r;
        arg = g;
      }
    }
    // Golden-section refinement inside the neighbouring grid cells.
    double lo = 2 * kPi * (arg - 1) / kGrid, hi = 2 * kPi * (arg + 1) / kGrid;
    const double phi = (std::sqrt(5.0) - 1) / 2;
    for (int it = 0; it < 80; ++it) {
      const double m1 = hi - phi * (hi - lo), m2 = lo + phi * (hi - lo);
      if (residual(shift, m1) < residual(shift, m2)) hi = m2;
      else lo = m1;
    }
    best = std::min(best, residual(shift, (lo + hi) / 2));
  }
  CHECK(std::abs(procrustes_align(a, b).residual - best) < 1e-6);
}

TEST_CASE("fit_shape_model invariants and reconstruction identity") {
  const auto pool = random_pool(40, 21);
  const auto model = fit_shape_model(pool);
  REQUIRE(model.modes.size() == kModes);
  for (int i = 0; i < kModes; ++i) {
    for (int j = 0; j < kModes; ++j) {
      CHECK(std::abs(dot(model.modes[i], model.modes[j]) - (i == j ? 1.0 : 0.0)) < 1e-9);
    }
    CHECK(model.eigenvalues[i] >= 0);
    if (i) CHECK(model.eigenvalues[i] <= model.eigenvalues[i - 1]);
  }
  double lam = 0;
  for (double l : model.eigenvalues) lam += l;
  REQUIRE(model.aligned_pool.size() == pool.size());
  const double n = static_cast<double>(pool.size());
  double sum_err = 0;
  for (const auto& s : model.aligned_pool) {
    const auto w = project(model, s);
    double err = 0;
    for (int k = 0; k < 2 * kLandmarks; ++k) {
      double rec = model.mean.flat()[k];
      for (int m = 0; m < kModes; ++m) rec += w[m] * model.modes[m][k];
      err += (s.flat()[k] - rec) * (s.flat()[k] - rec);
    }
    sum_err += err;
    CHECK(err <= (n - 1) * (model.total_variance - lam) + 1e-9);
  }
  // Residual energy of the pool equals the variance outside the kept modes.
  CHECK(std::abs(sum_err / (n - 1) - (model.total_variance - lam)) < 1e-9);
}

TEST_CASE("fit_shape_model degenerate pools") {
  const auto s = random_pool(1, 5)[0];
  std::vector<ShapeVector> same(12, s);
  const auto m = fit_shape_model(same);
  for (double l : m.eigenvalues) CHECK(l < 1e-20);
  const auto ns = normalize_shape(s);
  for (int k = 0; k < 2 * kLandmarks; ++k) CHECK(m.mean.flat()[k] == doctest::Approx(ns.flat()[k]).epsilon(1e-9));
  CHECK_THROWS_AS(fit_shape_model(std::vector<ShapeVector>(10, s)), Error);
  auto bad = same;
  bad[3].x(4) = std::nan("");
  CHECK_THROWS_AS(fit_shape_model(bad), Error);
}

TEST_CASE("fit_shape_model recovers a single variation direction") {
  // Shapes base + t v with tiny t: nonlinearity of the alignment is O(t^2).
  const auto base = resample_contour(radial_polygon({0.1, 0.05, 0.0, 0.03}, 0.4));
  const auto nb = normalize_shape(base);
  ShapeVector v;
  for (int i = 0; i < kLandmarks; ++i) {
    const double t = 2 * kPi * i / kLandmarks;
    v.x(i) = std::cos(3 * t) * nb.x(i);
    v.y(i) = std::cos(3 * t) * nb.y(i);
  }
  std::vector<ShapeVector> pool;
  for (int k = -10; k <= 10; ++k) {
    ShapeVector s = nb;
    for (int i = 0; i < 2 * kLandmarks; ++i) s.flat()[i] += 1e-4 * k * v.flat()[i];
    pool.push_back(s);
  }
  const auto model = fit_shape_model(pool);
  // Oracle direction: difference of the aligned extremes.
  const auto hi = procrustes_align(pool.back(), nb).aligned, lo = procrustes_align(pool.front(), nb).aligned;
  std::vector<double> d(2 * kLandmarks);
  double nd = 0;
  for (int i = 0; i < 2 * kLandmarks; ++i) {
    d[i] = hi.flat()[i] - lo.flat()[i];
    nd += d[i] * d[i];
  }
  for (auto& x : d) x /= std::sqrt(nd);
  CHECK(std::abs(dot(model.modes[0], d)) > 1 - 1e-6);
  for (int m = 1; m < kModes; ++m) CHECK(model.eigenvalues[m] < 1e-6 * model.eigenvalues[0]);
}

TEST_CASE("sample_shape formulas and statistics") {
  const auto model = fit_shape_model(random_pool(30, 8));
  std::vector<double> w(kModes, 0.0);
  const auto mean_shape = shape_from_weights(model, w);
  const auto nm = oracle_normalize(model.mean);
  for (int k = 0; k < 2 * kLandmarks; ++k) CHECK(mean_shape.flat()[k] == doctest::Approx(nm.flat()[k]).epsilon(1e-12));

  w[0] = 3 * std::sqrt(model.eigenvalues[0]);
  ShapeVector direct = model.mean;
  for (int k = 0; k < 2 * kLandmarks; ++k) direct.flat()[k] += w[0] * model.modes[0][k];
  const auto a = shape_from_weights(model, w), b = oracle_normalize(direct);
  for (int k = 0; k < 2 * kLandmarks; ++k) CHECK(std::abs(a.flat()[k] - b.flat()[k]) < 1e-12);
  CHECK(std::abs(signed_area(a)) == doctest::Approx(1.0));

  std::mt19937_64 r1(4), r2(4);
  CHECK(sample_shape(model, r1).flat()[7] == sample_shape(model, r2).flat()[7]);

  std::mt19937_64 rng(99);
  constexpr int kSamples = 10000;
  std::vector<double> var(kModes, 0.0);
  for (int s = 0; s < kSamples; ++s) {
    const auto ws = sample_weights(model, rng, 3.0);
    for (int k = 0; k < kModes; ++k) var[k] += ws[k] * ws[k] / kSamples;
  }
  // Variance of a unit normal truncated at +-3.
  const double phi3 = std::exp(-4.5) / std::sqrt(2 * kPi);
  const double trunc = 1 - 2 * 3 * phi3 / std::erf(3 / std::sqrt(2.0));
  for (int k = 0; k < kModes; ++k) {
    if (model.eigenvalues[k] <= 0) continue;
    CHECK(std::abs(var[k] / (trunc * model.eigenvalues[k]) - 1) < 0.15);
  }
}

TEST_CASE("rasterize_polygon matches an even-odd oracle") {
  const Dims d{24, 24};
  std::vector<Polygon> suite{
      {{3.2, 4.1}, {18.7, 5.3}, {12.2, 20.9}},
      {{2, 2}, {20, 2}, {20, 15}, {2, 15}},
      {{5.5, 5.5}, {19.25, 9.75}, {14.1, 21.3}, {4.2, 16.6}},
  };
  Polygon hexagon;
  for (int k = 0; k < 6; ++k) hexagon.push_back({12 + 8 * std::cos(k * kPi / 3 + 0.2), 12 + 8 * std::sin(k * kPi / 3 + 0.2)});
  suite.push_back(hexagon);
  for (const auto& poly : suite) {
    const auto m = rasterize_polygon(poly, d);
    std::size_t area = 0;
    for (int r = 0; r < d.height; ++r)
      for (int c = 0; c < d.width; ++c) {
        CHECK(m(r, c) == (even_odd_inside(poly, c + 0.5, r + 0.5) ? 1 : 0));
        area += m(r, c);
      }
    const double analytic = std::abs(signed_area(poly));
    CHECK(std::abs(area - analytic) <= 2 + 0.02 * analytic);
  }
}

TEST_CASE("place_and_rasterize containment and failure") {
  const Dims d{64, 64};
  LesionMask liver(d);
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c)
      if (std::hypot(r - 32.0, c - 30.0) < 24) liver(r, c) = 1;
  const auto model = fit_shape_model(random_pool(20, 3));
  std::mt19937_64 rng(5);
  for (int k = 0; k < 20; ++k) {
    const auto s = sample_shape(model, rng);
    const auto p = place_and_rasterize(s, liver, rng, {20, 120});
    CHECK(mask_area(p.mask) > 0);
    for (std::size_t i = 0; i < p.mask.size(); ++i) {
      if (p.mask.values()[i]) CHECK(liver.values()[i] == 1);
    }
    CHECK(p.transform.scale > 0);
    // Re-rasterizing the transformed landmarks reproduces the mask.
    CHECK(rasterize_polygon(transform_polygon(s.points(), p.transform), d) == p.mask);
  }
  CHECK_THROWS_AS(place_and_rasterize(sample_shape(model, rng), LesionMask(d), rng, {20, 120}), Error);
}

TEST_CASE("trace_outer_contour and size range") {
  LesionMask m(10, 10);
  for (int r = 2; r < 6; ++r)
    for (int c = 3; c < 8; ++c) m(r, c) = 1;
  const auto contour = trace_outer_contour(m);
  CHECK(std::abs(signed_area(contour)) == doctest::Approx(20.0));
  CHECK(trace_outer_contour(LesionMask(5, 5)).empty());
  const auto r = size_range_from_areas({10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110});
  CHECK(r.min_area == doctest::Approx(20.0));
  CHECK(r.max_area == doctest::Approx(100.0));
}

TEST_CASE("shape model file round trip") {
  const auto model = fit_shape_model(random_pool(15, 2));
  const auto path = std::filesystem::temp_directory_path() / "lfg_test_model.lfgs";
  write_shape_model(path, model);
  const auto back = read_shape_model(path);
  CHECK(back.eigenvalues == model.eigenvalues);
  CHECK(back.modes == model.modes);
  for (int k = 0; k < 2 * kLandmarks; ++k) CHECK(back.mean.flat()[k] == model.mean.flat()[k]);
  std::filesystem::remove(path);
}
