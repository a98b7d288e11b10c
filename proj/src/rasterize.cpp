#include <algorithm>
#include <cmath>
#include <numbers>

#include "lfg/error.hpp"
#include "lfg/shapemodel.hpp"

namespace lfg::shape {

LesionMask rasterize_polygon(const Polygon& poly, Dims dims) {
  LesionMask mask(dims, 0);
  const std::size_t n = poly.size();
  if (n < 3) return mask;
  std::vector<double> xs;
  for (int r = 0; r < dims.height; ++r) {
    const double yc = r + 0.5;
    xs.clear();
    for (std::size_t i = 0; i < n; ++i) {
      const Point& a = poly[i];
      const Point& b = poly[(i + 1) % n];
      // half-open in y so shared vertices are counted once
      if ((a.y <= yc) != (b.y <= yc)) {
        xs.push_back(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
      }
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      const int c0 = std::max(0, static_cast<int>(std::ceil(xs[k] - 0.5)));
      const int c1 = std::min(dims.width, static_cast<int>(std::ceil(xs[k + 1] - 0.5)));
      for (int c = c0; c < c1; ++c) mask(r, c) = 1;
    }
  }
  return mask;
}

Polygon transform_polygon(const Polygon& poly, const PlacementTransform& t) {
  Polygon out;
  out.reserve(poly.size());
  const double c = std::cos(t.rotation), s = std::sin(t.rotation);
  for (const auto& p : poly) {
    out.push_back({t.scale * (c * p.x - s * p.y) + t.translate_x,
                   t.scale * (s * p.x + c * p.y) + t.translate_y});
  }
  return out;
}

Placement place_and_rasterize(const ShapeVector& shape, const LesionMask& liver,
                              std::mt19937_64& rng, SizeRange size_range, int max_attempts) {
  std::vector<std::pair<int, int>> interior;
  for (int r = 0; r < liver.height(); ++r)
    for (int c = 0; c < liver.width(); ++c)
      if (liver(r, c)) interior.emplace_back(r, c);
  if (interior.empty()) throw_data("place_and_rasterize: placement failure (empty liver mask)");
  if (!(size_range.min_area > 0) || size_range.max_area < size_range.min_area) {
    throw_config("place_and_rasterize: invalid size range");
  }

  const ShapeVector unit = normalize_shape(shape);
  const Polygon base = unit.points();
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> log_area(std::log(size_range.min_area),
                                                  std::log(size_range.max_area));
  std::uniform_int_distribution<std::size_t> pick(0, interior.size() - 1);
  std::uniform_real_distribution<double> jitter(0.0, 1.0);

  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    PlacementTransform t;
    t.rotation = angle(rng);
    t.scale = std::sqrt(std::exp(log_area(rng)));
    const auto [r, c] = interior[pick(rng)];
    t.translate_x = c + jitter(rng);
    t.translate_y = r + jitter(rng);
    LesionMask mask = rasterize_polygon(transform_polygon(base, t), liver.dims());
    bool ok = mask_area(mask) > 0;
    for (std::size_t i = 0; ok && i < mask.size(); ++i) ok = !(mask.values()[i] && !liver.values()[i]);
    if (ok) return {std::move(mask), t, attempt};
  }
  throw_data("place_and_rasterize: placement failure after " + std::to_string(max_attempts) +
             " attempts");
}

}  // namespace lfg::shape
