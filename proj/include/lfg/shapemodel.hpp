#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "lfg/imageio.hpp"

namespace lfg::shape {

inline constexpr int kLandmarks = 200;
inline constexpr int kModes = 10;

struct Point {
  double x = 0;
  double y = 0;
};

using Polygon = std::vector<Point>;

// [x1..xn, y1..yn] with n = kLandmarks.
class ShapeVector {
 public:
  ShapeVector() : v_(2 * kLandmarks, 0.0) {}
  explicit ShapeVector(std::vector<double> flat);

  double& x(int i) { return v_[i]; }
  double& y(int i) { return v_[kLandmarks + i]; }
  double x(int i) const { return v_[i]; }
  double y(int i) const { return v_[kLandmarks + i]; }

  std::span<const double> flat() const { return v_; }
  std::span<double> flat() { return v_; }

  Polygon points() const;
  static ShapeVector from_points(const Polygon& pts);

 private:
  std::vector<double> v_;
};

double signed_area(const Polygon& poly);
double signed_area(const ShapeVector& s);
double perimeter(const Polygon& poly);

struct ShapeModel {
  ShapeVector mean;
  std::vector<std::vector<double>> modes;  // kModes vectors of length 2*kLandmarks
  std::vector<double> eigenvalues;         // descending, >= 0
  // Total variance (trace of the sample covariance).
  double total_variance = 0;
  int pool_size = 0;
  // Pool after the final alignment round; not persisted.
  std::vector<ShapeVector> aligned_pool;
};

struct PlacementTransform {
  double rotation = 0;     // radians
  double scale = 1;        // > 0
  double translate_x = 0;  // pixels
  double translate_y = 0;
};

struct Alignment {
  ShapeVector aligned;
  PlacementTransform transform;
  int shift = 0;  // cyclic landmark re-indexing applied to the input
  double residual = 0;
};

// Equal arc-length resampling; starts at the vertex of maximum y (ties: minimum
// x) and runs counter-clockwise.
ShapeVector resample_contour(const Polygon& polygon);

// Centres the shape and scales it to unit area.
ShapeVector normalize_shape(const ShapeVector& s);

Alignment procrustes_align(const ShapeVector& shape, const ShapeVector& reference);

ShapeModel fit_shape_model(std::span<const ShapeVector> pool, int max_rounds = 10);

std::array<double, kModes> sample_weights(const ShapeModel& model, std::mt19937_64& rng,
                                          double sigma_clip = 3.0);
ShapeVector shape_from_weights(const ShapeModel& model, std::span<const double> weights);
ShapeVector sample_shape(const ShapeModel& model, std::mt19937_64& rng, double sigma_clip = 3.0);

std::vector<double> project(const ShapeModel& model, const ShapeVector& s);

// Scan-line fill of pixel centres (x + 0.5, y + 0.5) using the even-odd rule.
LesionMask rasterize_polygon(const Polygon& poly, Dims dims);

Polygon transform_polygon(const Polygon& poly, const PlacementTransform& t);

struct SizeRange {
  double min_area = 20;
  double max_area = 120;
};

struct Placement {
  LesionMask mask;
  PlacementTransform transform;
  int attempts = 0;
};

Placement place_and_rasterize(const ShapeVector& shape, const LesionMask& liver,
                              std::mt19937_64& rng, SizeRange size_range, int max_attempts = 100);

// Outer boundary of the largest 4-connected component, traced along pixel
// edges in (x = column, y = row) coordinates. Empty when the mask is empty.
Polygon trace_outer_contour(const LesionMask& mask);

// 10th/90th percentile lesion areas of a pool.
SizeRange size_range_from_areas(std::vector<double> areas);

void write_shape_model(const std::filesystem::path& path, const ShapeModel& model);
ShapeModel read_shape_model(const std::filesystem::path& path);

}  // namespace lfg::shape
