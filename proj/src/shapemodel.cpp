#include "lfg/shapemodel.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "lfg/error.hpp"

namespace lfg::shape {

ShapeVector::ShapeVector(std::vector<double> flat) : v_(std::move(flat)) {
  if (v_.size() != 2 * kLandmarks) throw_data("ShapeVector: expected 400 components");
}

Polygon ShapeVector::points() const {
  Polygon p(kLandmarks);
  for (int i = 0; i < kLandmarks; ++i) p[i] = {x(i), y(i)};
  return p;
}

ShapeVector ShapeVector::from_points(const Polygon& pts) {
  if (static_cast<int>(pts.size()) != kLandmarks) throw_data("ShapeVector: expected 200 landmarks");
  ShapeVector s;
  for (int i = 0; i < kLandmarks; ++i) {
    s.x(i) = pts[i].x;
    s.y(i) = pts[i].y;
  }
  return s;
}

double signed_area(const Polygon& poly) {
  double a = 0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % n];
    a += p.x * q.y - q.x * p.y;
  }
  return 0.5 * a;
}

double signed_area(const ShapeVector& s) {
  double a = 0;
  for (int i = 0; i < kLandmarks; ++i) {
    const int j = (i + 1) % kLandmarks;
    a += s.x(i) * s.y(j) - s.x(j) * s.y(i);
  }
  return 0.5 * a;
}

double perimeter(const Polygon& poly) {
  double p = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % poly.size()];
    p += std::hypot(b.x - a.x, b.y - a.y);
  }
  return p;
}

ShapeVector resample_contour(const Polygon& polygon) {
  Polygon poly = polygon;
  if (poly.size() >= 2 && poly.front().x == poly.back().x && poly.front().y == poly.back().y) {
    poly.pop_back();
  }
  if (poly.size() < 3) throw_data("resample_contour: polygon needs at least 3 vertices");
  if (signed_area(poly) < 0) std::reverse(poly.begin(), poly.end());

  std::size_t start = 0;
  for (std::size_t i = 1; i < poly.size(); ++i) {
    if (poly[i].y > poly[start].y || (poly[i].y == poly[start].y && poly[i].x < poly[start].x)) {
      start = i;
    }
  }
  std::rotate(poly.begin(), poly.begin() + static_cast<std::ptrdiff_t>(start), poly.end());

  const std::size_t n = poly.size();
  std::vector<double> cum(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % n];
    cum[i + 1] = cum[i] + std::hypot(b.x - a.x, b.y - a.y);
  }
  const double total = cum[n];
  if (!(total > 1e-12)) throw_data("resample_contour: zero-perimeter polygon");

  ShapeVector out;
  std::size_t edge = 0;
  for (int k = 0; k < kLandmarks; ++k) {
    const double s = total * k / kLandmarks;
    while (edge + 1 < n && cum[edge + 1] <= s) ++edge;
    const double len = cum[edge + 1] - cum[edge];
    const double t = len > 0 ? (s - cum[edge]) / len : 0.0;
    const auto& a = poly[edge];
    const auto& b = poly[(edge + 1) % n];
    out.x(k) = a.x + t * (b.x - a.x);
    out.y(k) = a.y + t * (b.y - a.y);
  }
  return out;
}

namespace {

struct Normalized {
  ShapeVector shape;
  double cx = 0, cy = 0, scale = 1;
};

Normalized normalize_impl(const ShapeVector& s) {
  Normalized n;
  for (int i = 0; i < kLandmarks; ++i) {
    n.cx += s.x(i);
    n.cy += s.y(i);
  }
  n.cx /= kLandmarks;
  n.cy /= kLandmarks;
  const double area = std::abs(signed_area(s));
  if (!(area > 1e-12) || !std::isfinite(area)) throw_data("procrustes: zero-area shape");
  n.scale = 1.0 / std::sqrt(area);
  for (int i = 0; i < kLandmarks; ++i) {
    n.shape.x(i) = (s.x(i) - n.cx) * n.scale;
    n.shape.y(i) = (s.y(i) - n.cy) * n.scale;
  }
  return n;
}

double squared_distance(const ShapeVector& a, const ShapeVector& b) {
  double d = 0;
  for (int i = 0; i < 2 * kLandmarks; ++i) {
    const double e = a.flat()[i] - b.flat()[i];
    d += e * e;
  }
  return d;
}

}  // namespace

ShapeVector normalize_shape(const ShapeVector& s) { return normalize_impl(s).shape; }

Alignment procrustes_align(const ShapeVector& shape, const ShapeVector& reference) {
  const Normalized p = normalize_impl(shape);
  const ShapeVector q = normalize_impl(reference).shape;

  double norm_p = 0, norm_q = 0;
  for (int i = 0; i < kLandmarks; ++i) {
    norm_p += p.shape.x(i) * p.shape.x(i) + p.shape.y(i) * p.shape.y(i);
    norm_q += q.x(i) * q.x(i) + q.y(i) * q.y(i);
  }

  int best_shift = 0;
  double best_theta = 0;
  double best_residual = std::numeric_limits<double>::infinity();
  for (int shift = 0; shift < kLandmarks; ++shift) {
    double a = 0, b = 0;
    for (int i = 0; i < kLandmarks; ++i) {
      const int j = (i + shift) % kLandmarks;
      const double px = p.shape.x(j), py = p.shape.y(j);
      a += px * q.x(i) + py * q.y(i);
      b += px * q.y(i) - py * q.x(i);
    }
    const double residual = norm_p + norm_q - 2.0 * std::hypot(a, b);
    if (residual < best_residual - 1e-15) {
      best_residual = residual;
      best_shift = shift;
      best_theta = std::atan2(b, a);
    }
  }

  // Identical landmark sets align with the identity rotation; atan2 of the
  // rounded cross term would otherwise leave a residual of order 1e-30.
  bool identical = true;
  for (int i = 0; i < kLandmarks && identical; ++i) {
    const int j = (i + best_shift) % kLandmarks;
    identical = p.shape.x(j) == q.x(i) && p.shape.y(j) == q.y(i);
  }
  if (identical) best_theta = 0;

  Alignment out;
  out.shift = best_shift;
  const double c = std::cos(best_theta), s = std::sin(best_theta);
  for (int i = 0; i < kLandmarks; ++i) {
    const int j = (i + best_shift) % kLandmarks;
    const double px = p.shape.x(j), py = p.shape.y(j);
    out.aligned.x(i) = c * px - s * py;
    out.aligned.y(i) = s * px + c * py;
  }
  out.residual = squared_distance(out.aligned, q);
  out.transform.rotation = best_theta;
  out.transform.scale = p.scale;
  out.transform.translate_x = -p.scale * (c * p.cx - s * p.cy);
  out.transform.translate_y = -p.scale * (s * p.cx + c * p.cy);
  return out;
}

ShapeModel fit_shape_model(std::span<const ShapeVector> pool, int max_rounds) {
  const int n = static_cast<int>(pool.size());
  if (n < kModes + 1) throw_config("fit_shape_model: pool needs at least 11 shapes");
  for (const auto& s : pool) {
    for (double v : s.flat()) {
      if (!std::isfinite(v)) throw_data("fit_shape_model: non-finite coordinate in pool");
    }
  }

  std::vector<ShapeVector> aligned(pool.size());
  ShapeVector reference = normalize_shape(pool[0]);
  ShapeVector mean;
  for (int round = 0; round < std::max(1, max_rounds); ++round) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) aligned[i] = procrustes_align(pool[i], reference).aligned;
    mean = ShapeVector();
    for (const auto& a : aligned)
      for (int k = 0; k < 2 * kLandmarks; ++k) mean.flat()[k] += a.flat()[k] / n;
    const ShapeVector next = normalize_shape(mean);
    const double change = squared_distance(next, reference);
    reference = next;
    if (change < 1e-20) break;
  }

  constexpr int dim = 2 * kLandmarks;
  Eigen::MatrixXd centered(dim, n);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < dim; ++k) centered(k, i) = aligned[i].flat()[k] - mean.flat()[k];
  const Eigen::MatrixXd cov = centered * centered.transpose() / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw_numeric("fit_shape_model: eigendecomposition failed");

  ShapeModel model;
  model.mean = mean;
  model.pool_size = n;
  model.total_variance = cov.trace();
  model.aligned_pool = aligned;
  // Eigen returns ascending eigenvalues.
  for (int m = 0; m < kModes; ++m) {
    const int col = dim - 1 - m;
    Eigen::VectorXd v = solver.eigenvectors().col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    model.modes.emplace_back(v.data(), v.data() + dim);
    model.eigenvalues.push_back(std::max(0.0, solver.eigenvalues()(col)));
  }
  return model;
}

std::array<double, kModes> sample_weights(const ShapeModel& model, std::mt19937_64& rng,
                                          double sigma_clip) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::array<double, kModes> w{};
  for (int k = 0; k < kModes; ++k) {
    const double lambda = model.eigenvalues[k];
    if (lambda <= 0) continue;
    double z;
    do {
      z = gauss(rng);
    } while (std::abs(z) > sigma_clip);
    w[k] = z * std::sqrt(lambda);
  }
  return w;
}

ShapeVector shape_from_weights(const ShapeModel& model, std::span<const double> weights) {
  ShapeVector s = model.mean;
  for (std::size_t k = 0; k < weights.size() && k < model.modes.size(); ++k) {
    for (int i = 0; i < 2 * kLandmarks; ++i) s.flat()[i] += weights[k] * model.modes[k][i];
  }
  return normalize_shape(s);
}

ShapeVector sample_shape(const ShapeModel& model, std::mt19937_64& rng, double sigma_clip) {
  const auto w = sample_weights(model, rng, sigma_clip);
  return shape_from_weights(model, w);
}

std::vector<double> project(const ShapeModel& model, const ShapeVector& s) {
  std::vector<double> w(model.modes.size(), 0.0);
  for (std::size_t k = 0; k < model.modes.size(); ++k) {
    for (int i = 0; i < 2 * kLandmarks; ++i) {
      w[k] += (s.flat()[i] - model.mean.flat()[i]) * model.modes[k][i];
    }
  }
  return w;
}

SizeRange size_range_from_areas(std::vector<double> areas) {
  if (areas.empty()) throw_data("size range: no lesion areas");
  std::sort(areas.begin(), areas.end());
  auto pct = [&](double q) {
    const double pos = q * (areas.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, areas.size() - 1);
    return areas[lo] + (pos - lo) * (areas[hi] - areas[lo]);
  };
  SizeRange r{pct(0.1), pct(0.9)};
  if (r.max_area < r.min_area) std::swap(r.min_area, r.max_area);
  return r;
}

namespace {

constexpr char kModelMagic[4] = {'L', 'S', 'M', '1'};

}  // namespace

void write_shape_model(const std::filesystem::path& path, const ShapeModel& model) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw_data("cannot write " + path.string());
  out.write(kModelMagic, 4);
  const std::uint32_t landmarks = kLandmarks;
  const auto modes = static_cast<std::uint32_t>(model.modes.size());
  out.write(reinterpret_cast<const char*>(&landmarks), 4);
  out.write(reinterpret_cast<const char*>(&modes), 4);
  auto put = [&](std::span<const double> v) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
  };
  put(model.mean.flat());
  for (const auto& m : model.modes) put(m);
  put(model.eigenvalues);
  if (!out) throw_data("write failed: " + path.string());
}

ShapeModel read_shape_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open " + path.string());
  char magic[4];
  std::uint32_t landmarks = 0, modes = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&landmarks), 4);
  in.read(reinterpret_cast<char*>(&modes), 4);
  if (!in || std::memcmp(magic, kModelMagic, 4) != 0) throw_data(path.string() + ": bad LSM1 header");
  if (landmarks != kLandmarks || modes == 0 || modes > 2 * kLandmarks) {
    throw_data(path.string() + ": unsupported landmark/mode count");
  }
  auto get = [&](std::size_t n) {
    std::vector<double> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 8));
    if (!in) throw_data(path.string() + ": truncated LSM1 payload");
    return v;
  };
  ShapeModel model;
  model.mean = ShapeVector(get(2 * kLandmarks));
  for (std::uint32_t m = 0; m < modes; ++m) model.modes.push_back(get(2 * kLandmarks));
  model.eigenvalues = get(modes);
  for (double e : model.eigenvalues) model.total_variance += e;
  return model;
}

}  // namespace lfg::shape
