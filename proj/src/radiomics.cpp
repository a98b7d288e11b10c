#include "lfg/radiomics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lfg/error.hpp"

namespace lfg::radiomics {

LevelGrid quantize(const IntensityGrid& grid, const LesionMask& mask, int levels) {
  if (!(grid.dims() == mask.dims())) throw_data("quantize: mask/image dims differ");
  if (levels < 2) throw_config("quantize: levels must be >= 2");
  if (mask_area(mask) < 2) throw_data("quantize: region must cover at least 2 pixels");
  LevelGrid out(grid.dims(), -1);
  for (int r = 0; r < grid.height(); ++r) {
    for (int c = 0; c < grid.width(); ++c) {
      if (!mask(r, c)) continue;
      const double v = grid(r, c);
      out(r, c) = std::clamp(static_cast<int>(std::floor(v * levels)), 0, levels - 1);
    }
  }
  return out;
}

Glcm compute_glcm(const LevelGrid& levels, const LesionMask& mask, int level_count,
                  std::span<const Offset> offsets, bool symmetric) {
  if (!(levels.dims() == mask.dims())) throw_data("compute_glcm: mask/level dims differ");
  Glcm g;
  g.levels = level_count;
  std::vector<std::size_t> counts(static_cast<std::size_t>(level_count) * level_count, 0);
  for (const auto& off : offsets) {
    for (int r = 0; r < levels.height(); ++r) {
      for (int c = 0; c < levels.width(); ++c) {
        const int r2 = r + off.dy, c2 = c + off.dx;
        if (!mask(r, c) || !levels.contains(r2, c2) || !mask(r2, c2)) continue;
        const int a = levels(r, c), b = levels(r2, c2);
        if (a < 0 || a >= level_count || b < 0 || b >= level_count) {
          throw_data("compute_glcm: level out of range");
        }
        ++counts[static_cast<std::size_t>(a) * level_count + b];
        ++g.pairs;
        if (symmetric) {
          ++counts[static_cast<std::size_t>(b) * level_count + a];
          ++g.pairs;
        }
      }
    }
  }
  g.p.assign(counts.size(), 0.0);
  if (g.pairs == 0) return g;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    g.p[i] = static_cast<double>(counts[i]) / static_cast<double>(g.pairs);
  }
  return g;
}

GlcmFeatures glcm_features(const Glcm& p) {
  const int L = p.levels;
  GlcmFeatures f;
  double mi = 0, mj = 0;
  for (int i = 0; i < L; ++i) {
    for (int j = 0; j < L; ++j) {
      const double v = p(i, j);
      f.energy += v * v;
      mi += i * v;
      mj += j * v;
    }
  }
  double vi = 0, vj = 0, cov = 0;
  for (int i = 0; i < L; ++i) {
    for (int j = 0; j < L; ++j) {
      const double v = p(i, j);
      vi += (i - mi) * (i - mi) * v;
      vj += (j - mj) * (j - mj) * v;
      cov += (i - mi) * (j - mj) * v;
    }
  }
  const double denom = std::sqrt(vi) * std::sqrt(vj);
  f.correlation = denom > 1e-15 ? std::clamp(cov / denom, -1.0, 1.0) : 1.0;
  return f;
}

std::optional<GlcmFeatures> region_features(const IntensityGrid& image, const LesionMask& mask,
                                            const RadiomicsConfig& config) {
  if (mask_area(mask) < 2) return std::nullopt;
  const auto levels = quantize(image, mask, config.levels);
  const auto glcm = compute_glcm(levels, mask, config.levels, config.offsets, config.symmetric);
  if (!glcm.defined()) return std::nullopt;
  return glcm_features(glcm);
}

FeatureHistogram feature_histogram(std::span<const double> values, int bins, double lo, double hi) {
  if (bins < 2) throw_config("feature_histogram: bins must be >= 2");
  if (values.empty()) throw_data("feature_histogram: empty value set");
  FeatureHistogram h;
  h.lo = lo;
  h.hi = hi;
  h.h.assign(bins, 0.0);
  std::vector<std::size_t> counts(bins, 0);
  std::size_t total = 0;
  const double width = hi - lo;
  for (double v : values) {
    if (!std::isfinite(v)) throw_data("feature_histogram: non-finite value");
    int k = 0;
    if (width > 0) k = static_cast<int>(std::floor((v - lo) / width * bins));
    ++counts[std::clamp(k, 0, bins - 1)];
    ++total;
  }
  for (int k = 0; k < bins; ++k) h.h[k] = static_cast<double>(counts[k]) / total;
  return h;
}

std::pair<FeatureHistogram, FeatureHistogram> joint_histograms(std::span<const double> a,
                                                               std::span<const double> b,
                                                               int bins) {
  if (a.empty() || b.empty()) throw_data("joint_histograms: empty value set");
  double lo = a[0], hi = a[0];
  for (auto set : {a, b}) {
    for (double v : set) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  return {feature_histogram(a, bins, lo, hi), feature_histogram(b, bins, lo, hi)};
}

double kl_divergence(const FeatureHistogram& h1, const FeatureHistogram& h2, double eps) {
  if (h1.bins() != h2.bins() || h1.lo != h2.lo || h1.hi != h2.hi) {
    throw_data("kl_divergence: histograms have different bin structure");
  }
  const int n = h1.bins();
  double s1 = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    s1 += h1.h[i] + eps;
    s2 += h2.h[i] + eps;
  }
  double kl = 0;
  for (int i = 0; i < n; ++i) {
    if (h1.h[i] == 0.0) continue;
    const double p = (h1.h[i] + eps) / s1;
    const double q = (h2.h[i] + eps) / s2;
    kl += p * std::log(p / q);
  }
  return kl;
}

std::vector<LesionFeature> extract_features(const std::vector<SliceRecord>& records,
                                            const std::string& source,
                                            const RadiomicsConfig& config) {
  std::vector<std::vector<LesionFeature>> per(records.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    for (std::size_t k = 0; k < r.lesions.size(); ++k) {
      const auto f = region_features(r.image, r.lesions[k], config);
      if (!f) continue;
      per[i].push_back({r.slice_id + "_l" + std::to_string(k), source, f->energy, f->correlation});
    }
  }
  std::vector<LesionFeature> out;
  for (auto& v : per) out.insert(out.end(), v.begin(), v.end());
  return out;
}

void write_feature_csv(const std::filesystem::path& path, const std::vector<LesionFeature>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw_data("cannot write " + path.string());
  out << "lesion_id,source,energy,correlation\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g", r.energy, r.correlation);
    out << r.lesion_id << "," << r.source << "," << buf << "\n";
  }
  if (!out) throw_data("write failed: " + path.string());
}

std::vector<LesionFeature> read_feature_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "lesion_id,source,energy,correlation") {
    throw_data(path.string() + ": unexpected feature CSV header");
  }
  std::vector<LesionFeature> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    LesionFeature f;
    std::string e, c;
    if (!std::getline(ss, f.lesion_id, ',') || !std::getline(ss, f.source, ',') ||
        !std::getline(ss, e, ',') || !std::getline(ss, c)) {
      throw_data(path.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
    try {
      f.energy = std::stod(e);
      f.correlation = std::stod(c);
    } catch (const std::logic_error&) {
      throw_data(path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
    out.push_back(f);
  }
  return out;
}

KlSummary compare_features(const std::vector<LesionFeature>& real,
                           const std::vector<LesionFeature>& synthetic,
                           const RadiomicsConfig& config) {
  if (real.empty() || synthetic.empty()) throw_data("compare_features: empty feature set");
  std::vector<double> re, rc, se, sc;
  for (const auto& f : real) {
    re.push_back(f.energy);
    rc.push_back(f.correlation);
  }
  for (const auto& f : synthetic) {
    se.push_back(f.energy);
    sc.push_back(f.correlation);
  }
  KlSummary kl;
  kl.real_count = real.size();
  kl.synthetic_count = synthetic.size();
  const auto [hre, hse] = joint_histograms(re, se, config.bins);
  const auto [hrc, hsc] = joint_histograms(rc, sc, config.bins);
  kl.energy = kl_divergence(hre, hse, config.eps);
  kl.correlation = kl_divergence(hrc, hsc, config.eps);
  return kl;
}

void write_kl_csv(const std::filesystem::path& path, const KlSummary& kl) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw_data("cannot write " + path.string());
  char buf[256];
  out << "feature,kl,real_count,synthetic_count\n";
  std::snprintf(buf, sizeof buf, "energy,%.9g,%zu,%zu\ncorrelation,%.9g,%zu,%zu\n", kl.energy,
                kl.real_count, kl.synthetic_count, kl.correlation, kl.real_count,
                kl.synthetic_count);
  out << buf;
  if (!out) throw_data("write failed: " + path.string());
}

}  // namespace lfg::radiomics
