#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lfg/imageio.hpp"

namespace lfg::radiomics {

// Quantized levels; -1 outside the region.
using LevelGrid = Grid<int>;

// floor(v * levels) clamped to [0, levels - 1] inside the mask.
LevelGrid quantize(const IntensityGrid& grid, const LesionMask& mask, int levels = 32);

struct Offset {
  int dy = 0;
  int dx = 0;
};

inline const std::vector<Offset>& default_offsets() {
  static const std::vector<Offset> offsets{{0, 1}, {1, 1}, {1, 0}, {1, -1}};
  return offsets;
}

struct Glcm {
  int levels = 0;
  std::vector<double> p;  // levels x levels, row-major
  std::size_t pairs = 0;  // counted pairs before normalization

  double operator()(int i, int j) const { return p[static_cast<std::size_t>(i) * levels + j]; }
  bool defined() const { return pairs > 0; }
};

// Pairs where both pixels lie inside the mask, accumulated over all offsets.
Glcm compute_glcm(const LevelGrid& levels, const LesionMask& mask, int level_count,
                  std::span<const Offset> offsets = default_offsets(), bool symmetric = true);

struct GlcmFeatures {
  double energy = 0;
  double correlation = 0;
};

// Haralick energy and correlation; correlation is 1 when either marginal
// has zero variance.
GlcmFeatures glcm_features(const Glcm& p);

struct RadiomicsConfig {
  int levels = 32;
  int bins = 64;
  double eps = 1e-8;
  bool symmetric = true;
  std::vector<Offset> offsets = default_offsets();
};

// Features of the region under mask; nullopt when it has fewer than 2 pixels
// or no valid pair.
std::optional<GlcmFeatures> region_features(const IntensityGrid& image, const LesionMask& mask,
                                            const RadiomicsConfig& config = {});

struct FeatureHistogram {
  double lo = 0;
  double hi = 1;
  std::vector<double> h;

  int bins() const { return static_cast<int>(h.size()); }
};

// Equal-width bins over [lo, hi]; values outside land in the edge bins.
FeatureHistogram feature_histogram(std::span<const double> values, int bins, double lo, double hi);
// Range taken from the joint min..max of both sets.
std::pair<FeatureHistogram, FeatureHistogram> joint_histograms(std::span<const double> a,
                                                               std::span<const double> b,
                                                               int bins = 64);

// sum h1 ln(h1 / h2) after adding eps to every bin of both histograms and
// renormalizing; bins empty in the raw h1 contribute 0.
double kl_divergence(const FeatureHistogram& h1, const FeatureHistogram& h2, double eps = 1e-8);

struct LesionFeature {
  std::string lesion_id;
  std::string source;  // real | synthetic
  double energy = 0;
  double correlation = 0;
};

// One row per lesion with defined features, in record order. Lesion ids are
// <slice_id>_l<k>.
std::vector<LesionFeature> extract_features(const std::vector<SliceRecord>& records,
                                            const std::string& source,
                                            const RadiomicsConfig& config = {});

void write_feature_csv(const std::filesystem::path& path, const std::vector<LesionFeature>& rows);
std::vector<LesionFeature> read_feature_csv(const std::filesystem::path& path);

struct KlSummary {
  double energy = 0;
  double correlation = 0;
  std::size_t real_count = 0;
  std::size_t synthetic_count = 0;
};

// KL(real || synthetic) per feature with joint-range histograms.
KlSummary compare_features(const std::vector<LesionFeature>& real,
                           const std::vector<LesionFeature>& synthetic,
                           const RadiomicsConfig& config = {});

void write_kl_csv(const std::filesystem::path& path, const KlSummary& kl);

}  // namespace lfg::radiomics
