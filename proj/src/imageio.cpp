#include "lfg/imageio.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "lfg/error.hpp"

namespace lfg {

std::size_t mask_area(const LesionMask& m) {
  std::size_t n = 0;
  for (auto v : m.values()) n += v != 0;
  return n;
}

LesionMask mask_union(std::span<const LesionMask> masks, Dims dims) {
  LesionMask out(dims, 0);
  for (const auto& m : masks) {
    if (m.dims() != dims) throw_data("mask_union: dimension mismatch");
    auto o = out.values();
    auto v = m.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = o[i] | (v[i] != 0);
  }
  return out;
}

LesionMask mask_complement(const LesionMask& m) {
  LesionMask out(m.dims(), 0);
  auto o = out.values();
  auto v = m.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = v[i] ? 0 : 1;
  return out;
}

IntensityGrid window_normalize(const IntensityGrid& raw, double lo, double hi) {
  if (!(lo < hi)) throw_config("window_normalize: window lower bound must be below upper bound");
  IntensityGrid out(raw.dims());
  auto o = out.values();
  auto r = raw.values();
  const double span = hi - lo;
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = static_cast<float>(std::clamp((r[i] - lo) / span, 0.0, 1.0));
  }
  return out;
}

namespace {

void check_target(Dims target) {
  if (target.height <= 0 || target.width <= 0) {
    throw_config("resize: target dims must be positive");
  }
}

}  // namespace

// Half-pixel-centre sampling, edges clamped.
IntensityGrid resize(const IntensityGrid& grid, Dims target) {
  check_target(target);
  if (grid.dims() == target) return grid;
  IntensityGrid out(target);
  const double sy = static_cast<double>(grid.height()) / target.height;
  const double sx = static_cast<double>(grid.width()) / target.width;
  for (int r = 0; r < target.height; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, grid.height() - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, grid.height() - 1);
    const double ty = fy - y0;
    for (int c = 0; c < target.width; ++c) {
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, grid.width() - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, grid.width() - 1);
      const double tx = fx - x0;
      const double top = grid(y0, x0) * (1 - tx) + grid(y0, x1) * tx;
      const double bottom = grid(y1, x0) * (1 - tx) + grid(y1, x1) * tx;
      out(r, c) = static_cast<float>(top * (1 - ty) + bottom * ty);
    }
  }
  return out;
}

LesionMask resize(const LesionMask& mask, Dims target) {
  check_target(target);
  if (mask.dims() == target) return mask;
  LesionMask out(target);
  const double sy = static_cast<double>(mask.height()) / target.height;
  const double sx = static_cast<double>(mask.width()) / target.width;
  for (int r = 0; r < target.height; ++r) {
    const int y = std::min(static_cast<int>(std::floor((r + 0.5) * sy)), mask.height() - 1);
    for (int c = 0; c < target.width; ++c) {
      const int x = std::min(static_cast<int>(std::floor((c + 0.5) * sx)), mask.width() - 1);
      out(r, c) = mask(y, x) ? 1 : 0;
    }
  }
  return out;
}

IntensityGrid extract_liver_roi(const SliceRecord& record) {
  if (record.liver.dims() != record.image.dims()) {
    throw_data("extract_liver_roi: liver mask dims differ from image (" + record.slice_id + ")");
  }
  if (mask_area(record.liver) == 0) {
    throw_data("extract_liver_roi: empty liver mask (" + record.slice_id + ")");
  }
  IntensityGrid out = record.image;
  auto o = out.values();
  auto l = record.liver.values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    if (!l[i]) o[i] = 0.0f;
  }
  return out;
}

std::vector<SliceRecord> filter_small_lesions(std::vector<SliceRecord> records,
                                              std::size_t min_pixels) {
  if (min_pixels < 1) throw_config("filter_small_lesions: min_pixels must be >= 1");
  for (auto& rec : records) {
    std::erase_if(rec.lesions, [&](const LesionMask& m) { return mask_area(m) <= min_pixels; });
    rec.has_lesion = !rec.lesions.empty();
  }
  return records;
}

namespace {

std::vector<std::string> sorted_patients(const std::vector<SliceRecord>& records) {
  std::set<std::string> ids;
  for (const auto& r : records) {
    if (r.patient_id.empty()) throw_data("split_patients: record without patient id (" + r.slice_id + ")");
    ids.insert(r.patient_id);
  }
  return {ids.begin(), ids.end()};
}

DatasetSplit route(std::vector<SliceRecord> records, const std::map<std::string, int>& set_of,
                   int k_folds) {
  DatasetSplit split;
  split.k_folds = k_folds;
  std::vector<std::string> train_patients;
  for (const auto& [id, s] : set_of) {
    if (s == 0) train_patients.push_back(id);
  }
  if (k_folds > 0 && static_cast<int>(train_patients.size()) < k_folds) {
    throw_config("split_patients: fewer training patients than folds");
  }
  std::map<std::string, int> fold_of;
  for (std::size_t i = 0; i < train_patients.size(); ++i) {
    fold_of[train_patients[i]] = k_folds > 0 ? static_cast<int>(i % k_folds) : 0;
  }
  for (auto& rec : records) {
    auto it = set_of.find(rec.patient_id);
    if (it == set_of.end()) {
      throw_data("split_patients: patient '" + rec.patient_id + "' is not assigned to any set");
    }
    switch (it->second) {
      case 0:
        if (k_folds > 0) split.train_fold.push_back(fold_of[rec.patient_id]);
        split.train.push_back(std::move(rec));
        break;
      case 1: split.validation.push_back(std::move(rec)); break;
      default: split.test.push_back(std::move(rec)); break;
    }
  }
  return split;
}

}  // namespace

DatasetSplit split_patients(std::vector<SliceRecord> records, const SplitRatios& ratios,
                            int k_folds) {
  if (ratios.train < 0 || ratios.validation < 0 || ratios.test < 0 ||
      ratios.train + ratios.validation + ratios.test <= 0) {
    throw_config("split_patients: ratios must be non-negative with positive sum");
  }
  const auto patients = sorted_patients(records);
  const double total = ratios.train + ratios.validation + ratios.test;
  const auto n = static_cast<double>(patients.size());
  const auto n_train = static_cast<std::size_t>(std::llround(n * ratios.train / total));
  const auto n_val = std::min(patients.size() - n_train,
                              static_cast<std::size_t>(std::llround(n * ratios.validation / total)));
  std::map<std::string, int> set_of;
  for (std::size_t i = 0; i < patients.size(); ++i) {
    set_of[patients[i]] = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
  }
  return route(std::move(records), set_of, k_folds);
}

DatasetSplit split_patients(std::vector<SliceRecord> records, const PatientLists& lists,
                            int k_folds) {
  std::map<std::string, int> set_of;
  auto assign = [&](const std::vector<std::string>& ids, int s) {
    for (const auto& id : ids) {
      auto [it, inserted] = set_of.emplace(id, s);
      if (!inserted && it->second != s) {
        throw_data("split_patients: patient '" + id + "' appears in two sets");
      }
    }
  };
  assign(lists.train, 0);
  assign(lists.validation, 1);
  assign(lists.test, 2);
  (void)sorted_patients(records);  // rejects records without ids
  return route(std::move(records), set_of, k_folds);
}

}  // namespace lfg
