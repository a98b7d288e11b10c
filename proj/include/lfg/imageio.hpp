#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lfg {

struct Dims {
  int height = 0;
  int width = 0;
  bool operator==(const Dims&) const = default;
};

// Row-major 2-D grid.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(int height, int width, T fill = T{})
      : height_(height), width_(width),
        values_(static_cast<std::size_t>(height) * width, fill) {}
  Grid(Dims d, T fill = T{}) : Grid(d.height, d.width, fill) {}

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  Dims dims() const noexcept { return {height_, width_}; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  T& operator()(int r, int c) { return values_[static_cast<std::size_t>(r) * width_ + c]; }
  const T& operator()(int r, int c) const {
    return values_[static_cast<std::size_t>(r) * width_ + c];
  }
  bool contains(int r, int c) const noexcept {
    return r >= 0 && c >= 0 && r < height_ && c < width_;
  }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }

  bool operator==(const Grid&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<T> values_;
};

// Normalized intensities in [0,1]. Raw HU slices use the same container
// before windowing.
using IntensityGrid = Grid<float>;
// 1 = known/healthy, 0 = hole when used as an inpainting mask; lesion masks
// store 1 inside the lesion.
using LesionMask = Grid<std::uint8_t>;

std::size_t mask_area(const LesionMask& m);
LesionMask mask_union(std::span<const LesionMask> masks, Dims dims);
LesionMask mask_complement(const LesionMask& m);

struct SliceRecord {
  IntensityGrid image;
  LesionMask liver;
  std::vector<LesionMask> lesions;
  std::string patient_id;
  std::string slice_id;
  bool has_lesion = false;
};

struct DatasetSplit {
  std::vector<SliceRecord> train;
  std::vector<SliceRecord> validation;
  std::vector<SliceRecord> test;
  // fold index per training record, empty when folds are not requested.
  std::vector<int> train_fold;
  int k_folds = 0;
};

IntensityGrid window_normalize(const IntensityGrid& raw, double lo = -100.0, double hi = 200.0);

IntensityGrid resize(const IntensityGrid& grid, Dims target);
LesionMask resize(const LesionMask& mask, Dims target);

IntensityGrid extract_liver_roi(const SliceRecord& record);

std::vector<SliceRecord> filter_small_lesions(std::vector<SliceRecord> records,
                                              std::size_t min_pixels = 10);

struct SplitRatios {
  double train = 1.0;
  double validation = 0.0;
  double test = 0.0;
};

struct PatientLists {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

// Patients are sorted by id before ratio assignment; folds are assigned
// round-robin over the sorted training patients.
DatasetSplit split_patients(std::vector<SliceRecord> records, const SplitRatios& ratios,
                            int k_folds = 0);
DatasetSplit split_patients(std::vector<SliceRecord> records, const PatientLists& lists,
                            int k_folds = 0);

struct PhantomSpec {
  std::uint64_t seed = 7;
  int count = 10;
  int dims = 64;
  double lesion_rate = 0.5;
  int slices_per_patient = 5;
  int max_lesions = 3;
};

std::vector<SliceRecord> generate_phantoms(const PhantomSpec& spec);

// LFG1 grid container.
void write_lfg1(const std::filesystem::path& path, const IntensityGrid& grid);
void write_lfg1(const std::filesystem::path& path, const LesionMask& mask);
IntensityGrid read_lfg1_intensity(const std::filesystem::path& path);
LesionMask read_lfg1_mask(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_lfg1(const IntensityGrid& grid);
std::vector<std::uint8_t> encode_lfg1(const LesionMask& mask);
IntensityGrid decode_lfg1_intensity(std::span<const std::uint8_t> bytes);
LesionMask decode_lfg1_mask(std::span<const std::uint8_t> bytes);

// Dataset directory: manifest.csv with lines
// patient_id,slice_path,liver_path,lesion_path... (paths relative to the
// manifest directory) and grids/ holding LFG1 files.
void write_dataset(const std::filesystem::path& dir, const std::vector<SliceRecord>& records);
std::vector<SliceRecord> read_dataset(const std::filesystem::path& dir_or_manifest);

}  // namespace lfg
