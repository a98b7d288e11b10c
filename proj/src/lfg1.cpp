#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "lfg/error.hpp"
#include "lfg/imageio.hpp"

namespace lfg {

namespace {

constexpr char kMagic[4] = {'L', 'F', 'G', '1'};
constexpr std::uint32_t kKindIntensity = 0;
constexpr std::uint32_t kKindMask = 1;
constexpr std::size_t kHeaderBytes = 16;

static_assert(std::endian::native == std::endian::little,
              "LFG1 encoding assumes a little-endian host");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> header(std::uint32_t kind, Dims d) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kind);
  put_u32(out, static_cast<std::uint32_t>(d.height));
  put_u32(out, static_cast<std::uint32_t>(d.width));
  return out;
}

Dims parse_header(std::span<const std::uint8_t> bytes, std::uint32_t want_kind,
                  std::size_t elem_bytes) {
  if (bytes.size() < kHeaderBytes || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw_data("LFG1: bad magic");
  }
  const auto kind = get_u32(bytes, 4);
  if (kind != want_kind) throw_data("LFG1: unexpected grid kind " + std::to_string(kind));
  const Dims d{static_cast<int>(get_u32(bytes, 8)), static_cast<int>(get_u32(bytes, 12))};
  if (d.height <= 0 || d.width <= 0) throw_data("LFG1: non-positive dims");
  const auto need = kHeaderBytes + static_cast<std::size_t>(d.height) * d.width * elem_bytes;
  if (bytes.size() != need) throw_data("LFG1: payload size mismatch");
  return d;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw_data("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw_data("write failed: " + path.string());
}

}  // namespace

std::vector<std::uint8_t> encode_lfg1(const IntensityGrid& grid) {
  auto out = header(kKindIntensity, grid.dims());
  const auto* p = reinterpret_cast<const std::uint8_t*>(grid.values().data());
  out.insert(out.end(), p, p + grid.size() * sizeof(float));
  return out;
}

std::vector<std::uint8_t> encode_lfg1(const LesionMask& mask) {
  auto out = header(kKindMask, mask.dims());
  for (auto v : mask.values()) out.push_back(v ? 1 : 0);
  return out;
}

IntensityGrid decode_lfg1_intensity(std::span<const std::uint8_t> bytes) {
  const Dims d = parse_header(bytes, kKindIntensity, sizeof(float));
  IntensityGrid g(d);
  std::memcpy(g.values().data(), bytes.data() + kHeaderBytes, g.size() * sizeof(float));
  return g;
}

LesionMask decode_lfg1_mask(std::span<const std::uint8_t> bytes) {
  const Dims d = parse_header(bytes, kKindMask, 1);
  LesionMask m(d);
  auto v = m.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto b = bytes[kHeaderBytes + i];
    if (b > 1) throw_data("LFG1: mask value outside {0,1}");
    v[i] = b;
  }
  return m;
}

void write_lfg1(const std::filesystem::path& path, const IntensityGrid& grid) {
  dump(path, encode_lfg1(grid));
}
void write_lfg1(const std::filesystem::path& path, const LesionMask& mask) {
  dump(path, encode_lfg1(mask));
}
IntensityGrid read_lfg1_intensity(const std::filesystem::path& path) {
  try {
    return decode_lfg1_intensity(slurp(path));
  } catch (const Error& e) {
    throw_data(path.string() + ": " + e.what());
  }
}
LesionMask read_lfg1_mask(const std::filesystem::path& path) {
  try {
    return decode_lfg1_mask(slurp(path));
  } catch (const Error& e) {
    throw_data(path.string() + ": " + e.what());
  }
}

void write_dataset(const std::filesystem::path& dir, const std::vector<SliceRecord>& records) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "grids");
  std::ostringstream manifest;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const std::string id = r.slice_id.empty() ? "slice" + std::to_string(i) : r.slice_id;
    const std::string img = "grids/" + id + ".img.lfg1";
    const std::string liver = "grids/" + id + ".liver.lfg1";
    write_lfg1(dir / img, r.image);
    write_lfg1(dir / liver, r.liver);
    manifest << r.patient_id << ',' << img << ',' << liver;
    for (std::size_t k = 0; k < r.lesions.size(); ++k) {
      const std::string les = "grids/" + id + ".lesion" + std::to_string(k) + ".lfg1";
      write_lfg1(dir / les, r.lesions[k]);
      manifest << ',' << les;
    }
    manifest << '\n';
  }
  std::ofstream out(dir / "manifest.csv", std::ios::trunc);
  if (!out) throw_data("cannot write " + (dir / "manifest.csv").string());
  out << manifest.str();
}

std::vector<SliceRecord> read_dataset(const std::filesystem::path& dir_or_manifest) {
  namespace fs = std::filesystem;
  const fs::path manifest =
      fs::is_directory(dir_or_manifest) ? dir_or_manifest / "manifest.csv" : dir_or_manifest;
  const fs::path base = manifest.parent_path();
  std::ifstream in(manifest);
  if (!in) throw_data("cannot open manifest " + manifest.string());
  std::vector<SliceRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() < 3) {
      throw_data(manifest.string() + ":" + std::to_string(line_no) +
                 ": expected patient_id,slice_path,liver_path[,lesion_path...]");
    }
    SliceRecord r;
    r.patient_id = fields[0];
    r.image = read_lfg1_intensity(base / fields[1]);
    r.liver = read_lfg1_mask(base / fields[2]);
    std::string stem = fs::path(fields[1]).filename().string();
    if (auto dot = stem.find('.'); dot != std::string::npos) stem.resize(dot);
    r.slice_id = stem;
    for (std::size_t k = 3; k < fields.size(); ++k) {
      r.lesions.push_back(read_lfg1_mask(base / fields[k]));
      if (r.lesions.back().dims() != r.image.dims()) {
        throw_data(manifest.string() + ":" + std::to_string(line_no) + ": lesion dims differ from image");
      }
    }
    if (r.liver.dims() != r.image.dims()) {
      throw_data(manifest.string() + ":" + std::to_string(line_no) + ": liver dims differ from image");
    }
    r.has_lesion = !r.lesions.empty();
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace lfg
