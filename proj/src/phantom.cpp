#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "lfg/error.hpp"
#include "lfg/imageio.hpp"

namespace lfg {

namespace {

constexpr double kPi = std::numbers::pi;

struct Ellipse {
  double cy, cx, ry, rx, angle;

  // <1 inside, 1 on the boundary.
  double radial(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (c * dx + s * dy) / rx;
    const double v = (-s * dx + c * dy) / ry;
    return std::sqrt(u * u + v * v);
  }
};

struct Blob {
  Ellipse base;
  double amp[3];
  double phase[3];

  bool inside(double y, double x) const {
    const double theta = std::atan2(y - base.cy, x - base.cx) - base.angle;
    double wobble = 1.0;
    for (int k = 0; k < 3; ++k) wobble += amp[k] * std::cos((k + 2) * theta + phase[k]);
    return base.radial(y, x) < wobble;
  }
};

// Smooth field built from a handful of random plane waves.
struct LowFrequencyField {
  struct Wave { double ky, kx, phase, amp; };
  std::vector<Wave> waves;

  LowFrequencyField(std::mt19937_64& rng, int n, double max_freq, double amplitude) {
    std::uniform_real_distribution<double> freq(-max_freq, max_freq);
    std::uniform_real_distribution<double> ph(0, 2 * kPi);
    std::uniform_real_distribution<double> amp(0.5 * amplitude, amplitude);
    for (int i = 0; i < n; ++i) waves.push_back({freq(rng), freq(rng), ph(rng), amp(rng)});
  }

  double operator()(double y, double x) const {
    double v = 0;
    for (const auto& w : waves) v += w.amp * std::sin(w.ky * y + w.kx * x + w.phase);
    return v;
  }
};

LesionMask rasterize_blob(const Blob& b, Dims d) {
  LesionMask m(d, 0);
  for (int r = 0; r < d.height; ++r)
    for (int c = 0; c < d.width; ++c) m(r, c) = b.inside(r + 0.5, c + 0.5) ? 1 : 0;
  return m;
}

bool fits(const LesionMask& lesion, const LesionMask& allowed) {
  auto l = lesion.values();
  auto a = allowed.values();
  for (std::size_t i = 0; i < l.size(); ++i)
    if (l[i] && !a[i]) return false;
  return true;
}

LesionMask erode(const LesionMask& m, int radius) {
  LesionMask out(m.dims(), 0);
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) {
      bool keep = true;
      for (int dy = -radius; dy <= radius && keep; ++dy)
        for (int dx = -radius; dx <= radius && keep; ++dx)
          keep = m.contains(r + dy, c + dx) && m(r + dy, c + dx);
      out(r, c) = keep ? 1 : 0;
    }
  }
  return out;
}

SliceRecord make_slice(const PhantomSpec& spec, int index, bool with_lesion) {
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(index), 0x51ceu};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double a, double b) { return a + (b - a) * unit(rng); };
  std::normal_distribution<double> gauss(0.0, 1.0);

  const int n = spec.dims;
  const Dims d{n, n};
  const double scale = n / 64.0;

  const Ellipse body{n / 2.0 + uniform(-1, 1) * scale, n / 2.0 + uniform(-1, 1) * scale,
                     n * uniform(0.44, 0.48), n * uniform(0.46, 0.49), 0.0};
  const Ellipse liver{n / 2.0 + uniform(-3, 3) * scale, n / 2.0 + uniform(-3, 3) * scale,
                      n * uniform(0.26, 0.34), n * uniform(0.30, 0.38), uniform(-0.4, 0.4)};

  SliceRecord rec;
  rec.slice_id = "ph" + std::to_string(spec.seed) + "_" + std::to_string(index);
  rec.patient_id = "ph" + std::to_string(spec.seed) + "_p" +
                   std::to_string(index / std::max(1, spec.slices_per_patient));
  rec.liver = LesionMask(d, 0);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) rec.liver(r, c) = liver.radial(r + 0.5, c + 0.5) < 1.0 ? 1 : 0;

  if (with_lesion) {
    const LesionMask allowed = erode(rec.liver, static_cast<int>(std::lround(2 * scale)));
    LesionMask occupied(d, 0);
    std::uniform_int_distribution<int> count_dist(1, std::max(1, spec.max_lesions));
    const int want = count_dist(rng);
    for (int attempt = 0; attempt < 400 && static_cast<int>(rec.lesions.size()) < want; ++attempt) {
      const double r0 = uniform(3.0, 7.5) * scale * (attempt > 200 ? 0.7 : 1.0);
      Blob b{{uniform(0, n), uniform(0, n), r0 * uniform(0.65, 1.0), r0, uniform(0, kPi)},
             {uniform(0, 0.15), uniform(0, 0.12), uniform(0, 0.08)},
             {uniform(0, 2 * kPi), uniform(0, 2 * kPi), uniform(0, 2 * kPi)}};
      LesionMask m = rasterize_blob(b, d);
      if (mask_area(m) <= 10 || !fits(m, allowed)) continue;
      // keep a one-pixel gap between lesions
      const LesionMask free_space = erode(mask_complement(occupied), 1);
      if (!fits(m, free_space)) continue;
      for (std::size_t i = 0; i < m.size(); ++i) occupied.values()[i] |= m.values()[i];
      rec.lesions.push_back(std::move(m));
    }
    if (rec.lesions.empty()) {
      // A centred disc always fits inside the eroded liver ellipse.
      Blob b{{liver.cy, liver.cx, 3.2 * scale, 3.2 * scale, 0.0}, {0, 0, 0}, {0, 0, 0}};
      rec.lesions.push_back(rasterize_blob(b, d));
    }
  }
  rec.has_lesion = !rec.lesions.empty();

  const LowFrequencyField liver_field(rng, 4, 0.25 / scale, 9.0);
  const LowFrequencyField lesion_field(rng, 3, 0.5 / scale, 6.0);
  const double liver_hu = uniform(95, 115);
  const double lesion_hu = liver_hu - uniform(45, 65);

  // High-frequency lesion texture: white noise with a light 3-tap blur.
  Grid<double> noise(d, 0.0);
  for (auto& v : noise.values()) v = gauss(rng);
  Grid<double> hf(d, 0.0);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      double acc = 0;
      int cnt = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if (noise.contains(r + dy, c + dx)) {
            const double w = (dy == 0 && dx == 0) ? 4.0 : 1.0;
            acc += w * noise(r + dy, c + dx);
            cnt += static_cast<int>(w);
          }
      hf(r, c) = acc / cnt * 2.2;
    }
  }

  const LesionMask lesion_union = mask_union(rec.lesions, d);
  IntensityGrid raw(d);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const double y = r + 0.5, x = c + 0.5;
      double hu;
      if (body.radial(y, x) >= 1.0) {
        hu = -1000.0;
      } else if (!rec.liver(r, c)) {
        hu = 30.0 + 6.0 * gauss(rng);
      } else if (lesion_union(r, c)) {
        hu = lesion_hu + lesion_field(y, x) + 24.0 * hf(r, c);
      } else {
        hu = liver_hu + liver_field(y, x) + 3.0 * gauss(rng);
      }
      raw(r, c) = static_cast<float>(hu);
    }
  }
  rec.image = window_normalize(raw);
  return rec;
}

}  // namespace

std::vector<SliceRecord> generate_phantoms(const PhantomSpec& spec) {
  if (spec.dims < 32) throw_config("phantom: dims must be >= 32");
  if (spec.count < 0) throw_config("phantom: count must be >= 0");
  if (!(spec.lesion_rate >= 0.0 && spec.lesion_rate <= 1.0)) {
    throw_config("phantom: lesion_rate must be in [0,1]");
  }
  const auto n_lesion = static_cast<int>(std::floor(spec.count * spec.lesion_rate + 1e-9));
  std::vector<int> order(spec.count);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ull);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> lesion_flag(spec.count, false);
  for (int i = 0; i < n_lesion; ++i) lesion_flag[order[i]] = true;

  std::vector<SliceRecord> out;
  out.reserve(spec.count);
  for (int k = 0; k < spec.count; ++k) out.push_back(make_slice(spec, k, lesion_flag[k]));
  return out;
}

}  // namespace lfg
