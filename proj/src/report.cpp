#include "lfg/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "lfg/error.hpp"

namespace lfg::report {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string svg_open(const std::string& title) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) +
                  "\" height=\"" + num(kHeight) + "\" viewBox=\"0 0 " + num(kWidth) + " " +
                  num(kHeight) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(kWidth / 2) + "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">" +
       title + "</text>\n";
  return s;
}

std::string axes(const std::string& xlabel, const std::string& ylabel, double x0, double x1,
                 double y0, double y1) {
  const double bx = kLeft, by = kHeight - kBottom, ex = kWidth - kRight, ey = kTop;
  std::string s = "<g stroke=\"black\" stroke-width=\"1\">\n";
  s += "<line x1=\"" + num(bx) + "\" y1=\"" + num(by) + "\" x2=\"" + num(ex) + "\" y2=\"" + num(by) + "\"/>\n";
  s += "<line x1=\"" + num(bx) + "\" y1=\"" + num(by) + "\" x2=\"" + num(bx) + "\" y2=\"" + num(ey) + "\"/>\n";
  s += "</g>\n<g font-family=\"sans-serif\" font-size=\"11\">\n";
  char buf[64];
  for (int k = 0; k <= 4; ++k) {
    const double t = k / 4.0;
    std::snprintf(buf, sizeof buf, "%.4g", x0 + t * (x1 - x0));
    s += "<text x=\"" + num(bx + t * (ex - bx)) + "\" y=\"" + num(by + 16) +
         "\" text-anchor=\"middle\">" + buf + "</text>\n";
    std::snprintf(buf, sizeof buf, "%.4g", y0 + t * (y1 - y0));
    s += "<text x=\"" + num(bx - 6) + "\" y=\"" + num(by - t * (by - ey) + 4) +
         "\" text-anchor=\"end\">" + buf + "</text>\n";
  }
  s += "<text x=\"" + num((bx + ex) / 2) + "\" y=\"" + num(kHeight - 12) +
       "\" text-anchor=\"middle\">" + xlabel + "</text>\n";
  s += "<text x=\"14\" y=\"" + num((by + ey) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " +
       num((by + ey) / 2) + ")\">" + ylabel + "</text>\n";
  s += "</g>\n";
  return s;
}

std::vector<std::vector<std::string>> read_csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw_data("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw_data("cannot write " + p.string());
  out << text;
  if (!out) throw_data("write failed: " + p.string());
}

}  // namespace

double window_mean(const std::vector<train::LossRecord>& records, std::int64_t end_step,
                   int window) {
  double sum = 0;
  int n = 0;
  for (const auto& r : records) {
    if (r.step > end_step - window && r.step <= end_step) {
      sum += r.total;
      ++n;
    }
  }
  return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

std::vector<double> moving_average(const std::vector<double>& values, int window) {
  if (window < 1) throw_config("moving_average: window must be >= 1");
  std::vector<double> out(values.size());
  double sum = 0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    sum += values[k];
    if (k >= static_cast<std::size_t>(window)) sum -= values[k - window];
    out[k] = sum / static_cast<double>(std::min<std::size_t>(k + 1, window));
  }
  return out;
}

std::string histogram_svg(const radiomics::FeatureHistogram& real,
                          const radiomics::FeatureHistogram& synthetic, const std::string& feature,
                          double kl) {
  if (real.bins() != synthetic.bins() || real.bins() == 0) {
    throw_data("histogram_svg: histograms must share a nonzero bin count");
  }
  const int bins = real.bins();
  double top = 0;
  for (int b = 0; b < bins; ++b) top = std::max({top, real.h[b], synthetic.h[b]});
  if (top <= 0) top = 1;
  char title[128];
  std::snprintf(title, sizeof title, "GLCM %s (KL = %.4f)", feature.c_str(), kl);
  std::string s = svg_open(title);
  s += axes(feature, "fraction of lesions", real.lo, real.hi, 0, top);
  const double bx = kLeft, by = kHeight - kBottom;
  const double pw = kWidth - kRight - kLeft, ph = by - kTop;
  const double bw = pw / bins;
  auto bars = [&](const radiomics::FeatureHistogram& h, const char* colour) {
    std::string g = std::string("<g fill=\"") + colour + "\" fill-opacity=\"0.5\">\n";
    for (int b = 0; b < bins; ++b) {
      if (h.h[b] <= 0) continue;
      const double hh = h.h[b] / top * ph;
      g += "<rect x=\"" + num(bx + b * bw) + "\" y=\"" + num(by - hh) + "\" width=\"" + num(bw) +
           "\" height=\"" + num(hh) + "\"/>\n";
    }
    return g + "</g>\n";
  };
  s += bars(real, "#1f77b4");
  s += bars(synthetic, "#d62728");
  s += "<g font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect x=\"" + num(kWidth - 150) + "\" y=\"46\" width=\"12\" height=\"12\" fill=\"#1f77b4\" fill-opacity=\"0.5\"/>\n";
  s += "<text x=\"" + num(kWidth - 132) + "\" y=\"56\">real</text>\n";
  s += "<rect x=\"" + num(kWidth - 150) + "\" y=\"64\" width=\"12\" height=\"12\" fill=\"#d62728\" fill-opacity=\"0.5\"/>\n";
  s += "<text x=\"" + num(kWidth - 132) + "\" y=\"74\">synthetic</text>\n";
  s += "</g>\n</svg>\n";
  return s;
}

std::string loss_curve_svg(const std::vector<train::LossRecord>& records, int window) {
  if (records.empty()) throw_data("loss_curve_svg: no telemetry rows");
  std::vector<double> total;
  for (const auto& r : records) total.push_back(r.total);
  const auto smooth = moving_average(total, window);
  double lo = total[0], hi = total[0];
  for (double v : total) {
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!(hi > lo)) hi = lo + 1;
  const double s0 = static_cast<double>(records.front().step);
  double s1 = static_cast<double>(records.back().step);
  if (!(s1 > s0)) s1 = s0 + 1;
  std::string s = svg_open("Generator total loss");
  s += axes("step", "loss", s0, s1, lo, hi);
  const double bx = kLeft, by = kHeight - kBottom;
  const double pw = kWidth - kRight - kLeft, ph = by - kTop;
  auto line = [&](const std::vector<double>& v, const char* colour, double width) {
    std::string p = std::string("<polyline fill=\"none\" stroke=\"") + colour +
                    "\" stroke-width=\"" + num(width) + "\" points=\"";
    for (std::size_t k = 0; k < v.size(); ++k) {
      const double x = bx + (records[k].step - s0) / (s1 - s0) * pw;
      const double y = by - (std::clamp(v[k], lo, hi) - lo) / (hi - lo) * ph;
      p += (k ? " " : "") + num(x) + "," + num(y);
    }
    return p + "\"/>\n";
  };
  s += line(total, "#aaaaaa", 0.5);
  s += line(smooth, "#d62728", 1.5);
  s += "<text x=\"" + num(kWidth - 150) + "\" y=\"56\" font-family=\"sans-serif\" font-size=\"12\">" +
       std::to_string(window) + "-step mean</text>\n";
  s += "</svg>\n";
  return s;
}

std::string comparison_table(const std::string& metrics_csv_text) {
  const auto rows = read_csv_rows(metrics_csv_text);
  if (rows.empty() || rows[0].size() < 9 || rows[0][0] != "regime") {
    throw_data("comparison_table: not a metrics.csv");
  }
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-18s %-24s %-24s %-24s\n", "Method", "DSC (%)", "vPSC (%)",
                "vSEN (%)");
  out += buf;
  int found = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() < 9 || r[1] != "all") continue;
    auto cell = [&](int k) { return r[k] + " ± " + r[k + 1]; };
    // Pad by code points so the ± does not skew the columns.
    auto pad = [](std::string s, std::size_t w) {
      std::size_t cps = 0;
      for (unsigned char c : s) cps += (c & 0xC0) != 0x80;
      if (cps < w) s.append(w - cps, ' ');
      return s;
    };
    out += pad(r[0], 18) + " " + pad(cell(3), 24) + " " + pad(cell(5), 24) + " " + cell(7) + "\n";
    ++found;
  }
  if (found == 0) throw_data("comparison_table: no pooled rows");
  return out;
}

ReportOutput report_figures(const std::filesystem::path& run_dir,
                            const radiomics::RadiomicsConfig& config) {
  const auto features = run_dir / "texture" / "features.csv";
  const auto telemetry = run_dir / "train" / "telemetry.csv";
  const auto metrics = run_dir / "seg" / "metrics.csv";
  std::string missing;
  for (const auto* p : {&features, &telemetry, &metrics}) {
    if (!std::filesystem::exists(*p)) {
      missing += (missing.empty() ? "" : ", ") + std::filesystem::relative(*p, run_dir).string();
    }
  }
  if (!missing.empty()) throw_data("report: missing inputs: " + missing);

  ReportOutput out;
  const auto dir = run_dir / "report";
  std::filesystem::create_directories(dir);
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text(dir / name, text);
    out.files.push_back(dir / name);
  };

  const auto rows = radiomics::read_feature_csv(features);
  std::vector<radiomics::LesionFeature> real, syn;
  for (const auto& r : rows) (r.source == "real" ? real : syn).push_back(r);
  if (real.empty() || syn.empty()) throw_data("report: features.csv needs real and synthetic rows");
  const auto kl = radiomics::compare_features(real, syn, config);
  auto column = [](const std::vector<radiomics::LesionFeature>& v, bool energy) {
    std::vector<double> c;
    for (const auto& f : v) c.push_back(energy ? f.energy : f.correlation);
    return c;
  };
  for (const bool energy : {true, false}) {
    const auto a = column(real, energy), b = column(syn, energy);
    const auto [ha, hb] = radiomics::joint_histograms(a, b, config.bins);
    const char* name = energy ? "energy" : "correlation";
    emit(std::string("hist_") + name + ".svg",
         histogram_svg(ha, hb, name, energy ? kl.energy : kl.correlation));
  }
  radiomics::write_kl_csv(dir / "kl.csv", kl);
  out.files.push_back(dir / "kl.csv");

  const auto records = train::read_telemetry(telemetry);
  if (records.empty()) {
    out.notices.push_back("telemetry is empty; loss curve skipped");
    std::filesystem::remove(dir / "loss_curve.svg");
  } else {
    emit("loss_curve.svg", loss_curve_svg(records));
  }

  const std::string metrics_text = read_text(metrics);
  emit("table.txt", comparison_table(metrics_text));
  emit("metrics.csv", metrics_text);

  std::string manifest;
  for (const auto& f : out.files) manifest += f.filename().string() + "\n";
  manifest += "manifest.txt\n";
  emit("manifest.txt", manifest);
  return out;
}

}  // namespace lfg::report
