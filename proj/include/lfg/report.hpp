#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lfg/radiomics.hpp"
#include "lfg/train.hpp"

namespace lfg::report {

// Mean of `total` over the records with step in (end_step - window, end_step].
// NaN when there are none.
double window_mean(const std::vector<train::LossRecord>& records, std::int64_t end_step,
                   int window = 100);

// Trailing moving average; element k averages values[max(0, k-window+1)..k].
std::vector<double> moving_average(const std::vector<double>& values, int window);

std::string histogram_svg(const radiomics::FeatureHistogram& real,
                          const radiomics::FeatureHistogram& synthetic, const std::string& feature,
                          double kl);

// Raw and smoothed generator total loss against step.
std::string loss_curve_svg(const std::vector<train::LossRecord>& records, int window = 100);

// Two-regime table from a metrics.csv text (rows with seed "all").
std::string comparison_table(const std::string& metrics_csv_text);

struct ReportOutput {
  std::vector<std::filesystem::path> files;
  std::vector<std::string> notices;
};

// Reads texture/features.csv, train/telemetry.csv and seg/metrics.csv under
// run_dir and writes run_dir/report/: hist_energy.svg, hist_correlation.svg,
// kl.csv, loss_curve.svg (skipped when telemetry is empty), table.txt,
// metrics.csv and manifest.txt.
ReportOutput report_figures(const std::filesystem::path& run_dir,
                            const radiomics::RadiomicsConfig& config = {});

}  // namespace lfg::report
