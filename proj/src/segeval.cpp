#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "lfg/error.hpp"
#include "lfg/segeval.hpp"

namespace lfg::seg {

SegMetrics metrics_from_counts(std::size_t pred_area, std::size_t gt_area,
                               std::size_t intersection) {
  SegMetrics m;
  m.pred_area = pred_area;
  m.gt_area = gt_area;
  m.intersection = intersection;
  if (pred_area == 0 && gt_area == 0) {
    m.dsc = m.vpsc = m.vsen = 100.0;
    m.flagged = true;
    return m;
  }
  const auto i = static_cast<double>(intersection);
  m.dsc = 200.0 * i / static_cast<double>(pred_area + gt_area);
  if (pred_area > 0) {
    m.vpsc = 100.0 * i / static_cast<double>(pred_area);
  } else {
    m.flagged = true;
  }
  if (gt_area > 0) {
    m.vsen = 100.0 * i / static_cast<double>(gt_area);
  } else {
    m.flagged = true;
  }
  return m;
}

SegMetrics seg_metrics(const LesionMask& pred, const LesionMask& gt) {
  if (!(pred.dims() == gt.dims())) throw_data("seg_metrics: mask dims differ");
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const bool a = pred.values()[k] != 0, b = gt.values()[k] != 0;
    p += a;
    g += b;
    both += a && b;
  }
  return metrics_from_counts(p, g, both);
}

MetricSummary summarize(const std::vector<SegMetrics>& metrics) {
  MetricSummary s;
  s.count = metrics.size();
  if (metrics.empty()) return s;
  const double n = static_cast<double>(metrics.size());
  for (const auto& m : metrics) {
    s.dsc_mean += m.dsc;
    s.vpsc_mean += m.vpsc;
    s.vsen_mean += m.vsen;
  }
  s.dsc_mean /= n;
  s.vpsc_mean /= n;
  s.vsen_mean /= n;
  if (metrics.size() < 2) return s;
  for (const auto& m : metrics) {
    s.dsc_std += (m.dsc - s.dsc_mean) * (m.dsc - s.dsc_mean);
    s.vpsc_std += (m.vpsc - s.vpsc_mean) * (m.vpsc - s.vpsc_mean);
    s.vsen_std += (m.vsen - s.vsen_mean) * (m.vsen - s.vsen_mean);
  }
  s.dsc_std = std::sqrt(s.dsc_std / (n - 1));
  s.vpsc_std = std::sqrt(s.vpsc_std / (n - 1));
  s.vsen_std = std::sqrt(s.vsen_std / (n - 1));
  return s;
}

std::vector<SegMetrics> per_patient(const std::vector<SegMetrics>& per_slice,
                                    const std::vector<std::string>& patient_ids) {
  if (per_slice.size() != patient_ids.size()) throw_data("per_patient: size mismatch");
  std::vector<std::string> order;
  std::map<std::string, std::array<std::size_t, 3>> sums;
  for (std::size_t i = 0; i < per_slice.size(); ++i) {
    auto [it, inserted] = sums.try_emplace(patient_ids[i], std::array<std::size_t, 3>{0, 0, 0});
    if (inserted) order.push_back(patient_ids[i]);
    it->second[0] += per_slice[i].pred_area;
    it->second[1] += per_slice[i].gt_area;
    it->second[2] += per_slice[i].intersection;
  }
  std::vector<SegMetrics> out;
  for (const auto& id : order) {
    const auto& s = sums[id];
    out.push_back(metrics_from_counts(s[0], s[1], s[2]));
  }
  return out;
}

std::string regime_tag(const std::string& regime) {
  if (regime == kRealRegime) return "real";
  if (regime == kAugmentedRegime) return "real_syn";
  throw_data("unknown regime '" + regime + "'");
}

namespace {

std::filesystem::path prediction_path(const std::filesystem::path& out_dir,
                                      const std::string& regime, std::uint64_t seed,
                                      const std::string& slice_id) {
  return out_dir / "predictions" / regime_tag(regime) / ("seed" + std::to_string(seed)) /
         (slice_id + ".lfg1");
}

void finish_run(RegimeRun& run, bool per_patient_flag) {
  run.summary = summarize(per_patient_flag ? per_patient(run.per_image, run.patient_ids)
                                           : run.per_image);
}

void pool(ExperimentResult& r, bool per_patient_flag) {
  r.regimes = {kRealRegime, kAugmentedRegime};
  r.pooled.clear();
  for (const auto& regime : r.regimes) {
    std::vector<SegMetrics> all;
    for (const auto& run : r.runs) {
      if (run.regime != regime) continue;
      const auto m = per_patient_flag ? per_patient(run.per_image, run.patient_ids) : run.per_image;
      all.insert(all.end(), m.begin(), m.end());
    }
    r.pooled.push_back(summarize(all));
  }
  r.dsc_delta.clear();
  for (std::size_t k = 0; k + 1 < r.runs.size(); k += 2) {
    r.dsc_delta.push_back(r.runs[k + 1].summary.dsc_mean - r.runs[k].summary.dsc_mean);
  }
}

std::string summary_row(const std::string& regime, const std::string& seed,
                        const MetricSummary& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", regime.c_str(),
                seed.c_str(), s.count, s.dsc_mean, s.dsc_std, s.vpsc_mean, s.vpsc_std,
                s.vsen_mean, s.vsen_std);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw_data("cannot write " + path.string());
  out << text;
  if (!out) throw_data("write failed: " + path.string());
}

void check_test_set(const std::vector<SliceRecord>& test) {
  if (test.empty()) throw_data("augmentation experiment: empty test set");
  std::set<std::string> ids;
  for (const auto& r : test) {
    if (!ids.insert(r.slice_id).second) throw_data("duplicate test slice id " + r.slice_id);
  }
}

}  // namespace

std::string metrics_csv(const ExperimentResult& result) {
  std::string out = "regime,seed,count,dsc_mean,dsc_std,vpsc_mean,vpsc_std,vsen_mean,vsen_std\n";
  for (const auto& run : result.runs) {
    out += summary_row(run.regime, std::to_string(run.seed), run.summary);
  }
  for (std::size_t k = 0; k < result.regimes.size(); ++k) {
    out += summary_row(result.regimes[k], "all", result.pooled[k]);
  }
  return out;
}

std::vector<TrainedModel> train_regimes(const std::vector<SliceRecord>& real,
                                        const std::vector<SliceRecord>& synthetic,
                                        const std::vector<std::string>& test_patients,
                                        const ExperimentConfig& config) {
  if (real.empty()) throw_data("augmentation experiment: empty real training set");
  if (config.seeds.empty()) throw_config("augmentation experiment: no seeds");
  const std::set<std::string> held_out(test_patients.begin(), test_patients.end());
  for (const auto* set : {&real, &synthetic}) {
    for (const auto& r : *set) {
      if (held_out.count(r.patient_id)) {
        throw_data("patient " + r.patient_id + " appears in both training and test sets");
      }
    }
  }
  std::vector<SliceRecord> augmented = real;
  augmented.insert(augmented.end(), synthetic.begin(), synthetic.end());

  std::vector<TrainedModel> out;
  for (const auto seed : config.seeds) {
    for (const std::string regime : {kRealRegime, kAugmentedRegime}) {
      SegmenterConfig mc = config.model;
      mc.seed = seed;
      SegTrainConfig tc = config.train;
      tc.seed = seed;
      TrainedModel t{regime, seed, Segmenter(mc), 0.0};
      const auto trained = train_segmenter(t.model, regime == kRealRegime ? real : augmented, tc);
      t.final_loss = trained.step_losses.empty() ? 0.0 : trained.step_losses.back();
      out.push_back(std::move(t));
    }
  }
  return out;
}

ExperimentResult evaluate_regimes(std::vector<TrainedModel>& models,
                                  const std::vector<SliceRecord>& test,
                                  const ExperimentConfig& config,
                                  const std::filesystem::path& out_dir) {
  check_test_set(test);
  if (models.empty() || models.size() % 2) throw_data("evaluate_regimes: expected model pairs");
  ExperimentResult result;
  for (auto& t : models) {
    RegimeRun run;
    run.regime = t.regime;
    run.seed = t.seed;
    run.final_loss = t.final_loss;
    run.per_image.resize(test.size());
    std::vector<LesionMask> preds(test.size());
    // predict() runs the network in eval mode; BN statistics are read only.
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < test.size(); ++i) {
      preds[i] = t.model.predict(test[i].image);
      run.per_image[i] = seg_metrics(preds[i], mask_union(test[i].lesions, test[i].image.dims()));
    }
    for (std::size_t i = 0; i < test.size(); ++i) {
      write_lfg1(prediction_path(out_dir, t.regime, t.seed, test[i].slice_id), preds[i]);
      run.slice_ids.push_back(test[i].slice_id);
      run.patient_ids.push_back(test[i].patient_id);
    }
    finish_run(run, config.per_patient);
    result.runs.push_back(std::move(run));
  }
  pool(result, config.per_patient);

  write_text(out_dir / "metrics.csv", metrics_csv(result));
  std::string per = "regime,seed,slice_id,pred_area,gt_area,intersection,dsc,vpsc,vsen,flagged\n";
  char buf[256];
  for (const auto& run : result.runs) {
    for (std::size_t i = 0; i < run.per_image.size(); ++i) {
      const auto& m = run.per_image[i];
      std::snprintf(buf, sizeof buf, ",%zu,%zu,%zu,%.6f,%.6f,%.6f,%d\n", m.pred_area, m.gt_area,
                    m.intersection, m.dsc, m.vpsc, m.vsen, m.flagged ? 1 : 0);
      per += run.regime + "," + std::to_string(run.seed) + "," + run.slice_ids[i] + buf;
    }
  }
  write_text(out_dir / "per_image.csv", per);
  std::string deltas = "seed,dsc_real,dsc_real_syn,dsc_delta,sign\n";
  for (std::size_t k = 0; k < result.dsc_delta.size(); ++k) {
    const double d = result.dsc_delta[k];
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f,%s\n", result.runs[2 * k].summary.dsc_mean,
                  result.runs[2 * k + 1].summary.dsc_mean, d,
                  d > 0 ? "improved" : (d < 0 ? "worse" : "equal"));
    deltas += std::to_string(result.runs[2 * k].seed) + buf;
  }
  write_text(out_dir / "deltas.csv", deltas);
  return result;
}

ExperimentResult run_augmentation_experiment(const std::vector<SliceRecord>& real,
                                             const std::vector<SliceRecord>& synthetic,
                                             const std::vector<SliceRecord>& test,
                                             const ExperimentConfig& config,
                                             const std::filesystem::path& out_dir) {
  check_test_set(test);
  std::vector<std::string> patients;
  for (const auto& r : test) patients.push_back(r.patient_id);
  auto models = train_regimes(real, synthetic, patients, config);
  return evaluate_regimes(models, test, config, out_dir);
}

std::string recompute_metrics_csv(const std::filesystem::path& out_dir,
                                  const std::vector<SliceRecord>& test,
                                  const ExperimentConfig& config) {
  check_test_set(test);
  ExperimentResult result;
  for (const auto seed : config.seeds) {
    for (const std::string regime : {kRealRegime, kAugmentedRegime}) {
      RegimeRun run;
      run.regime = regime;
      run.seed = seed;
      for (const auto& r : test) {
        const LesionMask pred = read_lfg1_mask(prediction_path(out_dir, regime, seed, r.slice_id));
        run.slice_ids.push_back(r.slice_id);
        run.patient_ids.push_back(r.patient_id);
        run.per_image.push_back(seg_metrics(pred, mask_union(r.lesions, r.image.dims())));
      }
      finish_run(run, config.per_patient);
      result.runs.push_back(std::move(run));
    }
  }
  pool(result, config.per_patient);
  return metrics_csv(result);
}

}  // namespace lfg::seg
