#include <omp.h>

#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "lfg/config.hpp"
#include "lfg/error.hpp"
#include "lfg/pipeline.hpp"

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  int threads = -1;
  std::string out;
  std::optional<std::uint64_t> seed;
};

template <typename T>
void flag_set(std::vector<std::string>& sets, const std::string& key, const std::optional<T>& v) {
  if (v) sets.push_back(key + "=" + std::to_string(*v));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Free-form lesion synthesis with a partial-convolution GAN on phantom CT data."};
  app.require_subcommand(1);
  app.fallthrough();

  Common common;
  app.add_option("--config", common.config_file, "INI config file")->check(CLI::ExistingFile);
  app.add_option("--set", common.sets, "Override a config key: section.key=value (repeatable)");
  app.add_option("--threads", common.threads, "OpenMP threads (0 = runtime default)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--out", common.out, "Output root (general.out_dir)");
  app.add_option("--seed", common.seed, "Global seed (general.seed); overrides LFG_SEED");

  std::optional<int> phantom_count;
  std::optional<double> lesion_rate;
  auto* phantom = app.add_subcommand("phantom", "Generate a phantom dataset into data/raw");
  phantom->add_option("--count", phantom_count, "Number of slices");
  phantom->add_option("--lesion-rate", lesion_rate, "Fraction of slices with lesions");

  std::optional<std::string> input;
  auto* preprocess = app.add_subcommand("preprocess", "Window, resize, filter and split into data/");
  preprocess->add_option("--input", input, "Dataset directory (default data/raw)");

  auto* shape_fit = app.add_subcommand("shape-fit", "Fit the lesion shape model from data/train");

  int sample_count = 10;
  auto* shape_sample = app.add_subcommand("shape-sample", "Sample shapes into shape/samples.csv");
  shape_sample->add_option("--count", sample_count, "Number of shapes")->check(CLI::PositiveNumber);

  std::optional<std::string> resume;
  std::optional<std::int64_t> iterations;
  auto* synth_train = app.add_subcommand("synth-train", "Train the inpainting GAN into train/");
  synth_train->add_option("--resume", resume, "Checkpoint path, or 'latest'");
  synth_train->add_option("--iterations", iterations, "Total training steps");

  std::optional<std::string> checkpoint;
  int masks_per_slice = 1;
  std::optional<int> synth_count;
  auto* synthesize = app.add_subcommand("synthesize", "Synthesize lesions on healthy slices into synth/");
  synthesize->add_option("--checkpoint", checkpoint, "Generator checkpoint (default: latest)");
  synthesize->add_option("--masks-per-slice", masks_per_slice, "Synthetic masks per healthy slice")
      ->check(CLI::PositiveNumber);
  synthesize->add_option("--count", synth_count, "Number of synthetic slices");

  std::optional<std::string> real_dir, synth_dir;
  auto* eval_texture = app.add_subcommand("eval-texture", "GLCM features and KL into texture/");
  eval_texture->add_option("--real", real_dir, "Real dataset (default data/test)");
  eval_texture->add_option("--synthetic", synth_dir, "Synthetic dataset (default synth/)");

  auto* seg_train = app.add_subcommand("seg-train", "Train Real and Real+Syn[PCGAN] segmenters");
  auto* seg_eval = app.add_subcommand("seg-eval", "Evaluate segmenters on data/test into seg/");
  auto* report = app.add_subcommand("report", "Figures and tables into report/");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return static_cast<int>(lfg::ErrorKind::kUsage);
  }

  try {
    std::vector<std::string> sets = common.sets;
    if (!common.out.empty()) sets.push_back("general.out_dir=" + common.out);
    flag_set(sets, "general.seed", common.seed);
    if (common.threads >= 0) sets.push_back("general.threads=" + std::to_string(common.threads));
    flag_set(sets, "phantom.count", phantom_count);
    if (lesion_rate) sets.push_back("phantom.lesion_rate=" + std::to_string(*lesion_rate));
    flag_set(sets, "train.iterations", iterations);
    flag_set(sets, "synth.count", synth_count);

    std::optional<std::filesystem::path> file;
    if (!common.config_file.empty()) file = common.config_file;
    const auto cfg = lfg::config::load(file, sets, !common.seed.has_value());
    if (cfg.threads > 0) omp_set_num_threads(cfg.threads);

    auto opt_path = [](const std::optional<std::string>& s) -> std::optional<std::filesystem::path> {
      if (!s) return std::nullopt;
      return std::filesystem::path(*s);
    };
    namespace p = lfg::pipeline;
    auto& log = std::cout;
    if (*phantom) p::run_phantom(cfg, log);
    else if (*preprocess) p::run_preprocess(cfg, opt_path(input), log);
    else if (*shape_fit) p::run_shape_fit(cfg, log);
    else if (*shape_sample) p::run_shape_sample(cfg, sample_count, log);
    else if (*synth_train) p::run_synth_train(cfg, opt_path(resume), log);
    else if (*synthesize) p::run_synthesize(cfg, opt_path(checkpoint), masks_per_slice, log);
    else if (*eval_texture) p::run_eval_texture(cfg, opt_path(real_dir), opt_path(synth_dir), log);
    else if (*seg_train) p::run_seg_train(cfg, log);
    else if (*seg_eval) p::run_seg_eval(cfg, log);
    else if (*report) p::run_report(cfg, log);
  } catch (const lfg::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(lfg::ErrorKind::kData);
  }
  return 0;
}
