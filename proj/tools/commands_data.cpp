#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include "commands.hpp"
#include "common.hpp"
#include "minkgeo/defaults.hpp"
#include "minkgeo/field.hpp"
#include "minkgeo/raster_io.hpp"
#include "minkgeo/rng.hpp"
#include "minkgeo/target_pipeline.hpp"

namespace fs = std::filesystem;

namespace minkgeo::cli {

namespace {

std::string default_levels_csv() {
  std::string csv;
  for (double q : defaults::kQuantileLevels) {
    if (!csv.empty()) csv += ",";
    csv += std::to_string(q);
  }
  return csv;
}

std::vector<fs::path> list_rasters(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".mgf")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  return files;
}

ThresholdSpec calibrate_from_dir(const fs::path& dir,
                                 const std::vector<double>& levels,
                                 std::int64_t cap, std::uint64_t seed,
                                 double drizzle) {
  const auto files = list_rasters(dir);
  if (files.empty())
    throw std::invalid_argument("no .mgf rasters found in " + dir.string());
  std::size_t i = 0;
  auto next = [&]() -> std::optional<Field2D> {
    if (i >= files.size()) return std::nullopt;
    return read_raster(files[i++]);
  };
  return calibrate_thresholds(next, levels, cap, seed, drizzle);
}

nlohmann::json spec_to_json(const ThresholdSpec& spec) {
  return {{"quantile_levels", spec.quantile_levels},
          {"physical_thresholds", spec.physical_thresholds},
          {"sample_cap", spec.sample_cap},
          {"drizzle_threshold", spec.drizzle_threshold}};
}

}  // namespace

void setup_gen_synthetic(CLI::App& app) {
  struct Opts {
    std::string out;
    int n = 100;
    std::uint64_t seed = 0;
    int height = 32, width = 32;
    int peaks_min = 1, peaks_max = 4;
    double amp_min = 0.5, amp_max = 4.0;
    double sigma_min = 1.5, sigma_max = 4.0;
    double pixel_size = defaults::kPixelSize;
  };
  auto opts = std::make_shared<Opts>();
  CLI::App* sub = app.add_subcommand(
      "gen-synthetic", "Generate a corpus of synthetic multi-peak Gaussian "
                       "rain-rate fields (physical units, mm/h)");
  auto set = std::make_shared<OptionSet>(sub);
  set->add("--out", opts->out, "output directory")->required();
  set->add("--n", opts->n, "number of fields");
  set->add("--seed", opts->seed, "master seed; fields derive sub-seeds");
  set->add("--height", opts->height, "grid height in pixels");
  set->add("--width", opts->width, "grid width in pixels");
  set->add("--peaks-min", opts->peaks_min, "minimum peaks per field");
  set->add("--peaks-max", opts->peaks_max, "maximum peaks per field");
  set->add("--amp-min", opts->amp_min, "minimum peak amplitude in mm/h");
  set->add("--amp-max", opts->amp_max, "maximum peak amplitude in mm/h");
  set->add("--sigma-min", opts->sigma_min, "minimum peak width in pixels");
  set->add("--sigma-max", opts->sigma_max, "maximum peak width in pixels");
  set->add("--pixel-size", opts->pixel_size, "pixel side length in km");

  sub->callback([opts, set]() {
    set->layer_config_file();
    if (opts->peaks_min < 1 || opts->peaks_max < opts->peaks_min)
      throw std::invalid_argument("gen-synthetic: bad peak range");
    fs::create_directories(opts->out);

    std::uint64_t state = opts->seed;
    for (int i = 0; i < opts->n; ++i) {
      const std::uint64_t count_seed = splitmix64(state);
      const std::uint64_t field_seed = splitmix64(state);
      Rng count_rng(count_seed);
      const int peaks =
          opts->peaks_min +
          static_cast<int>(count_rng.uniform_index(
              static_cast<std::uint64_t>(opts->peaks_max - opts->peaks_min + 1)));
      Field2D field = gen_multipeak_gaussian(
          field_seed, opts->height, opts->width, peaks,
          {opts->amp_min, opts->amp_max}, {opts->sigma_min, opts->sigma_max},
          opts->pixel_size);
      char name[32];
      std::snprintf(name, sizeof(name), "field_%06d.mgf", i);
      write_raster(field, fs::path(opts->out) / name);
    }
    write_resolved_config(opts->out, "gen-synthetic", set->resolved());
    write_run_manifest(opts->out);

    nlohmann::json summary = {{"n_fields", opts->n}, {"out", opts->out}};
    if (set->json_output()) print_json_summary(summary);
    std::cerr << "gen-synthetic: wrote " << opts->n << " fields to "
              << opts->out << "\n";
  });
}

void setup_calibrate(CLI::App& app) {
  struct Opts {
    std::string data;
    std::string levels = default_levels_csv();
    std::int64_t cap = defaults::kSampleCap;
    std::uint64_t seed = 0;
    double drizzle = defaults::kDrizzleThreshold;
    std::string out;
  };
  auto opts = std::make_shared<Opts>();
  CLI::App* sub = app.add_subcommand(
      "calibrate", "Map quantile levels to empirical physical thresholds "
                   "(mm/h) over the wet pixels of a corpus");
  auto set = std::make_shared<OptionSet>(sub);
  set->add("--data", opts->data, "corpus directory of .mgf rasters")->required();
  set->add("--levels", opts->levels, "comma-separated quantile levels in (0,1)");
  set->add("--cap", opts->cap, "reservoir cap on sampled wet pixels");
  set->add("--seed", opts->seed, "reservoir sampling seed");
  set->add("--drizzle", opts->drizzle,
           "drizzle threshold in mm/h; only pixels above it are sampled");
  set->add("--out", opts->out, "optional path for the thresholds JSON file");

  sub->callback([opts, set]() {
    set->layer_config_file();
    const auto levels = parse_double_list(opts->levels, "--levels");
    const ThresholdSpec spec = calibrate_from_dir(opts->data, levels, opts->cap,
                                                  opts->seed, opts->drizzle);
    if (!opts->out.empty()) {
      std::ofstream out(opts->out, std::ios::trunc);
      out << spec_to_json(spec).dump(2) << "\n";
    }
    if (set->json_output()) {
      print_json_summary(spec_to_json(spec));
    } else {
      for (int i = 0; i < spec.n_levels(); ++i)
        std::cout << "q=" << spec.quantile_levels[i] << " -> "
                  << spec.physical_thresholds[i] << " mm/h\n";
    }
  });
}

void setup_gen_targets(CLI::App& app) {
  struct Opts {
    std::string data, out;
    std::string levels = default_levels_csv();
    std::string thresholds;       // explicit mm/h values bypass calibration
    std::string thresholds_file;  // JSON from `calibrate --out`
    double epsilon = defaults::kPersistenceEpsilon;
    double cutoff = defaults::kInfiniteCutoff;
    std::int64_t cap = defaults::kSampleCap;
    int workers = 1;
    std::uint64_t seed = 0;
    double drizzle = defaults::kDrizzleThreshold;
    bool with_holes = false;
  };
  auto opts = std::make_shared<Opts>();
  CLI::App* sub = app.add_subcommand(
      "gen-targets", "Compute exact multi-level descriptors for a corpus and "
                     "write them to a chunked binary store");
  auto set = std::make_shared<OptionSet>(sub);
  set->add("--data", opts->data, "corpus directory of .mgf rasters")->required();
  set->add("--out", opts->out, "store output directory")->required();
  set->add("--levels", opts->levels,
           "quantile levels in (0,1) used to calibrate thresholds");
  set->add("--thresholds", opts->thresholds,
           "explicit physical thresholds in mm/h (skips calibration)");
  set->add("--thresholds-file", opts->thresholds_file,
           "thresholds JSON produced by `calibrate --out`");
  set->add("--epsilon", opts->epsilon,
           "persistence lifetime threshold in mm/h");
  set->add("--cutoff", opts->cutoff,
           "intensity in mm/h below which the global component is counted");
  set->add("--cap", opts->cap, "calibration reservoir cap (wet pixels)");
  set->add("--workers", opts->workers, "worker threads for target extraction");
  set->add("--seed", opts->seed, "calibration sampling seed");
  set->add("--drizzle", opts->drizzle, "drizzle threshold in mm/h");
  set->add_flag("--with-holes", opts->with_holes,
                "also store per-level hole counts");

  sub->callback([opts, set]() {
    set->layer_config_file();
    TargetGenConfig cfg;
    cfg.epsilon = opts->epsilon;
    cfg.infinite_cutoff = opts->cutoff;
    cfg.with_holes = opts->with_holes;
    cfg.workers = opts->workers;

    if (!opts->thresholds.empty()) {
      cfg.spec.physical_thresholds =
          parse_double_list(opts->thresholds, "--thresholds");
      const int n = cfg.spec.n_levels();
      for (int i = 0; i < n; ++i)
        cfg.spec.quantile_levels.push_back((i + 1.0) / (n + 1.0));
      cfg.spec.sample_cap = opts->cap;
      cfg.spec.drizzle_threshold = opts->drizzle;
    } else if (!opts->thresholds_file.empty()) {
      std::ifstream in(opts->thresholds_file);
      if (!in)
        throw std::invalid_argument("gen-targets: cannot open " +
                                    opts->thresholds_file);
      nlohmann::json j;
      in >> j;
      cfg.spec.quantile_levels = j.at("quantile_levels").get<std::vector<double>>();
      cfg.spec.physical_thresholds =
          j.at("physical_thresholds").get<std::vector<double>>();
      cfg.spec.sample_cap = j.at("sample_cap").get<std::int64_t>();
      cfg.spec.drizzle_threshold = j.at("drizzle_threshold").get<double>();
    } else {
      const auto levels = parse_double_list(opts->levels, "--levels");
      cfg.spec = calibrate_from_dir(opts->data, levels, opts->cap, opts->seed,
                                    opts->drizzle);
    }
    cfg.spec.validate();

    const TargetGenSummary summary = generate_targets(opts->data, opts->out, cfg);
    write_resolved_config(opts->out, "gen-targets", set->resolved());

    nlohmann::json out = {
        {"n_fields", summary.n_fields},
        {"n_skipped", summary.n_skipped},
        {"isoperimetric_violation_rate", summary.isoperimetric_violation_rate},
        {"component_mean",
         {summary.component_mean[0], summary.component_mean[1],
          summary.component_mean[2]}},
        {"component_max",
         {summary.component_max[0], summary.component_max[1],
          summary.component_max[2]}},
        {"thresholds", cfg.spec.physical_thresholds}};
    if (set->json_output()) print_json_summary(out);
    std::cerr << "gen-targets: " << summary.n_fields << " rows ("
              << summary.n_skipped << " skipped) -> " << opts->out << "\n";
  });
}

}  // namespace minkgeo::cli
