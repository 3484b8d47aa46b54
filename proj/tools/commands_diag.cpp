#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include "commands.hpp"
#include "common.hpp"
#include "minkgeo/diagnostics.hpp"
#include "minkgeo/exact_geometry.hpp"
#include "minkgeo/raster_io.hpp"
#include "minkgeo/rng.hpp"

namespace fs = std::filesystem;

namespace minkgeo::cli {

namespace {

/// Flags shared by every surrogate-driven diagnostic.
struct SurrogateOpts {
  std::string kind = "analytic";
  std::string ckpt;
  std::string thresholds;  // analytic relaxation levels
  double tau = defaults::kSoftTau;
  double tau_mask = defaults::kSoftTauMask;
  double delta = defaults::kSoftMaskDelta;
  bool no_morph = false;
  double anneal_ratio = 1.0;
  double anneal_floor = 0.0;
};

void add_surrogate_flags(OptionSet& set, SurrogateOpts& s) {
  set.add("--surrogate", s.kind, "analytic | emulator");
  set.add("--ckpt", s.ckpt, "emulator checkpoint directory");
  set.add("--thresholds", s.thresholds,
          "analytic thresholds, comma separated, in field units");
  set.add("--tau", s.tau, "sigmoid temperature in field units");
  set.add("--tau-mask", s.tau_mask, "persistence-mask temperature");
  set.add("--delta", s.delta,
          "persistence-mask peak threshold in field units (0 disables)");
  set.add_flag("--no-morph", s.no_morph, "disable the morphological prefilter");
  set.add("--anneal-ratio", s.anneal_ratio,
          "geometric tau decay per step (1 = constant)");
  set.add("--anneal-floor", s.anneal_floor, "tau floor when annealing");
}

/// Builds the surrogate; when an emulator is requested the loaded params are
/// kept alive in `storage`.
Surrogate make_surrogate(const SurrogateOpts& s, double pixel_size,
                         std::unique_ptr<EmulatorParams>& storage) {
  if (s.kind == "emulator") {
    if (s.ckpt.empty())
      throw std::invalid_argument("--ckpt is required with --surrogate emulator");
    storage = std::make_unique<EmulatorParams>(load_checkpoint(s.ckpt));
    return Surrogate::emulator(storage.get());
  }
  if (s.kind != "analytic")
    throw std::invalid_argument("unknown surrogate: " + s.kind);
  if (s.thresholds.empty())
    throw std::invalid_argument("--thresholds is required with --surrogate analytic");
  SoftGeomConfig cfg;
  cfg.tau = s.tau;
  cfg.tau_mask = s.tau_mask;
  cfg.persistence_delta = s.delta;
  cfg.thresholds = parse_double_list(s.thresholds, "--thresholds");
  cfg.use_morph_filter = !s.no_morph;
  if (s.anneal_ratio != 1.0 || s.anneal_floor > 0.0) {
    cfg.anneal.kind = AnnealSchedule::Kind::geometric;
    cfg.anneal.ratio = s.anneal_ratio;
    cfg.anneal.floor = s.anneal_floor > 0.0 ? s.anneal_floor : s.tau * 0.1;
  }
  return Surrogate::analytic(cfg, pixel_size);
}

ThresholdSpec spec_from_thresholds(std::vector<double> thresholds) {
  ThresholdSpec spec;
  spec.physical_thresholds = std::move(thresholds);
  const int n = spec.n_levels();
  for (int i = 0; i < n; ++i)
    spec.quantile_levels.push_back((i + 1.0) / (n + 1.0));
  return spec;
}

}  // namespace

void setup_invert(CLI::App& app) {
  struct Opts {
    SurrogateOpts surrogate;
    int steps = defaults::kInvertSteps;
    double lr = defaults::kInvertLearningRate;
    double lambda_tv = defaults::kInvertLambdaTv;
    double lambda_l2 = defaults::kInvertLambdaL2;
    std::uint64_t seed = 0;
    int height = 32, width = 32;
    double pixel_size = defaults::kPixelSize;
    std::string target_field, target_gamma;
    double epsilon = defaults::kPersistenceEpsilon;
    double cutoff = defaults::kInfiniteCutoff;
    std::string data_term = "log";
    std::string out;
    bool snapshot = false;
  };
  auto opts = std::make_shared<Opts>();
  CLI::App* sub = app.add_subcommand(
      "invert", "Recover a field whose descriptor matches a target by "
                "gradient descent through a surrogate");
  auto set = std::make_shared<OptionSet>(sub);
  add_surrogate_flags(*set, opts->surrogate);
  set->add("--steps", opts->steps, "gradient descent steps");
  set->add("--lr", opts->lr, "descent step size");
  set->add("--lambda-tv", opts->lambda_tv, "total variation weight");
  set->add("--lambda-l2", opts->lambda_l2, "L2 penalty weight");
  set->add("--seed", opts->seed, "seed of the Gaussian start field");
  set->add("--height", opts->height, "inversion grid height in pixels");
  set->add("--width", opts->width, "inversion grid width in pixels");
  set->add("--pixel-size", opts->pixel_size, "pixel side length in km");
  set->add("--target-field", opts->target_field,
           "raster whose exact descriptor becomes the target (mm/h)");
  set->add("--target-gamma", opts->target_gamma,
           "explicit target descriptor, comma separated");
  set->add("--epsilon", opts->epsilon,
           "persistence lifetime threshold in mm/h for the exact target");
  set->add("--cutoff", opts->cutoff,
           "global-component cutoff in mm/h for the exact target");
  set->add("--data-term", opts->data_term,
           "log (squared L2 in log space) | plain (L2 on raw descriptors)");
  set->add("--out", opts->out, "output directory")->required();
  set->add_flag("--snapshot", opts->snapshot, "also write an 8-bit PGM preview");

  sub->callback([opts, set]() {
    set->layer_config_file();
    std::unique_ptr<EmulatorParams> storage;
    Surrogate surrogate =
        make_surrogate(opts->surrogate, opts->pixel_size, storage);
    if (!surrogate.is_analytic()) {
      opts->height = storage->cfg.input_height;
      opts->width = storage->cfg.input_width;
      opts->pixel_size = storage->cfg.pixel_size;
    }

    InversionConfig cfg;
    cfg.steps = opts->steps;
    cfg.lr = opts->lr;
    cfg.lambda_tv = opts->lambda_tv;
    cfg.lambda_l2 = opts->lambda_l2;
    cfg.seed = opts->seed;
    cfg.height = opts->height;
    cfg.width = opts->width;
    cfg.pixel_size = opts->pixel_size;
    cfg.data_term = opts->data_term == "plain"
                        ? InversionConfig::DataTerm::plain_l2
                        : InversionConfig::DataTerm::log_l2_squared;

    if (!opts->target_gamma.empty()) {
      cfg.target_gamma = parse_double_list(opts->target_gamma, "--target-gamma");
    } else if (!opts->target_field.empty()) {
      const Field2D target = read_raster(opts->target_field);
      const std::vector<double> levels =
          surrogate.is_analytic()
              ? surrogate.analytic_config().thresholds
              : storage->cfg.thresholds;
      cfg.target_gamma = gamma_exact(target, spec_from_thresholds(levels),
                                     opts->epsilon, opts->cutoff)
                             .entries;
    } else {
      throw std::invalid_argument(
          "invert: pass --target-field or --target-gamma");
    }

    const InversionResult result = invert(surrogate, cfg);
    fs::create_directories(opts->out);
    write_raster(result.x_star, fs::path(opts->out) / "x_star.mgf");
    write_trace_csv(result.loss_trace, fs::path(opts->out) / "trace.csv");
    if (opts->snapshot)
      write_pgm(result.x_star, fs::path(opts->out) / "x_star.pgm");
    write_resolved_config(opts->out, "invert", set->resolved());
    write_run_manifest(opts->out);

    nlohmann::json summary = {
        {"initial_loss", result.loss_trace.front()},
        {"final_loss", result.loss_trace.back()},
        {"reduction", 1.0 - result.loss_trace.back() /
                                std::max(result.loss_trace.front(), 1e-300)},
        {"out", opts->out}};
    if (set->json_output()) print_json_summary(summary);
    std::cerr << "invert: objective " << result.loss_trace.front() << " -> "
              << result.loss_trace.back() << "\n";
  });
}

void setup_gradcheck(CLI::App& app) {
  struct Opts {
    SurrogateOpts surrogate;
    int n = 20;
    double h = 1e-6;
    int height = 8, width = 8;
    double pixel_size = 1.0;
    std::uint64_t seed = 0;
    int peaks = 2;
    double amp_min = 0.8, amp_max = 2.5;
    double sigma_min = 1.2, sigma_max = 2.5;
    std::string out;
  };
  auto opts = std::make_shared<Opts>();
  CLI::App* sub = app.add_subcommand(
      "gradcheck", "Verify the surrogate's reverse-mode input gradient "
                   "against central finite differences");
  auto set = std::make_shared<OptionSet>(sub);
  add_surrogate_flags(*set, opts->surrogate);
  set->add("--n", opts->n, "number of random smooth fields");
  set->add("--fd-step", opts->h, "finite-difference step in [1e-8, 1e-3]");
  set->add("--height", opts->height, "field height in pixels");
  set->add("--width", opts->width, "field width in pixels");
  set->add("--pixel-size", opts->pixel_size, "pixel side length in km");
  set->add("--seed", opts->seed, "field generation seed");
  set->add("--peaks", opts->peaks, "peaks per generated field");
  set->add("--amp-min", opts->amp_min, "minimum peak amplitude in mm/h");
  set->add("--amp-max", opts->amp_max, "maximum peak amplitude in mm/h");
  set->add("--sigma-min", opts->sigma_min, "minimum peak width in pixels");
  set->add("--sigma-max", opts->sigma_max, "maximum peak width in pixels");
  set->add("--out", opts->out, "optional report directory");

  sub->callback([opts, set]() {
    set->layer_config_file();
    std::unique_ptr<EmulatorParams> storage;
    Surrogate surrogate =
        make_surrogate(opts->surrogate, opts->pixel_size, storage);
    if (!surrogate.is_analytic()) {
      opts->height = storage->cfg.input_height;
      opts->width = storage->cfg.input_width;
    }

    std::vector<Field2D> fields;
    std::uint64_t state = opts->seed;
    for (int i = 0; i < opts->n; ++i)
      fields.push_back(gen_multipeak_gaussian(
          splitmix64(state), opts->height, opts->width, opts->peaks,
          {opts->amp_min, opts->amp_max}, {opts->sigma_min, opts->sigma_max},
          opts->pixel_size));

    const GradcheckReport report = gradcheck(surrogate, fields, opts->h);
    int flagged = 0;
    for (const auto& entry : report.per_field)
      if (entry.flagged) ++flagged;

    if (!opts->out.empty()) {
      fs::create_directories(opts->out);
      std::ofstream csv(fs::path(opts->out) / "gradcheck.csv", std::ios::trunc);
      csv << "field,max_rel_err,flagged\n";
      csv.precision(17);
      for (std::size_t i = 0; i < report.per_field.size(); ++i)
        csv << i << "," << report.per_field[i].max_rel_err << ","
            << (report.per_field[i].flagged ? 1 : 0) << "\n";
      csv.close();
      write_resolved_config(opts->out, "gradcheck", set->resolved());
      write_run_manifest(opts->out);
    }

    nlohmann::json summary = {{"worst_rel_err", report.worst},
                              {"flag_threshold", report.flag_threshold},
                              {"n_flagged", flagged},
                              {"n_fields", opts->n}};
    if (set->json_output())
      print_json_summary(summary);
    else
      std::cout << "gradcheck: worst relative error " << report.worst << " ("
                << flagged << "/" << opts->n << " flagged)\n";
  });
}

void setup_raps(CLI::App& app) {
  struct Opts {
    std::string input, ref, out;
  };
  auto opts = std::make_shared<Opts>();
  CLI::App* sub = app.add_subcommand(
      "raps", "Radially averaged power spectral density of a raster");
  auto set = std::make_shared<OptionSet>(sub);
  set->add("--input", opts->input, "input raster")->required();
  set->add("--ref", opts->ref, "reference raster for ratio and error");
  set->add("--out", opts->out, "output directory (stdout CSV otherwise)");

  sub->callback([opts, set]() {
    set->layer_config_file();
    const Field2D input = read_raster(opts->input);
    const auto spectrum = rapsd(input);

    nlohmann::json summary = {{"k_max", spectrum.size() - 1}};
    if (!opts->out.empty()) {
      fs::create_directories(opts->out);
      write_spectrum_csv(spectrum, fs::path(opts->out) / "spectrum.csv");
    }
    if (!opts->ref.empty()) {
      const Field2D ref = read_raster(opts->ref);
      const auto ratio = spectral_ratio(input, ref);
      summary["raps_error"] = raps_error(input, ref);
      if (!opts->out.empty()) {
        write_spectrum_csv(rapsd(ref), fs::path(opts->out) / "spectrum_ref.csv");
        write_spectrum_csv(ratio, fs::path(opts->out) / "ratio.csv");
      }
    }
    if (!opts->out.empty()) {
      write_resolved_config(opts->out, "raps", set->resolved());
      write_run_manifest(opts->out);
    } else if (!set->json_output()) {
      std::cout << "k,S\n";
      std::cout.precision(17);
      for (std::size_t k = 0; k < spectrum.size(); ++k)
        std::cout << k << "," << spectrum[k] << "\n";
    }
    if (set->json_output()) print_json_summary(summary);
  });
}

void setup_mech_sweep(CLI::App& app) {
  struct Opts {
    SurrogateOpts surrogate;
    std::string input, mask, alphas = "0:2:0.1", thresholds;
    double epsilon = defaults::kPersistenceEpsilon;
    double cutoff = defaults::kInfiniteCutoff;
    std::string out;
    bool snapshot = false;
  };
  auto opts = std::make_shared<Opts>();
  CLI::App* sub = app.add_subcommand(
      "mech-sweep", "Scale a masked region by a factor sweep and tabulate "
                    "exact versus surrogate descriptors");
  auto set = std::make_shared<OptionSet>(sub);
  add_surrogate_flags(*set, opts->surrogate);
  set->add("--input", opts->input, "base raster (mm/h)")->required();
  set->add("--mask", opts->mask, "region as row0,col0,height,width")->required();
  set->add("--alphas", opts->alphas,
           "amplitude factors: comma list or start:stop:step");
  set->add("--epsilon", opts->epsilon,
           "persistence lifetime threshold in mm/h for the exact pipeline");
  set->add("--cutoff", opts->cutoff,
           "global-component cutoff in mm/h for the exact pipeline");
  set->add("--out", opts->out, "output directory")->required();
  set->add_flag("--snapshot", opts->snapshot, "write a PGM of the base field");

  sub->callback([opts, set]() {
    set->layer_config_file();
    const Field2D base = read_raster(opts->input);
    std::unique_ptr<EmulatorParams> storage;
    Surrogate surrogate =
        make_surrogate(opts->surrogate, base.pixel_size(), storage);

    const auto mask_vals = parse_double_list(opts->mask, "--mask");
    if (mask_vals.size() != 4)
      throw std::invalid_argument("--mask: expected row0,col0,height,width");
    MaskRegion region{static_cast<int>(mask_vals[0]), static_cast<int>(mask_vals[1]),
                      static_cast<int>(mask_vals[2]), static_cast<int>(mask_vals[3])};

    const auto alphas = parse_range_or_list(opts->alphas, "--alphas");
    const std::vector<double> levels =
        surrogate.is_analytic() ? surrogate.analytic_config().thresholds
                                : storage->cfg.thresholds;
    const auto rows =
        mechanistic_sweep(base, region, alphas, surrogate,
                          spec_from_thresholds(levels), opts->epsilon,
                          opts->cutoff);

    fs::create_directories(opts->out);
    write_sweep_csv(rows, static_cast<int>(levels.size()),
                    fs::path(opts->out) / "sweep.csv");
    if (opts->snapshot) write_pgm(base, fs::path(opts->out) / "base.pgm");
    write_resolved_config(opts->out, "mech-sweep", set->resolved());
    write_run_manifest(opts->out);

    nlohmann::json summary = {{"n_alphas", alphas.size()}, {"out", opts->out}};
    if (set->json_output()) print_json_summary(summary);
    std::cerr << "mech-sweep: " << alphas.size() << " rows -> " << opts->out
              << "\n";
  });
}

void setup_steiner_check(CLI::App& app) {
  struct Opts {
    int resolution = 512;
    double disk_radius = 0.25;
    std::string radii = "0:0.05:0.005";
    std::string out;
  };
  auto opts = std::make_shared<Opts>();
  CLI::App* sub = app.add_subcommand(
      "steiner-check", "Compare rasterized disk dilation areas against the "
                       "area-perimeter-Euler polynomial");
  auto set = std::make_shared<OptionSet>(sub);
  set->add("--resolution", opts->resolution, "raster resolution per side");
  set->add("--disk-radius", opts->disk_radius,
           "disk radius in domain units (unit square)");
  set->add("--radii", opts->radii,
           "dilation radii in domain units: comma list or start:stop:step");
  set->add("--out", opts->out, "optional output directory for steiner.csv");

  sub->callback([opts, set]() {
    set->layer_config_file();
    const auto radii = parse_range_or_list(opts->radii, "--radii");
    const auto samples =
        steiner_check(radii, opts->disk_radius, opts->resolution);

    double max_rel = 0.0;
    for (const auto& s : samples)
      if (s.polynomial_area > 0.0)
        max_rel = std::max(max_rel,
                           std::abs(s.measured_area - s.polynomial_area) /
                               s.polynomial_area);

    if (!opts->out.empty()) {
      fs::create_directories(opts->out);
      std::ofstream csv(fs::path(opts->out) / "steiner.csv", std::ios::trunc);
      csv << "r,measured_area,polynomial_area\n";
      csv.precision(17);
      for (const auto& s : samples)
        csv << s.radius << "," << s.measured_area << "," << s.polynomial_area
            << "\n";
      csv.close();
      write_resolved_config(opts->out, "steiner-check", set->resolved());
      write_run_manifest(opts->out);
    }

    nlohmann::json summary = {{"max_rel_err", max_rel},
                              {"n_radii", radii.size()},
                              {"resolution", opts->resolution}};
    if (set->json_output())
      print_json_summary(summary);
    else
      std::cout << "steiner-check: max relative error " << max_rel << " over "
                << radii.size() << " radii\n";
  });
}

}  // namespace minkgeo::cli
