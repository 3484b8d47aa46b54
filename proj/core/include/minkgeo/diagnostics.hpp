#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "minkgeo/analytic_surrogate.hpp"
#include "minkgeo/autodiff.hpp"
#include "minkgeo/emulator.hpp"
#include "minkgeo/field.hpp"
#include "minkgeo/target_pipeline.hpp"

namespace minkgeo {

/// Differentiable descriptor map used by inversion, sweeps and gradcheck:
/// either the closed-form relaxation or a trained emulator checkpoint.
class Surrogate {
 public:
  static Surrogate analytic(SoftGeomConfig config, double pixel_size);
  static Surrogate emulator(const EmulatorParams* params);  // borrowed

  ad::Var build(ad::Tape& tape, ad::Var x) const;
  int n_outputs() const;
  ChannelEncoding encoding() const {
    return is_analytic_ ? ChannelEncoding::chi_symlog : ChannelEncoding::log1p_all;
  }
  bool is_analytic() const { return is_analytic_; }
  const SoftGeomConfig& analytic_config() const { return analytic_cfg_; }
  SoftGeomConfig& analytic_config() { return analytic_cfg_; }

 private:
  bool is_analytic_ = true;
  SoftGeomConfig analytic_cfg_;
  double pixel_size_ = defaults::kPixelSize;
  const EmulatorParams* emulator_ = nullptr;
};

struct InversionConfig {
  int steps = defaults::kInvertSteps;
  double lr = defaults::kInvertLearningRate;
  double lambda_tv = defaults::kInvertLambdaTv;
  double lambda_l2 = defaults::kInvertLambdaL2;
  std::uint64_t seed = 0;
  std::vector<double> target_gamma;
  int height = 32;
  int width = 32;
  double pixel_size = defaults::kPixelSize;
  /// Squared L2 in log space is the documented objective; the plain L2 data
  /// term is available behind this switch.
  enum class DataTerm { log_l2_squared, plain_l2 } data_term = DataTerm::log_l2_squared;

  void validate() const;
};

struct InversionResult {
  Field2D x_star;
  std::vector<double> loss_trace;  // objective value per step (before update)
};

/// Plain gradient descent on
///   || enc(gamma_hat(x)) - enc(gamma_target) ||_2^2
///   + lambda_tv TV(x) + lambda_l2 ||x||^2
/// from a seeded standard-normal start. Aborts with NumericalError if the
/// trace turns non-finite. Annealing of the analytic temperature follows the
/// surrogate's schedule with the step index as the epoch.
InversionResult invert(const Surrogate& surrogate, const InversionConfig& config);

/// Anisotropic total variation; same kernel as soft_perimeter.
ad::Var tv_norm(ad::Tape& tape, ad::Var grid);

/// Radially averaged power spectral density. A 2-D Hann window is applied,
/// the PSD is |FFT|^2 / (HW)^2, and annuli k-1/2 <= |k| < k+1/2 are averaged
/// for k = 0..floor(min(H,W)/2). The outermost annulus is open-ended so the
/// binned power sums exactly to the windowed field's mean-square power.
std::vector<double> rapsd(const Field2D& field);

/// Elementwise rapsd(model) / rapsd(ref), denominator floored at 1e-30.
std::vector<double> spectral_ratio(const Field2D& model, const Field2D& ref);

/// Mean over k >= 1 of |log10 S_model - log10 S_ref|.
double raps_error(const Field2D& model, const Field2D& ref);

struct MaskRegion {
  int row0 = 0, col0 = 0, height = 0, width = 0;
};

struct SweepRow {
  double alpha;
  std::vector<double> exact;      // gamma_exact entries at this alpha
  std::vector<double> surrogate;  // surrogate outputs at this alpha
  double grad_mask_fraction;      // share of gradient energy inside the mask
};

/// Scale the masked cell by each alpha; record the exact descriptors (step
/// behaviour), the surrogate outputs (smooth behaviour), and the fraction of
/// the surrogate-loss input gradient energy inside the mask, the loss being
/// taken against the unperturbed field's exact descriptor.
std::vector<SweepRow> mechanistic_sweep(const Field2D& base, const MaskRegion& mask,
                                        std::span<const double> alphas,
                                        const Surrogate& surrogate,
                                        const ThresholdSpec& spec,
                                        double epsilon = defaults::kPersistenceEpsilon,
                                        double infinite_cutoff = defaults::kInfiniteCutoff);

struct GradcheckReport {
  struct Entry {
    double max_rel_err;
    bool flagged;
  };
  std::vector<Entry> per_field;
  double worst = 0.0;
  double flag_threshold = 1e-4;
  bool all_ok() const { return worst <= flag_threshold; }
};

/// Central-difference check of the reverse-mode input gradient of the
/// Minkowski loss composed with the surrogate. h must lie in [1e-8, 1e-3].
GradcheckReport gradcheck(const Surrogate& surrogate,
                          std::span<const Field2D> fields, double h);

/// 8-bit PGM snapshot, min/max normalized.
void write_pgm(const Field2D& field, const std::filesystem::path& path);

void write_spectrum_csv(std::span<const double> spectrum,
                        const std::filesystem::path& path);
void write_trace_csv(std::span<const double> trace,
                     const std::filesystem::path& path);
void write_sweep_csv(std::span<const SweepRow> rows, int n_levels,
                     const std::filesystem::path& path);

}  // namespace minkgeo
