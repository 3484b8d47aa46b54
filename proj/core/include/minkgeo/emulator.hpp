#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "minkgeo/autodiff.hpp"
#include "minkgeo/defaults.hpp"
#include "minkgeo/field.hpp"
#include "minkgeo/target_pipeline.hpp"

namespace minkgeo {

enum class EmulatorArch { constrained, unconstrained, unconstrained_no_sn };

std::string arch_name(EmulatorArch arch);
EmulatorArch arch_from_name(const std::string& name);

/// Dense layer with an optional spectral-normalization state. The persisted
/// u vector is the running left-singular-vector estimate; the effective
/// weight used in forward passes is W / sigma_hat.
struct SpectralLinear {
  int out_dim = 0;
  int in_dim = 0;
  std::vector<double> weight;  // row-major out_dim x in_dim
  std::vector<double> bias;
  bool normalize = false;
  std::vector<double> u_vec;
  double sigma_hat = 1.0;

  void init(std::uint64_t seed, int out, int in, bool with_sn, double scale);
  /// Power-iteration update of u (and the paired right vector); returns the
  /// refreshed spectral-norm estimate. A zero matrix floors the estimate at
  /// 1e-12.
  double power_iterate(int iters = 1);
};

struct EmulatorConfig {
  EmulatorArch arch = EmulatorArch::constrained;
  int input_height = 32;
  int input_width = 32;
  double pixel_size = defaults::kPixelSize;
  int hidden_dim = 256;
  int n_blocks = 2;
  std::vector<double> thresholds;  // N ascending physical levels
  double rms_eps = 1e-6;

  int n_levels() const { return static_cast<int>(thresholds.size()); }
  int input_dim() const { return input_height * input_width; }
  double domain_area_cap() const {
    return static_cast<double>(input_height) * input_width * pixel_size * pixel_size;
  }
  void validate() const;
};

/// Full parameter set: unconstrained first layer, spectrally normalized
/// residual blocks, and either the three coupled constraint heads or
/// independent regression heads depending on the architecture.
struct EmulatorParams {
  EmulatorConfig cfg;

  SpectralLinear first;  // never normalized: free input scaling
  struct Block {
    SpectralLinear a, b;
  };
  std::vector<Block> blocks;

  // Constrained heads.
  SpectralLinear head_area_logits;  // (N+1) x d
  SpectralLinear head_area_total;   // 1 x d
  SpectralLinear head_perim_rough;  // N x d
  SpectralLinear head_counts;       // N x d

  // Independent heads (both unconstrained arms).
  SpectralLinear head_a, head_p, head_cc;  // N x d each

  static EmulatorParams init(const EmulatorConfig& cfg, std::uint64_t seed);

  /// Refresh every SN estimate (used before eval and checkpointing).
  void refresh_spectral_norms(int iters = 50);
  std::vector<SpectralLinear*> trainable_layers();
};

/// Build the prediction graph gamma_hat(x): vector of 3N entries interleaved
/// [A,P,CC] per level. Input grid must match the configured shape.
ad::Var emulator_forward(ad::Tape& tape, const EmulatorParams& params, ad::Var x,
                         std::vector<ad::Var>* param_vars = nullptr);

/// Backbone latent z(x) only; this is the spectrally bounded map whose
/// Lipschitz constant the first-layer norm controls.
ad::Var emulator_latent(ad::Tape& tape, const EmulatorParams& params, ad::Var x);

/// Plain-double forward convenience.
std::vector<double> emulator_predict(const EmulatorParams& params,
                                     const Field2D& field);

/// Spectral norm of the unconstrained first layer (converged power iteration).
double first_layer_norm(const EmulatorParams& params);

// ---------------------------------------------------------------------------
// Loss and trust mechanism.

struct LossWeights {
  double area = defaults::kLossWeightArea;
  double perimeter = defaults::kLossWeightPerimeter;
  double components = defaults::kLossWeightComponents;

  static LossWeights unit() { return {1.0, 1.0, 1.0}; }
  double channel(int i) const {
    switch (i % 3) {
      case 0: return area;
      case 1: return perimeter;
      default: return components;
    }
  }
};

/// Channel encoding used when comparing descriptor vectors in log space.
/// The emulator emits raw non-negative components (log1p everything); the
/// analytic relaxation already symlog-scales its Euler slot, so only the
/// area/perimeter channels take the loss's log1p there.
enum class ChannelEncoding { log1p_all, chi_symlog };

/// Weighted log-transformed L1 distance between descriptor vectors. With
/// unit weights this is exactly the Minkowski image loss. Negative entries
/// are rejected.
double minkowski_loss(std::span<const double> gamma_hat,
                      std::span<const double> gamma_true,
                      const LossWeights& weights = LossWeights::unit());

/// Tape version for training/inversion; gamma_true is encoded internally
/// according to `encoding`.
ad::Var minkowski_loss_on_tape(ad::Tape& tape, ad::Var gamma_hat,
                               std::span<const double> gamma_true,
                               const LossWeights& weights,
                               ChannelEncoding encoding = ChannelEncoding::log1p_all);

/// exp(-tau * MSE) where the MSE is computed between log1p-transformed
/// vectors. Equals 1 when the emulator reproduces the exact descriptor.
double trust_weight(std::span<const double> gamma_emul_on_truth,
                    std::span<const double> gamma_true, double tau_trust);

/// Per-sample log-space MSE of the frozen emulator against exact targets.
double log_space_mse(std::span<const double> gamma_hat,
                     std::span<const double> gamma_true);

/// tau = -ln(trust_floor) / q90 over the per-sample error distribution.
double tau_trust_from_errors(std::span<const double> errors,
                             double percentile = defaults::kTrustPercentile,
                             double floor = defaults::kTrustFloor);
double calibrate_tau_trust(const EmulatorParams& params,
                           std::span<const Field2D> fields,
                           std::span<const GammaVector> targets);

// ---------------------------------------------------------------------------
// Training and evaluation.

struct TrainConfig {
  double lr = defaults::kLearningRate;
  double weight_decay = defaults::kWeightDecay;
  int batch = defaults::kBatchSize;
  int epochs = defaults::kMaxEpochs;
  int patience = defaults::kEarlyStoppingPatience;
  LossWeights weights;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
  int sn_power_iters = 1;

  void validate() const;
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  int best_epoch = -1;
};

struct TrainResult {
  EmulatorParams params;
  TrainHistory history;
};

/// Adam training with deterministic seeded shuffling and early stopping on
/// the validation loss. Aborts with NumericalError when the loss turns
/// non-finite.
TrainResult train_emulator(std::span<const Field2D> fields,
                           std::span<const GammaVector> targets,
                           const EmulatorConfig& arch_cfg,
                           const TrainConfig& train_cfg);

struct EvalMetrics {
  double m_loss = 0.0;        // mean unweighted Minkowski image loss
  double r2_overall = 0.0;    // pooled log-space R^2
  double r2_area = 0.0;
  double r2_perimeter = 0.0;
  double r2_components = 0.0;
  double nu_iso_pairs = 0.0;    // violating (sample, level) pairs
  double nu_iso_samples = 0.0;  // samples with any violating level
};

EvalMetrics evaluate(const EmulatorParams& params, std::span<const Field2D> fields,
                     std::span<const GammaVector> targets);

// Checkpoint: directory with manifest.json and params.bin ("MGEMU01" magic,
// f64 LE blobs per layer including the spectral u vectors).
void save_checkpoint(const EmulatorParams& params,
                     const std::filesystem::path& dir);
EmulatorParams load_checkpoint(const std::filesystem::path& dir);

}  // namespace minkgeo
