#pragma once

#include <vector>

#include "minkgeo/autodiff.hpp"
#include "minkgeo/defaults.hpp"
#include "minkgeo/field.hpp"

namespace minkgeo {

struct AnnealSchedule {
  enum class Kind { none, geometric };
  Kind kind = Kind::none;
  double ratio = 1.0;
  double floor = 0.0;
};

/// Configuration of the closed-form relaxation. Temperatures are in the same
/// units as the field the relaxation is applied to.
struct SoftGeomConfig {
  double tau = defaults::kSoftTau;             // threshold temperature
  double tau_mask = defaults::kSoftTauMask;    // persistence-mask temperature
  double persistence_delta = defaults::kSoftMaskDelta;  // 0 disables the mask
  std::vector<double> thresholds;              // ascending
  AnnealSchedule anneal;
  bool use_morph_filter = true;

  void validate() const;
};

/// P = sigmoid((x - u) / tau), elementwise pseudo-probability in (0,1).
ad::Var soft_indicator(ad::Tape& tape, ad::Var field, double u, double tau);

/// pixel_size^2 * sum(P).
ad::Var soft_area(ad::Tape& tape, ad::Var probs, double pixel_size);

/// Anisotropic total variation between in-domain neighbours:
/// sum |P(i,j+1)-P(i,j)| + |P(i+1,j)-P(i,j)| over interior forward
/// differences (the shifted-out column/row of each difference image is
/// zero-padded). Shared by soft_perimeter and the inversion TV regularizer.
ad::Var l1_total_variation(ad::Tape& tape, ad::Var grid);

/// pixel_size * l1_total_variation(P). L1 perimeter, biased high versus the
/// Euclidean marching-squares length by up to 4/pi for smooth boundaries.
ad::Var soft_perimeter(ad::Tape& tape, ad::Var probs, double pixel_size);

/// Relaxed Euler characteristic: sum(V) - sum(E) + sum(F) on the pixel
/// complex, with face presence F = P and edge/vertex presence given by the
/// Godel t-norm (min) over the incident pixels; the domain is padded with
/// p = 0. Reproduces euler_characteristic_exact on binary inputs, so chi
/// equals 4-connected components minus 8-connected holes there.
ad::Var soft_euler(ad::Tape& tape, ad::Var probs);

/// Soft morphological opening: 3x3 min-erosion followed by 3x3 max-dilation
/// (zero padding, so the frame erodes dry). Removes isolated spikes in the
/// hard limit and leaves flats unchanged.
ad::Var morph_prefilter(ad::Tape& tape, ad::Var field);

/// m = sigmoid((maxpool3(x) - delta) / tau_mask); multiplied into the soft
/// indicator to suppress components whose local peak is below delta.
ad::Var persistence_mask(ad::Tape& tape, ad::Var field, double delta,
                         double tau_mask);

/// Assembled 3N descriptor [A, P, symlog(chi)] per threshold. Area and
/// perimeter pass through raw (the loss applies its own log transform); the
/// Euler slot is symmetric-log scaled because it can be negative.
ad::Var gamma_soft(ad::Tape& tape, ad::Var field, const SoftGeomConfig& config,
                   double pixel_size);

/// tau(epoch) = max(floor, tau * ratio^epoch) under a geometric schedule;
/// constant otherwise.
double anneal_tau(const SoftGeomConfig& config, int epoch);

/// Convenience: evaluate gamma_soft on a field without managing a tape.
std::vector<double> gamma_soft_values(const Field2D& field,
                                      const SoftGeomConfig& config);

}  // namespace minkgeo
