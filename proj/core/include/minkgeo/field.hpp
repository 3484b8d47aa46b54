#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "minkgeo/defaults.hpp"

namespace minkgeo {

enum class Units : std::uint8_t { physical = 0, normalized = 1 };

/// Rectangular grid of scalar intensities with pixel-size metadata.
/// Values are immutable after construction, so instances can be shared
/// freely across worker threads.
class Field2D {
 public:
  Field2D(int height, int width, double pixel_size, Units units,
          std::vector<double> values);

  static Field2D constant(int height, int width, double pixel_size, Units units,
                          double value);

  int height() const { return height_; }
  int width() const { return width_; }
  double pixel_size() const { return pixel_size_; }
  Units units() const { return units_; }
  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  double at(int row, int col) const { return values_[row * width_ + col]; }

 private:
  int height_;
  int width_;
  double pixel_size_;
  Units units_;
  std::vector<double> values_;
};

/// Log-linear normalization parameters. `log_scale` is the global maximum of
/// the log-transformed training set, so normalized values land in [0, 1].
struct NormalizationSpec {
  double drizzle_threshold = defaults::kDrizzleThreshold;  // mm/h
  double log_scale = 1.0;                                  // S > 0

  void validate() const;
};

/// p < drizzle -> 0, else log(1+p)/S. Requires physical units.
Field2D normalize(const Field2D& field, const NormalizationSpec& spec);

/// p -> exp(S*p)-1, then values below the drizzle threshold are zeroed.
/// Requires normalized units.
Field2D denormalize(const Field2D& field, const NormalizationSpec& spec);

/// Sum of `n_peaks` isotropic Gaussians with centers uniform in the domain,
/// amplitudes and widths uniform in the given ranges. Pure function of its
/// arguments. Domains smaller than 4x4 are rejected.
Field2D gen_multipeak_gaussian(std::uint64_t seed, int height, int width,
                               int n_peaks,
                               std::pair<double, double> amp_range,
                               std::pair<double, double> sigma_range,
                               double pixel_size = defaults::kPixelSize);

/// Block-average by `factor`, then bilinearly upsample back to the original
/// grid. This is the interpolated partner used by mixup.
Field2D interp_partner(const Field2D& field, int factor = defaults::kInterpFactor);

/// lambda * real + (1-lambda) * (interp + eps), lambda ~ Beta(alpha, alpha),
/// eps ~ N(0, noise_sigma^2) elementwise. Output clipped at 0 from below
/// (physical fields are non-negative). The seed splits deterministically
/// into a lambda stream and a noise stream.
Field2D mixup(const Field2D& real, const Field2D& interp, double alpha,
              double noise_sigma, std::uint64_t seed);

/// mixup with the convex weight fixed by the caller instead of Beta-drawn.
Field2D mixup_fixed(const Field2D& real, const Field2D& interp, double lambda,
                    double noise_sigma, std::uint64_t seed);

}  // namespace minkgeo
