#include "minkgeo/field.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "minkgeo/rng.hpp"

namespace minkgeo {

Field2D::Field2D(int height, int width, double pixel_size, Units units,
                 std::vector<double> values)
    : height_(height),
      width_(width),
      pixel_size_(pixel_size),
      units_(units),
      values_(std::move(values)) {
  if (height_ <= 0 || width_ <= 0)
    throw std::invalid_argument("Field2D: dimensions must be positive");
  if (!(pixel_size_ > 0.0) || !std::isfinite(pixel_size_))
    throw std::invalid_argument("Field2D: pixel_size must be positive and finite");
  if (values_.size() != static_cast<std::size_t>(height_) * width_)
    throw std::invalid_argument("Field2D: values length must equal height*width");
  for (double v : values_) {
    if (!std::isfinite(v))
      throw std::invalid_argument("Field2D: non-finite value rejected");
  }
}

Field2D Field2D::constant(int height, int width, double pixel_size, Units units,
                          double value) {
  return Field2D(height, width, pixel_size, units,
                 std::vector<double>(static_cast<std::size_t>(height) * width, value));
}

void NormalizationSpec::validate() const {
  if (!(drizzle_threshold >= 0.0))
    throw std::invalid_argument("NormalizationSpec: drizzle_threshold must be >= 0");
  if (!(log_scale > 0.0))
    throw std::invalid_argument("NormalizationSpec: log_scale must be > 0");
}

Field2D normalize(const Field2D& field, const NormalizationSpec& spec) {
  spec.validate();
  if (field.units() != Units::physical)
    throw std::invalid_argument("normalize: field must be in physical units");
  std::vector<double> out(field.size());
  auto in = field.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double p = in[i];
    out[i] = (p < spec.drizzle_threshold) ? 0.0 : std::log1p(p) / spec.log_scale;
  }
  return Field2D(field.height(), field.width(), field.pixel_size(),
                 Units::normalized, std::move(out));
}

Field2D denormalize(const Field2D& field, const NormalizationSpec& spec) {
  spec.validate();
  if (field.units() != Units::normalized)
    throw std::invalid_argument("denormalize: field must be in normalized units");
  std::vector<double> out(field.size());
  auto in = field.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double p = std::expm1(spec.log_scale * in[i]);
    out[i] = (p < spec.drizzle_threshold) ? 0.0 : p;
  }
  return Field2D(field.height(), field.width(), field.pixel_size(),
                 Units::physical, std::move(out));
}

Field2D gen_multipeak_gaussian(std::uint64_t seed, int height, int width,
                               int n_peaks,
                               std::pair<double, double> amp_range,
                               std::pair<double, double> sigma_range,
                               double pixel_size) {
  if (height < 4 || width < 4)
    throw std::invalid_argument("gen_multipeak_gaussian: domain must be at least 4x4");
  if (n_peaks < 1)
    throw std::invalid_argument("gen_multipeak_gaussian: n_peaks must be >= 1");
  if (!(amp_range.first > 0.0) || !(amp_range.second >= amp_range.first) ||
      !(sigma_range.first > 0.0) || !(sigma_range.second >= sigma_range.first))
    throw std::invalid_argument("gen_multipeak_gaussian: ranges must be positive");

  Rng rng(seed);
  std::vector<double> cy(n_peaks), cx(n_peaks), amp(n_peaks), sig(n_peaks);
  for (int k = 0; k < n_peaks; ++k) {
    // Fixed draw order per peak: cy, cx, amplitude, sigma.
    cy[k] = rng.uniform(0.0, static_cast<double>(height));
    cx[k] = rng.uniform(0.0, static_cast<double>(width));
    amp[k] = rng.uniform(amp_range.first, amp_range.second);
    sig[k] = rng.uniform(sigma_range.first, sigma_range.second);
  }

  std::vector<double> values(static_cast<std::size_t>(height) * width, 0.0);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      double v = 0.0;
      for (int k = 0; k < n_peaks; ++k) {
        const double dy = (r + 0.5) - cy[k];
        const double dx = (c + 0.5) - cx[k];
        v += amp[k] * std::exp(-(dx * dx + dy * dy) / (2.0 * sig[k] * sig[k]));
      }
      values[static_cast<std::size_t>(r) * width + c] = v;
    }
  }
  return Field2D(height, width, pixel_size, Units::physical, std::move(values));
}

Field2D interp_partner(const Field2D& field, int factor) {
  if (factor < 1) throw std::invalid_argument("interp_partner: factor must be >= 1");
  const int h = field.height(), w = field.width();
  const int ch = (h + factor - 1) / factor;
  const int cw = (w + factor - 1) / factor;

  std::vector<double> coarse(static_cast<std::size_t>(ch) * cw, 0.0);
  for (int bi = 0; bi < ch; ++bi) {
    for (int bj = 0; bj < cw; ++bj) {
      double sum = 0.0;
      int count = 0;
      for (int r = bi * factor; r < std::min(h, (bi + 1) * factor); ++r)
        for (int c = bj * factor; c < std::min(w, (bj + 1) * factor); ++c) {
          sum += field.at(r, c);
          ++count;
        }
      coarse[static_cast<std::size_t>(bi) * cw + bj] = sum / count;
    }
  }

  // Bilinear upsample: coarse cell centers sit at (i+0.5)*factor - 0.5 in
  // fine pixel coordinates.
  std::vector<double> fine(static_cast<std::size_t>(h) * w);
  for (int r = 0; r < h; ++r) {
    const double gy = (r + 0.5) / factor - 0.5;
    const int i0 = std::clamp(static_cast<int>(std::floor(gy)), 0, ch - 1);
    const int i1 = std::min(i0 + 1, ch - 1);
    const double ty = std::clamp(gy - i0, 0.0, 1.0);
    for (int c = 0; c < w; ++c) {
      const double gx = (c + 0.5) / factor - 0.5;
      const int j0 = std::clamp(static_cast<int>(std::floor(gx)), 0, cw - 1);
      const int j1 = std::min(j0 + 1, cw - 1);
      const double tx = std::clamp(gx - j0, 0.0, 1.0);
      const double v00 = coarse[static_cast<std::size_t>(i0) * cw + j0];
      const double v01 = coarse[static_cast<std::size_t>(i0) * cw + j1];
      const double v10 = coarse[static_cast<std::size_t>(i1) * cw + j0];
      const double v11 = coarse[static_cast<std::size_t>(i1) * cw + j1];
      fine[static_cast<std::size_t>(r) * w + c] =
          (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
    }
  }
  return Field2D(h, w, field.pixel_size(), field.units(), std::move(fine));
}

namespace {

Field2D mixup_impl(const Field2D& real, const Field2D& interp, double lambda,
                   double noise_sigma, std::uint64_t noise_seed) {
  if (real.height() != interp.height() || real.width() != interp.width())
    throw std::invalid_argument("mixup: field shapes must match");
  if (!(noise_sigma >= 0.0))
    throw std::invalid_argument("mixup: noise_sigma must be >= 0");

  Rng eps(noise_seed);
  std::vector<double> out(real.size());
  auto rv = real.values();
  auto iv = interp.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double noise = noise_sigma > 0.0 ? eps.normal(0.0, noise_sigma) : 0.0;
    const double v = lambda * rv[i] + (1.0 - lambda) * (iv[i] + noise);
    out[i] = std::max(0.0, v);
  }
  return Field2D(real.height(), real.width(), real.pixel_size(), real.units(),
                 std::move(out));
}

}  // namespace

Field2D mixup(const Field2D& real, const Field2D& interp, double alpha,
              double noise_sigma, std::uint64_t seed) {
  if (!(alpha > 0.0)) throw std::invalid_argument("mixup: alpha must be > 0");
  std::uint64_t state = seed;
  const std::uint64_t lambda_seed = splitmix64(state);
  const std::uint64_t noise_seed = splitmix64(state);
  Rng lam(lambda_seed);
  const double lambda = lam.beta(alpha, alpha);
  return mixup_impl(real, interp, lambda, noise_sigma, noise_seed);
}

Field2D mixup_fixed(const Field2D& real, const Field2D& interp, double lambda,
                    double noise_sigma, std::uint64_t seed) {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw std::invalid_argument("mixup_fixed: lambda must be in [0, 1]");
  std::uint64_t state = seed;
  (void)splitmix64(state);  // keep stream alignment with mixup()
  const std::uint64_t noise_seed = splitmix64(state);
  return mixup_impl(real, interp, lambda, noise_sigma, noise_seed);
}

}  // namespace minkgeo
