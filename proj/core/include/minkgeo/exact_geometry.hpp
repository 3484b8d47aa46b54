#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "minkgeo/field.hpp"

namespace minkgeo {

/// Binary excursion set E_u = { pixels with value > u } (strict inequality).
struct ExcursionSet {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> mask;  // 1 where value > threshold
  double threshold = 0.0;
  double pixel_size = 1.0;

  bool at(int row, int col) const { return mask[row * width + col] != 0; }
};

ExcursionSet excursion(const Field2D& field, double u);

/// Wet-pixel count times pixel area (km^2).
double area(const ExcursionSet& set);

/// Total Euclidean length of the 0.5-level marching-squares contour of the
/// binary indicator, scaled by pixel_size (km). The domain is conceptually
/// padded with dry pixels, so blobs touching the frame contribute perimeter
/// along the frame. Saddle cells (two diagonal corners set) are resolved by
/// cell-center averaging: the corner mean is exactly 0.5, which connects the
/// foreground; both resolutions contribute the same length sqrt(2).
double perimeter_marching_squares(const ExcursionSet& set);
double perimeter_marching_squares(const Field2D& field, double u);

/// Number of 4-connected foreground components.
int connected_components_floodfill(const ExcursionSet& set);

/// V - E + F on the pixel complex with intersection semantics: a face per
/// wet pixel, an edge where two 4-neighbours are both wet, a vertex where a
/// full 2x2 block is wet. Under the (4, 8) connectivity pairing this equals
/// connected components minus holes on every mask.
int euler_characteristic_exact(const ExcursionSet& set);

/// Bounded complement components under 8-connectivity of the complement
/// (dual pairing to the 4-connected foreground).
int hole_count(const ExcursionSet& set);

/// Rasterized dilation area of a disk versus the Steiner polynomial
/// A + P r + chi pi r^2. The disk is rasterized on a resolution^2 grid over
/// the unit square; A/P/chi on the right-hand side are the measured values
/// of the rasterized disk. Both sides are returned so the caller asserts a
/// tolerance.
struct SteinerSample {
  double radius;           // dilation radius, domain units
  double measured_area;    // area of the EDT-dilated raster set
  double polynomial_area;  // A + P r + chi pi r^2
};
std::vector<SteinerSample> steiner_check(std::span<const double> radii,
                                         double disk_radius, int resolution);

}  // namespace minkgeo
