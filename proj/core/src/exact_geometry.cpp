#include "minkgeo/exact_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace minkgeo {

namespace {
constexpr double kSqrt2 = 1.4142135623730951;
constexpr double kPi = 3.14159265358979323846;
}  // namespace

ExcursionSet excursion(const Field2D& field, double u) {
  if (!std::isfinite(u)) throw std::invalid_argument("excursion: threshold must be finite");
  ExcursionSet set;
  set.height = field.height();
  set.width = field.width();
  set.threshold = u;
  set.pixel_size = field.pixel_size();
  set.mask.resize(field.size());
  auto v = field.values();
  for (std::size_t i = 0; i < v.size(); ++i) set.mask[i] = v[i] > u ? 1 : 0;
  return set;
}

double area(const ExcursionSet& set) {
  std::size_t count = 0;
  for (auto m : set.mask) count += m;
  return static_cast<double>(count) * set.pixel_size * set.pixel_size;
}

double perimeter_marching_squares(const ExcursionSet& set) {
  const int h = set.height, w = set.width;
  auto at = [&](int r, int c) -> int {
    if (r < 0 || r >= h || c < 0 || c >= w) return 0;
    return set.mask[r * w + c];
  };

  // March the (h+1)x(w+1) cells between pixel centers of the padded grid.
  double length = 0.0;
  for (int r = -1; r < h; ++r) {
    for (int c = -1; c < w; ++c) {
      const int tl = at(r, c), tr = at(r, c + 1);
      const int bl = at(r + 1, c), br = at(r + 1, c + 1);
      const int n = tl + tr + bl + br;
      if (n == 0 || n == 4) continue;
      if (n == 1 || n == 3) {
        length += 0.5 * kSqrt2;  // one corner cut through two edge midpoints
      } else if ((tl && br) || (tr && bl)) {
        length += kSqrt2;        // saddle: two corner cuts either way
      } else {
        length += 1.0;           // straight crossing between opposite edges
      }
    }
  }
  return length * set.pixel_size;
}

double perimeter_marching_squares(const Field2D& field, double u) {
  return perimeter_marching_squares(excursion(field, u));
}

int connected_components_floodfill(const ExcursionSet& set) {
  const int h = set.height, w = set.width;
  std::vector<std::uint8_t> visited(set.mask.size(), 0);
  std::vector<int> stack;
  int components = 0;
  for (int start = 0; start < h * w; ++start) {
    if (!set.mask[start] || visited[start]) continue;
    ++components;
    stack.push_back(start);
    visited[start] = 1;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int r = p / w, c = p % w;
      const int nbr[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (auto& [nr, nc] : nbr) {
        if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
        const int q = nr * w + nc;
        if (set.mask[q] && !visited[q]) {
          visited[q] = 1;
          stack.push_back(q);
        }
      }
    }
  }
  return components;
}

int euler_characteristic_exact(const ExcursionSet& set) {
  const int h = set.height, w = set.width;
  auto at = [&](int r, int c) -> bool {
    if (r < 0 || r >= h || c < 0 || c >= w) return false;
    return set.mask[r * w + c] != 0;
  };

  // Intersection (t-norm) cell semantics: an edge is present iff both its
  // incident pixels are wet, a vertex iff its whole 2x2 pixel neighbourhood
  // is wet (the conceptual padding is dry). This is the Euler formula of
  // the (4, 8) digital topology, so chi equals 4-connected components minus
  // 8-connected complement holes on every mask.
  long faces = 0;
  for (auto m : set.mask) faces += m;

  long edges = 0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (!at(r, c)) continue;
      if (at(r, c + 1)) ++edges;
      if (at(r + 1, c)) ++edges;
    }

  long vertices = 0;
  for (int r = 0; r + 1 < h; ++r)
    for (int c = 0; c + 1 < w; ++c)
      if (at(r, c) && at(r, c + 1) && at(r + 1, c) && at(r + 1, c + 1))
        ++vertices;

  return static_cast<int>(vertices - edges + faces);
}

int hole_count(const ExcursionSet& set) {
  const int h = set.height, w = set.width;
  // Flood the complement from the border with 8-connectivity; remaining
  // complement components are the bounded holes.
  std::vector<std::uint8_t> visited(set.mask.size(), 0);
  std::vector<int> stack;

  auto flood = [&](int start) {
    stack.push_back(start);
    visited[start] = 1;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int r = p / w, c = p % w;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          const int nr = r + dr, nc = c + dc;
          if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
          const int q = nr * w + nc;
          if (!set.mask[q] && !visited[q]) {
            visited[q] = 1;
            stack.push_back(q);
          }
        }
    }
  };

  for (int c = 0; c < w; ++c) {
    if (!set.mask[c] && !visited[c]) flood(c);
    const int b = (h - 1) * w + c;
    if (!set.mask[b] && !visited[b]) flood(b);
  }
  for (int r = 0; r < h; ++r) {
    const int l = r * w;
    if (!set.mask[l] && !visited[l]) flood(l);
    const int rt = r * w + (w - 1);
    if (!set.mask[rt] && !visited[rt]) flood(rt);
  }

  int holes = 0;
  for (int p = 0; p < h * w; ++p) {
    if (set.mask[p] || visited[p]) continue;
    ++holes;
    flood(p);
  }
  return holes;
}

namespace {

// Felzenszwalb-Huttenlocher 1-D squared distance transform.
void edt_1d(const std::vector<double>& f, std::vector<double>& d, int n,
            std::vector<int>& v, std::vector<double>& z) {
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s;
    for (;;) {
      s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    d[q] = (q - v[k]) * (q - v[k]) + f[v[k]];
  }
}

// Squared Euclidean distance (pixel units) from the nearest mask pixel.
std::vector<double> edt_squared(const std::vector<std::uint8_t>& mask, int h, int w) {
  constexpr double kInf = 1e18;
  std::vector<double> dist(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) dist[i] = mask[i] ? 0.0 : kInf;

  const int n = std::max(h, w);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);

  for (int c = 0; c < w; ++c) {
    for (int r = 0; r < h; ++r) f[r] = dist[r * w + c];
    edt_1d(f, d, h, v, z);
    for (int r = 0; r < h; ++r) dist[r * w + c] = d[r];
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) f[c] = dist[r * w + c];
    edt_1d(f, d, w, v, z);
    for (int c = 0; c < w; ++c) dist[r * w + c] = d[c];
  }
  return dist;
}

}  // namespace

std::vector<SteinerSample> steiner_check(std::span<const double> radii,
                                         double disk_radius, int resolution) {
  if (!(disk_radius > 0.0))
    throw std::invalid_argument("steiner_check: disk_radius must be > 0");
  if (resolution < 16)
    throw std::invalid_argument("steiner_check: resolution too small");
  double rmax = 0.0;
  for (double r : radii) {
    if (!(r >= 0.0)) throw std::invalid_argument("steiner_check: radii must be >= 0");
    rmax = std::max(rmax, r);
  }
  const double px = 1.0 / resolution;
  if (disk_radius + rmax >= 0.5 - 2.0 * px)
    throw std::invalid_argument("steiner_check: dilated disk does not fit the domain");

  ExcursionSet disk;
  disk.height = resolution;
  disk.width = resolution;
  disk.threshold = 0.5;
  disk.pixel_size = px;
  disk.mask.resize(static_cast<std::size_t>(resolution) * resolution);
  for (int r = 0; r < resolution; ++r) {
    const double y = (r + 0.5) * px - 0.5;
    for (int c = 0; c < resolution; ++c) {
      const double x = (c + 0.5) * px - 0.5;
      disk.mask[static_cast<std::size_t>(r) * resolution + c] =
          (x * x + y * y <= disk_radius * disk_radius) ? 1 : 0;
    }
  }

  const double a0 = area(disk);
  const double p0 = perimeter_marching_squares(disk);
  const double chi0 = euler_characteristic_exact(disk);

  const std::vector<double> d2 = edt_squared(disk.mask, resolution, resolution);

  std::vector<SteinerSample> out;
  out.reserve(radii.size());
  for (double r : radii) {
    const double r_px2 = (r / px) * (r / px);
    std::size_t count = 0;
    for (double d : d2)
      if (d <= r_px2) ++count;
    SteinerSample s;
    s.radius = r;
    s.measured_area = static_cast<double>(count) * px * px;
    s.polynomial_area = a0 + p0 * r + chi0 * kPi * r * r;
    out.push_back(s);
  }
  return out;
}

}  // namespace minkgeo
