#include "minkgeo/analytic_surrogate.hpp"

#include <cmath>
#include <stdexcept>

namespace minkgeo {

using ad::Tape;
using ad::Var;

void SoftGeomConfig::validate() const {
  if (!(tau > 0.0)) throw std::invalid_argument("SoftGeomConfig: tau must be > 0");
  if (!(tau_mask > 0.0))
    throw std::invalid_argument("SoftGeomConfig: tau_mask must be > 0");
  if (!(persistence_delta >= 0.0))
    throw std::invalid_argument("SoftGeomConfig: persistence_delta must be >= 0");
  if (thresholds.empty())
    throw std::invalid_argument("SoftGeomConfig: thresholds required");
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (!(thresholds[i] > thresholds[i - 1]))
      throw std::invalid_argument("SoftGeomConfig: thresholds must ascend");
  if (anneal.kind == AnnealSchedule::Kind::geometric) {
    if (!(anneal.ratio > 0.0))
      throw std::invalid_argument("SoftGeomConfig: anneal ratio must be > 0");
    if (!(anneal.floor > 0.0))
      throw std::invalid_argument("SoftGeomConfig: anneal floor must be > 0");
  }
}

Var soft_indicator(Tape& t, Var field, double u, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("soft_indicator: tau must be > 0");
  return t.sigmoid(t.scale(t.sub(field, t.scalar(u)), 1.0 / tau));
}

Var soft_area(Tape& t, Var probs, double pixel_size) {
  return t.scale(t.sum(probs), pixel_size * pixel_size);
}

namespace {

// Constant 0/1 grid with the given column or row zeroed.
Var mask_without_col(Tape& t, int h, int w, int col) {
  std::vector<double> m(static_cast<std::size_t>(h) * w, 1.0);
  for (int r = 0; r < h; ++r) m[static_cast<std::size_t>(r) * w + col] = 0.0;
  return t.grid(h, w, m);
}

Var mask_without_row(Tape& t, int h, int w, int row) {
  std::vector<double> m(static_cast<std::size_t>(h) * w, 1.0);
  for (int c = 0; c < w; ++c) m[static_cast<std::size_t>(row) * w + c] = 0.0;
  return t.grid(h, w, m);
}

}  // namespace

Var l1_total_variation(Tape& t, Var g) {
  const int h = g.shape.rows, w = g.shape.cols;
  Var total = t.scalar(0.0);
  if (w > 1) {
    // d(i,j) = x(i,j+1) - x(i,j); the last column compares against the
    // zero pad and is masked out.
    Var dx = t.sub(t.shift(g, 0, -1), g);
    total = t.add(total, t.sum(t.abs(t.mul(dx, mask_without_col(t, h, w, w - 1)))));
  }
  if (h > 1) {
    Var dy = t.sub(t.shift(g, -1, 0), g);
    total = t.add(total, t.sum(t.abs(t.mul(dy, mask_without_row(t, h, w, h - 1)))));
  }
  return total;
}

Var soft_perimeter(Tape& t, Var probs, double pixel_size) {
  return t.scale(l1_total_variation(t, probs), pixel_size);
}

Var soft_euler(Tape& t, Var p) {
  // Intersection (Godel t-norm) cell semantics on non-negative
  // pseudo-probabilities: an edge is the min of its two incident pixels, a
  // vertex the min over its 2x2 block. The zero padding of shift supplies
  // the dry frame, so boundary cells vanish through min(p, 0) = 0. Matches
  // euler_characteristic_exact on binary inputs.
  Var ex = t.min2(p, t.shift(p, 0, 1));  // pairs (i,j) ~ (i,j-1)
  Var ey = t.min2(p, t.shift(p, 1, 0));  // pairs (i,j) ~ (i-1,j)
  Var verts = t.min2(ex, t.shift(ex, 1, 0));  // 2x2 block minima

  Var faces = t.sum(p);
  Var edges = t.add(t.sum(ex), t.sum(ey));
  return t.add(t.sub(t.sum(verts), edges), faces);
}

namespace {

Var stencil3(Tape& t, Var g, bool take_max) {
  Var acc = g;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      if (dy == 0 && dx == 0) continue;
      Var s = t.shift(g, dy, dx);
      acc = take_max ? t.max2(acc, s) : t.min2(acc, s);
    }
  }
  return acc;
}

}  // namespace

Var morph_prefilter(Tape& t, Var field) {
  Var eroded = stencil3(t, field, /*take_max=*/false);
  return stencil3(t, eroded, /*take_max=*/true);
}

Var persistence_mask(Tape& t, Var field, double delta, double tau_mask) {
  if (!(delta >= 0.0))
    throw std::invalid_argument("persistence_mask: delta must be >= 0");
  if (!(tau_mask > 0.0))
    throw std::invalid_argument("persistence_mask: tau_mask must be > 0");
  Var peak = stencil3(t, field, /*take_max=*/true);
  return t.sigmoid(t.scale(t.sub(peak, t.scalar(delta)), 1.0 / tau_mask));
}

Var gamma_soft(Tape& t, Var field, const SoftGeomConfig& cfg, double pixel_size) {
  cfg.validate();
  Var x = cfg.use_morph_filter ? morph_prefilter(t, field) : field;
  bool masked = cfg.persistence_delta > 0.0;
  Var mask{};
  if (masked) mask = persistence_mask(t, x, cfg.persistence_delta, cfg.tau_mask);

  std::vector<Var> parts;
  parts.reserve(3 * cfg.thresholds.size());
  for (double u : cfg.thresholds) {
    Var p = soft_indicator(t, x, u, cfg.tau);
    if (masked) p = t.mul(p, mask);
    parts.push_back(soft_area(t, p, pixel_size));
    parts.push_back(soft_perimeter(t, p, pixel_size));
    parts.push_back(t.symlog(soft_euler(t, p)));
  }
  return t.concat(parts);
}

double anneal_tau(const SoftGeomConfig& cfg, int epoch) {
  if (cfg.anneal.kind != AnnealSchedule::Kind::geometric) return cfg.tau;
  if (epoch < 0) throw std::invalid_argument("anneal_tau: epoch must be >= 0");
  return std::max(cfg.anneal.floor, cfg.tau * std::pow(cfg.anneal.ratio, epoch));
}

std::vector<double> gamma_soft_values(const Field2D& field,
                                      const SoftGeomConfig& cfg) {
  Tape tape;
  Var x = tape.grid(field.height(), field.width(), field.values());
  Var gamma = gamma_soft(tape, x, cfg, field.pixel_size());
  auto v = tape.value(gamma);
  return std::vector<double>(v.begin(), v.end());
}

}  // namespace minkgeo
