#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "minkgeo/field.hpp"

namespace minkgeo {

struct PersistencePair {
  double birth;  // value at which the component appears (its peak)
  double death;  // merge saddle value; birth > death for finite pairs
};

/// 0-dimensional persistence of the superlevel filtration. Exactly one
/// component survives the full sweep; it is flagged here rather than stored
/// with an infinite death so the arithmetic stays finite. Its birth is the
/// global maximum and its recorded death the global minimum.
struct PersistenceDiagram {
  std::vector<PersistencePair> finite_pairs;
  bool has_infinite = false;
  double infinite_birth = 0.0;
  double global_min = 0.0;
};

/// Union-find sweep over pixels sorted by descending value (ties row-major),
/// 4-connectivity, elder rule: at a merge the component with the higher
/// birth survives (birth ties broken by the peak's row-major index).
PersistenceDiagram superlevel_persistence_0d(const Field2D& field);

/// Number of components of the excursion set at u, counted from the diagram:
/// finite pairs with death <= u < birth and lifetime >= epsilon, plus the
/// infinite component when u <= infinite_cutoff and u < global max.
int count_components_at(const PersistenceDiagram& diagram, double u,
                        double epsilon, double infinite_cutoff);

struct LifetimeHistogram {
  std::vector<double> bin_edges;       // n_bins + 1
  std::vector<std::int64_t> counts;    // n_bins
  double knee_epsilon = 0.0;           // suggested noise threshold
};

/// Histogram of finite-pair lifetimes across diagrams, plus the maximum
/// curvature point of the cumulative curve as a suggested epsilon.
LifetimeHistogram lifetime_histogram(std::span<const PersistenceDiagram> diagrams,
                                     int n_bins);

}  // namespace minkgeo
