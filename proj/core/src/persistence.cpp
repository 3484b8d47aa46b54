#include "minkgeo/persistence.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace minkgeo {

namespace {

struct UnionFind {
  std::vector<int> parent;      // -1 = pixel not yet activated
  std::vector<double> birth;    // per root: birth value
  std::vector<int> peak;        // per root: row-major index of the peak

  explicit UnionFind(int n) : parent(n, -1), birth(n, 0.0), peak(n, 0) {}

  int find(int x) {
    int root = x;
    while (parent[root] != root) root = parent[root];
    while (parent[x] != root) {
      const int next = parent[x];
      parent[x] = root;
      x = next;
    }
    return root;
  }
};

}  // namespace

PersistenceDiagram superlevel_persistence_0d(const Field2D& field) {
  const int h = field.height(), w = field.width();
  const int n = h * w;
  auto values = field.values();

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (values[a] != values[b]) return values[a] > values[b];
    return a < b;
  });

  UnionFind uf(n);
  PersistenceDiagram diagram;

  auto is_elder = [&](int ra, int rb) {
    // Elder rule: higher birth survives; birth ties go to the smaller
    // row-major peak index.
    return uf.birth[ra] != uf.birth[rb] ? uf.birth[ra] > uf.birth[rb]
                                        : uf.peak[ra] < uf.peak[rb];
  };

  for (int p : order) {
    const double v = values[p];
    const int r = p / w, c = p % w;
    const int nbr[4] = {r > 0 ? p - w : -1, c > 0 ? p - 1 : -1,
                        c < w - 1 ? p + 1 : -1, r < h - 1 ? p + w : -1};

    // A component is born only at a pixel with no active neighbour (a local
    // maximum of the filtration); otherwise the pixel joins the eldest
    // adjacent component and the remaining ones die at this saddle.
    int elder = -1;
    for (int q : nbr) {
      if (q < 0 || uf.parent[q] < 0) continue;
      const int root = uf.find(q);
      if (root == elder) continue;
      if (elder < 0 || is_elder(root, elder)) {
        if (elder >= 0) {
          diagram.finite_pairs.push_back({uf.birth[elder], v});
          uf.parent[elder] = root;
        }
        elder = root;
      } else {
        diagram.finite_pairs.push_back({uf.birth[root], v});
        uf.parent[root] = elder;
      }
    }
    if (elder < 0) {
      uf.parent[p] = p;
      uf.birth[p] = v;
      uf.peak[p] = p;
    } else {
      uf.parent[p] = elder;
    }
  }

  if (n > 0) {
    diagram.has_infinite = true;
    const int root = uf.find(order.front());
    diagram.infinite_birth = uf.birth[root];
    diagram.global_min = values[order.back()];
  }
  return diagram;
}

int count_components_at(const PersistenceDiagram& diagram, double u,
                        double epsilon, double infinite_cutoff) {
  if (!(epsilon >= 0.0))
    throw std::invalid_argument("count_components_at: epsilon must be >= 0");
  int count = 0;
  for (const auto& pair : diagram.finite_pairs) {
    if (pair.death <= u && u < pair.birth && (pair.birth - pair.death) >= epsilon)
      ++count;
  }
  if (diagram.has_infinite && u <= infinite_cutoff && u < diagram.infinite_birth)
    ++count;
  return count;
}

LifetimeHistogram lifetime_histogram(std::span<const PersistenceDiagram> diagrams,
                                     int n_bins) {
  if (n_bins < 2)
    throw std::invalid_argument("lifetime_histogram: n_bins must be >= 2");
  std::vector<double> lifetimes;
  for (const auto& d : diagrams)
    for (const auto& p : d.finite_pairs) lifetimes.push_back(p.birth - p.death);
  if (lifetimes.empty())
    throw std::invalid_argument("lifetime_histogram: no finite pairs in input");

  const auto [mn_it, mx_it] = std::minmax_element(lifetimes.begin(), lifetimes.end());
  double lo = *mn_it, hi = *mx_it;
  if (hi == lo) hi = lo + 1.0;  // degenerate spread: everything in bin 0

  LifetimeHistogram hist;
  hist.bin_edges.resize(n_bins + 1);
  hist.counts.assign(n_bins, 0);
  for (int i = 0; i <= n_bins; ++i)
    hist.bin_edges[i] = lo + (hi - lo) * static_cast<double>(i) / n_bins;
  for (double t : lifetimes) {
    int b = static_cast<int>((t - lo) / (hi - lo) * n_bins);
    b = std::clamp(b, 0, n_bins - 1);
    ++hist.counts[b];
  }

  // Knee of the normalized cumulative curve: maximum discrete curvature.
  std::vector<double> cum(n_bins);
  double total = static_cast<double>(lifetimes.size());
  double acc = 0.0;
  for (int i = 0; i < n_bins; ++i) {
    acc += static_cast<double>(hist.counts[i]);
    cum[i] = acc / total;
  }
  const double dx = 1.0 / n_bins;
  double best = -1.0;
  int best_i = 0;
  for (int i = 1; i + 1 < n_bins; ++i) {
    const double d1 = (cum[i + 1] - cum[i - 1]) / (2.0 * dx);
    const double d2 = (cum[i + 1] - 2.0 * cum[i] + cum[i - 1]) / (dx * dx);
    const double kappa = std::abs(d2) / std::pow(1.0 + d1 * d1, 1.5);
    if (kappa > best) {
      best = kappa;
      best_i = i;
    }
  }
  hist.knee_epsilon = 0.5 * (hist.bin_edges[best_i] + hist.bin_edges[best_i + 1]);
  return hist;
}

}  // namespace minkgeo
