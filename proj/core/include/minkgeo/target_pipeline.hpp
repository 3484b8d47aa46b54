#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "minkgeo/defaults.hpp"
#include "minkgeo/field.hpp"

namespace minkgeo {

/// Quantile levels mapped to empirical physical thresholds (mm/h).
struct ThresholdSpec {
  std::vector<double> quantile_levels;      // ascending, in (0,1)
  std::vector<double> physical_thresholds;  // strictly ascending, same length
  std::int64_t sample_cap = defaults::kSampleCap;
  double drizzle_threshold = defaults::kDrizzleThreshold;

  int n_levels() const { return static_cast<int>(physical_thresholds.size()); }
  void validate() const;
};

/// Multi-level descriptor [A,P,CC] per threshold, optionally with hole counts.
struct GammaVector {
  int n_levels = 0;
  std::vector<double> entries;  // 3N, interleaved [A1,P1,CC1,...]
  std::vector<double> holes;    // N when requested, else empty

  double area(int level) const { return entries[3 * level]; }
  double perimeter(int level) const { return entries[3 * level + 1]; }
  double components(int level) const { return entries[3 * level + 2]; }

  void validate() const;
};

/// Empirical quantile with linear interpolation between order statistics
/// (type-7 convention). `sorted` must be ascending and non-empty.
double quantile_type7(std::span<const double> sorted, double q);

/// Reservoir-sample up to `cap` wet pixels (value > drizzle) from the corpus
/// and map each quantile level to the empirical physical threshold.
/// Deterministic given the corpus order and seed.
ThresholdSpec calibrate_thresholds(std::span<const Field2D> corpus,
                                   std::span<const double> levels,
                                   std::int64_t cap, std::uint64_t seed,
                                   double drizzle = defaults::kDrizzleThreshold);

/// Streaming variant: `next` yields fields until it returns nullopt.
ThresholdSpec calibrate_thresholds(
    const std::function<std::optional<Field2D>()>& next,
    std::span<const double> levels, std::int64_t cap, std::uint64_t seed,
    double drizzle = defaults::kDrizzleThreshold);

/// Exact descriptor extraction: area and marching-squares perimeter per
/// excursion set, component counts from one persistence diagram shared
/// across all levels. Requires physical units.
GammaVector gamma_exact(const Field2D& field, const ThresholdSpec& spec,
                        double epsilon = defaults::kPersistenceEpsilon,
                        double infinite_cutoff = defaults::kInfiniteCutoff,
                        bool with_holes = false);

struct TargetGenConfig {
  ThresholdSpec spec;
  double epsilon = defaults::kPersistenceEpsilon;
  double infinite_cutoff = defaults::kInfiniteCutoff;
  bool with_holes = false;
  int workers = 1;
};

struct TargetGenSummary {
  std::int64_t n_fields = 0;
  std::int64_t n_skipped = 0;
  std::array<double, 3> component_mean = {0, 0, 0};  // A, P, CC
  std::array<double, 3> component_max = {0, 0, 0};
  double isoperimetric_violation_rate = 0.0;  // exact targets with P^2 < 4piA
};

// Chunked on-disk store: <out>/manifest.json plus gamma_<k>.bin chunks of
// contiguous f64 LE rows (3N, +N when holes are kept), 4096 rows per chunk.
inline constexpr int kStoreRowsPerChunk = 4096;
inline constexpr const char* kStoreFormat = "MGSTORE01";

/// Compute and store the gamma vector of every readable raster in
/// `corpus_dir` (sorted file order). Unreadable rasters are skipped and
/// counted. Byte-identical output for any worker count; re-runs overwrite
/// identical content.
TargetGenSummary generate_targets(const std::filesystem::path& corpus_dir,
                                  const std::filesystem::path& out_store,
                                  const TargetGenConfig& config);

struct GammaStore {
  int n_levels = 0;
  bool with_holes = false;
  std::vector<std::string> field_files;  // relative to corpus_dir
  std::string corpus_dir;
  std::vector<std::vector<double>> rows;
  ThresholdSpec spec;
  double epsilon = 0.0;
  double infinite_cutoff = 0.0;
};

/// Load a store and verify every chunk checksum; partial writes surface as
/// IoError::checksum_mismatch.
GammaStore load_store(const std::filesystem::path& store_dir);

}  // namespace minkgeo
