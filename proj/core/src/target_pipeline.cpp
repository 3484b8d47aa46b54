#include "minkgeo/target_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "minkgeo/errors.hpp"
#include "minkgeo/exact_geometry.hpp"
#include "minkgeo/persistence.hpp"
#include "minkgeo/raster_io.hpp"
#include "minkgeo/rng.hpp"

namespace minkgeo {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

void ThresholdSpec::validate() const {
  if (quantile_levels.size() != physical_thresholds.size())
    throw std::invalid_argument("ThresholdSpec: level/threshold lengths differ");
  if (physical_thresholds.empty())
    throw std::invalid_argument("ThresholdSpec: at least one level required");
  for (std::size_t i = 0; i < quantile_levels.size(); ++i) {
    if (!(quantile_levels[i] > 0.0 && quantile_levels[i] < 1.0))
      throw std::invalid_argument("ThresholdSpec: quantile levels must be in (0,1)");
    if (i > 0 && !(quantile_levels[i] > quantile_levels[i - 1]))
      throw std::invalid_argument("ThresholdSpec: quantile levels must ascend");
    if (i > 0 && !(physical_thresholds[i] > physical_thresholds[i - 1]))
      throw std::invalid_argument(
          "ThresholdSpec: physical thresholds must strictly ascend");
  }
  if (sample_cap <= 0)
    throw std::invalid_argument("ThresholdSpec: sample_cap must be positive");
  if (!(drizzle_threshold >= 0.0))
    throw std::invalid_argument("ThresholdSpec: drizzle threshold must be >= 0");
}

void GammaVector::validate() const {
  if (entries.size() != static_cast<std::size_t>(3 * n_levels))
    throw std::invalid_argument("GammaVector: entries length must be 3*n_levels");
  if (!holes.empty() && holes.size() != static_cast<std::size_t>(n_levels))
    throw std::invalid_argument("GammaVector: holes length must be n_levels");
  for (double v : entries)
    if (!(v >= 0.0)) throw std::invalid_argument("GammaVector: negative entry");
  for (int i = 1; i < n_levels; ++i)
    if (area(i) > area(i - 1) + 1e-12)
      throw std::invalid_argument("GammaVector: area sub-vector must not increase");
}

double quantile_type7(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile_type7: empty sample");
  if (!(q >= 0.0 && q <= 1.0))
    throw std::invalid_argument("quantile_type7: q must be in [0,1]");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

namespace {

ThresholdSpec calibrate_impl(const std::function<std::optional<Field2D>()>& next,
                             std::span<const double> levels, std::int64_t cap,
                             std::uint64_t seed, double drizzle) {
  if (levels.empty())
    throw std::invalid_argument("calibrate_thresholds: no quantile levels");
  if (cap <= 0) throw std::invalid_argument("calibrate_thresholds: cap must be > 0");

  Rng rng(seed);
  std::vector<double> reservoir;
  reservoir.reserve(static_cast<std::size_t>(std::min<std::int64_t>(cap, 1 << 22)));
  std::int64_t seen = 0;

  // Algorithm R over the stream of wet pixels.
  while (auto field = next()) {
    for (double v : field->values()) {
      if (!(v > drizzle)) continue;
      if (seen < cap) {
        reservoir.push_back(v);
      } else {
        const std::uint64_t j = rng.uniform_index(static_cast<std::uint64_t>(seen) + 1);
        if (j < static_cast<std::uint64_t>(cap)) reservoir[j] = v;
      }
      ++seen;
    }
  }
  if (reservoir.empty())
    throw std::invalid_argument("calibrate_thresholds: corpus has no wet pixels");

  std::sort(reservoir.begin(), reservoir.end());

  ThresholdSpec spec;
  spec.quantile_levels.assign(levels.begin(), levels.end());
  spec.sample_cap = cap;
  spec.drizzle_threshold = drizzle;
  for (double q : levels)
    spec.physical_thresholds.push_back(quantile_type7(reservoir, q));
  spec.validate();  // rejects tied thresholds from degenerate corpora
  return spec;
}

}  // namespace

ThresholdSpec calibrate_thresholds(std::span<const Field2D> corpus,
                                   std::span<const double> levels,
                                   std::int64_t cap, std::uint64_t seed,
                                   double drizzle) {
  std::size_t i = 0;
  auto next = [&]() -> std::optional<Field2D> {
    if (i >= corpus.size()) return std::nullopt;
    return corpus[i++];
  };
  return calibrate_impl(next, levels, cap, seed, drizzle);
}

ThresholdSpec calibrate_thresholds(
    const std::function<std::optional<Field2D>()>& next,
    std::span<const double> levels, std::int64_t cap, std::uint64_t seed,
    double drizzle) {
  return calibrate_impl(next, levels, cap, seed, drizzle);
}

GammaVector gamma_exact(const Field2D& field, const ThresholdSpec& spec,
                        double epsilon, double infinite_cutoff, bool with_holes) {
  spec.validate();
  if (field.units() != Units::physical)
    throw std::invalid_argument("gamma_exact: field must be in physical units");

  const PersistenceDiagram diagram = superlevel_persistence_0d(field);

  GammaVector gamma;
  gamma.n_levels = spec.n_levels();
  gamma.entries.reserve(3 * gamma.n_levels);
  if (with_holes) gamma.holes.reserve(gamma.n_levels);

  for (double u : spec.physical_thresholds) {
    const ExcursionSet set = excursion(field, u);
    gamma.entries.push_back(area(set));
    gamma.entries.push_back(perimeter_marching_squares(set));
    gamma.entries.push_back(static_cast<double>(
        count_components_at(diagram, u, epsilon, infinite_cutoff)));
    if (with_holes) gamma.holes.push_back(static_cast<double>(hole_count(set)));
  }
  gamma.validate();
  return gamma;
}

namespace {

std::vector<std::filesystem::path> list_rasters(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  if (!std::filesystem::is_directory(dir))
    throw IoError(IoError::Code::read_failure,
                  "generate_targets: corpus dir not found: " + dir.string());
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".mgf")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

}  // namespace

TargetGenSummary generate_targets(const std::filesystem::path& corpus_dir,
                                  const std::filesystem::path& out_store,
                                  const TargetGenConfig& config) {
  config.spec.validate();
  if (config.workers < 1)
    throw std::invalid_argument("generate_targets: workers must be >= 1");

  const auto all_files = list_rasters(corpus_dir);

  // Pass 1: sequential validity scan so row indices are deterministic no
  // matter how many workers run pass 2.
  std::vector<std::filesystem::path> valid;
  TargetGenSummary summary;
  for (const auto& path : all_files) {
    try {
      (void)read_raster(path);
      valid.push_back(path);
    } catch (const std::exception& e) {
      ++summary.n_skipped;
      std::cerr << "generate_targets: skipping " << path.string() << ": "
                << e.what() << "\n";
    }
  }
  summary.n_fields = static_cast<std::int64_t>(valid.size());

  const int n_levels = config.spec.n_levels();
  const int row_len = 3 * n_levels + (config.with_holes ? n_levels : 0);
  const std::size_t n_rows = valid.size();
  const std::size_t n_chunks = (n_rows + kStoreRowsPerChunk - 1) / kStoreRowsPerChunk;

  std::filesystem::create_directories(out_store);

  std::vector<std::string> chunk_checksums(n_chunks);
  std::vector<std::size_t> chunk_rows(n_chunks, 0);

  auto process_chunk = [&](std::size_t k) {
    const std::size_t row0 = k * kStoreRowsPerChunk;
    const std::size_t row1 = std::min(n_rows, row0 + kStoreRowsPerChunk);
    std::vector<double> block((row1 - row0) * row_len);
    for (std::size_t row = row0; row < row1; ++row) {
      const Field2D field = read_raster(valid[row]);
      const GammaVector g = gamma_exact(field, config.spec, config.epsilon,
                                        config.infinite_cutoff, config.with_holes);
      double* dst = block.data() + (row - row0) * row_len;
      std::memcpy(dst, g.entries.data(), 3 * n_levels * sizeof(double));
      if (config.with_holes)
        std::memcpy(dst + 3 * n_levels, g.holes.data(), n_levels * sizeof(double));
    }
    const std::filesystem::path chunk_path =
        out_store / ("gamma_" + std::to_string(k) + ".bin");
    std::ofstream out(chunk_path, std::ios::binary | std::ios::trunc);
    if (!out)
      throw IoError(IoError::Code::write_failure,
                    "generate_targets: cannot write " + chunk_path.string());
    out.write(reinterpret_cast<const char*>(block.data()),
              static_cast<std::streamsize>(block.size() * sizeof(double)));
    out.close();
    chunk_checksums[k] = hex64(fnv1a64(block.data(), block.size() * sizeof(double)));
    chunk_rows[k] = row1 - row0;
  };

  if (config.workers == 1 || n_chunks <= 1) {
    for (std::size_t k = 0; k < n_chunks; ++k) process_chunk(k);
  } else {
    const int n_threads = std::min<std::size_t>(config.workers, n_chunks);
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(n_threads);
    for (int t = 0; t < n_threads; ++t) {
      pool.emplace_back([&, t]() {
        try {
          for (std::size_t k = t; k < n_chunks; k += n_threads) process_chunk(k);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  // Summary statistics over the written rows.
  std::array<double, 3> sum = {0, 0, 0};
  std::size_t violations = 0, pairs = 0;
  for (std::size_t k = 0; k < n_chunks; ++k) {
    std::ifstream in(out_store / ("gamma_" + std::to_string(k) + ".bin"),
                     std::ios::binary);
    std::vector<double> block(chunk_rows[k] * row_len);
    in.read(reinterpret_cast<char*>(block.data()),
            static_cast<std::streamsize>(block.size() * sizeof(double)));
    for (std::size_t row = 0; row < chunk_rows[k]; ++row) {
      const double* g = block.data() + row * row_len;
      for (int i = 0; i < n_levels; ++i) {
        const double a = g[3 * i], p = g[3 * i + 1], cc = g[3 * i + 2];
        sum[0] += a;
        sum[1] += p;
        sum[2] += cc;
        summary.component_max[0] = std::max(summary.component_max[0], a);
        summary.component_max[1] = std::max(summary.component_max[1], p);
        summary.component_max[2] = std::max(summary.component_max[2], cc);
        ++pairs;
        if (p * p < 4.0 * kPi * a * (1.0 - 1e-9)) ++violations;
      }
    }
  }
  if (pairs > 0) {
    for (int c = 0; c < 3; ++c)
      summary.component_mean[c] = sum[c] / static_cast<double>(pairs);
    summary.isoperimetric_violation_rate =
        static_cast<double>(violations) / static_cast<double>(pairs);
  }

  nlohmann::json manifest;
  manifest["format"] = kStoreFormat;
  manifest["n_fields"] = summary.n_fields;
  manifest["n_skipped"] = summary.n_skipped;
  manifest["n_levels"] = n_levels;
  manifest["row_length"] = row_len;
  manifest["rows_per_chunk"] = kStoreRowsPerChunk;
  manifest["component_order"] = config.with_holes ? "A,P,CC,H" : "A,P,CC";
  manifest["with_holes"] = config.with_holes;
  manifest["corpus_dir"] = corpus_dir.string();
  nlohmann::json files = nlohmann::json::array();
  for (const auto& p : valid) files.push_back(p.filename().string());
  manifest["fields"] = files;
  nlohmann::json chunks = nlohmann::json::array();
  for (std::size_t k = 0; k < n_chunks; ++k) {
    chunks.push_back({{"file", "gamma_" + std::to_string(k) + ".bin"},
                      {"rows", chunk_rows[k]},
                      {"fnv1a64", chunk_checksums[k]}});
  }
  manifest["chunks"] = chunks;
  manifest["spec"] = {{"quantile_levels", config.spec.quantile_levels},
                      {"physical_thresholds", config.spec.physical_thresholds},
                      {"sample_cap", config.spec.sample_cap},
                      {"drizzle_threshold", config.spec.drizzle_threshold},
                      {"epsilon", config.epsilon},
                      {"infinite_cutoff", config.infinite_cutoff}};

  std::ofstream mf(out_store / "manifest.json", std::ios::trunc);
  if (!mf)
    throw IoError(IoError::Code::write_failure,
                  "generate_targets: cannot write manifest");
  mf << manifest.dump(2) << "\n";
  return summary;
}

GammaStore load_store(const std::filesystem::path& store_dir) {
  std::ifstream mf(store_dir / "manifest.json");
  if (!mf)
    throw IoError(IoError::Code::bad_manifest,
                  "load_store: missing manifest in " + store_dir.string());
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoError::Code::bad_manifest,
                  std::string("load_store: malformed manifest: ") + e.what());
  }
  if (manifest.value("format", "") != kStoreFormat)
    throw IoError(IoError::Code::bad_manifest, "load_store: unknown store format");

  GammaStore store;
  store.n_levels = manifest.at("n_levels").get<int>();
  store.with_holes = manifest.value("with_holes", false);
  store.corpus_dir = manifest.value("corpus_dir", "");
  for (const auto& f : manifest.at("fields"))
    store.field_files.push_back(f.get<std::string>());
  const auto& spec_json = manifest.at("spec");
  store.spec.quantile_levels = spec_json.at("quantile_levels").get<std::vector<double>>();
  store.spec.physical_thresholds =
      spec_json.at("physical_thresholds").get<std::vector<double>>();
  store.spec.sample_cap = spec_json.at("sample_cap").get<std::int64_t>();
  store.spec.drizzle_threshold = spec_json.at("drizzle_threshold").get<double>();
  store.epsilon = spec_json.at("epsilon").get<double>();
  store.infinite_cutoff = spec_json.at("infinite_cutoff").get<double>();

  const int row_len = manifest.at("row_length").get<int>();
  for (const auto& chunk : manifest.at("chunks")) {
    const std::filesystem::path path = store_dir / chunk.at("file").get<std::string>();
    const std::size_t rows = chunk.at("rows").get<std::size_t>();
    std::ifstream in(path, std::ios::binary);
    if (!in)
      throw IoError(IoError::Code::read_failure,
                    "load_store: missing chunk " + path.string());
    std::vector<double> block(rows * row_len);
    in.read(reinterpret_cast<char*>(block.data()),
            static_cast<std::streamsize>(block.size() * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(block.size() * sizeof(double)))
      throw IoError(IoError::Code::truncated,
                    "load_store: truncated chunk " + path.string());
    const std::string digest = hex64(fnv1a64(block.data(), block.size() * sizeof(double)));
    if (digest != chunk.at("fnv1a64").get<std::string>())
      throw IoError(IoError::Code::checksum_mismatch,
                    "load_store: checksum mismatch in " + path.string());
    for (std::size_t row = 0; row < rows; ++row)
      store.rows.emplace_back(block.begin() + row * row_len,
                              block.begin() + (row + 1) * row_len);
  }
  if (store.rows.size() != store.field_files.size())
    throw IoError(IoError::Code::bad_manifest,
                  "load_store: row count does not match field list");
  return store;
}

}  // namespace minkgeo
