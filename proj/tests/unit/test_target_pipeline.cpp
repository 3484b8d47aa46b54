#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "minkgeo/errors.hpp"
#include "minkgeo/exact_geometry.hpp"
#include "minkgeo/raster_io.hpp"
#include "minkgeo/persistence.hpp"
#include "minkgeo/target_pipeline.hpp"
#include "test_util.hpp"

using namespace minkgeo;
namespace fs = std::filesystem;

namespace {

ThresholdSpec make_spec(std::vector<double> thresholds) {
  ThresholdSpec spec;
  spec.physical_thresholds = std::move(thresholds);
  const int n = spec.n_levels();
  for (int i = 0; i < n; ++i)
    spec.quantile_levels.push_back((i + 1.0) / (n + 1.0));
  return spec;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "minkgeo_targets" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("type-7 quantiles interpolate order statistics") {
  std::vector<double> wet(100);
  std::iota(wet.begin(), wet.end(), 1.0);  // 1..100
  CHECK(quantile_type7(wet, 0.5) == doctest::Approx(50.5));
  CHECK(quantile_type7(wet, 0.0) == doctest::Approx(1.0));
  CHECK(quantile_type7(wet, 1e-9) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(quantile_type7(wet, 1.0) == doctest::Approx(100.0));
}

TEST_CASE("calibrate_thresholds maps quantiles of the wet distribution") {
  // One field holding the pixel values 1..100 plus dry pixels.
  std::vector<double> values(200, 0.0);
  for (int i = 0; i < 100; ++i) values[i] = i + 1.0;
  Field2D f(10, 20, 1.0, Units::physical, values);
  const std::vector<Field2D> corpus = {f};

  const std::vector<double> levels = {0.25, 0.5, 0.75};
  ThresholdSpec spec = calibrate_thresholds(corpus, levels, 1'000'000, 7);
  REQUIRE(spec.n_levels() == 3);
  CHECK(spec.physical_thresholds[1] == doctest::Approx(50.5));
  CHECK(spec.physical_thresholds[0] < spec.physical_thresholds[1]);
  CHECK(spec.physical_thresholds[1] < spec.physical_thresholds[2]);
}

TEST_CASE("calibration is deterministic and respects the reservoir cap") {
  std::vector<Field2D> corpus;
  for (std::uint64_t seed = 0; seed < 10; ++seed)
    corpus.push_back(testutil::random_uniform_field(seed, 16, 16, 0.0, 30.0));
  const std::vector<double> levels = {0.1, 0.5, 0.9};

  ThresholdSpec a = calibrate_thresholds(corpus, levels, 500, 11);
  ThresholdSpec b = calibrate_thresholds(corpus, levels, 500, 11);
  for (int i = 0; i < 3; ++i)
    CHECK(a.physical_thresholds[i] == b.physical_thresholds[i]);

  ThresholdSpec c = calibrate_thresholds(corpus, levels, 500, 12);
  bool differs = false;
  for (int i = 0; i < 3; ++i)
    if (a.physical_thresholds[i] != c.physical_thresholds[i]) differs = true;
  CHECK(differs);  // different reservoir sample under a different seed
}

TEST_CASE("calibration errors") {
  const std::vector<double> levels = {0.5};
  std::vector<Field2D> dry = {Field2D::constant(4, 4, 1.0, Units::physical, 0.0)};
  CHECK_THROWS_AS(calibrate_thresholds(dry, levels, 100, 1), std::invalid_argument);

  // Constant wet corpus produces tied thresholds at two levels.
  std::vector<Field2D> flat = {Field2D::constant(4, 4, 1.0, Units::physical, 5.0)};
  const std::vector<double> two = {0.3, 0.7};
  CHECK_THROWS_AS(calibrate_thresholds(flat, two, 100, 1), std::invalid_argument);
}

TEST_CASE("default sample cap is fifty million wet pixels") {
  ThresholdSpec spec;
  CHECK(spec.sample_cap == 50'000'000);
}

TEST_CASE("gamma_exact on an all-dry field is the zero vector") {
  Field2D dry = Field2D::constant(8, 8, 2.0, Units::physical, 0.0);
  GammaVector g = gamma_exact(dry, make_spec({0.5, 1.0, 2.0}));
  CHECK(g.n_levels == 3);
  for (double v : g.entries) CHECK(v == 0.0);
}

TEST_CASE("single blob above all thresholds counts one component per level") {
  Field2D f = gen_multipeak_gaussian(3, 32, 32, 1, {5.0, 5.0}, {3.0, 3.0}, 2.0);
  // Infinite cutoff lifted so the global component is counted at all levels.
  GammaVector g = gamma_exact(f, make_spec({0.5, 1.0, 2.0}), 0.05, 1e300);
  for (int i = 0; i < 3; ++i) {
    CHECK(g.components(i) == 1.0);
    CHECK(g.area(i) > 0.0);
  }
  // Under the paper's counting rule the surviving component is excluded
  // above the low-intensity cutoff.
  GammaVector h = gamma_exact(f, make_spec({0.5, 1.0, 2.0}), 0.05, 0.01);
  for (int i = 0; i < 3; ++i) CHECK(h.components(i) == 0.0);
}

TEST_CASE("gamma areas never increase across levels") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Field2D f = gen_multipeak_gaussian(seed, 16, 16, 3, {1.0, 4.0}, {1.5, 3.0});
    GammaVector g = gamma_exact(f, make_spec({0.2, 0.5, 1.0, 2.0}));
    for (int i = 1; i < g.n_levels; ++i) CHECK(g.area(i) <= g.area(i - 1));
    for (double v : g.entries) CHECK(v >= 0.0);
    for (int i = 0; i < g.n_levels; ++i)
      CHECK(g.components(i) == doctest::Approx(std::round(g.components(i))));
  }
}

TEST_CASE("shared-diagram gamma equals per-level recomputation") {
  ThresholdSpec spec = make_spec({0.3, 0.8, 1.5});
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Field2D f = gen_multipeak_gaussian(seed, 12, 12, 2, {1.0, 3.0}, {1.0, 2.5});
    GammaVector g = gamma_exact(f, spec, 0.05, 0.01, true);
    const PersistenceDiagram d = superlevel_persistence_0d(f);
    for (int i = 0; i < spec.n_levels(); ++i) {
      const double u = spec.physical_thresholds[i];
      const ExcursionSet set = excursion(f, u);
      CHECK(g.area(i) == area(set));
      CHECK(g.perimeter(i) == perimeter_marching_squares(set));
      CHECK(g.components(i) ==
            static_cast<double>(count_components_at(d, u, 0.05, 0.01)));
      CHECK(g.holes[i] == static_cast<double>(hole_count(set)));
    }
  }
}

TEST_CASE("GammaVector validation rejects bad vectors") {
  GammaVector g;
  g.n_levels = 2;
  g.entries = {5.0, 8.0, 1.0, 4.0, 7.0, 1.0};
  CHECK_NOTHROW(g.validate());
  g.entries[3] = 5.5;  // area increases across levels
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
  g.entries[3] = -1.0;
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
}

TEST_CASE("generate_targets writes a verifiable deterministic store") {
  const fs::path corpus = fresh_dir("corpus");
  for (int i = 0; i < 10; ++i) {
    Field2D f = gen_multipeak_gaussian(i, 16, 16, 2, {1.0, 4.0}, {1.5, 3.0}, 2.0);
    char name[32];
    std::snprintf(name, sizeof(name), "field_%04d.mgf", i);
    write_raster(f, corpus / name);
  }
  // One unreadable raster mixed in.
  {
    std::ofstream junk(corpus / "field_0999.mgf", std::ios::binary);
    junk << "not a raster";
  }

  TargetGenConfig cfg;
  cfg.spec = make_spec({0.3, 0.8, 1.5});
  cfg.with_holes = true;

  const fs::path store1 = fresh_dir("store1");
  cfg.workers = 1;
  TargetGenSummary s1 = generate_targets(corpus, store1, cfg);
  CHECK(s1.n_fields == 10);
  CHECK(s1.n_skipped == 1);

  const fs::path store8 = fresh_dir("store8");
  cfg.workers = 8;
  TargetGenSummary s8 = generate_targets(corpus, store8, cfg);
  CHECK(s8.n_fields == 10);

  // Byte-identical stores regardless of worker count.
  for (const auto& entry : fs::directory_iterator(store1)) {
    const fs::path other = store8 / entry.path().filename();
    REQUIRE(fs::exists(other));
    CHECK(fnv1a64_file(entry.path()) == fnv1a64_file(other));
  }

  // Re-running overwrites with identical content.
  cfg.workers = 2;
  generate_targets(corpus, store1, cfg);
  for (const auto& entry : fs::directory_iterator(store1))
    CHECK(fnv1a64_file(entry.path()) ==
          fnv1a64_file(store8 / entry.path().filename()));

  GammaStore loaded = load_store(store1);
  CHECK(loaded.rows.size() == 10);
  CHECK(loaded.n_levels == 3);
  CHECK(loaded.with_holes);
  CHECK(loaded.field_files.size() == 10);
  for (const auto& row : loaded.rows) CHECK(row.size() == 12);

  // Every stored gamma matches a direct recomputation.
  for (std::size_t i = 0; i < loaded.rows.size(); ++i) {
    Field2D f = read_raster(corpus / loaded.field_files[i]);
    GammaVector g = gamma_exact(f, cfg.spec, cfg.epsilon, cfg.infinite_cutoff, true);
    for (int j = 0; j < 9; ++j) CHECK(loaded.rows[i][j] == g.entries[j]);
  }
}

TEST_CASE("store corruption is detected through the chunk checksum") {
  const fs::path corpus = fresh_dir("corpus_c");
  for (int i = 0; i < 3; ++i)
    write_raster(gen_multipeak_gaussian(i, 8, 8, 1, {2.0, 3.0}, {1.0, 2.0}),
                 corpus / ("f" + std::to_string(i) + ".mgf"));
  const fs::path store = fresh_dir("store_c");
  TargetGenConfig cfg;
  cfg.spec = make_spec({0.5, 1.0});
  generate_targets(corpus, store, cfg);

  {
    std::fstream chunk(store / "gamma_0.bin",
                       std::ios::binary | std::ios::in | std::ios::out);
    chunk.seekp(8);
    const double tampered = 1e9;
    chunk.write(reinterpret_cast<const char*>(&tampered), sizeof(double));
  }
  try {
    load_store(store);
    FAIL("expected checksum mismatch");
  } catch (const IoError& e) {
    CHECK(e.code() == IoError::Code::checksum_mismatch);
  }
}

TEST_CASE("a store of one dry field holds one zero row") {
  const fs::path corpus = fresh_dir("corpus_dry");
  write_raster(Field2D::constant(8, 8, 2.0, Units::physical, 0.0),
               corpus / "dry.mgf");
  const fs::path store = fresh_dir("store_dry");
  TargetGenConfig cfg;
  cfg.spec = make_spec({0.5, 1.0});
  TargetGenSummary summary = generate_targets(corpus, store, cfg);
  CHECK(summary.n_fields == 1);
  CHECK(summary.isoperimetric_violation_rate == 0.0);
  GammaStore loaded = load_store(store);
  REQUIRE(loaded.rows.size() == 1);
  for (double v : loaded.rows[0]) CHECK(v == 0.0);
}
