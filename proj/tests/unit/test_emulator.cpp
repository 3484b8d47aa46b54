#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "minkgeo/emulator.hpp"
#include "minkgeo/errors.hpp"
#include "test_util.hpp"

using namespace minkgeo;
namespace fs = std::filesystem;

namespace {
constexpr double kPi = 3.14159265358979323846;

EmulatorConfig small_config(EmulatorArch arch, int n_levels = 4) {
  EmulatorConfig cfg;
  cfg.arch = arch;
  cfg.input_height = 8;
  cfg.input_width = 8;
  cfg.pixel_size = 1.0;
  cfg.hidden_dim = 24;
  cfg.n_blocks = 1;
  for (int i = 0; i < n_levels; ++i) cfg.thresholds.push_back(0.3 + 0.4 * i);
  return cfg;
}

std::vector<GammaVector> exact_targets(std::span<const Field2D> fields,
                                       const std::vector<double>& thresholds) {
  ThresholdSpec spec;
  spec.physical_thresholds = thresholds;
  for (std::size_t i = 0; i < thresholds.size(); ++i)
    spec.quantile_levels.push_back((i + 1.0) / (thresholds.size() + 1.0));
  std::vector<GammaVector> out;
  for (const auto& f : fields) out.push_back(gamma_exact(f, spec));
  return out;
}

}  // namespace

TEST_CASE("spectral normalization estimates known spectra") {
  SUBCASE("scaled identity") {
    SpectralLinear layer;
    layer.init(1, 4, 4, true, 0.1);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) layer.weight[i * 4 + j] = i == j ? 3.0 : 0.0;
    const double sigma = layer.power_iterate(50);
    CHECK(sigma == doctest::Approx(3.0).epsilon(1e-6));
    // Effective weight W / sigma is close to the identity.
    CHECK(layer.weight[0] / sigma == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("diag(5, 1) converges to 5 within 1e-3 after 50 iterations") {
    SpectralLinear layer;
    layer.init(2, 2, 2, true, 0.1);
    layer.weight = {5.0, 0.0, 0.0, 1.0};
    const double sigma = layer.power_iterate(50);
    CHECK(std::abs(sigma - 5.0) < 1e-3);
  }
  SUBCASE("zero matrix floors the estimate") {
    SpectralLinear layer;
    layer.init(3, 3, 3, true, 0.1);
    std::fill(layer.weight.begin(), layer.weight.end(), 0.0);
    CHECK(layer.power_iterate(5) == doctest::Approx(1e-12));
  }
}

TEST_CASE("constrained heads enforce their constraints for any parameters") {
  EmulatorConfig cfg = small_config(EmulatorArch::constrained);
  Rng field_rng(123);
  int checked = 0;
  for (std::uint64_t draw = 0; draw < 300; ++draw) {
    EmulatorParams params = EmulatorParams::init(cfg, draw);
    std::vector<double> values(64);
    for (double& v : values) v = field_rng.uniform(-3.0, 5.0);
    Field2D field(8, 8, 1.0, Units::physical, values);
    const auto gamma = emulator_predict(params, field);
    REQUIRE(gamma.size() == 12);
    for (int i = 0; i < 4; ++i) {
      const double a = gamma[3 * i], p = gamma[3 * i + 1], cc = gamma[3 * i + 2];
      CHECK(a >= 0.0);
      if (i > 0) CHECK(a <= gamma[3 * (i - 1)]);
      CHECK(p * p >= 4.0 * kPi * a * (1.0 - 1e-9));
      CHECK(cc > 0.0);
      ++checked;
    }
  }
  CHECK(checked == 1200);
}

TEST_CASE("uniform logits with a known total area give exact tail sums") {
  EmulatorConfig cfg = small_config(EmulatorArch::constrained, 4);
  EmulatorParams params = EmulatorParams::init(cfg, 0);
  // Zero the head inputs so only biases act.
  auto zero = [](SpectralLinear& layer) {
    std::fill(layer.weight.begin(), layer.weight.end(), 0.0);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
    layer.sigma_hat = 1.0;
    layer.normalize = false;
  };
  zero(params.head_area_logits);  // uniform softmax over 5 bins
  zero(params.head_area_total);
  // softplus(b) * cap = 100  =>  b = log(expm1(100 / cap)).
  const double cap = params.cfg.domain_area_cap();
  params.head_area_total.bias[0] = std::log(std::expm1(100.0 / cap));
  zero(params.head_perim_rough);
  zero(params.head_counts);

  Field2D field = Field2D::constant(8, 8, 1.0, Units::physical, 1.0);
  const auto gamma = emulator_predict(params, field);
  CHECK(gamma[0] == doctest::Approx(80.0).epsilon(1e-9));
  CHECK(gamma[3] == doctest::Approx(60.0).epsilon(1e-9));
  CHECK(gamma[6] == doctest::Approx(40.0).epsilon(1e-9));
  CHECK(gamma[9] == doctest::Approx(20.0).epsilon(1e-9));

  // Roughness bias zero -> softplus = log 2; isoperimetric identity holds.
  const double r = std::log(2.0);
  CHECK(gamma[1] ==
        doctest::Approx(std::sqrt(4.0 * kPi * 80.0) * (1.0 + r)).epsilon(1e-9));
  // Counts head at raw zero -> log 2.
  CHECK(gamma[2] == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // Total area decays to zero as the raw pre-activation goes very negative.
  params.head_area_total.bias[0] = -40.0;
  const auto tiny = emulator_predict(params, field);
  CHECK(tiny[0] < 1e-10);
}

TEST_CASE("softplus head identities") {
  CHECK(std::log1p(std::exp(0.0)) == doctest::Approx(std::log(2.0)));
  const double tiny = std::log1p(std::exp(-20.0));
  CHECK(tiny > 0.0);
  CHECK(tiny == doctest::Approx(2.0611536e-9).epsilon(1e-3));
}

TEST_CASE("minkowski loss reference values and metric axioms") {
  const double e_minus_1 = std::expm1(1.0);
  std::vector<double> a = {e_minus_1}, b = {0.0};
  CHECK(minkowski_loss(a, b, LossWeights::unit()) ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(minkowski_loss(a, a) == 0.0);

  std::vector<double> neg = {-0.1};
  CHECK_THROWS_AS(minkowski_loss(neg, b), std::invalid_argument);
  CHECK_THROWS_AS(minkowski_loss(b, neg), std::invalid_argument);

  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(6), y(6), z(6);
    for (int i = 0; i < 6; ++i) {
      x[i] = rng.uniform(0.0, 50.0);
      y[i] = rng.uniform(0.0, 50.0);
      z[i] = rng.uniform(0.0, 50.0);
    }
    const auto u = LossWeights::unit();
    const double dxy = minkowski_loss(x, y, u);
    const double dyx = minkowski_loss(y, x, u);
    const double dxz = minkowski_loss(x, z, u);
    const double dzy = minkowski_loss(z, y, u);
    CHECK(dxy == doctest::Approx(dyx).epsilon(1e-12));
    CHECK(dxy >= 0.0);
    CHECK(dxy <= dxz + dzy + 1e-12);
  }

  // Channel weighting multiplies per-slot contributions.
  std::vector<double> p = {1.0, 1.0, 1.0}, q = {0.0, 0.0, 0.0};
  LossWeights w{3.0, 1.0, 1.5};
  CHECK(minkowski_loss(p, q, w) ==
        doctest::Approx(5.5 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("trust weighting follows the calibrated exponential") {
  std::vector<double> truth = {1.0, 2.0, 3.0};
  CHECK(trust_weight(truth, truth, 0.005725) == doctest::Approx(1.0));

  // Construct a pair whose log-space MSE is exactly -ln(0.1)/tau.
  const double tau = 0.005725;
  const double mse = -std::log(0.1) / tau;
  std::vector<double> hat = {std::expm1(std::sqrt(mse))};
  std::vector<double> ref = {0.0};
  CHECK(log_space_mse(hat, ref) == doctest::Approx(mse).epsilon(1e-12));
  CHECK(trust_weight(hat, ref, tau) == doctest::Approx(0.1).epsilon(1e-9));

  // Monotone decreasing in the error.
  double prev = 1.0;
  for (double scale : {0.5, 1.0, 2.0, 4.0}) {
    std::vector<double> h2 = {std::expm1(scale)};
    const double w = trust_weight(h2, ref, tau);
    CHECK(w < prev);
    prev = w;
  }
}

TEST_CASE("tau calibration inverts the trust floor at the 90th percentile") {
  SUBCASE("equal errors degenerate to -ln(0.1)/e0") {
    std::vector<double> errors(20, 7.5);
    CHECK(tau_trust_from_errors(errors) ==
          doctest::Approx(-std::log(0.1) / 7.5).epsilon(1e-12));
  }
  SUBCASE("constructed q90 = 402.18 reproduces the reference constant") {
    // Eleven samples: type-7 q90 lands exactly on sorted[9].
    std::vector<double> errors = {1, 2, 3, 4, 5, 6, 7, 8, 9, 402.18, 500};
    const double tau = tau_trust_from_errors(errors);
    CHECK(std::abs(tau - 0.005725) < 1e-6);

    // Round trip: the trust weight at the q90 error equals the floor.
    std::vector<double> hat = {std::expm1(std::sqrt(402.18))};
    std::vector<double> ref = {0.0};
    CHECK(trust_weight(hat, ref, tau) == doctest::Approx(0.1).epsilon(1e-9));
  }
  SUBCASE("empty error sample is rejected") {
    std::vector<double> empty;
    CHECK_THROWS_AS(tau_trust_from_errors(empty), std::invalid_argument);
  }
}

TEST_CASE("training loss decreases on an overfit-one-batch run") {
  std::vector<Field2D> fields;
  for (int i = 0; i < 8; ++i)
    fields.push_back(
        gen_multipeak_gaussian(i, 8, 8, 2, {1.0, 3.0}, {1.0, 2.0}, 1.0));
  EmulatorConfig cfg = small_config(EmulatorArch::constrained);
  auto targets = exact_targets(fields, cfg.thresholds);

  TrainConfig tc;
  tc.lr = 3e-3;
  tc.batch = 8;
  tc.epochs = 6;
  tc.patience = 6;
  tc.val_fraction = 0.0;
  tc.seed = 11;
  TrainResult result = train_emulator(fields, targets, cfg, tc);
  REQUIRE(result.history.train_loss.size() >= 3);
  CHECK(result.history.train_loss[1] < result.history.train_loss[0]);
  CHECK(result.history.train_loss[2] < result.history.train_loss[1]);
}

TEST_CASE("training is deterministic given the seed") {
  std::vector<Field2D> fields;
  for (int i = 0; i < 12; ++i)
    fields.push_back(
        gen_multipeak_gaussian(100 + i, 8, 8, 2, {1.0, 3.0}, {1.0, 2.0}, 1.0));
  EmulatorConfig cfg = small_config(EmulatorArch::constrained);
  auto targets = exact_targets(fields, cfg.thresholds);

  TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch = 4;
  tc.epochs = 2;
  tc.val_fraction = 0.25;
  tc.seed = 21;
  TrainResult a = train_emulator(fields, targets, cfg, tc);
  TrainResult b = train_emulator(fields, targets, cfg, tc);
  CHECK(a.history.train_loss == b.history.train_loss);
  CHECK(a.params.first.weight == b.params.first.weight);
  CHECK(a.params.head_counts.weight == b.params.head_counts.weight);
}

TEST_CASE("divergent training aborts with a numerical error") {
  std::vector<Field2D> fields;
  for (int i = 0; i < 8; ++i)
    fields.push_back(
        gen_multipeak_gaussian(i, 8, 8, 2, {1.0, 3.0}, {1.0, 2.0}, 1.0));
  EmulatorConfig cfg = small_config(EmulatorArch::constrained);
  auto targets = exact_targets(fields, cfg.thresholds);

  TrainConfig tc;
  tc.lr = 1e80;
  tc.batch = 4;
  tc.epochs = 5;
  tc.val_fraction = 0.0;
  tc.seed = 3;
  CHECK_THROWS_AS(train_emulator(fields, targets, cfg, tc), NumericalError);
}

TEST_CASE("evaluate computes log-space R2 and violation rates") {
  std::vector<Field2D> fields;
  for (int i = 0; i < 30; ++i)
    fields.push_back(
        gen_multipeak_gaussian(i, 8, 8, 2, {1.0, 3.0}, {1.0, 2.0}, 1.0));
  EmulatorConfig cfg = small_config(EmulatorArch::constrained);
  auto targets = exact_targets(fields, cfg.thresholds);

  EmulatorParams params = EmulatorParams::init(cfg, 9);
  EvalMetrics metrics = evaluate(params, fields, targets);
  CHECK(metrics.nu_iso_pairs == 0.0);  // constrained heads cannot violate
  CHECK(metrics.nu_iso_samples == 0.0);
  CHECK(metrics.r2_overall <= 1.0);
  CHECK(metrics.m_loss > 0.0);
}

TEST_CASE("checkpoints restore parameters bit exactly") {
  const fs::path dir = fs::temp_directory_path() / "minkgeo_ckpt_test";
  fs::remove_all(dir);
  for (EmulatorArch arch : {EmulatorArch::constrained, EmulatorArch::unconstrained,
                            EmulatorArch::unconstrained_no_sn}) {
    EmulatorConfig cfg = small_config(arch);
    EmulatorParams params = EmulatorParams::init(cfg, 77);
    save_checkpoint(params, dir);
    EmulatorParams loaded = load_checkpoint(dir);
    CHECK(loaded.cfg.arch == arch);
    CHECK(loaded.first.weight == params.first.weight);
    CHECK(loaded.first.u_vec == params.first.u_vec);
    CHECK(loaded.blocks[0].a.weight == params.blocks[0].a.weight);

    Field2D f = gen_multipeak_gaussian(3, 8, 8, 1, {2.0, 2.0}, {1.5, 1.5}, 1.0);
    CHECK(emulator_predict(loaded, f) == emulator_predict(params, f));
  }

  // Corrupted magic is rejected.
  {
    std::fstream bin(dir / "params.bin",
                     std::ios::binary | std::ios::in | std::ios::out);
    bin.seekp(0);
    bin.write("XXXXXXXX", 8);
  }
  CHECK_THROWS_AS(load_checkpoint(dir), IoError);
}

TEST_CASE("latent map respects the first-layer Lipschitz bound empirically") {
  EmulatorConfig cfg = small_config(EmulatorArch::constrained);
  EmulatorParams params = EmulatorParams::init(cfg, 31);
  params.refresh_spectral_norms(50);
  const double k1 = first_layer_norm(params);

  Rng rng(8);
  double worst = 0.0;
  for (int pair = 0; pair < 200; ++pair) {
    std::vector<double> xa(64), xb(64);
    for (int i = 0; i < 64; ++i) {
      xa[i] = rng.normal();
      xb[i] = rng.normal();
    }
    ad::Tape t;
    ad::Var za = emulator_latent(t, params, t.grid(8, 8, xa));
    ad::Var zb = emulator_latent(t, params, t.grid(8, 8, xb));
    auto va = t.value(za), vb = t.value(zb);
    double dz = 0.0, dx = 0.0;
    for (std::size_t i = 0; i < va.size(); ++i) dz += (va[i] - vb[i]) * (va[i] - vb[i]);
    for (int i = 0; i < 64; ++i) dx += (xa[i] - xb[i]) * (xa[i] - xb[i]);
    worst = std::max(worst, std::sqrt(dz / dx));
  }
  CHECK(worst <= 1.05 * k1);
}
