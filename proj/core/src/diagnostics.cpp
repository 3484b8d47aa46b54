#include "minkgeo/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <mutex>
#include <thread>

#include <fftw3.h>

#include "minkgeo/errors.hpp"
#include "minkgeo/exact_geometry.hpp"
#include "minkgeo/rng.hpp"

namespace minkgeo {

using ad::Tape;
using ad::Var;

Surrogate Surrogate::analytic(SoftGeomConfig config, double pixel_size) {
  config.validate();
  Surrogate s;
  s.is_analytic_ = true;
  s.analytic_cfg_ = std::move(config);
  s.pixel_size_ = pixel_size;
  return s;
}

Surrogate Surrogate::emulator(const EmulatorParams* params) {
  if (!params) throw std::invalid_argument("Surrogate: null emulator params");
  Surrogate s;
  s.is_analytic_ = false;
  s.emulator_ = params;
  return s;
}

Var Surrogate::build(Tape& tape, Var x) const {
  if (is_analytic_) return gamma_soft(tape, x, analytic_cfg_, pixel_size_);
  return emulator_forward(tape, *emulator_, x);
}

int Surrogate::n_outputs() const {
  return is_analytic_ ? 3 * static_cast<int>(analytic_cfg_.thresholds.size())
                      : 3 * emulator_->cfg.n_levels();
}

void InversionConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("InversionConfig: steps must be >= 1");
  if (!(lr >= 0.0)) throw std::invalid_argument("InversionConfig: lr must be >= 0");
  if (!(lambda_tv >= 0.0) || !(lambda_l2 >= 0.0))
    throw std::invalid_argument("InversionConfig: lambdas must be >= 0");
  if (target_gamma.empty())
    throw std::invalid_argument("InversionConfig: target gamma required");
  if (height < 2 || width < 2)
    throw std::invalid_argument("InversionConfig: domain too small");
}

Var tv_norm(Tape& tape, Var grid) { return l1_total_variation(tape, grid); }

namespace {

Var data_term(Tape& t, const Surrogate& surrogate, Var gamma_hat,
              const InversionConfig& cfg) {
  const int n = gamma_hat.shape.rows;
  if (n != static_cast<int>(cfg.target_gamma.size()))
    throw std::invalid_argument("invert: target gamma length mismatch");

  if (cfg.data_term == InversionConfig::DataTerm::plain_l2) {
    Var diff = t.sub(gamma_hat, t.vector(cfg.target_gamma));
    return t.sqrt(t.sum(t.mul(diff, diff)));
  }

  // Squared L2 between log-encoded vectors; the chi slot of the analytic
  // surrogate is already symlog-scaled, so only encode the target there.
  std::vector<double> target(n);
  const bool chi_symlog = surrogate.encoding() == ChannelEncoding::chi_symlog;
  for (int i = 0; i < n; ++i) {
    const double v = cfg.target_gamma[i];
    if (chi_symlog && i % 3 == 2) {
      target[i] = (v < 0.0 ? -1.0 : 1.0) * std::log1p(std::abs(v));
    } else {
      if (!(v >= 0.0))
        throw std::invalid_argument("invert: negative target component");
      target[i] = std::log1p(v);
    }
  }
  std::vector<Var> parts;
  parts.reserve(n);
  for (int i = 0; i < n; ++i) {
    Var slot = t.slice(gamma_hat, i, 1);
    parts.push_back(chi_symlog && i % 3 == 2 ? slot : t.log1p(slot));
  }
  Var diff = t.sub(t.concat(parts), t.vector(target));
  return t.sum(t.mul(diff, diff));
}

}  // namespace

InversionResult invert(const Surrogate& surrogate, const InversionConfig& cfg) {
  cfg.validate();

  Rng rng(cfg.seed);
  std::vector<double> x(static_cast<std::size_t>(cfg.height) * cfg.width);
  for (double& v : x) v = rng.normal();

  Surrogate stepped = surrogate;  // local copy so tau can be annealed per step
  std::vector<double> trace;
  trace.reserve(cfg.steps);

  for (int step = 0; step < cfg.steps; ++step) {
    if (stepped.is_analytic())
      stepped.analytic_config().tau = anneal_tau(surrogate.analytic_config(), step);

    Tape tape;
    Var xv = tape.grid(cfg.height, cfg.width, x, /*requires_grad=*/true);
    Var gamma_hat = stepped.build(tape, xv);
    Var objective = data_term(tape, stepped, gamma_hat, cfg);
    if (cfg.lambda_tv > 0.0)
      objective = tape.add(objective, tape.scale(tv_norm(tape, xv), cfg.lambda_tv));
    if (cfg.lambda_l2 > 0.0)
      objective =
          tape.add(objective, tape.scale(tape.sum(tape.mul(xv, xv)), cfg.lambda_l2));

    const double value = tape.value_scalar(objective);
    if (!std::isfinite(value))
      throw NumericalError("invert: non-finite objective at step " +
                               std::to_string(step),
                           step);
    trace.push_back(value);

    if (cfg.lr > 0.0) {
      tape.backward(objective);
      auto grad = tape.adjoint(xv);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] -= cfg.lr * grad[i];
    }
  }

  return {Field2D(cfg.height, cfg.width, cfg.pixel_size, Units::physical,
                  std::move(x)),
          std::move(trace)};
}

// ---------------------------------------------------------------------------
// Spectra.

namespace {

std::mutex fftw_plan_mutex;  // FFTW planning is not thread-safe

}  // namespace

std::vector<double> rapsd(const Field2D& field) {
  const int h = field.height(), w = field.width();
  if (h < 4 || w < 4)
    throw std::invalid_argument("rapsd: field must be at least 4x4");

  // 2-D Hann window.
  std::vector<double> windowed(field.size());
  auto hann = [](int i, int n) {
    return 0.5 * (1.0 - std::cos(2.0 * 3.14159265358979323846 * i / (n - 1)));
  };
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      windowed[static_cast<std::size_t>(r) * w + c] =
          field.at(r, c) * hann(r, h) * hann(c, w);

  const int wc = w / 2 + 1;
  std::vector<std::complex<double>> out(static_cast<std::size_t>(h) * wc);
  {
    std::lock_guard<std::mutex> lock(fftw_plan_mutex);
    fftw_plan plan = fftw_plan_dft_r2c_2d(
        h, w, windowed.data(), reinterpret_cast<fftw_complex*>(out.data()),
        FFTW_ESTIMATE);
    fftw_execute(plan);
    fftw_destroy_plan(plan);
  }

  const int kmax = std::min(h, w) / 2;
  std::vector<double> power(kmax + 1, 0.0);
  std::vector<std::size_t> counts(kmax + 1, 0);
  const double norm = 1.0 / (static_cast<double>(h) * w * static_cast<double>(h) * w);

  for (int ky = 0; ky < h; ++ky) {
    const int fy = ky <= h / 2 ? ky : ky - h;
    for (int kx = 0; kx < w; ++kx) {
      const int fx = kx <= w / 2 ? kx : kx - w;
      // Hermitian symmetry: modes with kx > w/2 mirror (h-ky)%h, w-kx.
      const std::complex<double>& value =
          kx < wc ? out[static_cast<std::size_t>(ky) * wc + kx]
                  : out[static_cast<std::size_t>((h - ky) % h) * wc + (w - kx)];
      const double p = std::norm(value) * norm;
      const double radius = std::sqrt(static_cast<double>(fx) * fx +
                                      static_cast<double>(fy) * fy);
      int bin = static_cast<int>(std::floor(radius + 0.5));
      bin = std::min(bin, kmax);  // open-ended outermost annulus
      power[bin] += p;
      ++counts[bin];
    }
  }
  for (int k = 0; k <= kmax; ++k)
    if (counts[k] > 0) power[k] /= static_cast<double>(counts[k]);
  return power;
}

std::vector<double> spectral_ratio(const Field2D& model, const Field2D& ref) {
  if (model.height() != ref.height() || model.width() != ref.width())
    throw std::invalid_argument("spectral_ratio: shapes must match");
  const auto sm = rapsd(model);
  const auto sr = rapsd(ref);
  std::vector<double> ratio(sm.size());
  for (std::size_t k = 0; k < sm.size(); ++k)
    ratio[k] = sm[k] / std::max(sr[k], 1e-30);
  return ratio;
}

double raps_error(const Field2D& model, const Field2D& ref) {
  if (model.height() != ref.height() || model.width() != ref.width())
    throw std::invalid_argument("raps_error: shapes must match");
  const auto sm = rapsd(model);
  const auto sr = rapsd(ref);
  double total = 0.0;
  for (std::size_t k = 1; k < sm.size(); ++k)
    total += std::abs(std::log10(std::max(sm[k], 1e-300)) -
                      std::log10(std::max(sr[k], 1e-300)));
  return total / static_cast<double>(sm.size() - 1);
}

// ---------------------------------------------------------------------------

std::vector<SweepRow> mechanistic_sweep(const Field2D& base, const MaskRegion& mask,
                                        std::span<const double> alphas,
                                        const Surrogate& surrogate,
                                        const ThresholdSpec& spec, double epsilon,
                                        double infinite_cutoff) {
  if (mask.row0 < 0 || mask.col0 < 0 || mask.height <= 0 || mask.width <= 0 ||
      mask.row0 + mask.height > base.height() ||
      mask.col0 + mask.width > base.width())
    throw std::invalid_argument("mechanistic_sweep: mask outside the domain");
  for (double a : alphas)
    if (!std::isfinite(a))
      throw std::invalid_argument("mechanistic_sweep: non-finite alpha");

  const GammaVector base_gamma =
      gamma_exact(base, spec, epsilon, infinite_cutoff);

  std::vector<SweepRow> rows(alphas.size());
  auto run_alpha = [&](std::size_t ai) {
    const double alpha = alphas[ai];
    std::vector<double> values(base.values().begin(), base.values().end());
    for (int r = mask.row0; r < mask.row0 + mask.height; ++r)
      for (int c = mask.col0; c < mask.col0 + mask.width; ++c)
        values[static_cast<std::size_t>(r) * base.width() + c] *= alpha;
    Field2D perturbed(base.height(), base.width(), base.pixel_size(),
                      base.units(), std::move(values));

    SweepRow row;
    row.alpha = alpha;
    row.exact =
        gamma_exact(perturbed, spec, epsilon, infinite_cutoff).entries;

    Tape tape;
    Var x = tape.grid(perturbed.height(), perturbed.width(), perturbed.values(),
                      /*requires_grad=*/true);
    Var gamma_hat = surrogate.build(tape, x);
    auto gv = tape.value(gamma_hat);
    row.surrogate.assign(gv.begin(), gv.end());

    Var loss = minkowski_loss_on_tape(tape, gamma_hat, base_gamma.entries,
                                      LossWeights::unit(), surrogate.encoding());
    tape.backward(loss);
    auto grad = tape.adjoint(x);
    double inside = 0.0, total = 0.0;
    for (int r = 0; r < base.height(); ++r)
      for (int c = 0; c < base.width(); ++c) {
        const double g = grad[static_cast<std::size_t>(r) * base.width() + c];
        total += g * g;
        const bool in_mask = r >= mask.row0 && r < mask.row0 + mask.height &&
                             c >= mask.col0 && c < mask.col0 + mask.width;
        if (in_mask) inside += g * g;
      }
    row.grad_mask_fraction = total > 0.0 ? inside / total : 0.0;
    rows[ai] = std::move(row);
  };

  // Alphas are independent; run them on a small worker pool.
  const std::size_t n_threads =
      std::min<std::size_t>(alphas.size(),
                            std::max(1u, std::thread::hardware_concurrency()));
  if (n_threads <= 1) {
    for (std::size_t ai = 0; ai < alphas.size(); ++ai) run_alpha(ai);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) {
      pool.emplace_back([&, t]() {
        try {
          for (std::size_t ai = t; ai < alphas.size(); ai += n_threads)
            run_alpha(ai);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return rows;
}

GradcheckReport gradcheck(const Surrogate& surrogate,
                          std::span<const Field2D> fields, double h) {
  if (!(h >= 1e-8 && h <= 1e-3))
    throw std::invalid_argument("gradcheck: h must be in [1e-8, 1e-3]");

  GradcheckReport report;
  for (const Field2D& field : fields) {
    // Fixed strictly-offset target so the loss kinks stay away from the
    // evaluation point.
    std::vector<double> target;
    {
      Tape tape;
      Var x = tape.grid(field.height(), field.width(), field.values());
      Var gamma_hat = surrogate.build(tape, x);
      auto gv = tape.value(gamma_hat);
      target.assign(gv.begin(), gv.end());
      const bool chi_symlog = surrogate.encoding() == ChannelEncoding::chi_symlog;
      for (std::size_t i = 0; i < target.size(); ++i) {
        if (chi_symlog && i % 3 == 2) {
          target[i] = std::expm1(std::abs(target[i])) *
                          (target[i] < 0.0 ? -1.0 : 1.0) +
                      0.5 * (1.0 + std::abs(target[i]));
        } else {
          target[i] = 1.5 * target[i] + 0.1;
        }
      }
    }

    auto loss_at = [&](std::span<const double> values) {
      Tape tape;
      Var x = tape.grid(field.height(), field.width(), values);
      Var gamma_hat = surrogate.build(tape, x);
      Var loss = minkowski_loss_on_tape(tape, gamma_hat, target,
                                        LossWeights::unit(), surrogate.encoding());
      return tape.value_scalar(loss);
    };

    // Reverse-mode gradient.
    std::vector<double> grad;
    {
      Tape tape;
      Var x = tape.grid(field.height(), field.width(), field.values(),
                        /*requires_grad=*/true);
      Var gamma_hat = surrogate.build(tape, x);
      Var loss = minkowski_loss_on_tape(tape, gamma_hat, target,
                                        LossWeights::unit(), surrogate.encoding());
      tape.backward(loss);
      auto g = tape.adjoint(x);
      grad.assign(g.begin(), g.end());
    }

    std::vector<double> probe(field.values().begin(), field.values().end());
    double max_rel = 0.0;
    for (std::size_t i = 0; i < probe.size(); ++i) {
      const double keep = probe[i];
      probe[i] = keep + h;
      const double fp = loss_at(probe);
      probe[i] = keep - h;
      const double fm = loss_at(probe);
      probe[i] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      const double rel =
          std::abs(fd - grad[i]) / std::max({1.0, std::abs(fd), std::abs(grad[i])});
      max_rel = std::max(max_rel, rel);
    }
    report.per_field.push_back({max_rel, max_rel > report.flag_threshold});
    report.worst = std::max(report.worst, max_rel);
  }
  return report;
}

// ---------------------------------------------------------------------------

void write_pgm(const Field2D& field, const std::filesystem::path& path) {
  auto v = field.values();
  double lo = v[0], hi = v[0];
  for (double x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  const double span = hi > lo ? hi - lo : 1.0;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError(IoError::Code::write_failure, "write_pgm: cannot open " + path.string());
  out << "P5\n" << field.width() << " " << field.height() << "\n255\n";
  for (double x : v) {
    const int byte = static_cast<int>(std::lround((x - lo) / span * 255.0));
    out.put(static_cast<char>(std::clamp(byte, 0, 255)));
  }
}

void write_spectrum_csv(std::span<const double> spectrum,
                        const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    throw IoError(IoError::Code::write_failure, "write_spectrum_csv: " + path.string());
  out << "k,S\n";
  out.precision(17);
  for (std::size_t k = 0; k < spectrum.size(); ++k)
    out << k << "," << spectrum[k] << "\n";
}

void write_trace_csv(std::span<const double> trace,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    throw IoError(IoError::Code::write_failure, "write_trace_csv: " + path.string());
  out << "step,loss\n";
  out.precision(17);
  for (std::size_t i = 0; i < trace.size(); ++i)
    out << i << "," << trace[i] << "\n";
}

void write_sweep_csv(std::span<const SweepRow> rows, int n_levels,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    throw IoError(IoError::Code::write_failure, "write_sweep_csv: " + path.string());
  out << "alpha";
  for (int i = 0; i < n_levels; ++i)
    out << ",A" << i << ",P" << i << ",CC" << i;
  for (int i = 0; i < n_levels; ++i)
    out << ",sA" << i << ",sP" << i << ",sCC" << i;
  out << ",grad_mask_fraction\n";
  out.precision(17);
  for (const auto& row : rows) {
    out << row.alpha;
    for (double v : row.exact) out << "," << v;
    for (double v : row.surrogate) out << "," << v;
    out << "," << row.grad_mask_fraction << "\n";
  }
}

}  // namespace minkgeo
