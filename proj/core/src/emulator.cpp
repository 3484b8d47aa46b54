#include "minkgeo/emulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "minkgeo/errors.hpp"
#include "minkgeo/rng.hpp"

namespace minkgeo {

using ad::Shape;
using ad::Tape;
using ad::Var;

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kSigmaFloor = 1e-12;
}  // namespace

std::string arch_name(EmulatorArch arch) {
  switch (arch) {
    case EmulatorArch::constrained: return "constrained";
    case EmulatorArch::unconstrained: return "unconstrained";
    case EmulatorArch::unconstrained_no_sn: return "nosn";
  }
  return "constrained";
}

EmulatorArch arch_from_name(const std::string& name) {
  if (name == "constrained") return EmulatorArch::constrained;
  if (name == "unconstrained") return EmulatorArch::unconstrained;
  if (name == "nosn" || name == "unconstrained_no_sn")
    return EmulatorArch::unconstrained_no_sn;
  throw std::invalid_argument("unknown emulator arch: " + name);
}

void SpectralLinear::init(std::uint64_t seed, int out, int in, bool with_sn,
                          double scale) {
  out_dim = out;
  in_dim = in;
  normalize = with_sn;
  Rng rng(seed);
  weight.resize(static_cast<std::size_t>(out) * in);
  for (double& w : weight) w = rng.normal(0.0, scale);
  bias.assign(out, 0.0);
  u_vec.resize(out);
  double norm = 0.0;
  for (double& u : u_vec) {
    u = rng.normal();
    norm += u * u;
  }
  norm = std::sqrt(norm);
  for (double& u : u_vec) u /= norm;
  sigma_hat = 1.0;
}

double SpectralLinear::power_iterate(int iters) {
  std::vector<double> v(in_dim);
  for (int it = 0; it < iters; ++it) {
    // v = normalize(W^T u)
    double vn = 0.0;
    for (int c = 0; c < in_dim; ++c) {
      double s = 0.0;
      for (int r = 0; r < out_dim; ++r)
        s += weight[static_cast<std::size_t>(r) * in_dim + c] * u_vec[r];
      v[c] = s;
      vn += s * s;
    }
    vn = std::sqrt(vn);
    if (vn < 1e-30) {
      sigma_hat = kSigmaFloor;
      return sigma_hat;
    }
    for (double& x : v) x /= vn;
    // u = normalize(W v)
    double un = 0.0;
    for (int r = 0; r < out_dim; ++r) {
      double s = 0.0;
      const double* row = weight.data() + static_cast<std::size_t>(r) * in_dim;
      for (int c = 0; c < in_dim; ++c) s += row[c] * v[c];
      u_vec[r] = s;
      un += s * s;
    }
    un = std::sqrt(un);
    if (un < 1e-30) {
      sigma_hat = kSigmaFloor;
      return sigma_hat;
    }
    for (double& x : u_vec) x /= un;
    sigma_hat = std::max(un, kSigmaFloor);  // |W v| with unit v
  }
  return sigma_hat;
}

void EmulatorConfig::validate() const {
  if (input_height < 2 || input_width < 2)
    throw std::invalid_argument("EmulatorConfig: input grid too small");
  if (!(pixel_size > 0.0))
    throw std::invalid_argument("EmulatorConfig: pixel_size must be > 0");
  if (hidden_dim < 1) throw std::invalid_argument("EmulatorConfig: hidden_dim");
  if (n_blocks < 0) throw std::invalid_argument("EmulatorConfig: n_blocks");
  if (thresholds.empty())
    throw std::invalid_argument("EmulatorConfig: thresholds required");
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (!(thresholds[i] > thresholds[i - 1]))
      throw std::invalid_argument("EmulatorConfig: thresholds must ascend");
}

EmulatorParams EmulatorParams::init(const EmulatorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const bool sn = cfg.arch != EmulatorArch::unconstrained_no_sn;
  const int d = cfg.hidden_dim;
  const int n = cfg.n_levels();
  std::uint64_t state = seed;

  EmulatorParams p;
  p.cfg = cfg;
  p.first.init(splitmix64(state), d, cfg.input_dim(), /*with_sn=*/false,
               1.0 / std::sqrt(static_cast<double>(cfg.input_dim())));
  p.blocks.resize(cfg.n_blocks);
  for (auto& block : p.blocks) {
    block.a.init(splitmix64(state), d, d, sn, 1.0 / std::sqrt(static_cast<double>(d)));
    block.b.init(splitmix64(state), d, d, sn, 1.0 / std::sqrt(static_cast<double>(d)));
  }
  if (cfg.arch == EmulatorArch::constrained) {
    p.head_area_logits.init(splitmix64(state), n + 1, d, sn,
                            1.0 / std::sqrt(static_cast<double>(d)));
    p.head_area_total.init(splitmix64(state), 1, d, sn,
                           1.0 / std::sqrt(static_cast<double>(d)));
    p.head_perim_rough.init(splitmix64(state), n, d, sn,
                            1.0 / std::sqrt(static_cast<double>(d)));
    p.head_counts.init(splitmix64(state), n, d, sn,
                       1.0 / std::sqrt(static_cast<double>(d)));
  } else {
    p.head_a.init(splitmix64(state), n, d, sn, 1.0 / std::sqrt(static_cast<double>(d)));
    p.head_p.init(splitmix64(state), n, d, sn, 1.0 / std::sqrt(static_cast<double>(d)));
    p.head_cc.init(splitmix64(state), n, d, sn, 1.0 / std::sqrt(static_cast<double>(d)));
  }
  p.refresh_spectral_norms(30);
  return p;
}

std::vector<SpectralLinear*> EmulatorParams::trainable_layers() {
  std::vector<SpectralLinear*> layers{&first};
  for (auto& block : blocks) {
    layers.push_back(&block.a);
    layers.push_back(&block.b);
  }
  if (cfg.arch == EmulatorArch::constrained) {
    layers.push_back(&head_area_logits);
    layers.push_back(&head_area_total);
    layers.push_back(&head_perim_rough);
    layers.push_back(&head_counts);
  } else {
    layers.push_back(&head_a);
    layers.push_back(&head_p);
    layers.push_back(&head_cc);
  }
  return layers;
}

void EmulatorParams::refresh_spectral_norms(int iters) {
  for (SpectralLinear* layer : trainable_layers())
    if (layer->normalize) layer->power_iterate(iters);
}

namespace {

struct ParamVars {
  std::vector<Var> weight;
  std::vector<Var> bias;
};

ParamVars make_param_vars(Tape& t, EmulatorParams& params, bool requires_grad) {
  ParamVars pv;
  for (SpectralLinear* layer : params.trainable_layers()) {
    pv.weight.push_back(
        t.grid(layer->out_dim, layer->in_dim, layer->weight, requires_grad));
    pv.bias.push_back(t.vector(layer->bias, requires_grad));
  }
  return pv;
}

// Effective weight is W / sigma_hat for normalized layers; sigma_hat is the
// detached power-iteration estimate refreshed outside the tape.
Var apply_linear(Tape& t, const SpectralLinear& layer, Var w, Var b, Var x) {
  Var weff = layer.normalize
                 ? t.scale(w, 1.0 / std::max(layer.sigma_hat, kSigmaFloor))
                 : w;
  return t.add(t.matvec(weff, x), b);
}

Var relu(Tape& t, Var v) { return t.max2(v, t.scalar(0.0)); }

Var rmsnorm(Tape& t, Var v, double eps) {
  const int d = v.shape.rows;
  Var ms = t.add(t.scale(t.sum(t.mul(v, v)), 1.0 / d), t.scalar(eps));
  return t.div(v, t.sqrt(ms));
}

Var ones_vec(Tape& t, int n) {
  std::vector<double> v(n, 1.0);
  return t.vector(v);
}

struct LayerIndex {
  int first = 0;
  std::vector<std::pair<int, int>> blocks;  // (a, b)
  int h0 = 0, h1 = 0, h2 = 0, h3 = 0;       // head slots in trainable order
};

LayerIndex layer_index(const EmulatorParams& p) {
  LayerIndex idx;
  int k = 0;
  idx.first = k++;
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    idx.blocks.emplace_back(k, k + 1);
    k += 2;
  }
  idx.h0 = k++;
  idx.h1 = k++;
  idx.h2 = k++;
  if (p.cfg.arch == EmulatorArch::constrained) idx.h3 = k++;
  return idx;
}

Var latent_with(Tape& t, const EmulatorParams& p, const ParamVars& pv, Var x) {
  if (x.shape.kind != ad::ShapeKind::grid || x.shape.rows != p.cfg.input_height ||
      x.shape.cols != p.cfg.input_width)
    throw std::invalid_argument("emulator: input grid does not match config");
  const LayerIndex idx = layer_index(p);
  const bool vanilla = p.cfg.arch == EmulatorArch::unconstrained_no_sn;

  Var xv = t.reshape(x, Shape::vector(p.cfg.input_dim()));
  Var z = apply_linear(t, p.first, pv.weight[idx.first], pv.bias[idx.first], xv);
  z = vanilla ? relu(t, z) : t.gelu(z);

  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    const auto [ka, kb] = idx.blocks[i];
    if (vanilla) {
      // Plain stacked MLP for the no-SN baseline.
      z = relu(t, apply_linear(t, p.blocks[i].a, pv.weight[ka], pv.bias[ka], z));
      z = relu(t, apply_linear(t, p.blocks[i].b, pv.weight[kb], pv.bias[kb], z));
    } else {
      Var y = rmsnorm(t, z, p.cfg.rms_eps);
      y = t.gelu(apply_linear(t, p.blocks[i].a, pv.weight[ka], pv.bias[ka], y));
      y = apply_linear(t, p.blocks[i].b, pv.weight[kb], pv.bias[kb], y);
      z = t.add(z, y);
    }
  }
  return z;
}

Var forward_with(Tape& t, const EmulatorParams& p, const ParamVars& pv, Var x) {
  const LayerIndex idx = layer_index(p);
  const int n = p.cfg.n_levels();
  Var z = latent_with(t, p, pv, x);

  Var a_vec{}, p_vec{}, cc_vec{};
  if (p.cfg.arch == EmulatorArch::constrained) {
    // Area head: softmax density over N+1 bins; the area at level i is the
    // total area times the upper-tail mass, monotone by construction.
    Var logits =
        apply_linear(t, p.head_area_logits, pv.weight[idx.h0], pv.bias[idx.h0], z);
    Var density = t.softmax(logits);
    Var csum = t.cumsum(density);
    Var tail = t.sub(ones_vec(t, n), t.slice(csum, 0, n));
    Var total_raw =
        apply_linear(t, p.head_area_total, pv.weight[idx.h1], pv.bias[idx.h1], z);
    Var a_total = t.scale(t.softplus(t.reshape(total_raw, Shape::scalar())),
                          p.cfg.domain_area_cap());
    a_vec = t.mul(a_total, tail);

    // Perimeter head: isoperimetric floor times (1 + roughness).
    Var rough = t.softplus(
        apply_linear(t, p.head_perim_rough, pv.weight[idx.h2], pv.bias[idx.h2], z));
    p_vec = t.mul(t.sqrt(t.scale(a_vec, 4.0 * kPi)), t.add(ones_vec(t, n), rough));

    cc_vec = t.softplus(
        apply_linear(t, p.head_counts, pv.weight[idx.h3], pv.bias[idx.h3], z));
  } else {
    a_vec = relu(t, apply_linear(t, p.head_a, pv.weight[idx.h0], pv.bias[idx.h0], z));
    p_vec = relu(t, apply_linear(t, p.head_p, pv.weight[idx.h1], pv.bias[idx.h1], z));
    cc_vec =
        relu(t, apply_linear(t, p.head_cc, pv.weight[idx.h2], pv.bias[idx.h2], z));
  }

  std::vector<Var> parts;
  parts.reserve(3 * n);
  for (int i = 0; i < n; ++i) {
    parts.push_back(t.slice(a_vec, i, 1));
    parts.push_back(t.slice(p_vec, i, 1));
    parts.push_back(t.slice(cc_vec, i, 1));
  }
  return t.concat(parts);
}

}  // namespace

Var emulator_forward(Tape& tape, const EmulatorParams& params, Var x,
                     std::vector<Var>* param_vars) {
  auto& mut = const_cast<EmulatorParams&>(params);  // layer list only; no mutation
  ParamVars pv = make_param_vars(tape, mut, param_vars != nullptr);
  if (param_vars) {
    param_vars->clear();
    for (std::size_t i = 0; i < pv.weight.size(); ++i) {
      param_vars->push_back(pv.weight[i]);
      param_vars->push_back(pv.bias[i]);
    }
  }
  return forward_with(tape, params, pv, x);
}

Var emulator_latent(Tape& tape, const EmulatorParams& params, Var x) {
  auto& mut = const_cast<EmulatorParams&>(params);
  ParamVars pv = make_param_vars(tape, mut, false);
  return latent_with(tape, params, pv, x);
}

std::vector<double> emulator_predict(const EmulatorParams& params,
                                     const Field2D& field) {
  Tape tape;
  Var x = tape.grid(field.height(), field.width(), field.values());
  Var gamma = emulator_forward(tape, params, x);
  auto v = tape.value(gamma);
  return std::vector<double>(v.begin(), v.end());
}

double first_layer_norm(const EmulatorParams& params) {
  SpectralLinear probe = params.first;
  return probe.power_iterate(200);
}

// ---------------------------------------------------------------------------

double minkowski_loss(std::span<const double> gamma_hat,
                      std::span<const double> gamma_true,
                      const LossWeights& weights) {
  if (gamma_hat.size() != gamma_true.size() || gamma_hat.empty())
    throw std::invalid_argument("minkowski_loss: length mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < gamma_hat.size(); ++i) {
    if (!(gamma_hat[i] >= 0.0) || !(gamma_true[i] >= 0.0))
      throw std::invalid_argument("minkowski_loss: negative entry rejected");
    loss += weights.channel(static_cast<int>(i)) *
            std::abs(std::log1p(gamma_hat[i]) - std::log1p(gamma_true[i]));
  }
  return loss;
}

Var minkowski_loss_on_tape(Tape& t, Var gamma_hat,
                           std::span<const double> gamma_true,
                           const LossWeights& weights, ChannelEncoding encoding) {
  if (gamma_hat.shape.kind != ad::ShapeKind::vector ||
      gamma_hat.shape.rows != static_cast<int>(gamma_true.size()))
    throw std::invalid_argument("minkowski_loss_on_tape: length mismatch");
  const int n = gamma_hat.shape.rows;

  std::vector<double> target(n), wvec(n);
  for (int i = 0; i < n; ++i) {
    const bool chi_slot = encoding == ChannelEncoding::chi_symlog && i % 3 == 2;
    if (chi_slot) {
      const double v = gamma_true[i];
      target[i] = (v < 0.0 ? -1.0 : 1.0) * std::log1p(std::abs(v));
    } else {
      if (!(gamma_true[i] >= 0.0))
        throw std::invalid_argument("minkowski_loss_on_tape: negative target");
      target[i] = std::log1p(gamma_true[i]);
    }
    wvec[i] = weights.channel(i);
  }

  std::vector<Var> parts;
  parts.reserve(n);
  for (int i = 0; i < n; ++i) {
    Var slot = t.slice(gamma_hat, i, 1);
    const bool chi_slot = encoding == ChannelEncoding::chi_symlog && i % 3 == 2;
    parts.push_back(chi_slot ? slot : t.log1p(slot));
  }
  Var encoded = t.concat(parts);
  Var diff = t.abs(t.sub(encoded, t.vector(target)));
  return t.sum(t.mul(diff, t.vector(wvec)));
}

double log_space_mse(std::span<const double> gamma_hat,
                     std::span<const double> gamma_true) {
  if (gamma_hat.size() != gamma_true.size() || gamma_hat.empty())
    throw std::invalid_argument("log_space_mse: length mismatch");
  double mse = 0.0;
  for (std::size_t i = 0; i < gamma_hat.size(); ++i) {
    const double d = std::log1p(gamma_hat[i]) - std::log1p(gamma_true[i]);
    mse += d * d;
  }
  return mse / static_cast<double>(gamma_hat.size());
}

double trust_weight(std::span<const double> gamma_emul_on_truth,
                    std::span<const double> gamma_true, double tau_trust) {
  if (!(tau_trust > 0.0))
    throw std::invalid_argument("trust_weight: tau must be > 0");
  return std::exp(-tau_trust * log_space_mse(gamma_emul_on_truth, gamma_true));
}

double tau_trust_from_errors(std::span<const double> errors, double percentile,
                             double floor) {
  if (errors.empty())
    throw std::invalid_argument("tau_trust_from_errors: empty error sample");
  std::vector<double> sorted(errors.begin(), errors.end());
  std::sort(sorted.begin(), sorted.end());
  const double q = quantile_type7(sorted, percentile);
  if (!(q > 0.0))
    throw std::invalid_argument("tau_trust_from_errors: percentile error not positive");
  return -std::log(floor) / q;
}

double calibrate_tau_trust(const EmulatorParams& params,
                           std::span<const Field2D> fields,
                           std::span<const GammaVector> targets) {
  if (fields.empty() || fields.size() != targets.size())
    throw std::invalid_argument("calibrate_tau_trust: empty or mismatched corpus");
  std::vector<double> errors(fields.size());
  for (std::size_t i = 0; i < fields.size(); ++i)
    errors[i] = log_space_mse(emulator_predict(params, fields[i]),
                              targets[i].entries);
  return tau_trust_from_errors(errors);
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
  if (!(weight_decay >= 0.0))
    throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
  if (batch < 1 || epochs < 1 || patience < 1)
    throw std::invalid_argument("TrainConfig: batch/epochs/patience must be >= 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    throw std::invalid_argument("TrainConfig: val_fraction must be in [0,1)");
  if (weights.area < 0.0 || weights.perimeter < 0.0 || weights.components < 0.0)
    throw std::invalid_argument("TrainConfig: loss weights must be >= 0");
}

namespace {

struct AdamState {
  std::vector<std::vector<double>> m, v;
  long t = 0;
};

void adam_step(EmulatorParams& params, const std::vector<const double*>& grads,
               AdamState& state, const TrainConfig& cfg) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++state.t;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  auto layers = params.trainable_layers();
  std::size_t slot = 0;
  for (SpectralLinear* layer : layers) {
    for (std::vector<double>* tensor : {&layer->weight, &layer->bias}) {
      const double* g = grads[slot];
      auto& m = state.m[slot];
      auto& v = state.v[slot];
      for (std::size_t i = 0; i < tensor->size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        (*tensor)[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + eps) +
                                  cfg.weight_decay * (*tensor)[i]);
      }
      ++slot;
    }
  }
}

}  // namespace

TrainResult train_emulator(std::span<const Field2D> fields,
                           std::span<const GammaVector> targets,
                           const EmulatorConfig& arch_cfg,
                           const TrainConfig& train_cfg) {
  arch_cfg.validate();
  train_cfg.validate();
  if (fields.size() != targets.size() || fields.empty())
    throw std::invalid_argument("train_emulator: fields/targets mismatch");
  const int n3 = 3 * arch_cfg.n_levels();
  for (const auto& g : targets)
    if (static_cast<int>(g.entries.size()) != n3)
      throw std::invalid_argument("train_emulator: target length mismatch");

  std::uint64_t seed_state = train_cfg.seed;
  Rng split_rng(splitmix64(seed_state));
  const std::uint64_t init_seed = splitmix64(seed_state);
  const std::uint64_t shuffle_seed = splitmix64(seed_state);

  std::vector<std::size_t> order(fields.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[split_rng.uniform_index(i)]);
  const std::size_t n_val =
      static_cast<std::size_t>(std::llround(train_cfg.val_fraction *
                                            static_cast<double>(order.size())));
  std::vector<std::size_t> val_idx(order.end() - n_val, order.end());
  std::vector<std::size_t> train_idx(order.begin(), order.end() - n_val);
  if (train_idx.empty())
    throw std::invalid_argument("train_emulator: empty training split");

  EmulatorParams params = EmulatorParams::init(arch_cfg, init_seed);
  auto layers = params.trainable_layers();

  AdamState adam;
  for (SpectralLinear* layer : layers) {
    adam.m.emplace_back(layer->weight.size(), 0.0);
    adam.v.emplace_back(layer->weight.size(), 0.0);
    adam.m.emplace_back(layer->bias.size(), 0.0);
    adam.v.emplace_back(layer->bias.size(), 0.0);
  }

  auto eval_split = [&](const std::vector<std::size_t>& idx) {
    double total = 0.0;
    for (std::size_t i : idx)
      total += minkowski_loss(emulator_predict(params, fields[i]),
                              targets[i].entries, train_cfg.weights);
    return idx.empty() ? 0.0 : total / static_cast<double>(idx.size());
  };

  TrainHistory history;
  EmulatorParams best = params;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;

  Rng shuffle_rng(shuffle_seed);
  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    for (std::size_t i = train_idx.size(); i > 1; --i)
      std::swap(train_idx[i - 1], train_idx[shuffle_rng.uniform_index(i)]);

    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < train_idx.size();
         start += static_cast<std::size_t>(train_cfg.batch)) {
      const std::size_t stop =
          std::min(train_idx.size(), start + static_cast<std::size_t>(train_cfg.batch));

      for (SpectralLinear* layer : layers)
        if (layer->normalize) layer->power_iterate(train_cfg.sn_power_iters);

      Tape tape;
      ParamVars pv = make_param_vars(tape, params, /*requires_grad=*/true);
      Var loss_sum = tape.scalar(0.0);
      for (std::size_t k = start; k < stop; ++k) {
        const Field2D& f = fields[train_idx[k]];
        Var x = tape.grid(f.height(), f.width(), f.values());
        Var gamma_hat = forward_with(tape, params, pv, x);
        loss_sum = tape.add(loss_sum,
                            minkowski_loss_on_tape(tape, gamma_hat,
                                                   targets[train_idx[k]].entries,
                                                   train_cfg.weights));
      }
      Var loss = tape.scale(loss_sum, 1.0 / static_cast<double>(stop - start));
      const double loss_val = tape.value_scalar(loss);
      if (!std::isfinite(loss_val))
        throw NumericalError("train_emulator: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", batch " +
                                 std::to_string(n_batches),
                             epoch);
      tape.backward(loss);

      std::vector<const double*> grads;
      for (std::size_t i = 0; i < pv.weight.size(); ++i) {
        grads.push_back(tape.adjoint(pv.weight[i]).data());
        grads.push_back(tape.adjoint(pv.bias[i]).data());
      }
      adam_step(params, grads, adam, train_cfg);

      epoch_loss += loss_val;
      ++n_batches;
    }
    history.train_loss.push_back(epoch_loss / static_cast<double>(n_batches));

    const double val_loss =
        val_idx.empty() ? history.train_loss.back() : eval_split(val_idx);
    history.val_loss.push_back(val_loss);

    if (val_loss < best_val) {
      best_val = val_loss;
      best = params;
      history.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= train_cfg.patience) {
      break;
    }
  }

  best.refresh_spectral_norms(50);
  return {std::move(best), std::move(history)};
}

EvalMetrics evaluate(const EmulatorParams& params, std::span<const Field2D> fields,
                     std::span<const GammaVector> targets) {
  if (fields.size() != targets.size() || fields.empty())
    throw std::invalid_argument("evaluate: fields/targets mismatch");
  const int n = params.cfg.n_levels();

  double ss_res[3] = {0, 0, 0}, ss_tot[3] = {0, 0, 0}, mean[3] = {0, 0, 0};
  std::size_t per_channel = fields.size() * static_cast<std::size_t>(n);

  std::vector<std::vector<double>> preds(fields.size());
  for (std::size_t s = 0; s < fields.size(); ++s) {
    preds[s] = emulator_predict(params, fields[s]);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c)
        mean[c] += std::log1p(targets[s].entries[3 * i + c]);
  }
  for (int c = 0; c < 3; ++c) mean[c] /= static_cast<double>(per_channel);

  EvalMetrics metrics;
  std::size_t violations = 0, violating_samples = 0;
  for (std::size_t s = 0; s < fields.size(); ++s) {
    metrics.m_loss += minkowski_loss(preds[s], targets[s].entries,
                                     LossWeights::unit());
    bool sample_violates = false;
    for (int i = 0; i < n; ++i) {
      const double a_hat = preds[s][3 * i], p_hat = preds[s][3 * i + 1];
      if (p_hat * p_hat < 4.0 * kPi * a_hat * (1.0 - 1e-9)) {
        ++violations;
        sample_violates = true;
      }
      for (int c = 0; c < 3; ++c) {
        const double y = std::log1p(targets[s].entries[3 * i + c]);
        const double yh = std::log1p(preds[s][3 * i + c]);
        ss_res[c] += (yh - y) * (yh - y);
        ss_tot[c] += (y - mean[c]) * (y - mean[c]);
      }
    }
    if (sample_violates) ++violating_samples;
  }

  metrics.m_loss /= static_cast<double>(fields.size());
  auto r2 = [](double res, double tot) {
    return 1.0 - res / std::max(tot, 1e-300);
  };
  metrics.r2_area = r2(ss_res[0], ss_tot[0]);
  metrics.r2_perimeter = r2(ss_res[1], ss_tot[1]);
  metrics.r2_components = r2(ss_res[2], ss_tot[2]);
  metrics.r2_overall = r2(ss_res[0] + ss_res[1] + ss_res[2],
                          ss_tot[0] + ss_tot[1] + ss_tot[2]);
  metrics.nu_iso_pairs =
      static_cast<double>(violations) / static_cast<double>(per_channel);
  metrics.nu_iso_samples =
      static_cast<double>(violating_samples) / static_cast<double>(fields.size());
  return metrics;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'M', 'G', 'E', 'M', 'U', '0', '1', 0};

std::vector<std::pair<std::string, SpectralLinear*>> named_layers(EmulatorParams& p) {
  std::vector<std::pair<std::string, SpectralLinear*>> out;
  out.emplace_back("first", &p.first);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    out.emplace_back("block" + std::to_string(i) + ".a", &p.blocks[i].a);
    out.emplace_back("block" + std::to_string(i) + ".b", &p.blocks[i].b);
  }
  if (p.cfg.arch == EmulatorArch::constrained) {
    out.emplace_back("head_area_logits", &p.head_area_logits);
    out.emplace_back("head_area_total", &p.head_area_total);
    out.emplace_back("head_perim_rough", &p.head_perim_rough);
    out.emplace_back("head_counts", &p.head_counts);
  } else {
    out.emplace_back("head_a", &p.head_a);
    out.emplace_back("head_p", &p.head_p);
    out.emplace_back("head_cc", &p.head_cc);
  }
  return out;
}

}  // namespace

void save_checkpoint(const EmulatorParams& params, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto& mut = const_cast<EmulatorParams&>(params);
  auto layers = named_layers(mut);

  nlohmann::json manifest;
  manifest["format"] = "MGEMU01";
  manifest["arch"] = arch_name(params.cfg.arch);
  manifest["input_height"] = params.cfg.input_height;
  manifest["input_width"] = params.cfg.input_width;
  manifest["pixel_size"] = params.cfg.pixel_size;
  manifest["hidden_dim"] = params.cfg.hidden_dim;
  manifest["n_blocks"] = params.cfg.n_blocks;
  manifest["thresholds"] = params.cfg.thresholds;
  manifest["rms_eps"] = params.cfg.rms_eps;

  std::vector<double> blob;
  nlohmann::json layer_list = nlohmann::json::array();
  for (auto& [name, layer] : layers) {
    layer_list.push_back({{"name", name},
                          {"out", layer->out_dim},
                          {"in", layer->in_dim},
                          {"normalize", layer->normalize},
                          {"sigma_hat", layer->sigma_hat},
                          {"offset", blob.size()}});
    blob.insert(blob.end(), layer->weight.begin(), layer->weight.end());
    blob.insert(blob.end(), layer->bias.begin(), layer->bias.end());
    blob.insert(blob.end(), layer->u_vec.begin(), layer->u_vec.end());
  }
  manifest["layers"] = layer_list;
  manifest["blob_doubles"] = blob.size();

  std::ofstream mf(dir / "manifest.json", std::ios::trunc);
  if (!mf)
    throw IoError(IoError::Code::write_failure, "save_checkpoint: manifest");
  mf << manifest.dump(2) << "\n";

  std::ofstream bin(dir / "params.bin", std::ios::binary | std::ios::trunc);
  if (!bin)
    throw IoError(IoError::Code::write_failure, "save_checkpoint: params.bin");
  bin.write(kCkptMagic, sizeof(kCkptMagic));
  bin.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(double)));
}

EmulatorParams load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf)
    throw IoError(IoError::Code::bad_manifest,
                  "load_checkpoint: missing manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoError::Code::bad_manifest,
                  std::string("load_checkpoint: malformed manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "MGEMU01")
    throw IoError(IoError::Code::bad_magic, "load_checkpoint: unknown format");

  EmulatorConfig cfg;
  cfg.arch = arch_from_name(manifest.at("arch").get<std::string>());
  cfg.input_height = manifest.at("input_height").get<int>();
  cfg.input_width = manifest.at("input_width").get<int>();
  cfg.pixel_size = manifest.at("pixel_size").get<double>();
  cfg.hidden_dim = manifest.at("hidden_dim").get<int>();
  cfg.n_blocks = manifest.at("n_blocks").get<int>();
  cfg.thresholds = manifest.at("thresholds").get<std::vector<double>>();
  cfg.rms_eps = manifest.at("rms_eps").get<double>();

  EmulatorParams params = EmulatorParams::init(cfg, 0);

  std::ifstream bin(dir / "params.bin", std::ios::binary);
  if (!bin)
    throw IoError(IoError::Code::read_failure, "load_checkpoint: missing params.bin");
  char magic[8];
  bin.read(magic, sizeof(magic));
  if (bin.gcount() != sizeof(magic) || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw IoError(IoError::Code::bad_magic, "load_checkpoint: bad params magic");
  const std::size_t n_doubles = manifest.at("blob_doubles").get<std::size_t>();
  std::vector<double> blob(n_doubles);
  bin.read(reinterpret_cast<char*>(blob.data()),
           static_cast<std::streamsize>(n_doubles * sizeof(double)));
  if (bin.gcount() != static_cast<std::streamsize>(n_doubles * sizeof(double)))
    throw IoError(IoError::Code::truncated, "load_checkpoint: truncated params.bin");

  auto layers = named_layers(params);
  auto layer_list = manifest.at("layers");
  if (layer_list.size() != layers.size())
    throw IoError(IoError::Code::bad_manifest, "load_checkpoint: layer count mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& [name, layer] = layers[i];
    const auto& meta = layer_list[i];
    if (meta.at("name").get<std::string>() != name ||
        meta.at("out").get<int>() != layer->out_dim ||
        meta.at("in").get<int>() != layer->in_dim)
      throw IoError(IoError::Code::bad_manifest,
                    "load_checkpoint: layer mismatch at " + name);
    layer->normalize = meta.at("normalize").get<bool>();
    layer->sigma_hat = meta.at("sigma_hat").get<double>();
    std::size_t offset = meta.at("offset").get<std::size_t>();
    const std::size_t need =
        layer->weight.size() + layer->bias.size() + layer->u_vec.size();
    if (offset + need > blob.size())
      throw IoError(IoError::Code::truncated, "load_checkpoint: blob too short");
    std::copy_n(blob.begin() + offset, layer->weight.size(), layer->weight.begin());
    offset += layer->weight.size();
    std::copy_n(blob.begin() + offset, layer->bias.size(), layer->bias.begin());
    offset += layer->bias.size();
    std::copy_n(blob.begin() + offset, layer->u_vec.size(), layer->u_vec.begin());
  }
  return params;
}

}  // namespace minkgeo
