#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include "commands.hpp"
#include "common.hpp"
#include "minkgeo/emulator.hpp"
#include "minkgeo/raster_io.hpp"
#include "minkgeo/target_pipeline.hpp"

namespace fs = std::filesystem;

namespace minkgeo::cli {

namespace {

struct Dataset {
  std::vector<Field2D> fields;
  std::vector<GammaVector> targets;
  GammaStore store;
};

Dataset load_dataset(const std::string& store_dir, const std::string& fields_dir) {
  Dataset ds;
  ds.store = load_store(store_dir);
  const fs::path corpus =
      fields_dir.empty() ? fs::path(ds.store.corpus_dir) : fs::path(fields_dir);
  if (!fs::is_directory(corpus))
    throw std::invalid_argument(
        "fields directory not found: " + corpus.string() +
        " (pass --fields if the corpus moved since target generation)");
  const int n = ds.store.n_levels;
  for (std::size_t i = 0; i < ds.store.field_files.size(); ++i) {
    ds.fields.push_back(read_raster(corpus / ds.store.field_files[i]));
    GammaVector g;
    g.n_levels = n;
    g.entries.assign(ds.store.rows[i].begin(), ds.store.rows[i].begin() + 3 * n);
    if (ds.store.with_holes)
      g.holes.assign(ds.store.rows[i].begin() + 3 * n, ds.store.rows[i].end());
    ds.targets.push_back(std::move(g));
  }
  return ds;
}

nlohmann::json metrics_to_json(const EvalMetrics& m) {
  return {{"m_loss", m.m_loss},
          {"r2_overall", m.r2_overall},
          {"r2_area", m.r2_area},
          {"r2_perimeter", m.r2_perimeter},
          {"r2_components", m.r2_components},
          {"nu_iso_pairs", m.nu_iso_pairs},
          {"nu_iso_samples", m.nu_iso_samples}};
}

void print_metrics(const EvalMetrics& m) {
  std::cout << "M (unweighted mean) : " << m.m_loss << "\n"
            << "R2 overall          : " << m.r2_overall << "\n"
            << "R2 area             : " << m.r2_area << "\n"
            << "R2 perimeter        : " << m.r2_perimeter << "\n"
            << "R2 components       : " << m.r2_components << "\n"
            << "nu_iso (pairs)      : " << m.nu_iso_pairs << "\n"
            << "nu_iso (samples)    : " << m.nu_iso_samples << "\n";
}

}  // namespace

void setup_train_emulator(CLI::App& app) {
  struct Opts {
    std::string arch = "constrained";
    std::string data, fields, out;
    double lr = defaults::kLearningRate;
    double weight_decay = defaults::kWeightDecay;
    int batch = defaults::kBatchSize;
    int epochs = defaults::kMaxEpochs;
    int patience = defaults::kEarlyStoppingPatience;
    double val_fraction = 0.2;
    std::uint64_t seed = 0;
    int hidden = 256;
    int blocks = 2;
    double lambda_area = defaults::kLossWeightArea;
    double lambda_perimeter = defaults::kLossWeightPerimeter;
    double lambda_cc = defaults::kLossWeightComponents;
  };
  auto opts = std::make_shared<Opts>();
  CLI::App* sub = app.add_subcommand(
      "train-emulator",
      "Train a descriptor emulator on a target store and its corpus");
  auto set = std::make_shared<OptionSet>(sub);
  set->add("--arch", opts->arch, "constrained | unconstrained | nosn");
  set->add("--data", opts->data, "target store directory")->required();
  set->add("--fields", opts->fields,
           "corpus directory override (defaults to the store's record)");
  set->add("--out", opts->out, "checkpoint output directory")->required();
  set->add("--lr", opts->lr, "Adam learning rate");
  set->add("--weight-decay", opts->weight_decay, "decoupled weight decay");
  set->add("--batch", opts->batch, "batch size");
  set->add("--epochs", opts->epochs, "maximum epochs");
  set->add("--patience", opts->patience, "early-stopping patience in epochs");
  set->add("--val-fraction", opts->val_fraction,
           "held-out validation fraction in [0,1)");
  set->add("--seed", opts->seed, "split/init/shuffle seed");
  set->add("--hidden", opts->hidden, "hidden width of the backbone");
  set->add("--blocks", opts->blocks, "number of residual blocks");
  set->add("--lambda-area", opts->lambda_area, "area channel loss weight");
  set->add("--lambda-perimeter", opts->lambda_perimeter,
           "perimeter channel loss weight");
  set->add("--lambda-cc", opts->lambda_cc, "component channel loss weight");

  sub->callback([opts, set]() {
    set->layer_config_file();
    Dataset ds = load_dataset(opts->data, opts->fields);
    if (ds.fields.empty())
      throw std::invalid_argument("train-emulator: empty dataset");

    EmulatorConfig cfg;
    cfg.arch = arch_from_name(opts->arch);
    cfg.input_height = ds.fields.front().height();
    cfg.input_width = ds.fields.front().width();
    cfg.pixel_size = ds.fields.front().pixel_size();
    cfg.hidden_dim = opts->hidden;
    cfg.n_blocks = opts->blocks;
    cfg.thresholds = ds.store.spec.physical_thresholds;

    TrainConfig tc;
    tc.lr = opts->lr;
    tc.weight_decay = opts->weight_decay;
    tc.batch = opts->batch;
    tc.epochs = opts->epochs;
    tc.patience = opts->patience;
    tc.val_fraction = opts->val_fraction;
    tc.seed = opts->seed;
    tc.weights = {opts->lambda_area, opts->lambda_perimeter, opts->lambda_cc};

    TrainResult result = train_emulator(ds.fields, ds.targets, cfg, tc);
    save_checkpoint(result.params, opts->out);

    std::ofstream hist(fs::path(opts->out) / "history.csv", std::ios::trunc);
    hist << "epoch,train_loss,val_loss\n";
    hist.precision(17);
    for (std::size_t e = 0; e < result.history.train_loss.size(); ++e)
      hist << e << "," << result.history.train_loss[e] << ","
           << result.history.val_loss[e] << "\n";
    hist.close();

    write_resolved_config(opts->out, "train-emulator", set->resolved());
    write_run_manifest(opts->out);

    nlohmann::json summary = {
        {"best_epoch", result.history.best_epoch},
        {"epochs_run", result.history.train_loss.size()},
        {"best_val_loss", result.history.val_loss.empty()
                              ? 0.0
                              : result.history.val_loss[result.history.best_epoch]},
        {"out", opts->out}};
    if (set->json_output()) print_json_summary(summary);
    std::cerr << "train-emulator: best epoch " << result.history.best_epoch
              << ", checkpoint in " << opts->out << "\n";
  });
}

void setup_eval_emulator(CLI::App& app) {
  struct Opts {
    std::string ckpt, data, fields;
  };
  auto opts = std::make_shared<Opts>();
  CLI::App* sub = app.add_subcommand(
      "eval-emulator", "Evaluate a checkpoint against a target store");
  auto set = std::make_shared<OptionSet>(sub);
  set->add("--ckpt", opts->ckpt, "checkpoint directory")->required();
  set->add("--data", opts->data, "target store directory")->required();
  set->add("--fields", opts->fields, "corpus directory override");

  sub->callback([opts, set]() {
    set->layer_config_file();
    EmulatorParams params = load_checkpoint(opts->ckpt);
    Dataset ds = load_dataset(opts->data, opts->fields);
    const EvalMetrics metrics = evaluate(params, ds.fields, ds.targets);
    if (set->json_output())
      print_json_summary(metrics_to_json(metrics));
    else
      print_metrics(metrics);
  });
}

}  // namespace minkgeo::cli
