#pragma once

#include <CLI11.hpp>

namespace minkgeo::cli {

void setup_gen_synthetic(CLI::App& app);
void setup_calibrate(CLI::App& app);
void setup_gen_targets(CLI::App& app);
void setup_train_emulator(CLI::App& app);
void setup_eval_emulator(CLI::App& app);
void setup_invert(CLI::App& app);
void setup_gradcheck(CLI::App& app);
void setup_raps(CLI::App& app);
void setup_mech_sweep(CLI::App& app);
void setup_steiner_check(CLI::App& app);

}  // namespace minkgeo::cli
