#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "common.hpp"
#include "minkgeo/errors.hpp"
#include "minkgeo/version.hpp"

int main(int argc, char** argv) {
  using namespace minkgeo;

  CLI::App app{"Exact and differentiable integral-geometric descriptors of "
               "2-D scalar fields: target generation, surrogate training, "
               "and gradient diagnostics"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  cli::setup_gen_synthetic(app);
  cli::setup_calibrate(app);
  cli::setup_gen_targets(app);
  cli::setup_train_emulator(app);
  cli::setup_eval_emulator(app);
  cli::setup_invert(app);
  cli::setup_gradcheck(app);
  cli::setup_raps(app);
  cli::setup_mech_sweep(app);
  cli::setup_steiner_check(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kExitValidation;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return cli::kExitNumerical;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kExitValidation;
  }
  return cli::kExitOk;
}
