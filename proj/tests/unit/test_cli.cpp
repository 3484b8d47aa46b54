// Process-level tests of the command-line tool. These spawn the built
// binary; the path is injected by the build system.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "minkgeo/raster_io.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code;
  std::string stdout_text;
};

RunResult run_cli(const std::string& args) {
  const fs::path out_file = fs::temp_directory_path() / "minkgeo_cli_out.txt";
  const std::string cmd = std::string(MINKGEO_CLI_BIN) + " " + args + " > " +
                          out_file.string() + " 2>/dev/null";
  const int raw = std::system(cmd.c_str());
  RunResult result;
  result.exit_code = WEXITSTATUS(raw);
  std::ifstream in(out_file);
  result.stdout_text.assign((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
  return result;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "minkgeo_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::uint64_t tree_digest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::uint64_t digest = 0xcbf29ce484222325ULL;
  for (const auto& f : files) digest ^= minkgeo::fnv1a64_file(f);
  return digest;
}

}  // namespace

TEST_CASE("gen-synthetic is replay identical") {
  const fs::path a = fresh_dir("syn_a");
  const fs::path b = fresh_dir("syn_b");
  const std::string flags =
      " --n 12 --seed 7 --height 16 --width 16 --peaks-min 1 --peaks-max 3";
  CHECK(run_cli("gen-synthetic --out " + a.string() + flags).exit_code == 0);
  const std::uint64_t first = tree_digest(a);
  CHECK(run_cli("gen-synthetic --out " + a.string() + flags).exit_code == 0);
  CHECK(tree_digest(a) == first);  // rerun overwrites identical content

  // Field payloads do not depend on the output path either.
  CHECK(run_cli("gen-synthetic --out " + b.string() + flags).exit_code == 0);
  for (const auto& entry : fs::directory_iterator(a))
    if (entry.path().extension() == ".mgf")
      CHECK(minkgeo::fnv1a64_file(entry.path()) ==
            minkgeo::fnv1a64_file(b / entry.path().filename()));

  // The run directory carries the resolved config with a version stamp.
  std::ifstream cfg(a / "resolved_config.json");
  REQUIRE(cfg.good());
  nlohmann::json doc;
  cfg >> doc;
  CHECK(doc.at("command") == "gen-synthetic");
  CHECK(doc.at("tool").at("name") == "minkgeo");
  CHECK(doc.at("params").at("seed") == 7);
  CHECK(fs::exists(a / "manifest.json"));
}

TEST_CASE("help text documents physical units") {
  RunResult help = run_cli("gen-targets --help");
  CHECK(help.exit_code == 0);
  CHECK(help.stdout_text.find("mm/h") != std::string::npos);
  RunResult help2 = run_cli("gen-synthetic --help");
  CHECK(help2.stdout_text.find("km") != std::string::npos);
}

TEST_CASE("validation failures exit with code 2") {
  CHECK(run_cli("calibrate --data /nonexistent_dir_42").exit_code == 2);
  CHECK(run_cli("raps --input /nonexistent.mgf").exit_code == 2);
  CHECK(run_cli("definitely-not-a-subcommand").exit_code == 2);
  CHECK(run_cli("gen-synthetic --n 5 --bogus-flag 3").exit_code == 2);
}

TEST_CASE("calibrate then gen-targets then JSON summaries") {
  const fs::path corpus = fresh_dir("corpus");
  CHECK(run_cli("gen-synthetic --out " + corpus.string() +
                " --n 20 --seed 3 --height 16 --width 16")
            .exit_code == 0);

  RunResult cal = run_cli("calibrate --data " + corpus.string() +
                          " --levels 0.2,0.5,0.8 --json");
  CHECK(cal.exit_code == 0);
  nlohmann::json spec = nlohmann::json::parse(cal.stdout_text);
  REQUIRE(spec.at("physical_thresholds").size() == 3);
  CHECK(spec.at("physical_thresholds")[0].get<double>() <
        spec.at("physical_thresholds")[2].get<double>());

  const fs::path store = fresh_dir("store");
  RunResult gen = run_cli("gen-targets --data " + corpus.string() + " --out " +
                          store.string() +
                          " --levels 0.2,0.5,0.8 --workers 2 --json");
  CHECK(gen.exit_code == 0);
  nlohmann::json summary = nlohmann::json::parse(gen.stdout_text);
  CHECK(summary.at("n_fields") == 20);
  CHECK(fs::exists(store / "manifest.json"));
  CHECK(fs::exists(store / "gamma_0.bin"));
}

TEST_CASE("invert echoes the shipped defaults in its resolved config") {
  const fs::path out = fresh_dir("invert");
  // A tiny analytic inversion with explicit target; defaults left in place.
  RunResult res = run_cli(
      "invert --surrogate analytic --thresholds 0.5,1.0 --height 8 --width 8 "
      "--pixel-size 1.0 --target-gamma 20,40,1,10,25,1 --steps 5 --out " +
      out.string() + " --json");
  CHECK(res.exit_code == 0);

  std::ifstream cfg(out / "resolved_config.json");
  REQUIRE(cfg.good());
  nlohmann::json doc;
  cfg >> doc;
  CHECK(doc.at("params").at("steps") == 5);
  CHECK(doc.at("params").at("lr") == 0.1);
  CHECK(doc.at("params").at("lambda_tv") == 1e-5);
  CHECK(doc.at("params").at("lambda_l2") == 1e-6);
  CHECK(fs::exists(out / "x_star.mgf"));
  CHECK(fs::exists(out / "trace.csv"));

  nlohmann::json summary = nlohmann::json::parse(res.stdout_text);
  CHECK(summary.contains("final_loss"));
}

TEST_CASE("config file values are overridden by explicit flags") {
  const fs::path dir = fresh_dir("cfg");
  const fs::path cfg_path = dir / "run.json";
  {
    std::ofstream cfg(cfg_path);
    cfg << R"({"n": 3, "seed": 5, "height": 16, "width": 16})";
  }
  const fs::path out = fresh_dir("cfg_out");
  RunResult res = run_cli("gen-synthetic --config " + cfg_path.string() +
                          " --out " + out.string() + " --n 4 --json");
  CHECK(res.exit_code == 0);
  nlohmann::json summary = nlohmann::json::parse(res.stdout_text);
  CHECK(summary.at("n_fields") == 4);  // flag beats file

  std::ifstream rc(out / "resolved_config.json");
  nlohmann::json doc;
  rc >> doc;
  CHECK(doc.at("params").at("n") == 4);
  CHECK(doc.at("params").at("seed") == 5);  // file beats default

  // Unknown config keys are rejected.
  {
    std::ofstream cfg(cfg_path, std::ios::trunc);
    cfg << R"({"definitely_unknown": 1})";
  }
  CHECK(run_cli("gen-synthetic --config " + cfg_path.string() + " --out " +
                out.string())
            .exit_code == 2);
}

TEST_CASE("steiner-check and raps run end to end") {
  RunResult steiner =
      run_cli("steiner-check --resolution 128 --disk-radius 0.2 "
              "--radii 0,0.02,0.04 --json");
  CHECK(steiner.exit_code == 0);
  nlohmann::json sj = nlohmann::json::parse(steiner.stdout_text);
  CHECK(sj.at("max_rel_err").get<double>() < 0.05);

  const fs::path corpus = fresh_dir("raps_corpus");
  CHECK(run_cli("gen-synthetic --out " + corpus.string() +
                " --n 1 --seed 2 --height 32 --width 32")
            .exit_code == 0);
  const fs::path out = fresh_dir("raps_out");
  RunResult raps = run_cli("raps --input " +
                           (corpus / "field_000000.mgf").string() + " --ref " +
                           (corpus / "field_000000.mgf").string() + " --out " +
                           out.string() + " --json");
  CHECK(raps.exit_code == 0);
  nlohmann::json rj = nlohmann::json::parse(raps.stdout_text);
  CHECK(rj.at("raps_error").get<double>() == 0.0);
  CHECK(fs::exists(out / "spectrum.csv"));
  CHECK(fs::exists(out / "ratio.csv"));
}
