#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

namespace minkgeo::cli {

// Exit codes: 0 success, 2 validation/configuration error, 3 numerical abort.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumerical = 3;

/// Options bound through this set layer three ways: built-in default, then
/// the JSON config file, then explicit command-line flags (flags win).
class OptionSet {
 public:
  explicit OptionSet(CLI::App* app) : app_(app) {
    config_opt_ = app->add_option("--config", config_path_,
                                  "JSON config file; explicit flags override "
                                  "values from the file");
    app->add_flag("--json", json_output_,
                  "print a machine-readable JSON summary on stdout");
  }

  template <typename T>
  CLI::Option* add(const std::string& flag, T& var, const std::string& desc) {
    CLI::Option* opt = app_->add_option(flag, var, desc);
    bind(flag, opt, var);
    return opt;
  }

  CLI::Option* add_flag(const std::string& flag, bool& var,
                        const std::string& desc) {
    CLI::Option* opt = app_->add_flag(flag, var, desc);
    bind(flag, opt, var);
    return opt;
  }

  /// Apply config-file values to every option not set on the command line,
  /// then re-run validation hooks.
  void layer_config_file();

  /// All bound values, post-layering, keyed by snake_case flag names.
  nlohmann::json resolved() const;

  bool json_output() const { return json_output_; }

 private:
  struct Binding {
    std::string key;
    CLI::Option* opt;
    std::function<void(const nlohmann::json&)> apply;
    std::function<nlohmann::json()> serialize;
  };

  template <typename T>
  void bind(const std::string& flag, CLI::Option* opt, T& var) {
    Binding b;
    b.key = key_of(flag);
    b.opt = opt;
    b.apply = [&var](const nlohmann::json& j) { var = j.get<T>(); };
    b.serialize = [&var]() { return nlohmann::json(var); };
    bindings_.push_back(std::move(b));
  }

  static std::string key_of(const std::string& flag);

  CLI::App* app_;
  CLI::Option* config_opt_ = nullptr;
  std::string config_path_;
  bool json_output_ = false;
  std::vector<Binding> bindings_;
};

std::vector<double> parse_double_list(const std::string& csv,
                                      const std::string& what);

/// "start:stop:step" or a plain comma list.
std::vector<double> parse_range_or_list(const std::string& text,
                                        const std::string& what);

/// Write resolved_config.json (with a tool-version stamp) into the run
/// directory.
void write_resolved_config(const std::filesystem::path& dir,
                           const std::string& command,
                           const nlohmann::json& params);

/// Write manifest.json listing every produced file with its checksum.
/// resolved_config.json is included; manifest.json itself is not.
void write_run_manifest(const std::filesystem::path& dir);

void print_json_summary(const nlohmann::json& summary);

}  // namespace minkgeo::cli
