#include "common.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "minkgeo/raster_io.hpp"
#include "minkgeo/version.hpp"

namespace minkgeo::cli {

std::string OptionSet::key_of(const std::string& flag) {
  // "--amp-min" -> "amp_min"; take the last listed long name.
  std::string name = flag;
  const auto comma = name.find_last_of(',');
  if (comma != std::string::npos) name = name.substr(comma + 1);
  while (!name.empty() && name.front() == '-') name.erase(name.begin());
  std::replace(name.begin(), name.end(), '-', '_');
  return name;
}

void OptionSet::layer_config_file() {
  if (config_path_.empty()) return;
  std::ifstream in(config_path_);
  if (!in)
    throw CLI::ValidationError("--config", "cannot open " + config_path_);
  nlohmann::json file;
  try {
    in >> file;
  } catch (const nlohmann::json::exception& e) {
    throw CLI::ValidationError("--config", std::string("malformed JSON: ") + e.what());
  }
  if (!file.is_object())
    throw CLI::ValidationError("--config", "top-level JSON object expected");

  for (const auto& [key, value] : file.items()) {
    const auto it =
        std::find_if(bindings_.begin(), bindings_.end(),
                     [&](const Binding& b) { return b.key == key; });
    if (it == bindings_.end())
      throw CLI::ValidationError("--config", "unknown key '" + key + "'");
    if (it->opt->count() > 0) continue;  // explicit flag wins
    try {
      it->apply(value);
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ValidationError("--config",
                                 "bad value for '" + key + "': " + e.what());
    }
  }
}

nlohmann::json OptionSet::resolved() const {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& b : bindings_) out[b.key] = b.serialize();
  return out;
}

std::vector<double> parse_double_list(const std::string& csv,
                                      const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw std::invalid_argument(what + ": cannot parse '" + item + "'");
    }
  }
  if (out.empty()) throw std::invalid_argument(what + ": empty list");
  return out;
}

std::vector<double> parse_range_or_list(const std::string& text,
                                        const std::string& what) {
  if (text.find(':') == std::string::npos) return parse_double_list(text, what);
  std::stringstream ss(text);
  std::string a, b, c;
  std::getline(ss, a, ':');
  std::getline(ss, b, ':');
  std::getline(ss, c, ':');
  if (a.empty() || b.empty() || c.empty())
    throw std::invalid_argument(what + ": expected start:stop:step");
  const double start = std::stod(a), stop = std::stod(b), step = std::stod(c);
  if (!(step > 0.0)) throw std::invalid_argument(what + ": step must be > 0");
  std::vector<double> out;
  for (double v = start; v <= stop + 1e-12; v += step) out.push_back(v);
  if (out.empty()) throw std::invalid_argument(what + ": empty range");
  return out;
}

void write_resolved_config(const std::filesystem::path& dir,
                           const std::string& command,
                           const nlohmann::json& params) {
  std::filesystem::create_directories(dir);
  nlohmann::json doc;
  doc["command"] = command;
  doc["tool"] = {{"name", kToolName}, {"version", kToolVersion}};
  doc["params"] = params;
  std::ofstream out(dir / "resolved_config.json", std::ios::trunc);
  out << doc.dump(2) << "\n";
}

void write_run_manifest(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().filename() == "manifest.json") continue;
    files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  nlohmann::json listing = nlohmann::json::array();
  for (const auto& path : files) {
    char digest[17];
    std::snprintf(digest, sizeof(digest), "%016llx",
                  static_cast<unsigned long long>(fnv1a64_file(path)));
    listing.push_back(
        {{"file", path.filename().string()}, {"fnv1a64", std::string(digest)}});
  }
  nlohmann::json doc;
  doc["files"] = listing;
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << doc.dump(2) << "\n";
}

void print_json_summary(const nlohmann::json& summary) {
  std::cout << summary.dump(2) << "\n";
}

}  // namespace minkgeo::cli
