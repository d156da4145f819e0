#include "hidac/manifest.hpp"

#include "hidac/common.hpp"
#include "hidac/errors.hpp"

#include <json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace hidac {

using nlohmann::ordered_json;

std::string file_fnv_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path + "'");
  std::uint64_t h = 1469598103934665603ULL;
  char buffer[1 << 16];
  while (in.read(buffer, sizeof(buffer)) || in.gcount() > 0) {
    h = fnv1a64_bytes(buffer, static_cast<std::size_t>(in.gcount()), h);
  }
  return to_hex(h);
}

std::string now_iso8601() {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  char buffer[32];
  std::strftime(buffer, sizeof(buffer), "%Y-%m-%dT%H:%M:%SZ", &utc);
  return buffer;
}

RunManifest RunManifest::begin(std::string command,
                               std::map<std::string, std::string> config,
                               std::uint64_t seed) {
  RunManifest manifest;
  manifest.command = std::move(command);
  manifest.config = std::move(config);
  manifest.seed = seed;
  manifest.started_at = now_iso8601();
  return manifest;
}

void RunManifest::add_input(const std::string& path) {
  input_hashes[path] = file_fnv_hex(path);
}

std::string RunManifest::to_json() const {
  ordered_json j;
  j["command"] = command;
  j["seed"] = seed;
  j["config"] = config;
  j["inputs"] = input_hashes;
  j["started_at"] = started_at;
  j["finished_at"] = finished_at.empty() ? ordered_json(nullptr)
                                         : ordered_json(finished_at);
  return j.dump(2) + "\n";
}

void RunManifest::write(const std::string& path) const {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest '" + path + "'");
  out << to_json();
  if (!out) throw IoError("failed writing manifest '" + path + "'");
}

void RunManifest::finalize(const std::string& path) {
  finished_at = now_iso8601();
  write(path);
}

}  // namespace hidac
