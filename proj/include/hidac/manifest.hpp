#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace hidac {

/// Content hash of a file (FNV-1a over the raw bytes), as hex.
std::string file_fnv_hex(const std::string& path);

std::string now_iso8601();

// Provenance record for one command invocation. Written before any output so
// a crashed run still leaves its inputs and configuration on disk; finalized
// (end timestamp) once the run succeeds.
struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config;  // resolved: defaults+file+flags
  std::uint64_t seed = 42;
  std::map<std::string, std::string> input_hashes;  // path -> content digest
  std::string started_at;
  std::string finished_at;

  static RunManifest begin(std::string command,
                           std::map<std::string, std::string> config,
                           std::uint64_t seed);

  void add_input(const std::string& path);

  std::string to_json() const;

  /// Serializes to `path`, creating parent directories.
  void write(const std::string& path) const;

  /// Stamps finished_at and rewrites `path`.
  void finalize(const std::string& path);
};

}  // namespace hidac
