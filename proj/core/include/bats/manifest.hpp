#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace bats {

uint64_t fnv1a64(const std::string& bytes);
std::string checksum_file(const std::string& path);
std::string checksum_string(const std::string& bytes);

/// Reproducibility record written next to every CLI artifact: re-running a
/// subcommand with the same config and seed must reproduce these checksums.
struct Manifest {
  std::string command;
  std::string config_hash;
  uint64_t seed = 0;
  std::map<std::string, std::string> inputs;   // path -> checksum
  std::map<std::string, std::string> outputs;  // path -> checksum

  void add_input(const std::string& path);
  void add_output(const std::string& path);
  std::string to_json() const;
  void save(const std::string& path) const;
};

}  // namespace bats
