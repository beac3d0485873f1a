#include "bats/manifest.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bats/common.hpp"

namespace bats {

using nlohmann::json;

uint64_t fnv1a64(const std::string& bytes) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string checksum_string(const std::string& bytes) {
  std::ostringstream out;
  out << std::hex << fnv1a64(bytes);
  return out.str();
}

std::string checksum_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("checksum: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return checksum_string(ss.str());
}

void Manifest::add_input(const std::string& path) {
  inputs[path] = checksum_file(path);
}

void Manifest::add_output(const std::string& path) {
  outputs[path] = checksum_file(path);
}

std::string Manifest::to_json() const {
  json j;
  j["command"] = command;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  return j.dump(2);
}

void Manifest::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw MissingArtifactError("manifest: cannot open " + path + " for writing");
  out << to_json() << "\n";
}

}  // namespace bats
