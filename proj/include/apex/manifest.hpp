#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "apex/keyvalue.hpp"

namespace apex {

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

// Record of one CLI invocation: what ran, with which merged configuration,
// seed and inputs, and where it wrote.
struct RunManifest {
  std::string command;
  std::string tool_version;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> config;  // merged key-value snapshot
  std::vector<std::pair<std::string, std::string>> inputs;  // path -> sha256
  std::vector<std::string> outputs;

  void add_config(const KeyValueFile& kv, const std::string& prefix = {});
  void add_input(const std::filesystem::path& path);
  std::string to_json() const;
  void save(const std::filesystem::path& path) const;
};

}  // namespace apex
