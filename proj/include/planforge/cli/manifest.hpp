#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "planforge/core/hash.hpp"
#include "planforge/toyvlm/checkpoint.hpp"

namespace planforge::cli {

inline constexpr const char* kManifestFile = "manifest.json";

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// {"artifacts": {relative path: {"fnv1a64", "bytes"}}} over every regular file
/// under `dir` except the manifest itself, keys sorted.
inline nlohmann::ordered_json build_manifest(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    if (rel != kManifestFile) files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  nlohmann::ordered_json artifacts = nlohmann::ordered_json::object();
  for (const auto& f : files) {
    const std::string bytes = toyvlm::read_file_bytes(dir / f);
    artifacts[f] = {{"fnv1a64", hex64(fnv1a64(bytes))}, {"bytes", bytes.size()}};
  }
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["artifacts"] = std::move(artifacts);
  return j;
}

inline void write_manifest(const std::filesystem::path& dir) {
  toyvlm::write_file_bytes(dir / kManifestFile, build_manifest(dir).dump(2) + "\n");
}

}  // namespace planforge::cli
