#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "anchorlab/data/batch.hpp"
#include "anchorlab/data/normalize.hpp"

namespace anchorlab::data {

inline constexpr int kManifestSchemaVersion = 1;

struct ManifestEntry {
  std::string path;  // relative to the manifest directory
  Split split = Split::kTrain;
  sim::TaskFamily family = sim::TaskFamily::kSpoonOnTowel;
  std::uint32_t seed = 0;
};

struct Manifest {
  int schema_version = kManifestSchemaVersion;
  std::string fingerprint;
  std::vector<ManifestEntry> episodes;
  NormStats stats;
};

nlohmann::json to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& j);

void write_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

struct Dataset {
  EpisodeStore store;
  NormStats stats;
  std::string fingerprint;
};

// Loads every episode listed in `<dir>/manifest.json`.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace anchorlab::data
