#include "anchorlab/data/manifest.hpp"

#include "anchorlab/common/binary_io.hpp"
#include "anchorlab/common/errors.hpp"

namespace anchorlab::data {

nlohmann::json to_json(const Manifest& m) {
  nlohmann::json eps = nlohmann::json::array();
  for (const auto& e : m.episodes)
    eps.push_back({{"path", e.path}, {"split", split_name(e.split)}, {"family", sim::family_name(e.family)}, {"seed", e.seed}});
  return {{"schema_version", m.schema_version}, {"fingerprint", m.fingerprint}, {"episodes", eps}, {"norm_stats", to_json(m.stats)}};
}

Manifest manifest_from_json(const nlohmann::json& j) {
  try {
    Manifest m;
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version != kManifestSchemaVersion)
      throw DataError("unsupported manifest schema version " + std::to_string(m.schema_version));
    m.fingerprint = j.at("fingerprint").get<std::string>();
    for (const auto& e : j.at("episodes")) {
      ManifestEntry me;
      me.path = e.at("path").get<std::string>();
      me.split = split_from_name(e.at("split").get<std::string>());
      me.family = sim::family_from_name(e.at("family").get<std::string>());
      me.seed = e.at("seed").get<std::uint32_t>();
      m.episodes.push_back(std::move(me));
    }
    m.stats = norm_stats_from_json(j.at("norm_stats"));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
}

void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  io::write_text(path, to_json(m).dump(2) + "\n");
}

Manifest read_manifest(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("cannot parse " + path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const Manifest m = read_manifest(dir / "manifest.json");
  Dataset ds;
  ds.stats = m.stats;
  ds.fingerprint = m.fingerprint;
  ds.store.episodes.reserve(m.episodes.size());
  for (const auto& e : m.episodes) {
    Episode ep = read_episode(dir / e.path);
    if (ep.family != e.family || ep.seed != e.seed)
      throw DataError("episode " + e.path + " does not match its manifest entry");
    ds.store.add(std::move(ep), e.split);
  }
  return ds;
}

}  // namespace anchorlab::data
