#include "anchorlab/common/fingerprint.hpp"

#include "anchorlab/common/hash.hpp"

namespace anchorlab {

// nlohmann::json objects are std::map-backed, so dump() already sorts keys.
std::string canonical_json(const nlohmann::json& j) { return j.dump(); }

std::string fingerprint(const nlohmann::json& j) {
  Fnv1a h;
  h.update(canonical_json(j));
  return hex64(h.digest());
}

}  // namespace anchorlab
