#include "anchorlab/nn/param_store.hpp"

#include "anchorlab/common/hash.hpp"

namespace anchorlab::nn {

bool has_prefix(const std::string& name, const std::string& prefix) { return name.rfind(prefix, 0) == 0; }

std::uint64_t checksum(const ParamStore& store, const std::vector<std::string>& prefixes,
                       const std::set<std::string>& exclude_prefixes) {
  Fnv1a h;
  for (const auto& [name, t] : store) {
    bool selected = prefixes.empty();
    for (const auto& p : prefixes) selected = selected || has_prefix(name, p);
    for (const auto& p : exclude_prefixes) selected = selected && !has_prefix(name, p);
    if (!selected) continue;
    h.update(name);
    for (auto d : t.shape) h.update(&d, sizeof(d));
    h.update(t.data.data(), t.data.size() * sizeof(float));
  }
  return h.digest();
}

}  // namespace anchorlab::nn
