#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "anchorlab/nn/tensor.hpp"

namespace anchorlab::nn {

// Named parameters, iterated lexicographically by name.
template <class T>
class BasicParamStore {
 public:
  using Map = std::map<std::string, BasicTensor<T>>;

  void insert(const std::string& name, BasicTensor<T> value) {
    if (!map_.emplace(name, std::move(value)).second) throw ConfigError("duplicate parameter name: " + name);
  }
  void set(const std::string& name, BasicTensor<T> value) { map_[name] = std::move(value); }
  bool contains(const std::string& name) const { return map_.count(name) != 0; }
  const BasicTensor<T>& at(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw UsageError("unknown parameter: " + name);
    return it->second;
  }
  BasicTensor<T>& at(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end()) throw UsageError("unknown parameter: " + name);
    return it->second;
  }
  void erase(const std::string& name) { map_.erase(name); }

  std::size_t size() const { return map_.size(); }
  bool empty() const { return map_.empty(); }
  std::int64_t total_elements() const {
    std::int64_t n = 0;
    for (const auto& [_, t] : map_) n += t.size();
    return n;
  }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(map_.size());
    for (const auto& [k, _] : map_) out.push_back(k);
    return out;
  }

  auto begin() const { return map_.begin(); }
  auto end() const { return map_.end(); }
  auto begin() { return map_.begin(); }
  auto end() { return map_.end(); }

  bool operator==(const BasicParamStore&) const = default;

 private:
  Map map_;
};

using ParamStore = BasicParamStore<float>;

template <class To, class From>
BasicParamStore<To> store_cast(const BasicParamStore<From>& s) {
  BasicParamStore<To> out;
  for (const auto& [k, v] : s) out.insert(k, tensor_cast<To>(v));
  return out;
}

// FNV-1a over names, shapes and raw bytes of the selected parameters.
// An empty prefix list selects everything.
std::uint64_t checksum(const ParamStore& store, const std::vector<std::string>& prefixes = {},
                       const std::set<std::string>& exclude_prefixes = {});

bool has_prefix(const std::string& name, const std::string& prefix);

}  // namespace anchorlab::nn
