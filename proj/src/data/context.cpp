#include "anchorlab/data/context.hpp"

#include <algorithm>

#include "anchorlab/common/errors.hpp"

namespace anchorlab::data {

std::string context_mode_name(ContextMode m) {
  switch (m) {
    case ContextMode::kNone:
      return "none";
    case ContextMode::kAnchorI0:
      return "anchor_I0";
    case ContextMode::kPast3Stride1:
      return "past3_stride1";
    case ContextMode::kPast3Stride20:
      return "past3_stride20";
  }
  throw UsageError("unknown context mode");
}

ContextMode context_mode_from_name(const std::string& name) {
  for (auto m : {ContextMode::kNone, ContextMode::kAnchorI0, ContextMode::kPast3Stride1, ContextMode::kPast3Stride20})
    if (context_mode_name(m) == name) return m;
  throw ConfigError("unknown context mode: " + name);
}

int context_frame_count(ContextMode m) {
  switch (m) {
    case ContextMode::kNone:
      return 0;
    case ContextMode::kAnchorI0:
      return 1;
    case ContextMode::kPast3Stride1:
    case ContextMode::kPast3Stride20:
      return 3;
  }
  return 0;
}

std::vector<int> select_context(int n_steps, int i, ContextMode mode) {
  if (i < 0 || i >= n_steps)
    throw UsageError("context step " + std::to_string(i) + " outside episode of length " + std::to_string(n_steps));
  auto past = [i](int stride) {
    return std::vector<int>{std::max(0, i - 3 * stride), std::max(0, i - 2 * stride), std::max(0, i - stride)};
  };
  switch (mode) {
    case ContextMode::kNone:
      return {};
    case ContextMode::kAnchorI0:
      return {0};
    case ContextMode::kPast3Stride1:
      return past(1);
    case ContextMode::kPast3Stride20:
      return past(20);
  }
  return {};
}

}  // namespace anchorlab::data
