#pragma once

#include <string>
#include <vector>

namespace anchorlab::data {

enum class ContextMode {
  kNone,
  kAnchorI0,
  kPast3Stride1,
  kPast3Stride20,
};

std::string context_mode_name(ContextMode m);
ContextMode context_mode_from_name(const std::string& name);
// Number of extra frames supplied alongside the current one.
int context_frame_count(ContextMode m);

// Frame indices supplied as context for step i, oldest first:
//   none           -> {}
//   anchor_I0      -> {0}
//   past3_stride1  -> {i-3, i-2, i-1}
//   past3_stride20 -> {i-60, i-40, i-20}
// Negative indices clamp to 0. Throws UsageError unless 0 <= i < n_steps.
std::vector<int> select_context(int n_steps, int i, ContextMode mode);

}  // namespace anchorlab::data
