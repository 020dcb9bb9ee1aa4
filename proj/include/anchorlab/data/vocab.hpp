#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace anchorlab::data {

inline constexpr int kMaxInstructionTokens = 6;
inline constexpr std::int32_t kPadToken = 0;

// Fixed word list; id 0 is padding.
const std::vector<std::string>& vocabulary();

// Whitespace tokenization padded to `max_len`. Throws UsageError for
// out-of-vocabulary words or over-long instructions.
std::vector<std::int32_t> tokenize(const std::string& instruction, int max_len = kMaxInstructionTokens);

}  // namespace anchorlab::data
