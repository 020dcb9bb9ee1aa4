#include "anchorlab/common/hash.hpp"

#include <fmt/core.h>

namespace anchorlab {

std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

}  // namespace anchorlab
