#include "anchorlab/data/vocab.hpp"

#include <algorithm>
#include <sstream>

#include "anchorlab/common/errors.hpp"

namespace anchorlab::data {

const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> kWords = {"<pad>", "put",   "stack", "on",     "in",       "spoon",  "towel",
                                                  "carrot", "plate", "green", "yellow", "cube", "eggplant", "basket"};
  return kWords;
}

std::vector<std::int32_t> tokenize(const std::string& instruction, int max_len) {
  const auto& vocab = vocabulary();
  std::vector<std::int32_t> ids;
  std::istringstream in(instruction);
  std::string word;
  while (in >> word) {
    auto it = std::find(vocab.begin(), vocab.end(), word);
    if (it == vocab.end() || it == vocab.begin()) throw UsageError("word '" + word + "' is not in the vocabulary");
    ids.push_back(static_cast<std::int32_t>(it - vocab.begin()));
  }
  if (static_cast<int>(ids.size()) > max_len)
    throw UsageError("instruction has " + std::to_string(ids.size()) + " tokens, limit is " + std::to_string(max_len));
  ids.resize(static_cast<std::size_t>(max_len), kPadToken);
  return ids;
}

}  // namespace anchorlab::data
