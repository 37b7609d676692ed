#pragma once

#include "ctxlens/distribution.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ctxlens {

enum class ContextClass { short_context, long_context };

inline const char* to_string(ContextClass c) noexcept {
  return c == ContextClass::long_context ? "long" : "short";
}

/// A token sequence s cut from a document, with the token t that followed it.
struct SequenceSample {
  std::string seq_id;
  std::vector<TokenId> tokens;
  std::optional<TokenId> next_token;
  std::string doc_id;
  std::pair<std::size_t, std::size_t> bucket{0, 0};
  /// Known label for synthetic samples (needle distance, register position).
  std::optional<ContextClass> label;
};

}  // namespace ctxlens
