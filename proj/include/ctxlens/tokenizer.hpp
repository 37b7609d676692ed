#pragma once

#include "ctxlens/distribution.hpp"

#include <cctype>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ctxlens {

/**
 * Whitespace tokenizer used by the mock backends.
 *
 * Digits are split into one token each (ids 0-9), the way most LLM
 * tokenizers handle numbers, so a 6-digit needle answer is 6 tokens. Other
 * whitespace-separated words get ids in first-seen order; once the
 * vocabulary is full, unseen words map to <unk>. Thread-safe.
 */
class WordTokenizer {
 public:
  static constexpr TokenId kEos = 10;
  static constexpr TokenId kUnk = 11;
  static constexpr TokenId kFirstWord = 12;

  explicit WordTokenizer(std::size_t capacity) : capacity_(capacity) {
    for (char c = '0'; c <= '9'; ++c) words_.emplace_back(1, c);
    words_.emplace_back("<eos>");
    words_.emplace_back("<unk>");
    for (std::size_t i = 0; i < words_.size(); ++i) ids_.emplace(words_[i], static_cast<TokenId>(i));
  }

  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<TokenId> out;
    std::lock_guard lock(mu_);
    std::size_t i = 0;
    while (i < text.size()) {
      const auto c = static_cast<unsigned char>(text[i]);
      if (std::isspace(c)) {
        ++i;
      } else if (std::isdigit(c)) {
        out.push_back(static_cast<TokenId>(c - '0'));
        ++i;
      } else {
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j])) &&
               !std::isdigit(static_cast<unsigned char>(text[j])))
          ++j;
        out.push_back(intern(text.substr(i, j - i)));
        i = j;
      }
    }
    return out;
  }

  /// Words are joined by single spaces; consecutive digits are glued together.
  std::string decode(std::span<const TokenId> tokens) const {
    std::string out;
    std::lock_guard lock(mu_);
    bool prev_digit = false;
    for (TokenId t : tokens) {
      const bool digit = t >= 0 && t <= 9;
      if (!out.empty() && !(digit && prev_digit)) out += ' ';
      if (t >= 0 && static_cast<std::size_t>(t) < words_.size())
        out += words_[static_cast<std::size_t>(t)];
      else
        out += "<" + std::to_string(t) + ">";
      prev_digit = digit;
    }
    return out;
  }

  std::size_t capacity() const noexcept { return capacity_; }

 private:
  TokenId intern(std::string_view word) const {
    auto it = ids_.find(std::string(word));
    if (it != ids_.end()) return it->second;
    if (words_.size() >= capacity_) return kUnk;
    const auto id = static_cast<TokenId>(words_.size());
    words_.emplace_back(word);
    ids_.emplace(words_.back(), id);
    return id;
  }

  std::size_t capacity_;
  mutable std::mutex mu_;
  mutable std::vector<std::string> words_;
  mutable std::unordered_map<std::string, TokenId> ids_;
};

}  // namespace ctxlens
