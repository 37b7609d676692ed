#pragma once

/**
 * Next-token distribution oracles.
 *
 * A Backend turns a token prefix into a TokenDistribution over its
 * vocabulary. Everything else in the library is written against this
 * interface: mocks with analytically known behavior for tests, an HTTP
 * client for live models, and decorators (cache, call counter).
 *
 * Truncation: by default a prefix of length ell is sent as the literal last
 * ell tokens. Backends that advertise masking support instead receive the
 * whole sequence plus `attend_last = ell`, which keeps absolute positions.
 *
 * Implementations must be safe to call concurrently.
 */

#include "ctxlens/distribution.hpp"
#include "ctxlens/error.hpp"

#include <atomic>
#include <cstddef>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ctxlens {

struct OracleRequest {
  std::vector<TokenId> tokens;
  std::size_t full_length = 0;
  /// 0 = attend to every token; otherwise only the last `attend_last`.
  std::size_t attend_last = 0;

  std::span<const TokenId> visible() const noexcept {
    std::span<const TokenId> all(tokens);
    if (attend_last == 0 || attend_last >= all.size()) return all;
    return all.last(attend_last);
  }

  bool operator==(const OracleRequest&) const = default;
};

enum class Truncation { suffix, masking };

class Backend {
 public:
  virtual ~Backend() = default;

  virtual std::size_t vocab_size() const = 0;
  virtual TokenDistribution next_token_distribution(const OracleRequest& req) const = 0;

  virtual bool supports_masking() const { return false; }
  virtual std::optional<TokenId> eos_token() const { return std::nullopt; }
  virtual std::size_t max_parallel() const { return 1; }

  virtual std::vector<TokenId> tokenize(std::string_view) const {
    throw ConfigError("backend does not provide a tokenizer");
  }
  virtual std::string detokenize(std::span<const TokenId>) const {
    throw ConfigError("backend does not provide a detokenizer");
  }
  /// Identifies the tokenizer for on-disk token caches.
  virtual std::string tokenizer_id() const { return "unknown"; }

 protected:
  void check_request(const OracleRequest& req) const {
    if (req.tokens.empty()) throw RequestError("empty token prefix");
    const auto v = vocab_size();
    for (TokenId t : req.tokens)
      if (t < 0 || static_cast<std::size_t>(t) >= v)
        throw RequestError("token id " + std::to_string(t) + " outside vocabulary of " +
                           std::to_string(v));
  }
};

/// Distribution given the last `ell` tokens of `s`. ell == |s| is the full context.
inline TokenDistribution prefix_distribution(std::span<const TokenId> s, std::size_t ell,
                                             const Backend& backend,
                                             Truncation mode = Truncation::suffix) {
  if (ell < 1 || ell > s.size())
    throw RequestError("prefix length " + std::to_string(ell) + " outside [1, " +
                       std::to_string(s.size()) + "]");
  OracleRequest req;
  req.full_length = s.size();
  if (mode == Truncation::masking && ell < s.size()) {
    if (!backend.supports_masking())
      throw ConfigError("backend does not support attention-mask truncation");
    req.tokens.assign(s.begin(), s.end());
    req.attend_last = ell;
  } else {
    auto suffix = s.last(ell);
    req.tokens.assign(suffix.begin(), suffix.end());
  }
  return backend.next_token_distribution(req);
}

inline TokenDistribution full_distribution(std::span<const TokenId> s, const Backend& backend) {
  return prefix_distribution(s, s.size(), backend);
}

/// Forwards everything to an inner backend. Base for decorators.
class ForwardingBackend : public Backend {
 public:
  explicit ForwardingBackend(std::shared_ptr<const Backend> inner) : inner_(std::move(inner)) {
    if (!inner_) throw ConfigError("null backend");
  }
  std::size_t vocab_size() const override { return inner_->vocab_size(); }
  TokenDistribution next_token_distribution(const OracleRequest& req) const override {
    return inner_->next_token_distribution(req);
  }
  bool supports_masking() const override { return inner_->supports_masking(); }
  std::optional<TokenId> eos_token() const override { return inner_->eos_token(); }
  std::size_t max_parallel() const override { return inner_->max_parallel(); }
  std::vector<TokenId> tokenize(std::string_view text) const override { return inner_->tokenize(text); }
  std::string detokenize(std::span<const TokenId> tokens) const override {
    return inner_->detokenize(tokens);
  }
  std::string tokenizer_id() const override { return inner_->tokenizer_id(); }

  const Backend& inner() const noexcept { return *inner_; }

 private:
  std::shared_ptr<const Backend> inner_;
};

/// Counts upstream calls.
class CountingBackend final : public ForwardingBackend {
 public:
  using ForwardingBackend::ForwardingBackend;
  TokenDistribution next_token_distribution(const OracleRequest& req) const override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return ForwardingBackend::next_token_distribution(req);
  }
  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  mutable std::atomic<std::size_t> calls_{0};
};

/**
 * LRU cache keyed on the exact request (token prefix + attention window).
 *
 * Misses are computed outside the lock, so two threads missing on the same
 * key may both go upstream; the second insert just refreshes the entry.
 */
class CachedBackend final : public ForwardingBackend {
 public:
  CachedBackend(std::shared_ptr<const Backend> inner, std::size_t capacity)
      : ForwardingBackend(std::move(inner)), capacity_(capacity) {
    if (capacity_ < 1) throw ConfigError("cache capacity must be >= 1");
  }

  TokenDistribution next_token_distribution(const OracleRequest& req) const override {
    {
      std::lock_guard lock(mu_);
      if (auto it = index_.find(req); it != index_.end()) {
        entries_.splice(entries_.begin(), entries_, it->second);
        ++hits_;
        return it->second->second;
      }
    }
    TokenDistribution d = ForwardingBackend::next_token_distribution(req);
    std::lock_guard lock(mu_);
    if (auto it = index_.find(req); it != index_.end()) {
      entries_.splice(entries_.begin(), entries_, it->second);
      return d;
    }
    entries_.emplace_front(req, d);
    index_.emplace(req, entries_.begin());
    if (entries_.size() > capacity_) {
      index_.erase(entries_.back().first);
      entries_.pop_back();
    }
    return d;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }
  std::size_t hits() const {
    std::lock_guard lock(mu_);
    return hits_;
  }

 private:
  struct KeyHash {
    std::size_t operator()(const OracleRequest& r) const noexcept {
      std::size_t h = std::hash<std::size_t>{}(r.attend_last);
      for (TokenId t : r.tokens) h = h * 1000003u ^ std::hash<TokenId>{}(t);
      return h;
    }
  };
  // full_length is diagnostic only; two requests with equal tokens hit the same entry.
  struct KeyEq {
    bool operator()(const OracleRequest& a, const OracleRequest& b) const noexcept {
      return a.attend_last == b.attend_last && a.tokens == b.tokens;
    }
  };
  using Entry = std::pair<OracleRequest, TokenDistribution>;

  std::size_t capacity_;
  mutable std::mutex mu_;
  mutable std::list<Entry> entries_;
  mutable std::unordered_map<OracleRequest, std::list<Entry>::iterator, KeyHash, KeyEq> index_;
  mutable std::size_t hits_ = 0;
};

inline std::shared_ptr<const Backend> cached(std::shared_ptr<const Backend> backend,
                                             std::size_t capacity) {
  return std::make_shared<CachedBackend>(std::move(backend), capacity);
}

}  // namespace ctxlens
