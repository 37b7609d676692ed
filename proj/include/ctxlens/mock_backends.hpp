#pragma once

/**
 * Deterministic test oracles whose MCL / DaMCL / LSDS values are forced by
 * construction.
 *
 *  PlantedDependencyMock  one distribution when fewer than d* tokens are
 *                         visible, another once d* or more are.
 *  NeedleMock             per-sequence dependency: confident on the token
 *                         following a key token when the key is visible,
 *                         confident on a fallback token otherwise. d* is
 *                         the key's distance from the end of the sequence.
 *  NgramMock              lookup on the last n visible tokens.
 *
 * All mocks honor attention-mask truncation and are immutable after
 * construction (the shared tokenizer synchronizes internally).
 */

#include "ctxlens/distribution.hpp"
#include "ctxlens/error.hpp"
#include "ctxlens/oracle.hpp"
#include "ctxlens/tokenizer.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <memory>
#include <optional>
#include <thread>
#include <vector>

namespace ctxlens {

/// Simulated forward-pass cost: base + per_token * visible length.
struct LatencyModel {
  double base_ms = 0.0;
  double per_token_us = 0.0;

  bool active() const noexcept { return base_ms > 0.0 || per_token_us > 0.0; }
  void wait(std::size_t tokens) const {
    if (!active()) return;
    const auto us = base_ms * 1000.0 + per_token_us * static_cast<double>(tokens);
    std::this_thread::sleep_for(std::chrono::duration<double, std::micro>(us));
  }
};

/// Mass `top` on `token`, the remainder spread evenly over the other ids.
inline TokenDistribution confident_on(std::size_t vocab_size, TokenId token, double top) {
  if (vocab_size < 2) throw ConfigError("mock vocabulary must hold at least 2 tokens");
  if (token < 0 || static_cast<std::size_t>(token) >= vocab_size)
    throw ConfigError("mock token outside vocabulary");
  std::vector<double> p(vocab_size, (1.0 - top) / static_cast<double>(vocab_size - 1));
  p[static_cast<std::size_t>(token)] = top;
  return TokenDistribution(std::move(p));
}

class MockBackend : public Backend {
 public:
  struct Options {
    std::size_t vocab_size = 1000;
    std::optional<TokenId> eos;
    LatencyModel latency;
    std::size_t max_parallel = 4;
  };

  explicit MockBackend(Options opts)
      : opts_(opts), tokenizer_(std::make_shared<WordTokenizer>(opts.vocab_size)) {
    if (opts_.vocab_size < 2) throw ConfigError("mock vocabulary must hold at least 2 tokens");
  }

  std::size_t vocab_size() const override { return opts_.vocab_size; }
  bool supports_masking() const override { return true; }
  std::optional<TokenId> eos_token() const override { return opts_.eos; }
  std::size_t max_parallel() const override { return opts_.max_parallel; }

  TokenDistribution next_token_distribution(const OracleRequest& req) const final {
    check_request(req);
    opts_.latency.wait(req.visible().size());
    return distribution_for(req.visible());
  }

  std::vector<TokenId> tokenize(std::string_view text) const override {
    return tokenizer_->encode(text);
  }
  std::string detokenize(std::span<const TokenId> tokens) const override {
    return tokenizer_->decode(tokens);
  }
  std::string tokenizer_id() const override { return "word-" + std::to_string(opts_.vocab_size); }

 protected:
  virtual TokenDistribution distribution_for(std::span<const TokenId> visible) const = 0;

  Options opts_;

 private:
  std::shared_ptr<WordTokenizer> tokenizer_;
};

class PlantedDependencyMock final : public MockBackend {
 public:
  PlantedDependencyMock(Options opts, std::size_t dependency_length, TokenDistribution near,
                        TokenDistribution far)
      : MockBackend(opts),
        dependency_length_(dependency_length),
        near_(std::move(near)),
        far_(std::move(far)) {
    if (dependency_length_ < 1) throw ConfigError("dependency length must be >= 1");
    if (near_.vocab_size() != opts_.vocab_size || far_.vocab_size() != opts_.vocab_size)
      throw DimensionError("planted distributions do not match the mock vocabulary");
  }

  /// Uniform below d*, `confident_prob` on `answer` at or above it.
  static std::shared_ptr<PlantedDependencyMock> make(std::size_t vocab_size,
                                                     std::size_t dependency_length,
                                                     TokenId answer, double confident_prob) {
    if (!(confident_prob > 0.5 && confident_prob <= 1.0))
      throw ConfigError("confident_prob must lie in (0.5, 1]");
    Options o;
    o.vocab_size = vocab_size;
    return std::make_shared<PlantedDependencyMock>(o, dependency_length,
                                                   TokenDistribution::uniform(vocab_size),
                                                   confident_on(vocab_size, answer, confident_prob));
  }

  std::size_t dependency_length() const noexcept { return dependency_length_; }

 protected:
  TokenDistribution distribution_for(std::span<const TokenId> visible) const override {
    return visible.size() >= dependency_length_ ? far_ : near_;
  }

 private:
  std::size_t dependency_length_;
  TokenDistribution near_;
  TokenDistribution far_;
};

class NeedleMock final : public MockBackend {
 public:
  NeedleMock(Options opts, TokenId key, double confident_prob, TokenId fallback)
      : MockBackend(opts), key_(key), confident_prob_(confident_prob), fallback_(fallback) {
    if (!(confident_prob > 0.5 && confident_prob <= 1.0))
      throw ConfigError("confident_prob must lie in (0.5, 1]");
    if (key_ == fallback_) throw ConfigError("needle key and fallback token must differ");
    confident_on(opts_.vocab_size, key_, confident_prob_);
    confident_on(opts_.vocab_size, fallback_, confident_prob_);
  }

  TokenId key() const noexcept { return key_; }
  TokenId fallback() const noexcept { return fallback_; }

  /// The token predicted once the key is visible, if any.
  std::optional<TokenId> answer_in(std::span<const TokenId> visible) const {
    // last occurrence of the key that still has a value token after it
    for (std::size_t i = visible.size(); i-- > 1;)
      if (visible[i - 1] == key_) return visible[i];
    return std::nullopt;
  }

 protected:
  TokenDistribution distribution_for(std::span<const TokenId> visible) const override {
    return confident_on(opts_.vocab_size, answer_in(visible).value_or(fallback_), confident_prob_);
  }

 private:
  TokenId key_;
  double confident_prob_;
  TokenId fallback_;
};

class NgramMock final : public MockBackend {
 public:
  using Table = std::map<std::vector<TokenId>, TokenDistribution>;

  NgramMock(Options opts, std::size_t order, Table table)
      : MockBackend(opts),
        order_(order),
        table_(std::move(table)),
        fallback_(TokenDistribution::uniform(opts.vocab_size)) {
    if (order_ < 1) throw ConfigError("n-gram order must be >= 1");
    for (const auto& [ctx, dist] : table_) {
      if (ctx.size() != order_) throw ConfigError("n-gram context length differs from the order");
      if (dist.vocab_size() != opts_.vocab_size)
        throw DimensionError("n-gram distribution does not match the mock vocabulary");
    }
  }

 protected:
  TokenDistribution distribution_for(std::span<const TokenId> visible) const override {
    if (visible.size() < order_) return fallback_;
    const auto tail = visible.last(order_);
    auto it = table_.find(std::vector<TokenId>(tail.begin(), tail.end()));
    return it == table_.end() ? fallback_ : it->second;
  }

 private:
  std::size_t order_;
  Table table_;
  TokenDistribution fallback_;
};

}  // namespace ctxlens
