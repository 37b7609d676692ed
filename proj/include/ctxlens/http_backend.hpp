#pragma once

/**
 * HTTP oracle clients.
 *
 * Native protocol (JSON over POST):
 *   {base}/v1/next_logprobs  {"tokens":[...],"top":N|"full"[,"attend_last":L]}
 *                            -> {"logprobs":[{"id":i,"logprob":x},...],"vocab_size":V}
 *   {base}/v1/tokenize       {"text":"..."}     -> {"tokens":[...]}
 *   {base}/v1/detokenize     {"tokens":[...]}   -> {"text":"..."}
 *
 * OpenAI-compatible servers are reached through /v1/completions with
 * max_tokens=1 and token-id keyed logprobs (vLLM style "token_id:N").
 *
 * Servers usually return only the top-N log-probabilities. The missing mass
 * is spread uniformly over the ids that were not returned; see
 * complete_distribution().
 */

#include "ctxlens/distribution.hpp"
#include "ctxlens/error.hpp"
#include "ctxlens/oracle.hpp"

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace ctxlens {

struct BackendEndpoint {
  std::string base_url;
  int timeout_ms = 30000;
  std::size_t max_parallel = 4;
  /// 0 means request the full vocabulary.
  std::size_t top_logprobs = 100;
  int max_retries = 3;
  int backoff_ms = 100;  // doubles per retry
  std::optional<std::size_t> vocab_size;
  std::optional<TokenId> eos;
  bool masking = false;
  std::string model;  // OpenAI adapter only
};

struct LogprobEntry {
  TokenId id = 0;
  double logprob = 0.0;
};

/**
 * Dense distribution from a partial list of log-probabilities.
 *
 * Returned ids receive exp(logprob). If their mass is below 1 the remainder
 * is divided evenly among the ids that were not returned; if every id was
 * returned (or the mass already exceeds 1) the vector is renormalized.
 */
inline TokenDistribution complete_distribution(std::size_t vocab_size,
                                               const std::vector<LogprobEntry>& entries) {
  if (vocab_size == 0) throw DataError("server reported an empty vocabulary");
  std::vector<double> p(vocab_size, 0.0);
  std::vector<char> seen(vocab_size, 0);
  double mass = 0.0;
  std::size_t returned = 0;
  for (const auto& e : entries) {
    if (e.id < 0 || static_cast<std::size_t>(e.id) >= vocab_size)
      throw DataError("server returned token id " + std::to_string(e.id) + " outside vocabulary");
    if (std::isnan(e.logprob) || e.logprob == HUGE_VAL) throw DataError("invalid logprob");
    const auto i = static_cast<std::size_t>(e.id);
    if (seen[i]) continue;
    seen[i] = 1;
    ++returned;
    p[i] = std::exp(e.logprob);
    mass += p[i];
  }
  const double residual = 1.0 - mass;
  if (returned < vocab_size && residual > 0.0) {
    const double share = residual / static_cast<double>(vocab_size - returned);
    for (std::size_t i = 0; i < vocab_size; ++i)
      if (!seen[i]) p[i] = share;
  }
  return TokenDistribution::normalized(std::move(p));
}

namespace detail {

class Semaphore {
 public:
  explicit Semaphore(std::size_t n) : free_(n) {}
  void acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return free_ > 0; });
    --free_;
  }
  void release() {
    {
      std::lock_guard lock(mu_);
      ++free_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t free_;
};

/// JSON POST with bounded concurrency and exponential-backoff retries.
class JsonTransport {
 public:
  explicit JsonTransport(const BackendEndpoint& ep) : ep_(ep), slots_(ep.max_parallel) {
    if (ep.max_parallel < 1) throw ConfigError("max_parallel must be >= 1");
    if (ep.timeout_ms < 1) throw ConfigError("timeout_ms must be >= 1");
    split_url(ep.base_url);
  }

  nlohmann::json post(const std::string& path, const nlohmann::json& body) const {
    slots_.acquire();
    struct Release {
      Semaphore& s;
      ~Release() { s.release(); }
    } release{slots_};

    const std::string payload = body.dump();
    std::string last_error;
    int delay = ep_.backoff_ms;
    const int attempts = ep_.max_retries + 1;
    for (int attempt = 1; attempt <= attempts; ++attempt) {
      httplib::Client cli(origin_);
      const auto timeout = std::chrono::milliseconds(ep_.timeout_ms);
      cli.set_connection_timeout(timeout);
      cli.set_read_timeout(timeout);
      cli.set_write_timeout(timeout);
      auto res = cli.Post(prefix_ + path, payload, "application/json");
      if (res && res->status >= 200 && res->status < 300) {
        try {
          return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
          throw TransportError(std::string("malformed JSON from ") + path + ": " + e.what(), attempt);
        }
      }
      if (res && res->status >= 400 && res->status < 500)
        throw RequestError(path + " rejected with HTTP " + std::to_string(res->status) + ": " +
                           res->body);
      last_error = res ? "HTTP " + std::to_string(res->status) : httplib::to_string(res.error());
      if (attempt < attempts) {
        std::this_thread::sleep_for(std::chrono::milliseconds(delay));
        delay *= 2;
      }
    }
    throw TransportError(origin_ + prefix_ + path + " failed after " + std::to_string(attempts) +
                             " attempts: " + last_error,
                         attempts);
  }

  const BackendEndpoint& endpoint() const noexcept { return ep_; }

 private:
  void split_url(const std::string& url) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos) throw ConfigError("backend URL needs a scheme: " + url);
    const auto slash = url.find('/', scheme + 3);
    origin_ = url.substr(0, slash);
    prefix_ = slash == std::string::npos ? "" : url.substr(slash);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }

  BackendEndpoint ep_;
  std::string origin_;
  std::string prefix_;
  mutable Semaphore slots_;
};

}  // namespace detail

class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(BackendEndpoint ep) : transport_(ep) {
    if (ep.vocab_size) vocab_ = *ep.vocab_size;
  }

  std::size_t vocab_size() const override {
    std::lock_guard lock(mu_);
    if (!vocab_) {
      // the protocol has no info endpoint; any logprob reply carries the size
      nlohmann::json body{{"tokens", {0}}, {"top", 1}};
      vocab_ = transport_.post("/v1/next_logprobs", body).at("vocab_size").get<std::size_t>();
    }
    return *vocab_;
  }

  TokenDistribution next_token_distribution(const OracleRequest& req) const override {
    check_request(req);
    const auto& ep = transport_.endpoint();
    nlohmann::json body;
    if (req.attend_last != 0 && ep.masking) {
      body["tokens"] = req.tokens;
      body["attend_last"] = req.attend_last;
    } else {
      const auto v = req.visible();
      body["tokens"] = std::vector<TokenId>(v.begin(), v.end());
    }
    if (ep.top_logprobs == 0)
      body["top"] = "full";
    else
      body["top"] = ep.top_logprobs;

    const auto reply = transport_.post("/v1/next_logprobs", body);
    try {
      std::vector<LogprobEntry> entries;
      for (const auto& e : reply.at("logprobs"))
        entries.push_back({e.at("id").get<TokenId>(), e.at("logprob").get<double>()});
      const auto v = reply.at("vocab_size").get<std::size_t>();
      if (v != vocab_size()) throw DataError("server changed its vocabulary size");
      return complete_distribution(v, entries);
    } catch (const nlohmann::json::exception& e) {
      throw TransportError(std::string("unexpected next_logprobs reply: ") + e.what(), 1);
    }
  }

  bool supports_masking() const override { return transport_.endpoint().masking; }
  std::optional<TokenId> eos_token() const override { return transport_.endpoint().eos; }
  std::size_t max_parallel() const override { return transport_.endpoint().max_parallel; }

  std::vector<TokenId> tokenize(std::string_view text) const override {
    const auto reply = transport_.post("/v1/tokenize", {{"text", std::string(text)}});
    return reply.at("tokens").get<std::vector<TokenId>>();
  }
  std::string detokenize(std::span<const TokenId> tokens) const override {
    nlohmann::json body{{"tokens", std::vector<TokenId>(tokens.begin(), tokens.end())}};
    return transport_.post("/v1/detokenize", body).at("text").get<std::string>();
  }
  std::string tokenizer_id() const override { return "http:" + transport_.endpoint().base_url; }

 private:
  detail::JsonTransport transport_;
  mutable std::mutex mu_;
  mutable std::optional<std::size_t> vocab_;
};

/// OpenAI-compatible completions adapter. The vocabulary size must be configured.
class OpenAiBackend final : public Backend {
 public:
  explicit OpenAiBackend(BackendEndpoint ep) : transport_(ep) {
    if (!ep.vocab_size) throw ConfigError("the OpenAI adapter needs vocab=<size>");
  }

  std::size_t vocab_size() const override { return *transport_.endpoint().vocab_size; }

  TokenDistribution next_token_distribution(const OracleRequest& req) const override {
    check_request(req);
    const auto& ep = transport_.endpoint();
    const auto v = req.visible();
    nlohmann::json body{{"prompt", std::vector<TokenId>(v.begin(), v.end())},
                        {"max_tokens", 1},
                        {"temperature", 0},
                        {"echo", false},
                        {"logprobs", ep.top_logprobs == 0 ? 20 : ep.top_logprobs},
                        {"return_tokens_as_token_ids", true}};
    if (!ep.model.empty()) body["model"] = ep.model;

    const auto reply = transport_.post("/v1/completions", body);
    try {
      const auto& top = reply.at("choices").at(0).at("logprobs").at("top_logprobs").at(0);
      std::vector<LogprobEntry> entries;
      for (const auto& [key, value] : top.items()) {
        constexpr std::string_view prefix = "token_id:";
        if (key.rfind(prefix, 0) != 0)
          throw DataError("completion logprobs are not keyed by token id: '" + key + "'");
        entries.push_back({static_cast<TokenId>(std::stol(key.substr(prefix.size()))),
                           value.get<double>()});
      }
      return complete_distribution(vocab_size(), entries);
    } catch (const nlohmann::json::exception& e) {
      throw TransportError(std::string("unexpected completions reply: ") + e.what(), 1);
    }
  }

  std::optional<TokenId> eos_token() const override { return transport_.endpoint().eos; }
  std::size_t max_parallel() const override { return transport_.endpoint().max_parallel; }

  std::vector<TokenId> tokenize(std::string_view text) const override {
    nlohmann::json body{{"prompt", std::string(text)}};
    if (!transport_.endpoint().model.empty()) body["model"] = transport_.endpoint().model;
    return transport_.post("/tokenize", body).at("tokens").get<std::vector<TokenId>>();
  }
  std::string detokenize(std::span<const TokenId> tokens) const override {
    nlohmann::json body{{"tokens", std::vector<TokenId>(tokens.begin(), tokens.end())}};
    if (!transport_.endpoint().model.empty()) body["model"] = transport_.endpoint().model;
    return transport_.post("/detokenize", body).at("prompt").get<std::string>();
  }
  std::string tokenizer_id() const override { return "openai:" + transport_.endpoint().base_url; }

 private:
  detail::JsonTransport transport_;
};

}  // namespace ctxlens
