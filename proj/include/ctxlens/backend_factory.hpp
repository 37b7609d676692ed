#pragma once

// Backend construction from a one-line spec string:
//
//   mock:planted:d=40,answer=5,p=0.9[,vocab=1000]
//   mock:needle[:key=999,fallback=998,p=0.95,vocab=1000]
//   mock:ngram:path=table.json
//   http:http://host:port[#top=100,timeout_ms=30000,parallel=4,vocab=V,eos=E,masking=1]
//   openai:http://host:port#vocab=V[,model=NAME,top=20]
//
// Mock options shared by all kinds: vocab, eos, parallel, latency_ms,
// latency_us_per_token.

#include "ctxlens/error.hpp"
#include "ctxlens/http_backend.hpp"
#include "ctxlens/mock_backends.hpp"
#include "ctxlens/oracle.hpp"

#include <json.hpp>

#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>

namespace ctxlens {

namespace detail {

using Options = std::map<std::string, std::string, std::less<>>;

inline Options parse_options(std::string_view text) {
  Options out;
  while (!text.empty()) {
    const auto comma = text.find(',');
    const auto item = text.substr(0, comma);
    const auto eq = item.find('=');
    if (eq == std::string_view::npos || eq == 0)
      throw ConfigError("backend option '" + std::string(item) + "' is not key=value");
    out.emplace(std::string(item.substr(0, eq)), std::string(item.substr(eq + 1)));
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return out;
}

class OptionReader {
 public:
  OptionReader(Options opts, std::string context) : opts_(std::move(opts)), context_(std::move(context)) {}

  template <class T>
  T get(std::string_view key, T fallback) {
    auto v = take(key);
    return v ? convert<T>(*v, key) : fallback;
  }
  template <class T>
  T require(std::string_view key) {
    auto v = take(key);
    if (!v) throw ConfigError(context_ + " needs option '" + std::string(key) + "'");
    return convert<T>(*v, key);
  }
  template <class T>
  std::optional<T> maybe(std::string_view key) {
    auto v = take(key);
    if (!v) return std::nullopt;
    return convert<T>(*v, key);
  }
  void finish() const {
    if (!opts_.empty())
      throw ConfigError(context_ + ": unknown option '" + opts_.begin()->first + "'");
  }

 private:
  std::optional<std::string> take(std::string_view key) {
    auto it = opts_.find(key);
    if (it == opts_.end()) return std::nullopt;
    auto v = it->second;
    opts_.erase(it);
    return v;
  }
  template <class T>
  T convert(const std::string& v, std::string_view key) const {
    try {
      std::size_t used = 0;
      T out{};
      if constexpr (std::is_same_v<T, std::string>) {
        return v;
      } else if constexpr (std::is_same_v<T, bool>) {
        if (v == "1" || v == "true") return true;
        if (v == "0" || v == "false") return false;
        throw std::invalid_argument(v);
      } else if constexpr (std::is_floating_point_v<T>) {
        out = static_cast<T>(std::stod(v, &used));
      } else {
        const long long x = std::stoll(v, &used);
        if (x < 0 && std::is_unsigned_v<T>) throw std::invalid_argument(v);
        out = static_cast<T>(x);
      }
      if (used != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::logic_error&) {
      throw ConfigError(context_ + ": bad value '" + v + "' for '" + std::string(key) + "'");
    }
  }

  Options opts_;
  std::string context_;
};

inline NgramMock::Table load_ngram_table(const std::string& path, std::size_t vocab,
                                         std::size_t order) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open n-gram table " + path);
  NgramMock::Table table;
  try {
    const auto doc = nlohmann::json::parse(in);
    for (const auto& row : doc.at("table")) {
      auto ctx = row.at("context").get<std::vector<TokenId>>();
      std::vector<double> p(vocab, 0.0);
      for (const auto& pair : row.at("dist")) {
        const auto id = pair.at(0).get<TokenId>();
        if (id < 0 || static_cast<std::size_t>(id) >= vocab)
          throw DataError("n-gram table token outside vocabulary");
        p[static_cast<std::size_t>(id)] = pair.at(1).get<double>();
      }
      if (ctx.size() != order) throw DataError("n-gram context length differs from the order");
      table.insert_or_assign(std::move(ctx), TokenDistribution::normalized(std::move(p)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed n-gram table " + path + ": " + e.what());
  }
  return table;
}

inline BackendEndpoint read_endpoint(std::string url, OptionReader& r) {
  BackendEndpoint ep;
  ep.base_url = std::move(url);
  ep.top_logprobs = r.get<std::size_t>("top", ep.top_logprobs);
  ep.timeout_ms = r.get<int>("timeout_ms", ep.timeout_ms);
  ep.max_parallel = r.get<std::size_t>("parallel", ep.max_parallel);
  ep.max_retries = r.get<int>("retries", ep.max_retries);
  ep.backoff_ms = r.get<int>("backoff_ms", ep.backoff_ms);
  ep.vocab_size = r.maybe<std::size_t>("vocab");
  ep.eos = r.maybe<TokenId>("eos");
  ep.masking = r.get<bool>("masking", false);
  ep.model = r.get<std::string>("model", "");
  return ep;
}

}  // namespace detail

inline std::shared_ptr<const Backend> make_backend(std::string_view spec) {
  using detail::OptionReader;
  const std::string context = "backend '" + std::string(spec) + "'";

  if (spec.starts_with("http:") || spec.starts_with("openai:")) {
    const bool openai = spec.starts_with("openai:");
    spec.remove_prefix(openai ? 7 : 5);
    const auto hash = spec.find('#');
    OptionReader r(detail::parse_options(hash == std::string_view::npos ? "" : spec.substr(hash + 1)),
                   context);
    std::string url(spec.substr(0, hash));
    // "http://host" is itself a native-protocol spec; keep its scheme
    if (!openai && url.starts_with("//")) url = "http:" + url;
    auto ep = detail::read_endpoint(std::move(url), r);
    r.finish();
    if (openai) return std::make_shared<OpenAiBackend>(std::move(ep));
    return std::make_shared<HttpBackend>(std::move(ep));
  }

  if (!spec.starts_with("mock:")) throw ConfigError("unknown " + context);
  spec.remove_prefix(5);
  const auto colon = spec.find(':');
  const auto kind = spec.substr(0, colon);
  OptionReader r(detail::parse_options(colon == std::string_view::npos ? "" : spec.substr(colon + 1)),
                 context);

  MockBackend::Options o;
  o.vocab_size = r.get<std::size_t>("vocab", 1000);
  o.eos = r.maybe<TokenId>("eos");
  o.max_parallel = r.get<std::size_t>("parallel", 4);
  o.latency.base_ms = r.get<double>("latency_ms", 0.0);
  o.latency.per_token_us = r.get<double>("latency_us_per_token", 0.0);
  if (o.max_parallel < 1) throw ConfigError(context + ": parallel must be >= 1");

  std::shared_ptr<const Backend> out;
  if (kind == "planted") {
    const auto d = r.require<std::size_t>("d");
    const auto answer = r.require<TokenId>("answer");
    const auto p = r.get<double>("p", 0.9);
    if (!(p > 0.5 && p <= 1.0)) throw ConfigError(context + ": p must lie in (0.5, 1]");
    out = std::make_shared<PlantedDependencyMock>(o, d, TokenDistribution::uniform(o.vocab_size),
                                                  confident_on(o.vocab_size, answer, p));
  } else if (kind == "needle") {
    const auto v = static_cast<TokenId>(o.vocab_size);
    const auto key = r.get<TokenId>("key", v - 1);
    const auto fallback = r.get<TokenId>("fallback", v - 2);
    const auto p = r.get<double>("p", 0.95);
    out = std::make_shared<NeedleMock>(o, key, p, fallback);
  } else if (kind == "ngram") {
    const auto path = r.require<std::string>("path");
    const auto order = r.get<std::size_t>("order", 2);
    out = std::make_shared<NgramMock>(o, order, detail::load_ngram_table(path, o.vocab_size, order));
  } else {
    throw ConfigError("unknown mock kind '" + std::string(kind) + "'");
  }
  r.finish();
  return out;
}

}  // namespace ctxlens
