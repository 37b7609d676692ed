#pragma once

// JSON conversions for the record types written by the command-line tool.
// Distributions are stored sparsely as [[token, probability], ...].

#include "ctxlens/boosting.hpp"
#include "ctxlens/calibration.hpp"
#include "ctxlens/context_probe.hpp"
#include "ctxlens/distribution.hpp"
#include "ctxlens/error.hpp"
#include "ctxlens/histogram.hpp"
#include "ctxlens/power_law.hpp"
#include "ctxlens/reporting.hpp"
#include "ctxlens/sample.hpp"

#include <json.hpp>

#include <cmath>
#include <string>

namespace ctxlens {

using nlohmann::json;

/// JSON has no infinities; they are written as null.
inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json distribution_to_json(const TokenDistribution& d) {
  json out = json::array();
  const auto p = d.probs();
  for (std::size_t t = 0; t < p.size(); ++t)
    if (p[t] > 0.0) out.push_back(json::array({t, p[t]}));
  return out;
}

inline TokenDistribution distribution_from_json(const json& j, std::size_t vocab_size) {
  std::vector<double> p(vocab_size, 0.0);
  for (const auto& e : j) {
    const auto t = e.at(0).get<std::size_t>();
    if (t >= vocab_size) throw DataError("distribution entry outside vocabulary");
    p[t] = e.at(1).get<double>();
  }
  return TokenDistribution(std::move(p));
}

inline json sample_to_json(const SequenceSample& s) {
  json j{{"seq_id", s.seq_id},
         {"doc_id", s.doc_id},
         {"tokens", s.tokens},
         {"next_token", s.next_token ? json(*s.next_token) : json(nullptr)},
         {"bucket", json::array({s.bucket.first, s.bucket.second})}};
  if (s.label) j["label"] = to_string(*s.label);
  return j;
}

inline ContextClass parse_label(const std::string& s) {
  if (s == "long") return ContextClass::long_context;
  if (s == "short") return ContextClass::short_context;
  throw DataError("unknown context label '" + s + "'");
}

inline SequenceSample sample_from_json(const json& j) {
  try {
    SequenceSample s;
    s.seq_id = j.at("seq_id").get<std::string>();
    s.doc_id = j.value("doc_id", std::string{});
    s.tokens = j.at("tokens").get<std::vector<TokenId>>();
    if (j.contains("next_token") && !j["next_token"].is_null()) s.next_token = j["next_token"].get<TokenId>();
    if (j.contains("bucket")) s.bucket = {j["bucket"].at(0).get<std::size_t>(), j["bucket"].at(1).get<std::size_t>()};
    if (j.contains("label") && !j["label"].is_null()) s.label = parse_label(j["label"].get<std::string>());
    return s;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed sample record: ") + e.what());
  }
}

inline json probe_to_json(const std::string& seq_id, const ProbeResult& r) {
  json trace = json::array();
  for (const auto& e : r.trace) {
    json row = json::array({e.ell, finite_or_null(e.value)});
    if (e.top1) row.push_back(*e.top1);
    trace.push_back(std::move(row));
  }
  return json{{"seq_id", seq_id},
              {"resolved", r.resolved()},
              {"length", r.resolved_length ? json(*r.resolved_length) : json(nullptr)},
              {"grid", r.grid.to_string()},
              {"threshold", r.threshold},
              {"trace", std::move(trace)}};
}

inline ProbeResult probe_from_json(const json& j) {
  ProbeResult r;
  if (!j.at("length").is_null()) r.resolved_length = j["length"].get<std::size_t>();
  r.grid = PrefixGrid::parse(j.at("grid").get<std::string>());
  r.threshold = j.value("threshold", 0.0);
  for (const auto& row : j.at("trace")) {
    TraceEntry e;
    e.ell = row.at(0).get<std::size_t>();
    e.value = row.at(1).is_null() ? INFINITY : row.at(1).get<double>();
    if (row.size() > 2) e.top1 = row.at(2).get<TokenId>();
    r.trace.push_back(e);
  }
  return r;
}

inline json histogram_to_json(const Histogram& h) {
  json bins = json::array();
  for (auto [k, c] : h.bins()) bins.push_back(json::array({k, c}));
  return json{{"bins", std::move(bins)}, {"total", h.total()}};
}

/// `b_hat` follows the log-log slope convention (negative for decaying data).
inline json fit_to_json(const std::optional<PowerLawFit>& fit) {
  if (!fit) return nullptr;
  return json{{"a", fit->scale}, {"b_hat", fit->slope()}, {"exponent", fit->exponent}, {"r_squared", fit->r_squared}};
}

inline json youden_to_json(const YoudenResult& y) {
  return json{{"theta", finite_or_null(y.theta)}, {"J", y.j}, {"tpr", y.tpr}, {"fpr", y.fpr}};
}

inline json confusion_to_json(const ConfusionMatrix& m) {
  return json{{"tp", m.tp}, {"fp", m.fp}, {"tn", m.tn}, {"fn", m.fn}, {"accuracy", m.accuracy()}};
}

inline json strategy_to_json(const DecodingStrategy& s) { return s.to_string(); }

inline json report_to_json(const BoostReport& r) {
  json j{{"step", r.step},
         {"lsds", r.lsds ? finite_or_null(*r.lsds) : json(nullptr)},
         {"boosted_set", r.boosted_set.ids()},
         {"pre_dist", distribution_to_json(r.pre_dist)},
         {"post_dist", distribution_to_json(r.post_dist)},
         {"chosen", r.chosen},
         {"scenario", r.scenario ? json(to_string(*r.scenario)) : json(nullptr)}};
  if (r.warning) j["warning"] = *r.warning;
  return j;
}

inline json boost_config_to_json(const GenerationConfig& c) {
  return json{{"method", to_string(c.method)},
              {"strategy", c.boost.strategy.to_string()},
              {"gamma", finite_or_null(c.boost.gamma)},
              {"epsilon", c.boost.epsilon},
              {"lambda", c.boost.lambda},
              {"alpha", c.cad_alpha},
              {"short_len", c.boost.short_len}};
}

}  // namespace ctxlens
