#pragma once

/**
 * Corpus ingestion and bucketed sequence sampling.
 *
 * A corpus is JSON lines, one {"id": str, "text": str} object per document.
 * Sequences are document prefixes doc[0:c] whose length c is drawn
 * uniformly inside each length bucket, the same number per bucket, with
 * doc[c] as the ground-truth next token.
 */

#include "ctxlens/distribution.hpp"
#include "ctxlens/error.hpp"
#include "ctxlens/oracle.hpp"
#include "ctxlens/rng.hpp"
#include "ctxlens/sample.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace ctxlens {

struct Document {
  std::string id;
  std::string text;
};

struct LineError {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct LoadedCorpus {
  std::vector<Document> documents;
  std::vector<LineError> errors;
};

/// Malformed lines are reported in `errors`; blank lines are skipped.
inline LoadedCorpus load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read corpus " + path.string());
  LoadedCorpus out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto obj = nlohmann::json::parse(line);
      if (!obj.is_object()) throw DataError("not a JSON object");
      if (!obj.contains("id") || !obj["id"].is_string()) throw DataError("missing string field \"id\"");
      if (!obj.contains("text") || !obj["text"].is_string()) throw DataError("missing string field \"text\"");
      out.documents.push_back({obj["id"].get<std::string>(), obj["text"].get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      out.errors.push_back({n, e.what()});
    } catch (const DataError& e) {
      out.errors.push_back({n, e.what()});
    }
  }
  if (out.documents.empty()) throw DataError("corpus " + path.string() + " has no documents");
  return out;
}

using Bucket = std::pair<std::size_t, std::size_t>;

/// [32,100), [100,200), ..., [900,1000).
inline std::vector<Bucket> default_buckets() {
  std::vector<Bucket> b{{32, 100}};
  for (std::size_t lo = 100; lo < 1000; lo += 100) b.emplace_back(lo, lo + 100);
  return b;
}

struct SamplingOptions {
  std::size_t n_per_bucket = 100;
  std::vector<Bucket> buckets = default_buckets();
  /// Added to every bucket bound; 6000 samples the [6,7]k window of long documents.
  std::size_t offset = 0;
  bool with_ground_truth = true;
};

struct SampledSequences {
  std::vector<SequenceSample> samples;
  std::vector<std::string> warnings;
};

/**
 * n_per_bucket prefixes per bucket. Cut points are distinct when the bucket
 * has enough positions and drawn with replacement otherwise. Buckets the
 * document cannot reach are skipped with a warning.
 */
inline SampledSequences sample_sequences(const std::string& doc_id, std::span<const TokenId> doc,
                                         const SamplingOptions& opts, std::uint64_t seed) {
  if (opts.n_per_bucket < 1) throw ConfigError("n_per_bucket must be >= 1");
  SampledSequences out;
  const CounterRng root(seed);
  for (std::size_t b = 0; b < opts.buckets.size(); ++b) {
    const auto [lo0, hi0] = opts.buckets[b];
    if (lo0 < 1 || hi0 <= lo0) throw ConfigError("bucket bounds must satisfy 1 <= lo < hi");
    const std::size_t lo = lo0 + opts.offset;
    // longest usable prefix: one token must remain as ground truth
    const std::size_t max_len = opts.with_ground_truth ? (doc.empty() ? 0 : doc.size() - 1) : doc.size();
    const std::size_t hi = std::min(hi0 + opts.offset, max_len + 1);
    if (hi <= lo) {
      out.warnings.push_back("document " + doc_id + " too short for bucket [" + std::to_string(lo) + "," +
                             std::to_string(hi0 + opts.offset) + "); skipped");
      continue;
    }
    auto rng = root.split(b);
    const std::size_t width = hi - lo;
    std::vector<std::size_t> cuts;
    if (opts.n_per_bucket <= width) {
      // Floyd's algorithm: distinct draws without materializing the range
      std::set<std::size_t> chosen;
      for (std::size_t j = width - opts.n_per_bucket; j < width; ++j) {
        const auto r = static_cast<std::size_t>(rng.uniform_int(0, j));
        chosen.insert(chosen.count(r) ? j : r);
      }
      for (auto c : chosen) cuts.push_back(lo + c);
    } else {
      for (std::size_t i = 0; i < opts.n_per_bucket; ++i)
        cuts.push_back(lo + static_cast<std::size_t>(rng.uniform_int(0, width - 1)));
      std::sort(cuts.begin(), cuts.end());
    }
    for (std::size_t i = 0; i < cuts.size(); ++i) {
      const auto c = cuts[i];
      SequenceSample s;
      s.seq_id = doc_id + ":" + std::to_string(b) + ":" + std::to_string(i);
      s.tokens.assign(doc.begin(), doc.begin() + static_cast<std::ptrdiff_t>(c));
      if (opts.with_ground_truth) s.next_token = doc[c];
      s.doc_id = doc_id;
      s.bucket = {lo, hi0 + opts.offset};
      out.samples.push_back(std::move(s));
    }
  }
  return out;
}

/**
 * Tokenizes documents through the backend, caching token ids on disk under
 * <dir>/<tokenizer id>/<hash of doc id>.json when a directory is given.
 */
class TokenCache {
 public:
  explicit TokenCache(std::filesystem::path dir = {}) : dir_(std::move(dir)) {}

  std::vector<TokenId> tokens(const Document& doc, const Backend& backend) const {
    if (dir_.empty()) return backend.tokenize(doc.text);
    const auto file = path_for(backend.tokenizer_id(), doc.id);
    if (std::ifstream in(file); in) {
      try {
        const auto j = nlohmann::json::parse(in);
        if (j.at("doc_id").get<std::string>() == doc.id) return j.at("tokens").get<std::vector<TokenId>>();
      } catch (const nlohmann::json::exception&) {
        // unreadable cache entry: fall through and rewrite it
      }
    }
    auto toks = backend.tokenize(doc.text);
    std::filesystem::create_directories(file.parent_path());
    const auto tmp = file.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      out << nlohmann::json{{"doc_id", doc.id}, {"tokens", toks}}.dump();
      if (!out) throw DataError("cannot write token cache " + tmp);
    }
    std::filesystem::rename(tmp, file);
    return toks;
  }

 private:
  std::filesystem::path path_for(const std::string& tokenizer, const std::string& doc_id) const {
    std::string safe;
    for (char c : tokenizer) safe += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a, stable across platforms
    for (unsigned char c : doc_id) h = (h ^ c) * 0x100000001b3ULL;
    char name[32];
    std::snprintf(name, sizeof name, "%016llx.json", static_cast<unsigned long long>(h));
    return dir_ / safe / name;
  }

  std::filesystem::path dir_;
};

}  // namespace ctxlens
