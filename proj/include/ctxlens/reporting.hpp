#pragma once

/**
 * Result aggregation and persistence.
 *
 * Every JSON document and JSON-lines record carries "schema": "ctxlens/1".
 * Whole-file artifacts are written atomically (temp file + rename);
 * JSON-lines streams are flushed record by record so an interrupted run
 * leaves only complete lines behind.
 */

#include "ctxlens/calibration.hpp"
#include "ctxlens/context_probe.hpp"
#include "ctxlens/error.hpp"
#include "ctxlens/histogram.hpp"
#include "ctxlens/sample.hpp"

#include <json.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace ctxlens {

inline constexpr const char* kSchemaVersion = "ctxlens/1";

/// Fraction of resolved probes with length <= cutoff.
inline double aggregate_share(std::span<const ProbeResult> results, std::size_t cutoff) {
  if (results.empty()) throw DataError("no results to aggregate");
  std::size_t hit = 0;
  for (const auto& r : results) {
    if (!r.resolved_length) throw DataError("aggregate_share needs resolved probes");
    hit += *r.resolved_length <= cutoff;
  }
  return static_cast<double>(hit) / static_cast<double>(results.size());
}

/// "long" is the positive class.
struct ConfusionMatrix {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const noexcept { return tp + fp + tn + fn; }
  double accuracy() const noexcept {
    return total() ? static_cast<double>(tp + tn) / static_cast<double>(total()) : 0.0;
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion(std::span<const ContextClass> predicted, std::span<const ContextClass> oracle) {
  if (predicted.size() != oracle.size())
    throw DataError("confusion: " + std::to_string(predicted.size()) + " predictions vs " +
                    std::to_string(oracle.size()) + " oracle labels");
  ConfusionMatrix m;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] == ContextClass::long_context;
    const bool o = oracle[i] == ContextClass::long_context;
    (p ? (o ? m.tp : m.fp) : (o ? m.fn : m.tn)) += 1;
  }
  return m;
}

namespace detail {
inline std::filesystem::path temp_sibling(const std::filesystem::path& path) {
  static std::atomic<unsigned> counter{0};
  std::ostringstream os;
  os << path.filename().string() << ".tmp." << std::hash<std::thread::id>{}(std::this_thread::get_id()) << '.'
     << counter++;
  return path.parent_path() / os.str();
}
}  // namespace detail

/// Writes `text` to `path` via a temporary file and rename.
inline void write_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = detail::temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw DataError("cannot write " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw DataError("cannot move report into place at " + path.string() + ": " + ec.message());
  }
}

/// JSON document with the schema field, pretty-printed, written atomically.
inline void write_report(const std::filesystem::path& path, nlohmann::json payload) {
  if (!payload.is_object()) throw DataError("report payload must be a JSON object");
  payload["schema"] = kSchemaVersion;
  write_atomic(path, payload.dump(2) + "\n");
}

inline nlohmann::json read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed report " + path.string() + ": " + e.what());
  }
}

/// Append-only JSON-lines stream; each record is flushed as one write.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::filesystem::path& path) : path_(path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw DataError("cannot open " + path.string());
  }

  void write(nlohmann::json record) {
    record["schema"] = kSchemaVersion;
    const auto line = record.dump() + "\n";
    out_.write(line.data(), static_cast<std::streamsize>(line.size()));
    out_.flush();
    if (!out_) throw DataError("write failed on " + path_.string());
    ++count_;
  }

  std::size_t count() const noexcept { return count_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::size_t count_ = 0;
};

inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

/// "key,count" CSV with a header row.
inline std::string histogram_csv(const Histogram& h, const std::string& key_name = "ell") {
  std::ostringstream os;
  os << key_name << ",count\n";
  for (auto [k, c] : h.bins()) os << k << ',' << c << '\n';
  return os.str();
}

}  // namespace ctxlens
