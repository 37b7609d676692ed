#pragma once

/**
 * Controlled long/short-context probes with known labels.
 *
 *  gen_niah      "The magic number is NNNNNN" hidden in filler text, followed
 *                by a retrieval query. Short iff the needle starts within
 *                the last `window` tokens of the haystack.
 *  gen_longeval  register lines "line <id> : REGISTER_CONTENT is <N>" and a
 *                query for one of them. Short iff the referenced line starts
 *                within the last `window` tokens of the register block.
 *  gen_key_value token-level variant for NeedleMock: a key token at
 *                distance d from the end, the answer right after it.
 *
 * Text generators tokenize through the backend so windows are measured in
 * the backend's own tokens.
 */

#include "ctxlens/error.hpp"
#include "ctxlens/oracle.hpp"
#include "ctxlens/rng.hpp"
#include "ctxlens/sample.hpp"

#include <array>
#include <cstdio>
#include <string>
#include <vector>

namespace ctxlens {

struct SyntheticCase {
  SequenceSample sample;
  ContextClass label = ContextClass::short_context;
  /// Tokens the model should produce next (the whole answer, not just the first).
  std::vector<TokenId> answer_tokens;
  std::string answer_text;
};

inline std::string random_digits(CounterRng& rng, int digits) {
  std::string out;
  for (int i = 0; i < digits; ++i) out += static_cast<char>('0' + rng.uniform_int(0, 9));
  return out;
}

struct NiahSpec {
  /// Haystack length in tokens (filler plus needle), query excluded.
  std::size_t total_len = 512;
  /// Index in the haystack where the needle statement starts.
  std::size_t needle_pos = 0;
  std::size_t window = 32;
  int digits = 6;
};

inline SyntheticCase gen_niah(const NiahSpec& spec, std::span<const TokenId> filler, std::uint64_t seed,
                              const Backend& backend) {
  if (spec.needle_pos >= spec.total_len) throw ConfigError("needle position must be < total_len");
  if (spec.digits < 1) throw ConfigError("needle needs at least one digit");
  CounterRng rng(seed);
  const auto number = random_digits(rng, spec.digits);
  const auto needle = backend.tokenize("The magic number is " + number + " .");
  const auto query = backend.tokenize("The magic number mentioned in the provided text is");
  if (spec.needle_pos + needle.size() > spec.total_len)
    throw DataError("needle collides with the query region (needle of " + std::to_string(needle.size()) +
                    " tokens at " + std::to_string(spec.needle_pos) + " of " +
                    std::to_string(spec.total_len) + ")");
  const std::size_t filler_needed = spec.total_len - needle.size();
  if (filler.size() < filler_needed)
    throw DataError("filler has " + std::to_string(filler.size()) + " tokens, need " +
                    std::to_string(filler_needed));

  SyntheticCase out;
  auto& toks = out.sample.tokens;
  toks.assign(filler.begin(), filler.begin() + static_cast<std::ptrdiff_t>(spec.needle_pos));
  toks.insert(toks.end(), needle.begin(), needle.end());
  toks.insert(toks.end(), filler.begin() + static_cast<std::ptrdiff_t>(spec.needle_pos),
              filler.begin() + static_cast<std::ptrdiff_t>(filler_needed));
  toks.insert(toks.end(), query.begin(), query.end());

  out.answer_text = number;
  out.answer_tokens = backend.tokenize(number);
  if (out.answer_tokens.empty()) throw DataError("backend produced no tokens for the needle number");
  out.sample.next_token = out.answer_tokens.front();
  out.label = spec.total_len - spec.needle_pos <= spec.window ? ContextClass::short_context
                                                              : ContextClass::long_context;
  out.sample.label = out.label;
  out.sample.seq_id = "niah:" + std::to_string(spec.total_len) + ":" + std::to_string(spec.needle_pos) + ":" +
                      std::to_string(seed);
  out.sample.doc_id = "niah";
  return out;
}

struct LongEvalSpec {
  enum class Answer { content, line_id };

  std::size_t num_lines = 50;
  /// 1-based index of the line the query refers to.
  std::size_t target_line = 1;
  /// 32 for the line-id variant, 64 when short queries also ask for content.
  std::size_t window = 32;
  Answer answer = Answer::content;
};

inline SyntheticCase gen_longeval(const LongEvalSpec& spec, std::uint64_t seed, const Backend& backend) {
  if (spec.num_lines < 2) throw ConfigError("need at least 2 register lines");
  if (spec.target_line < 1 || spec.target_line > spec.num_lines)
    throw ConfigError("target line outside the register block");
  if (spec.window < 1) throw ConfigError("window must be >= 1");

  static constexpr std::array<const char*, 16> adjectives{
      "righteous", "quiet",  "amber", "brisk",  "candid", "dusty", "eager", "fabled",
      "gentle",    "hollow", "ivory", "jovial", "keen",   "lucid", "mellow", "nimble"};
  static constexpr std::array<const char*, 16> nouns{
      "ethernet", "harbor", "lantern", "meadow", "orchid", "pylon", "quarry", "river",
      "saddle",   "timber", "umbra",   "violet", "willow", "yarrow", "zephyr", "beacon"};

  CounterRng rng(seed);
  std::vector<std::string> ids;
  std::vector<std::string> contents;
  while (ids.size() < spec.num_lines) {
    std::string id = std::string(adjectives[rng.uniform_int(0, adjectives.size() - 1)]) + "-" +
                     nouns[rng.uniform_int(0, nouns.size() - 1)] + "-" + std::to_string(ids.size());
    ids.push_back(std::move(id));
    contents.push_back(random_digits(rng, 5));
  }

  SyntheticCase out;
  auto& toks = out.sample.tokens;
  std::size_t target_start = 0;
  for (std::size_t i = 0; i < spec.num_lines; ++i) {
    if (i + 1 == spec.target_line) target_start = toks.size();
    const auto line = backend.tokenize("line " + ids[i] + " : REGISTER_CONTENT is " + contents[i]);
    toks.insert(toks.end(), line.begin(), line.end());
  }
  const std::size_t block_len = toks.size();
  const auto& target_id = ids[spec.target_line - 1];
  const auto& target_content = contents[spec.target_line - 1];
  std::string query;
  if (spec.answer == LongEvalSpec::Answer::content) {
    query = "Tell me what is the REGISTER_CONTENT in line " + target_id + " ? Answer: The REGISTER_CONTENT in line " +
            target_id + " is";
    out.answer_text = target_content;
  } else {
    query = "Which line has REGISTER_CONTENT " + target_content + " ? Answer: line";
    out.answer_text = target_id;
  }
  const auto q = backend.tokenize(query);
  toks.insert(toks.end(), q.begin(), q.end());

  out.answer_tokens = backend.tokenize(out.answer_text);
  if (out.answer_tokens.empty()) throw DataError("backend produced no tokens for the answer");
  out.sample.next_token = out.answer_tokens.front();
  out.label = block_len - target_start <= spec.window ? ContextClass::short_context : ContextClass::long_context;
  out.sample.label = out.label;
  out.sample.seq_id = "longeval:" + std::to_string(spec.num_lines) + ":" + std::to_string(spec.target_line) + ":" +
                      std::to_string(seed);
  out.sample.doc_id = "longeval";
  return out;
}

struct KeyValueSpec {
  std::size_t length = 256;
  /// Distance of the key token from the end of the sequence (>= 2).
  std::size_t distance = 10;
  std::size_t vocab_size = 1000;
  TokenId key = 999;
  TokenId fallback = 998;
  std::size_t window = 32;
};

/// Random filler over the vocabulary with s[|s|-d] = key, s[|s|-d+1] = answer.
inline SyntheticCase gen_key_value(const KeyValueSpec& spec, std::uint64_t seed) {
  if (spec.distance < 2 || spec.distance > spec.length)
    throw ConfigError("key distance must lie in [2, length]");
  if (spec.vocab_size < 4) throw ConfigError("vocabulary too small for key/value sequences");
  CounterRng rng(seed);
  auto draw = [&] {
    TokenId t;
    do {
      t = static_cast<TokenId>(rng.uniform_int(0, spec.vocab_size - 1));
    } while (t == spec.key || t == spec.fallback);
    return t;
  };
  SyntheticCase out;
  auto& toks = out.sample.tokens;
  toks.resize(spec.length);
  for (auto& t : toks) t = draw();
  const std::size_t at = spec.length - spec.distance;
  toks[at] = spec.key;
  out.sample.next_token = toks[at + 1];
  out.answer_tokens = {toks[at + 1]};
  out.answer_text = std::to_string(toks[at + 1]);
  out.label = spec.distance <= spec.window ? ContextClass::short_context : ContextClass::long_context;
  out.sample.label = out.label;
  out.sample.seq_id = "kv:" + std::to_string(spec.length) + ":" + std::to_string(spec.distance) + ":" +
                      std::to_string(seed);
  out.sample.doc_id = "kv";
  return out;
}

}  // namespace ctxlens
