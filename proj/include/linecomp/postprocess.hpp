#pragma once

/**
 * Suggestion filtering and repair.
 *
 * Filters are pure predicates over a candidate line: safety (dangerous
 * commands, profanity, high-entropy secrets, emails), low score (mean
 * per-token log probability), and a pluggable correctness hook with a
 * timeout. A candidate whose correctness comes back undefined, crashed, or
 * timed out is rejected, never shown. The only text-modifying step is
 * close_pairs, which appends the closers needed to balance brackets and
 * quotes opened across the caret line; it never removes characters.
 *
 * The pipeline runs filters cheapest first with the correctness hook last,
 * then repairs and selects the first survivor.
 */

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include "linecomp/common.hpp"
#include "linecomp/generator.hpp"

namespace linecomp::postprocess {

struct FilterConfig {
  // '*' in a pattern matches any run of characters; matching is
  // case-insensitive.
  std::vector<std::string> danger_patterns{"rm -rf", "DROP DATABASE"};
  std::vector<std::string> profanity_list{};  // lowercase words
  double secret_entropy_threshold = 4.5;      // bits per character
  std::size_t secret_min_length = 20;
  double min_mean_token_logprob = std::log(0.05);
  std::int64_t correctness_timeout_ms = 100;

  void validate() const {
    if (!std::isfinite(secret_entropy_threshold) || !std::isfinite(min_mean_token_logprob) ||
        std::isnan(min_mean_token_logprob))
      throw Error("postprocess: thresholds must be finite");
    if (correctness_timeout_ms <= 0) throw Error("postprocess: timeout must be positive");
  }
};

enum class Reason { kept, safety, low_score, incorrect, timeout_undefined };

inline const char* to_string(Reason r) {
  switch (r) {
    case Reason::kept: return "kept";
    case Reason::safety: return "safety";
    case Reason::low_score: return "low_score";
    case Reason::incorrect: return "incorrect";
    case Reason::timeout_undefined: return "timeout_undefined";
  }
  return "unknown";
}

struct Verdict {
  bool kept = false;
  Reason reason = Reason::kept;
};

enum class CorrectnessStatus { correct, incorrect, undefined };

/// Pluggable checker: (candidate line, line context before the caret).
using CorrectnessChecker =
    std::function<CorrectnessStatus(const std::string& line, const std::string& context)>;

// ---------------------------------------------------------------------------
// safety
// ---------------------------------------------------------------------------

namespace detail_post {

inline char lower(char c) {
  return static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
}

inline std::string lower_copy(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(), [](char c) { return lower(c); });
  return out;
}

/// Case-insensitive match of a pattern whose '*' segments may be separated
/// by arbitrary text; segments must appear in order.
inline bool wildcard_match(const std::string& text_lower, const std::string& pattern) {
  std::size_t pos = 0;
  std::size_t start = 0;
  bool any = false;
  const std::string pat = lower_copy(pattern);
  while (start <= pat.size()) {
    const std::size_t star = pat.find('*', start);
    const std::string piece = pat.substr(start, star == std::string::npos ? star : star - start);
    if (!piece.empty()) {
      pos = text_lower.find(piece, pos);
      if (pos == std::string::npos) return false;
      pos += piece.size();
      any = true;
    }
    if (star == std::string::npos) break;
    start = star + 1;
  }
  return any;  // a pattern of only '*' matches nothing
}

inline bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

/// Calls fn(start, end) for every maximal alphanumeric-or-underscore run.
template <typename Fn>
inline void for_each_word(const std::string& text, Fn&& fn) {
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_word_char(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && is_word_char(text[j])) ++j;
    fn(i, j);
    i = j;
  }
}

/// Shannon entropy in bits per character over the byte distribution.
inline double shannon_entropy(std::string_view run) {
  if (run.empty()) return 0.0;
  std::array<std::size_t, 256> counts{};
  for (char c : run) ++counts[static_cast<unsigned char>(c)];
  const double n = static_cast<double>(run.size());
  double h = 0.0;
  for (std::size_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return h;
}

inline const std::regex& email_regex() {
  static const std::regex re(R"(([A-Za-z0-9._%+\-]+)@([A-Za-z0-9\-]+\.)+[A-Za-z]{2,})");
  return re;
}

}  // namespace detail_post

/// Rejects dangerous commands, profanity on word boundaries, high-entropy
/// alphanumeric runs long enough to look like credentials, and emails.
inline Verdict filter_safety(const std::string& text, const FilterConfig& config) {
  const std::string lowered = detail_post::lower_copy(text);
  for (const auto& pattern : config.danger_patterns) {
    if (detail_post::wildcard_match(lowered, pattern)) return {false, Reason::safety};
  }
  bool rejected = false;
  detail_post::for_each_word(text, [&](std::size_t i, std::size_t j) {
    if (rejected) return;
    const std::string_view run(text.data() + i, j - i);
    if (!config.profanity_list.empty()) {
      const std::string word = detail_post::lower_copy(std::string(run));
      for (const auto& bad : config.profanity_list) {
        if (word == bad) {
          rejected = true;
          return;
        }
      }
    }
    if (run.size() >= config.secret_min_length &&
        detail_post::shannon_entropy(run) >= config.secret_entropy_threshold)
      rejected = true;
  });
  if (rejected) return {false, Reason::safety};
  if (std::regex_search(text, detail_post::email_regex())) return {false, Reason::safety};
  return {true, Reason::kept};
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

/// Keeps hypotheses whose mean per-token log probability clears the
/// threshold; order is preserved.
inline std::vector<generator::Hypothesis> filter_low_score(
    std::vector<generator::Hypothesis> hypotheses, const FilterConfig& config) {
  std::vector<generator::Hypothesis> out;
  out.reserve(hypotheses.size());
  for (auto& hyp : hypotheses) {
    if (hyp.ids.empty()) continue;
    const double mean = hyp.log_prob / static_cast<double>(hyp.ids.size());
    if (mean >= config.min_mean_token_logprob) out.push_back(std::move(hyp));
  }
  return out;
}

// ---------------------------------------------------------------------------
// correctness
// ---------------------------------------------------------------------------

/// Runs the checker on a worker thread and gives up at the timeout. A
/// checker that times out keeps running detached; its result is discarded.
/// Crash and undefined both reject: a suggestion whose correctness cannot
/// be established is never shown.
inline Verdict filter_correctness(const std::string& text, const std::string& context,
                                  const CorrectnessChecker& checker, std::int64_t timeout_ms) {
  if (timeout_ms <= 0) throw Error("postprocess: timeout must be positive");
  auto result = std::make_shared<std::promise<CorrectnessStatus>>();
  auto future = result->get_future();
  std::thread([result, checker, text, context]() {
    try {
      result->set_value(checker(text, context));
    } catch (...) {
      try {
        result->set_value(CorrectnessStatus::undefined);
      } catch (...) {
        // promise already satisfied; nothing to do
      }
    }
  }).detach();
  if (future.wait_for(std::chrono::milliseconds(timeout_ms)) != std::future_status::ready)
    return {false, Reason::timeout_undefined};
  switch (future.get()) {
    case CorrectnessStatus::correct: return {true, Reason::kept};
    case CorrectnessStatus::incorrect: return {false, Reason::incorrect};
    case CorrectnessStatus::undefined: return {false, Reason::timeout_undefined};
  }
  return {false, Reason::timeout_undefined};
}

namespace detail_post {

struct PairScan {
  std::vector<char> stack;  // openers and quote characters, innermost last
  bool broken = false;      // closer mismatch or underflow seen
};

inline char closer_for(char opener) {
  switch (opener) {
    case '(': return ')';
    case '[': return ']';
    case '{': return '}';
    default: return opener;  // quotes close with themselves
  }
}

/// Feeds a line into a bracket/quote stack. Inside a string literal only
/// the matching quote (or an escape) is significant. Callers scan the
/// joined context + candidate in one pass so escapes spanning the caret
/// are seen whole.
inline void scan_pairs(PairScan& scan, std::string_view text) {
  bool in_string = false;
  char quote = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (c == '\\') {
        ++i;  // skip the escaped character
      } else if (c == quote) {
        in_string = false;
        scan.stack.pop_back();
      }
      continue;
    }
    if (c == '\'' || c == '"') {
      in_string = true;
      quote = c;
      scan.stack.push_back(c);
    } else if (c == '(' || c == '[' || c == '{') {
      scan.stack.push_back(c);
    } else if (c == ')' || c == ']' || c == '}') {
      if (scan.stack.empty() || closer_for(scan.stack.back()) != c) {
        scan.broken = true;
        return;
      }
      scan.stack.pop_back();
    }
  }
}

}  // namespace detail_post

/// Built-in checker: the caret line joined with the suggestion must not
/// close a bracket that was never opened or close with the wrong kind.
/// Unclosed openers are fine; pair repair appends them afterwards.
inline CorrectnessStatus bracket_balance_checker(const std::string& line,
                                                 const std::string& context) {
  detail_post::PairScan scan;
  detail_post::scan_pairs(scan, context + line);
  return scan.broken ? CorrectnessStatus::incorrect : CorrectnessStatus::correct;
}

// ---------------------------------------------------------------------------
// repair and selection
// ---------------------------------------------------------------------------

/// Appends the closers needed to balance brackets and quotes opened across
/// context + suggestion, innermost first. If the pair structure is already
/// broken (a closer without its opener), the suggestion is returned
/// unchanged; repair only ever appends.
inline std::string close_pairs(const std::string& suggestion, const std::string& context) {
  detail_post::PairScan scan;
  detail_post::scan_pairs(scan, context + suggestion);
  if (scan.broken) return suggestion;
  std::string out = suggestion;
  for (auto it = scan.stack.rbegin(); it != scan.stack.rend(); ++it)
    out += detail_post::closer_for(*it);
  return out;
}

struct PipelineRecord {
  std::string text;  // candidate line, before repair
  double score = 0.0;
  Verdict verdict;
};

struct PipelineResult {
  std::optional<std::string> suggestion;  // repaired text of the first survivor
  double score = 0.0;
  std::vector<PipelineRecord> records;  // one per non-empty candidate, input order
};

/// Full pipeline over score-sorted candidates: low score, then safety,
/// then the correctness hook, then pair repair on the first survivor.
/// Candidates are (text, score, token_count) with text already stripped of
/// the trailing newline; empty texts are skipped outright.
struct Candidate {
  std::string text;
  double score = 0.0;
  std::size_t token_count = 0;
};

inline PipelineResult run_pipeline(const std::vector<Candidate>& candidates,
                                   const std::string& line_context, const FilterConfig& config,
                                   const CorrectnessChecker& checker = bracket_balance_checker) {
  config.validate();
  PipelineResult result;
  for (const auto& cand : candidates) {
    if (cand.text.empty()) continue;
    Verdict verdict{true, Reason::kept};
    const double mean =
        cand.score / static_cast<double>(std::max<std::size_t>(1, cand.token_count));
    if (mean < config.min_mean_token_logprob) verdict = {false, Reason::low_score};
    if (verdict.kept) verdict = filter_safety(cand.text, config);
    if (verdict.kept)
      verdict =
          filter_correctness(cand.text, line_context, checker, config.correctness_timeout_ms);
    result.records.push_back({cand.text, cand.score, verdict});
    if (verdict.kept) {
      result.suggestion = close_pairs(cand.text, line_context);
      result.score = cand.score;
      break;  // candidates arrive score-sorted; the first survivor wins
    }
  }
  return result;
}

}  // namespace linecomp::postprocess
