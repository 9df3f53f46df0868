#pragma once

/**
 * Offline evaluation harness.
 *
 * Caret positions are sampled deterministically over held-out files and
 * serialized so every run scores the identical set. For each position the
 * document is truncated at the caret, the engine is invoked through the
 * full pipeline, and the suggestion is scored against the true rest of the
 * line: Matched Ratio is the common-prefix length over the truth length,
 * Perfect Lines is exact match, both after trailing-whitespace
 * normalization. Positions whose truth is empty are excluded rather than
 * scored as trivially perfect. Per-position records are emitted so the
 * aggregate report can be recomputed exactly and diffed between engine
 * versions.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "linecomp/common.hpp"
#include "linecomp/corpus.hpp"
#include "linecomp/engine.hpp"

namespace linecomp::eval {

struct EvalPosition {
  std::size_t file_id = 0;
  std::size_t caret_offset = 0;  // codepoint index into the file

  friend bool operator==(const EvalPosition&, const EvalPosition&) = default;
};

// ---------------------------------------------------------------------------
// position sampling and serialization
// ---------------------------------------------------------------------------

struct SampleResult {
  std::vector<EvalPosition> positions;
  std::vector<std::size_t> skipped_file_ids;  // files with no eligible offset
};

/// Uniformly samples up to per_file distinct caret offsets per file, each
/// strictly inside a line: at least one character of the line precedes the
/// caret and the trailing-whitespace-stripped suffix is non-empty.
inline SampleResult sample_positions(const std::vector<corpus::CorpusFile>& files,
                                     std::size_t per_file, std::uint64_t seed) {
  if (per_file == 0) throw Error("eval: per_file must be positive");
  SampleResult result;
  std::mt19937_64 rng(seed);
  for (std::size_t file_id = 0; file_id < files.size(); ++file_id) {
    const auto& text = files[file_id].text;
    std::vector<std::size_t> eligible;
    std::size_t line_start = 0;  // codepoints
    std::size_t byte = 0;
    while (byte < text.size()) {
      std::size_t line_end_byte = text.find('\n', byte);
      if (line_end_byte == std::string::npos) line_end_byte = text.size();
      const std::string_view line(text.data() + byte, line_end_byte - byte);
      const std::size_t stripped = detail::count_codepoints(detail::rstrip(line));
      for (std::size_t j = 1; j + 1 <= stripped; ++j) eligible.push_back(line_start + j);
      const std::size_t line_cp = detail::count_codepoints(line);
      line_start += line_cp + (line_end_byte < text.size() ? 1 : 0);
      byte = line_end_byte + (line_end_byte < text.size() ? 1 : 0);
    }
    if (eligible.empty()) {
      result.skipped_file_ids.push_back(file_id);
      continue;
    }
    // Partial Fisher-Yates with explicit draws; the prefix holds the sample.
    const std::size_t take = std::min(per_file, eligible.size());
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng() % (eligible.size() - i));
      std::swap(eligible[i], eligible[j]);
    }
    std::vector<std::size_t> chosen(eligible.begin(),
                                    eligible.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(chosen.begin(), chosen.end());
    for (std::size_t offset : chosen) result.positions.push_back({file_id, offset});
  }
  return result;
}

/// Text form: one `file_id<TAB>offset` per line.
inline std::string positions_to_text(const std::vector<EvalPosition>& positions) {
  std::string out;
  for (const auto& p : positions) {
    out += std::to_string(p.file_id);
    out += '\t';
    out += std::to_string(p.caret_offset);
    out += '\n';
  }
  return out;
}

inline std::vector<EvalPosition> parse_positions(std::string_view text) {
  std::vector<EvalPosition> out;
  std::size_t line_no = 0;
  for (auto line : detail::split_lines(text, false)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto where = " at line " + std::to_string(line_no);
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) throw Error("eval: positions line lacks a tab" + where);
    EvalPosition p;
    try {
      std::size_t pos = 0;
      p.file_id = std::stoull(std::string(line.substr(0, tab)), &pos);
      if (pos != tab) throw std::invalid_argument("");
      p.caret_offset = std::stoull(std::string(line.substr(tab + 1)), &pos);
      if (pos != line.size() - tab - 1) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw Error("eval: malformed position" + where);
    }
    out.push_back(p);
  }
  return out;
}

inline void save_positions(const std::vector<EvalPosition>& positions,
                           const std::filesystem::path& path) {
  detail::write_file(path, positions_to_text(positions));
}

inline std::vector<EvalPosition> load_positions(const std::filesystem::path& path) {
  return parse_positions(detail::read_file(path));
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

namespace detail_eval {

/// Byte length of the longest common prefix, backed off to a codepoint
/// boundary so a ratio never credits a fraction of a character.
inline std::size_t common_prefix_bytes(std::string_view a, std::string_view b) {
  std::size_t n = 0;
  const std::size_t limit = std::min(a.size(), b.size());
  while (n < limit && a[n] == b[n]) ++n;
  // The boundary splits a codepoint exactly when a continuation byte follows
  // it; both inputs agree on [0, n), so inspecting one side suffices.
  while (n > 0 && n < a.size() && (static_cast<unsigned char>(a[n]) & 0xC0) == 0x80) --n;
  return n;
}

}  // namespace detail_eval

/// Characters matched from the left over the truth length, both sides
/// stripped of trailing whitespace. Empty truth yields zero; callers
/// exclude such positions from aggregation.
inline double matched_ratio(std::string_view suggestion, std::string_view truth) {
  const std::string_view s = detail::rstrip(suggestion);
  const std::string_view t = detail::rstrip(truth);
  const std::size_t lcp = detail_eval::common_prefix_bytes(s, t);
  const std::size_t matched = detail::count_codepoints(s.substr(0, lcp));
  const std::size_t denom = std::max<std::size_t>(1, detail::count_codepoints(t));
  return static_cast<double>(matched) / static_cast<double>(denom);
}

inline bool perfect_line(std::string_view suggestion, std::string_view truth) {
  return detail::rstrip(suggestion) == detail::rstrip(truth);
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct PositionRecord {
  std::size_t file_id = 0;
  std::size_t caret_offset = 0;
  bool shown = false;
  bool excluded = false;  // empty truth: never scored
  bool error = false;     // engine failed; treated as no suggestion
  std::string suggestion;
  std::string truth;
  double matched = 0.0;
  bool perfect = false;
  double latency_ms = 0.0;
  bool cache_hit = false;
};

struct EvalReport {
  std::size_t positions_total = 0;
  std::size_t suggestions_shown = 0;
  double shown_rate = 0.0;
  double matched_ratio = 0.0;  // mean over shown, non-excluded positions
  double perfect_lines = 0.0;  // fraction over shown, non-excluded positions
  double latency_p50_ms = 0.0;
  double latency_p90_ms = 0.0;
};

using CompleteFn =
    std::function<engine::CompletionResult(const engine::CompletionRequest&, std::size_t file_id)>;

/// Engine adapter: one session per file, so consecutive positions within a
/// file exercise the cache the way sequential edits would.
inline CompleteFn session_adapter(const engine::Engine& eng) {
  struct State {
    std::optional<std::size_t> file_id;
    std::optional<engine::Session> session;
  };
  auto state = std::make_shared<State>();
  return [&eng, state](const engine::CompletionRequest& request, std::size_t file_id) {
    if (!state->session || state->file_id != file_id) {
      state->session.emplace(eng);
      state->file_id = file_id;
    }
    return state->session->complete(request);
  };
}

/// Aggregates records into a report; evaluation uses this same function,
/// so recomputing from the record stream reproduces the report exactly.
inline EvalReport compute_report(const std::vector<PositionRecord>& records) {
  EvalReport report;
  report.positions_total = records.size();
  std::vector<double> latencies;
  latencies.reserve(records.size());
  double matched_sum = 0.0;
  std::size_t scored = 0;
  std::size_t perfect = 0;
  for (const auto& r : records) {
    latencies.push_back(r.latency_ms);
    if (r.shown) ++report.suggestions_shown;
    if (r.shown && !r.excluded) {
      ++scored;
      matched_sum += r.matched;
      if (r.perfect) ++perfect;
    }
  }
  if (report.positions_total > 0)
    report.shown_rate = static_cast<double>(report.suggestions_shown) /
                        static_cast<double>(report.positions_total);
  if (scored > 0) {
    report.matched_ratio = matched_sum / static_cast<double>(scored);
    report.perfect_lines = static_cast<double>(perfect) / static_cast<double>(scored);
  }
  if (!latencies.empty()) {
    std::sort(latencies.begin(), latencies.end());
    const auto pick = [&](double q) {
      const auto n = static_cast<double>(latencies.size());
      const auto idx = static_cast<std::size_t>(std::ceil(q * n)) - 1;
      return latencies[std::min(idx, latencies.size() - 1)];
    };
    report.latency_p50_ms = pick(0.5);
    report.latency_p90_ms = pick(0.9);
  }
  return report;
}

struct EvalRun {
  EvalReport report;
  std::vector<PositionRecord> records;
};

/// Scores every position: truncate the document at the caret, complete,
/// compare with the true rest of the line. Engine errors are recorded and
/// evaluation continues.
inline EvalRun evaluate(const std::vector<corpus::CorpusFile>& files,
                        const std::vector<EvalPosition>& positions, const CompleteFn& complete) {
  EvalRun run;
  run.records.reserve(positions.size());
  for (const auto& position : positions) {
    if (position.file_id >= files.size()) throw Error("eval: position file id out of range");
    const auto& file = files[position.file_id];
    if (position.caret_offset > detail::count_codepoints(file.text))
      throw Error("eval: position offset outside file");

    PositionRecord record;
    record.file_id = position.file_id;
    record.caret_offset = position.caret_offset;

    const std::size_t byte_caret = detail::codepoint_to_byte(file.text, position.caret_offset);
    std::size_t line_end = file.text.find('\n', byte_caret);
    if (line_end == std::string::npos) line_end = file.text.size();
    record.truth =
        std::string(detail::rstrip(std::string_view(file.text).substr(byte_caret, line_end - byte_caret)));
    record.excluded = record.truth.empty();

    engine::CompletionRequest request{file.relative_path, file.extension, file.text,
                                      position.caret_offset};
    try {
      const auto result = complete(request, position.file_id);
      record.latency_ms = result.latency_ms;
      record.cache_hit = result.cache_hit;
      if (result.suggestion) {
        record.shown = true;
        record.suggestion = *result.suggestion;
        if (!record.excluded) {
          record.matched = matched_ratio(record.suggestion, record.truth);
          record.perfect = perfect_line(record.suggestion, record.truth);
        }
      }
    } catch (const std::exception&) {
      record.error = true;
    }
    run.records.push_back(std::move(record));
  }
  run.report = compute_report(run.records);
  return run;
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const PositionRecord& r) {
  return {{"file_id", r.file_id}, {"caret", r.caret_offset},
          {"shown", r.shown},     {"excluded", r.excluded},
          {"error", r.error},     {"suggestion", r.suggestion},
          {"truth", r.truth},     {"matched", r.matched},
          {"perfect", r.perfect}, {"latency_ms", r.latency_ms},
          {"cache_hit", r.cache_hit}};
}

inline PositionRecord record_from_json(const nlohmann::json& j) {
  PositionRecord r;
  r.file_id = j.at("file_id").get<std::size_t>();
  r.caret_offset = j.at("caret").get<std::size_t>();
  r.shown = j.at("shown").get<bool>();
  r.excluded = j.at("excluded").get<bool>();
  r.error = j.at("error").get<bool>();
  r.suggestion = j.at("suggestion").get<std::string>();
  r.truth = j.at("truth").get<std::string>();
  r.matched = j.at("matched").get<double>();
  r.perfect = j.at("perfect").get<bool>();
  r.latency_ms = j.at("latency_ms").get<double>();
  r.cache_hit = j.at("cache_hit").get<bool>();
  return r;
}

inline std::string records_to_jsonl(const std::vector<PositionRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<PositionRecord> records_from_jsonl(std::string_view text) {
  std::vector<PositionRecord> out;
  for (auto line : detail::split_lines(text, false)) {
    if (line.empty()) continue;
    out.push_back(record_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

inline nlohmann::json to_json(const EvalReport& r) {
  return {{"positions_total", r.positions_total},
          {"suggestions_shown", r.suggestions_shown},
          {"shown_rate", r.shown_rate},
          {"matched_ratio", r.matched_ratio},
          {"perfect_lines", r.perfect_lines},
          {"latency_p50_ms", r.latency_p50_ms},
          {"latency_p90_ms", r.latency_p90_ms}};
}

}  // namespace linecomp::eval
