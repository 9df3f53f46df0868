#pragma once

/**
 * Code normalization and indentation encoding.
 *
 * normalize() strips `#` comments (string-aware), trailing whitespace, and
 * empty lines. encode_scopes() replaces indentation with scope-in/out
 * markers so one level of nesting is one token regardless of indent width;
 * decode_scopes() inverts it. import_dropout() removes top-level import
 * lines at a given rate for training-time augmentation. compose_context()
 * assembles the model input: extension, path, and the code above the caret,
 * truncated from the left to a token budget.
 *
 * The line lexer is deliberately tolerant: quotes are tracked per line and
 * an unterminated string extends to the end of its line.
 */

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "linecomp/common.hpp"
#include "linecomp/special_tokens.hpp"
#include "linecomp/tokenizer.hpp"

namespace linecomp::formatter {

struct FormatterConfig {
  std::string language = "python";
  double import_dropout_p = 0.5;
};

namespace detail_fmt {

/// Byte offset where a `#` comment starts on this line, or npos.
/// Quote state resets per line; escapes honored inside strings.
inline std::size_t comment_start(std::string_view line) {
  char quote = 0;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quote != 0) {
      if (c == '\\') {
        ++i;
      } else if (c == quote) {
        quote = 0;
      }
    } else if (c == '\'' || c == '"') {
      quote = c;
    } else if (c == '#') {
      return i;
    }
  }
  return std::string_view::npos;
}

/// Removes every occurrence of the reserved marker strings so marker text
/// can only ever originate from this module.
inline std::string scrub_markers(std::string_view text) {
  std::string out(text);
  for (TokenId id : {kScopeInId, kScopeOutId, kLangSepId, kMetaSepId}) {
    const auto m = kSpecialText[id];
    std::size_t pos = 0;
    while ((pos = out.find(m.data(), pos, m.size())) != std::string::npos) out.erase(pos, m.size());
  }
  return out;
}

struct IndentInfo {
  std::size_t width = 0;  // leading run length
  bool tabs = false;
  bool mixed = false;
};

inline IndentInfo leading_indent(std::string_view line) {
  IndentInfo info;
  bool saw_space = false, saw_tab = false;
  for (char c : line) {
    if (c == ' ')
      saw_space = true;
    else if (c == '\t')
      saw_tab = true;
    else
      break;
    ++info.width;
  }
  info.tabs = saw_tab && !saw_space;
  info.mixed = saw_tab && saw_space;
  return info;
}

}  // namespace detail_fmt

/// Comment removal, trailing-whitespace removal, empty-line removal.
/// Output lines are always newline-terminated. Idempotent.
inline std::string normalize(std::string_view text, const FormatterConfig& config = {}) {
  (void)config;  // `language` selects the comment syntax; only '#' today
  const std::string scrubbed = detail_fmt::scrub_markers(text);
  std::string out;
  out.reserve(scrubbed.size());
  for (auto line : detail::split_lines(scrubbed, false)) {
    const auto hash = detail_fmt::comment_start(line);
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::rstrip(line);
    if (line.empty()) continue;
    out += line;
    out += '\n';
  }
  return out;
}

struct ScopedText {
  std::string text;
  std::string indent_unit;  // inferred; default four spaces when unindented
  int final_depth = 0;      // depth of the last line
};

/// Replaces indentation with depth-delta markers. The indent unit is the
/// first observed indent (a tab counts as one unit); deeper lines must use
/// whole multiples of it.
inline ScopedText encode_scopes(std::string_view normalized) {
  ScopedText result;
  result.indent_unit = "    ";
  bool unit_known = false;
  bool unit_tabs = false;
  std::size_t unit_width = 0;

  int depth = 0;
  std::size_t line_no = 0;
  for (auto line : detail::split_lines(normalized, false)) {
    ++line_no;
    const auto where = [&] { return " at line " + std::to_string(line_no); };
    const auto indent = detail_fmt::leading_indent(line);
    if (indent.mixed) throw Error("formatter: mixed tab/space indentation" + where());
    int new_depth = 0;
    if (indent.width > 0) {
      if (!unit_known) {
        unit_known = true;
        unit_tabs = indent.tabs;
        unit_width = indent.tabs ? 1 : indent.width;
        result.indent_unit = indent.tabs ? std::string("\t") : std::string(indent.width, ' ');
      }
      if (indent.tabs != unit_tabs)
        throw Error("formatter: indentation character differs from inferred unit" + where());
      if (indent.width % unit_width != 0)
        throw Error("formatter: indentation not a multiple of the inferred unit" + where());
      new_depth = static_cast<int>(indent.width / unit_width);
    }
    for (int d = depth; d < new_depth; ++d) result.text += kScopeIn;
    for (int d = depth; d > new_depth; --d) result.text += kScopeOut;
    depth = new_depth;
    result.text += line.substr(indent.width);
    result.text += '\n';
  }
  result.final_depth = depth;
  return result;
}

/// Inverse of encode_scopes for a known indent unit. Rejects marker
/// sequences that would take the depth negative. A missing final newline is
/// preserved so single-line fragments pass through unchanged.
inline std::string decode_scopes(std::string_view scoped, std::string_view indent_unit) {
  std::string out;
  const bool ends_with_newline = !scoped.empty() && scoped.back() == '\n';
  std::size_t line_no = 0;
  int depth = 0;
  auto lines = detail::split_lines(scoped, false);
  for (std::size_t k = 0; k < lines.size(); ++k) {
    auto line = lines[k];
    ++line_no;
    while (true) {
      if (line.substr(0, kScopeIn.size()) == kScopeIn) {
        ++depth;
        line = line.substr(kScopeIn.size());
      } else if (line.substr(0, kScopeOut.size()) == kScopeOut) {
        --depth;
        if (depth < 0)
          throw Error("formatter: scope underflow at line " + std::to_string(line_no));
        line = line.substr(kScopeOut.size());
      } else {
        break;
      }
    }
    for (int d = 0; d < depth; ++d) out += indent_unit;
    out += line;
    if (k + 1 < lines.size() || ends_with_newline) out += '\n';
  }
  return out;
}

/// Drops each top-level import/from line independently with probability p.
/// Deterministic for a fixed (text, p, seed).
inline std::string import_dropout(std::string_view normalized, double p, std::uint64_t seed) {
  if (p < 0.0 || p > 1.0) throw Error("formatter: dropout probability outside [0, 1]");
  std::mt19937_64 rng(seed);
  std::string out;
  out.reserve(normalized.size());
  for (auto line : detail::split_lines(normalized, false)) {
    const bool top_level_import =
        !line.empty() && line[0] != ' ' && line[0] != '\t' &&
        (line.substr(0, 7) == "import " || line.substr(0, 5) == "from ");
    if (top_level_import && detail::uniform01(rng) < p) continue;
    out += line;
    out += '\n';
  }
  return out;
}

/// Model input: extension ++ lang marker ++ path ++ meta marker ++ code.
/// When the total exceeds max_tokens, whole lines are dropped from the top
/// of the code and scope-in markers are re-synthesized so the depth at the
/// first kept line is unchanged.
inline std::vector<TokenId> compose_context(std::string_view extension, std::string_view path,
                                            std::string_view scoped_code,
                                            const tokenizer::Tokenizer& tok,
                                            std::size_t max_tokens) {
  std::string header;
  header += extension;
  header += kLangSep;
  header += path;
  header += kMetaSep;
  auto ids = tok.encode(header);
  if (ids.size() > max_tokens) throw Error("formatter: context header exceeds max_tokens");

  // Per-line token counts compose exactly: merges never cross newlines.
  auto lines = detail::split_lines(scoped_code, true);
  std::vector<std::vector<TokenId>> line_ids(lines.size());
  std::vector<int> depth_entering(lines.size() + 1, 0);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    line_ids[i] = tok.encode(lines[i]);
    int delta = 0;
    for (TokenId id : line_ids[i]) {
      if (id == kScopeInId)
        ++delta;
      else if (id == kScopeOutId)
        --delta;
    }
    depth_entering[i + 1] = depth_entering[i] + delta;
  }

  std::size_t code_total = 0;
  for (const auto& v : line_ids) code_total += v.size();

  std::size_t first = 0;
  while (first < lines.size() &&
         ids.size() + static_cast<std::size_t>(std::max(0, depth_entering[first])) + code_total >
             max_tokens) {
    code_total -= line_ids[first].size();
    ++first;
  }

  const int depth = first < lines.size() ? std::max(0, depth_entering[first]) : 0;
  for (int d = 0; d < depth; ++d) ids.push_back(kScopeInId);
  for (std::size_t i = first; i < lines.size(); ++i)
    ids.insert(ids.end(), line_ids[i].begin(), line_ids[i].end());

  // A single remaining line can still overflow; keep its rightmost tokens.
  if (ids.size() > max_tokens) {
    const std::size_t header_size = tok.encode(header).size();
    const std::size_t keep = max_tokens - header_size;
    std::vector<TokenId> tail(ids.end() - static_cast<std::ptrdiff_t>(keep), ids.end());
    ids = tok.encode(header);
    ids.insert(ids.end(), tail.begin(), tail.end());
  }
  return ids;
}

}  // namespace linecomp::formatter
