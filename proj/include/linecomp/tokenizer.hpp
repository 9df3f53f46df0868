#pragma once

/**
 * Character-pair tokenizer for source code.
 *
 * The vocabulary always starts with the six reserved tokens, followed by a
 * fixed base alphabet (tab plus printable ASCII), followed by learned merge
 * results. Training repeatedly merges the most frequent adjacent pair with
 * three hard rules:
 *
 *   - no merge crosses a newline, a reserved token, or a non-ASCII run;
 *   - no merge recreates an existing token string;
 *   - no merge creates a token whose whitespace-stripped form collides with
 *     an existing token's whitespace-stripped form, so the vocabulary never
 *     holds two tokens that differ only in leading whitespace. Tokens that
 *     are pure whitespace (space/tab runs) are exempt.
 *
 * Non-ASCII runs encode as a single placeholder token and decode as the
 * replacement glyph; round-tripping is exact for text whose only non-ASCII
 * content is the reserved marker strings.
 */

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "linecomp/common.hpp"
#include "linecomp/special_tokens.hpp"

namespace linecomp::tokenizer {

inline constexpr std::size_t kBaseChars = 96;  // '\t' plus 0x20..0x7E
inline constexpr std::size_t kBaseVocab = kNumSpecials + kBaseChars;

struct TokenizerConfig {
  std::size_t vocab_size = 16384;
};

struct Vocabulary {
  std::vector<std::string> tokens;  // dense ids; 0..5 are the reserved tokens

  /// Reserved tokens plus the base alphabet, no merges.
  static Vocabulary with_base() {
    Vocabulary v;
    v.tokens.reserve(kBaseVocab);
    for (auto s : kSpecialText) v.tokens.emplace_back(s);
    v.tokens.emplace_back(1, '\t');
    for (char c = 0x20; c <= 0x7E; ++c) v.tokens.emplace_back(1, c);
    return v;
  }

  std::size_t size() const { return tokens.size(); }

  const std::string& text(TokenId id) const {
    if (id >= tokens.size()) throw Error("tokenizer: token id out of range");
    return tokens[id];
  }

  /// True when `s` occurs inside at least one regular (non-reserved) token.
  /// A plain scan; fast enough for desk-scale vocabularies. A substring
  /// index (suffix automaton over the token strings) is the upgrade path
  /// if vocabularies or call rates grow.
  bool contains_as_substring(std::string_view s) const {
    if (s.empty()) return true;
    for (std::size_t id = kNumSpecials; id < tokens.size(); ++id) {
      if (tokens[id].find(s) != std::string::npos) return true;
    }
    return false;
  }
};

struct MergeTable {
  std::vector<std::pair<TokenId, TokenId>> order;  // rank i creates id base + i
};

namespace detail_tok {

inline std::uint64_t pair_key(TokenId l, TokenId r) {
  return (static_cast<std::uint64_t>(l) << 32) | r;
}

inline bool in_alphabet(char c) {
  return c == '\t' || (c >= 0x20 && c <= 0x7E);
}

/// Splits text into maximal alphabet segments and reserved-token pieces.
/// Non-ASCII (or non-printable) runs report as a single placeholder piece.
template <typename SegmentFn, typename SpecialFn>
void scan_pieces(std::string_view text, SegmentFn&& on_segment, SpecialFn&& on_special) {
  std::size_t i = 0;
  auto marker_at = [&](std::size_t pos) -> int {
    for (TokenId id : {kScopeInId, kScopeOutId, kLangSepId, kMetaSepId}) {
      const auto m = kSpecialText[id];
      if (text.compare(pos, m.size(), m) == 0) return static_cast<int>(id);
    }
    return -1;
  };
  while (i < text.size()) {
    const char c = text[i];
    if (c == '\n') {
      on_special(kNewlineId);
      ++i;
      continue;
    }
    if (in_alphabet(c)) {
      std::size_t j = i;
      while (j < text.size() && in_alphabet(text[j])) ++j;
      on_segment(text.substr(i, j - i));
      i = j;
      continue;
    }
    const int marker = marker_at(i);
    if (marker >= 0) {
      on_special(static_cast<TokenId>(marker));
      i += kSpecialText[static_cast<std::size_t>(marker)].size();
      continue;
    }
    // Run of characters outside the alphabet: one placeholder token.
    while (i < text.size()) {
      const char d = text[i];
      if (d == '\n' || in_alphabet(d) || marker_at(i) >= 0) break;
      ++i;
    }
    on_special(kUnkId);
  }
}

inline std::string_view lstrip_ws(std::string_view s) {
  return linecomp::detail::lstrip(s, " \t");
}

}  // namespace detail_tok

struct Tokenizer {
  Vocabulary vocab;
  MergeTable merges;
  bool merges_exhausted = false;

  Tokenizer() { rebuild_index(); }

  /// Rebuilds the derived lookup tables; call after mutating vocab/merges.
  void rebuild_index() {
    char_ids_.fill(-1);
    const std::size_t base = base_size();
    for (std::size_t id = kNumSpecials; id < base && id < vocab.tokens.size(); ++id) {
      const auto& t = vocab.tokens[id];
      if (t.size() == 1) char_ids_[static_cast<unsigned char>(t[0])] = static_cast<int>(id);
    }
    merge_ranks_.clear();
    merge_ranks_.reserve(merges.order.size());
    for (std::size_t rank = 0; rank < merges.order.size(); ++rank) {
      const auto [l, r] = merges.order[rank];
      merge_ranks_[detail_tok::pair_key(l, r)] = {static_cast<std::uint32_t>(rank),
                                                  static_cast<TokenId>(base + rank)};
    }
  }

  std::size_t base_size() const { return vocab.tokens.size() - merges.order.size(); }

  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<TokenId> out;
    out.reserve(text.size() / 2 + 8);
    detail_tok::scan_pieces(
        text,
        [&](std::string_view seg) {
          auto ids = segment_char_ids(seg);
          apply_merges(ids);
          out.insert(out.end(), ids.begin(), ids.end());
        },
        [&](TokenId special) { out.push_back(special); });
    return out;
  }

  std::string decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) out += vocab.text(id);
    return out;
  }

  // ---------------------------------------------------------------------
  // Artifact format: a line-oriented text file.
  //
  //   CPE-TOKENIZER v1
  //   vocab <N>
  //   <N token lines, C-escaped: \n \t \\ \uXXXX>
  //   merges <M>
  //   <M lines "left_id right_id">
  // ---------------------------------------------------------------------

  std::string to_text() const {
    std::string out = "CPE-TOKENIZER v1\n";
    out += "vocab " + std::to_string(vocab.tokens.size()) + "\n";
    for (const auto& t : vocab.tokens) {
      out += escape_token(t);
      out += '\n';
    }
    out += "merges " + std::to_string(merges.order.size()) + "\n";
    for (const auto& [l, r] : merges.order) {
      out += std::to_string(l) + " " + std::to_string(r) + "\n";
    }
    return out;
  }

  static Tokenizer from_text(std::string_view text) {
    auto lines = linecomp::detail::split_lines(text, false);
    std::size_t at = 0;
    auto next_line = [&]() -> std::string_view {
      if (at >= lines.size()) throw Error("tokenizer: truncated artifact");
      return lines[at++];
    };
    if (next_line() != "CPE-TOKENIZER v1") throw Error("tokenizer: bad artifact header");

    auto parse_count = [&](std::string_view line, std::string_view keyword) -> std::size_t {
      if (line.substr(0, keyword.size()) != keyword || line.size() <= keyword.size() + 1 ||
          line[keyword.size()] != ' ')
        throw Error("tokenizer: expected '" + std::string(keyword) + " <count>' line");
      std::size_t n = 0;
      for (char c : line.substr(keyword.size() + 1)) {
        if (c < '0' || c > '9') throw Error("tokenizer: bad count in artifact");
        n = n * 10 + static_cast<std::size_t>(c - '0');
      }
      return n;
    };

    Tokenizer tok;
    tok.vocab.tokens.clear();
    const std::size_t n_tokens = parse_count(next_line(), "vocab");
    tok.vocab.tokens.reserve(n_tokens);
    for (std::size_t i = 0; i < n_tokens; ++i) tok.vocab.tokens.push_back(unescape_token(next_line()));

    const std::size_t n_merges = parse_count(next_line(), "merges");
    for (std::size_t i = 0; i < n_merges; ++i) {
      const auto line = next_line();
      const auto space = line.find(' ');
      if (space == std::string_view::npos) throw Error("tokenizer: bad merge line");
      auto parse_id = [](std::string_view s) -> TokenId {
        if (s.empty()) throw Error("tokenizer: bad merge id");
        std::uint64_t v = 0;
        for (char c : s) {
          if (c < '0' || c > '9') throw Error("tokenizer: bad merge id");
          v = v * 10 + static_cast<std::uint64_t>(c - '0');
        }
        if (v > std::numeric_limits<TokenId>::max()) throw Error("tokenizer: bad merge id");
        return static_cast<TokenId>(v);
      };
      tok.merges.order.emplace_back(parse_id(line.substr(0, space)), parse_id(line.substr(space + 1)));
    }

    // Consistency: reserved tokens in place, merge results match their parts.
    if (tok.vocab.tokens.size() < kNumSpecials) throw Error("tokenizer: vocabulary too small");
    for (std::size_t i = 0; i < kNumSpecials; ++i) {
      if (tok.vocab.tokens[i] != kSpecialText[i]) throw Error("tokenizer: reserved token mismatch");
    }
    if (n_merges > n_tokens) throw Error("tokenizer: more merges than tokens");
    const std::size_t base = n_tokens - n_merges;
    for (std::size_t i = 0; i < n_merges; ++i) {
      const auto [l, r] = tok.merges.order[i];
      if (l >= base + i || r >= base + i) throw Error("tokenizer: merge references later token");
      if (tok.vocab.tokens[base + i] != tok.vocab.tokens[l] + tok.vocab.tokens[r])
        throw Error("tokenizer: merge result mismatch");
    }
    tok.rebuild_index();
    return tok;
  }

  void save(const std::filesystem::path& path) const { linecomp::detail::write_file(path, to_text()); }

  static Tokenizer load(const std::filesystem::path& path) {
    return from_text(linecomp::detail::read_file(path));
  }

  static std::string escape_token(std::string_view tok) {
    std::string out;
    std::size_t i = 0;
    while (i < tok.size()) {
      const char c = tok[i];
      if (c == '\n') {
        out += "\\n";
        ++i;
      } else if (c == '\t') {
        out += "\\t";
        ++i;
      } else if (c == '\\') {
        out += "\\\\";
        ++i;
      } else if (static_cast<unsigned char>(c) >= 0x20 && static_cast<unsigned char>(c) <= 0x7E) {
        out += c;
        ++i;
      } else {
        const auto [cp, len] = linecomp::detail::decode_utf8(tok, i);
        if (len == 0 || cp > 0xFFFF) throw Error("tokenizer: unescapable token byte");
        char buf[8];
        std::snprintf(buf, sizeof buf, "\\u%04X", static_cast<unsigned>(cp));
        out += buf;
        i += len;
      }
    }
    return out;
  }

  static std::string unescape_token(std::string_view line) {
    std::string out;
    std::size_t i = 0;
    while (i < line.size()) {
      const char c = line[i];
      if (c != '\\') {
        out += c;
        ++i;
        continue;
      }
      if (i + 1 >= line.size()) throw Error("tokenizer: dangling escape");
      const char e = line[i + 1];
      if (e == 'n') {
        out += '\n';
        i += 2;
      } else if (e == 't') {
        out += '\t';
        i += 2;
      } else if (e == '\\') {
        out += '\\';
        i += 2;
      } else if (e == 'u') {
        if (i + 6 > line.size()) throw Error("tokenizer: bad \\u escape");
        char32_t cp = 0;
        for (std::size_t k = i + 2; k < i + 6; ++k) {
          const char h = line[k];
          cp <<= 4;
          if (h >= '0' && h <= '9')
            cp |= static_cast<char32_t>(h - '0');
          else if (h >= 'a' && h <= 'f')
            cp |= static_cast<char32_t>(h - 'a' + 10);
          else if (h >= 'A' && h <= 'F')
            cp |= static_cast<char32_t>(h - 'A' + 10);
          else
            throw Error("tokenizer: bad \\u escape");
        }
        out += linecomp::detail::encode_utf8(cp);
        i += 6;
      } else {
        throw Error("tokenizer: unknown escape");
      }
    }
    return out;
  }

 private:
  std::vector<TokenId> segment_char_ids(std::string_view seg) const {
    std::vector<TokenId> ids;
    ids.reserve(seg.size());
    for (char c : seg) {
      const int id = char_ids_[static_cast<unsigned char>(c)];
      if (id < 0) throw Error("tokenizer: character outside base alphabet");
      ids.push_back(static_cast<TokenId>(id));
    }
    return ids;
  }

  /// Standard rank-order application: repeatedly find the lowest-ranked
  /// adjacent pair present and merge every occurrence left to right.
  void apply_merges(std::vector<TokenId>& ids) const {
    if (merge_ranks_.empty() || ids.size() < 2) return;
    while (true) {
      std::uint32_t best_rank = std::numeric_limits<std::uint32_t>::max();
      TokenId best_id = 0;
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
        const auto it = merge_ranks_.find(detail_tok::pair_key(ids[i], ids[i + 1]));
        if (it != merge_ranks_.end() && it->second.first < best_rank) {
          best_rank = it->second.first;
          best_id = it->second.second;
        }
      }
      if (best_rank == std::numeric_limits<std::uint32_t>::max()) return;
      const auto [l, r] = merges.order[best_rank];
      std::size_t w = 0;
      for (std::size_t i = 0; i < ids.size();) {
        if (i + 1 < ids.size() && ids[i] == l && ids[i + 1] == r) {
          ids[w++] = best_id;
          i += 2;
        } else {
          ids[w++] = ids[i++];
        }
      }
      ids.resize(w);
      if (ids.size() < 2) return;
    }
  }

  std::array<int, 256> char_ids_{};
  std::unordered_map<std::uint64_t, std::pair<std::uint32_t, TokenId>> merge_ranks_;
};

/// Trains a tokenizer on normalized corpus texts. Pair counts include every
/// adjacent occurrence; ties break on the lexicographically smallest
/// (left text, right text). Stops at the target size or when no pair occurs
/// twice, recording exhaustion.
inline Tokenizer train(const std::vector<std::string>& texts, const TokenizerConfig& config) {
  if (texts.empty()) throw Error("tokenizer: empty corpus");
  if (config.vocab_size < kBaseVocab)
    throw Error("tokenizer: vocab_size below reserved + base alphabet (" +
                std::to_string(kBaseVocab) + ")");

  Tokenizer tok;
  tok.vocab = Vocabulary::with_base();
  tok.rebuild_index();

  // Unique segments with multiplicities; code lines repeat heavily, so this
  // keeps the merge loop small.
  std::unordered_map<std::string, std::size_t> segment_index;
  std::vector<std::vector<TokenId>> segments;
  std::vector<std::uint64_t> multiplicity;
  for (const auto& text : texts) {
    detail_tok::scan_pieces(
        text,
        [&](std::string_view seg) {
          auto [it, inserted] = segment_index.emplace(std::string(seg), segments.size());
          if (inserted) {
            std::vector<TokenId> ids;
            ids.reserve(seg.size());
            for (char c : seg) {
              // Base alphabet covers every scannable segment character.
              ids.push_back(static_cast<TokenId>(
                  c == '\t' ? kNumSpecials : kNumSpecials + 1 + (static_cast<unsigned char>(c) - 0x20)));
            }
            segments.push_back(std::move(ids));
            multiplicity.push_back(0);
          }
          multiplicity[it->second] += 1;
        },
        [](TokenId) {});
  }

  std::unordered_map<std::uint64_t, std::int64_t> pair_counts;
  std::unordered_map<std::uint64_t, std::unordered_set<std::uint32_t>> pair_segments;
  auto add_segment_pairs = [&](std::size_t idx, std::int64_t sign) {
    const auto& ids = segments[idx];
    const auto mult = static_cast<std::int64_t>(multiplicity[idx]);
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      const auto key = detail_tok::pair_key(ids[i], ids[i + 1]);
      pair_counts[key] += sign * mult;
      if (sign > 0)
        pair_segments[key].insert(static_cast<std::uint32_t>(idx));
      else
        pair_segments[key].erase(static_cast<std::uint32_t>(idx));
    }
  };
  for (std::size_t idx = 0; idx < segments.size(); ++idx) add_segment_pairs(idx, +1);

  // Whitespace-stripped forms already taken; a new token may not reuse one.
  std::unordered_set<std::string> token_strings(tok.vocab.tokens.begin(), tok.vocab.tokens.end());
  std::unordered_set<std::string> stripped_forms;
  for (const auto& t : tok.vocab.tokens) {
    const auto stripped = detail_tok::lstrip_ws(t);
    if (!stripped.empty()) stripped_forms.emplace(stripped);
  }

  std::unordered_set<std::uint64_t> banned;
  while (tok.vocab.tokens.size() < config.vocab_size) {
    bool found = false;
    std::uint64_t best_key = 0;
    std::int64_t best_count = 1;  // pairs must occur at least twice
    for (const auto& [key, count] : pair_counts) {
      if (count < 2 || count < best_count || banned.count(key)) continue;
      if (count > best_count) {
        best_count = count;
        best_key = key;
        found = true;
        continue;
      }
      // Tie: smaller (left text, right text) wins.
      const auto l_new = tok.vocab.tokens[static_cast<TokenId>(key >> 32)];
      const auto r_new = tok.vocab.tokens[static_cast<TokenId>(key & 0xFFFFFFFF)];
      const auto l_old = tok.vocab.tokens[static_cast<TokenId>(best_key >> 32)];
      const auto r_old = tok.vocab.tokens[static_cast<TokenId>(best_key & 0xFFFFFFFF)];
      if (std::tie(l_new, r_new) < std::tie(l_old, r_old)) best_key = key;
    }
    if (!found) {
      tok.merges_exhausted = true;
      break;
    }

    const auto left = static_cast<TokenId>(best_key >> 32);
    const auto right = static_cast<TokenId>(best_key & 0xFFFFFFFF);
    std::string merged = tok.vocab.tokens[left] + tok.vocab.tokens[right];
    const auto stripped = detail_tok::lstrip_ws(merged);
    if (token_strings.count(merged) || (!stripped.empty() && stripped_forms.count(std::string(stripped)))) {
      banned.insert(best_key);
      continue;
    }

    const auto new_id = static_cast<TokenId>(tok.vocab.tokens.size());
    tok.vocab.tokens.push_back(merged);
    tok.merges.order.emplace_back(left, right);
    token_strings.insert(merged);
    if (!stripped.empty()) stripped_forms.emplace(stripped);

    const auto affected = pair_segments[best_key];  // copy; mutated below
    for (const auto idx : affected) {
      add_segment_pairs(idx, -1);
      auto& ids = segments[idx];
      std::size_t w = 0;
      for (std::size_t i = 0; i < ids.size();) {
        if (i + 1 < ids.size() && ids[i] == left && ids[i + 1] == right) {
          ids[w++] = new_id;
          i += 2;
        } else {
          ids[w++] = ids[i++];
        }
      }
      ids.resize(w);
      add_segment_pairs(idx, +1);
    }
  }

  tok.rebuild_index();
  return tok;
}

struct HealingResult {
  std::string pending_prefix;   // suffix of the line the beam must reproduce
  std::size_t chars_removed = 0;  // same thing in codepoints
};

/// Longest suffix of the line that is a contiguous substring of some
/// regular token. Growth is monotone (any substring of a token keeps its
/// substrings inside that token), so the scan stops at the first failure.
inline HealingResult healing_backtrack(std::string_view line_before_caret, const Vocabulary& vocab) {
  if (line_before_caret.find('\n') != std::string_view::npos)
    throw Error("tokenizer: healing input contains newline");
  std::vector<std::size_t> starts;  // codepoint boundaries
  std::size_t i = 0;
  while (i < line_before_caret.size()) {
    starts.push_back(i);
    const auto [cp, len] = linecomp::detail::decode_utf8(line_before_caret, i);
    (void)cp;
    if (len == 0) throw Error("text: invalid UTF-8");
    i += len;
  }
  std::size_t taken = 0;
  for (std::size_t k = starts.size(); k-- > 0;) {
    if (!vocab.contains_as_substring(line_before_caret.substr(starts[k]))) break;
    taken = starts.size() - k;
  }
  const std::size_t from = taken == 0 ? line_before_caret.size() : starts[starts.size() - taken];
  return {std::string(line_before_caret.substr(from)), taken};
}

}  // namespace linecomp::tokenizer
