#pragma once

/**
 * Shared primitives used across the library: the token id type, the error
 * type thrown by every module, binary-exact file IO, and a handful of
 * small text helpers (UTF-8 walking, whitespace trimming).
 */

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace linecomp {

using TokenId = std::uint32_t;

/// Single error type for the whole library. Messages carry a
/// "module: detail" prefix so callers can report them verbatim.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io: cannot open " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  if (in.bad()) throw Error("io: read failure on " + path.string());
  return std::move(out).str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io: cannot create " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("io: write failure on " + path.string());
}

inline bool is_ascii(unsigned char c) { return c < 0x80; }

/// Decodes the UTF-8 codepoint starting at byte `i`. Returns {codepoint,
/// byte length}; length 0 marks an invalid sequence.
inline std::pair<char32_t, std::size_t> decode_utf8(std::string_view s, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) return {b0, 1};
  auto cont = [&](std::size_t k) {
    return i + k < s.size() && (static_cast<unsigned char>(s[i + k]) & 0xC0) == 0x80;
  };
  auto bits = [&](std::size_t k) {
    return static_cast<char32_t>(static_cast<unsigned char>(s[i + k]) & 0x3F);
  };
  if ((b0 & 0xE0) == 0xC0 && cont(1)) {
    const char32_t cp = ((b0 & 0x1Fu) << 6) | bits(1);
    return cp >= 0x80 ? std::pair{cp, std::size_t{2}} : std::pair{char32_t{0}, std::size_t{0}};
  }
  if ((b0 & 0xF0) == 0xE0 && cont(1) && cont(2)) {
    const char32_t cp = ((b0 & 0x0Fu) << 12) | (bits(1) << 6) | bits(2);
    const bool ok = cp >= 0x800 && !(cp >= 0xD800 && cp <= 0xDFFF);
    return ok ? std::pair{cp, std::size_t{3}} : std::pair{char32_t{0}, std::size_t{0}};
  }
  if ((b0 & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3)) {
    const char32_t cp = ((b0 & 0x07u) << 18) | (bits(1) << 12) | (bits(2) << 6) | bits(3);
    const bool ok = cp >= 0x10000 && cp <= 0x10FFFF;
    return ok ? std::pair{cp, std::size_t{4}} : std::pair{char32_t{0}, std::size_t{0}};
  }
  return {0, 0};
}

inline bool is_valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto [cp, len] = decode_utf8(s, i);
    (void)cp;
    if (len == 0) return false;
    i += len;
  }
  return true;
}

inline std::string encode_utf8(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
  return out;
}

inline std::size_t count_codepoints(std::string_view s) {
  std::size_t n = 0, i = 0;
  while (i < s.size()) {
    const auto [cp, len] = decode_utf8(s, i);
    (void)cp;
    if (len == 0) throw Error("text: invalid UTF-8");
    i += len;
    ++n;
  }
  return n;
}

/// Byte offset of the codepoint with index `cp_index`; `cp_index` equal to
/// the codepoint count maps to s.size().
inline std::size_t codepoint_to_byte(std::string_view s, std::size_t cp_index) {
  std::size_t n = 0, i = 0;
  while (i < s.size()) {
    if (n == cp_index) return i;
    const auto [cp, len] = decode_utf8(s, i);
    (void)cp;
    if (len == 0) throw Error("text: invalid UTF-8");
    i += len;
    ++n;
  }
  if (n == cp_index) return s.size();
  throw Error("text: codepoint index out of range");
}

inline std::string_view rstrip(std::string_view s, std::string_view chars = " \t\r") {
  const auto end = s.find_last_not_of(chars);
  return end == std::string_view::npos ? std::string_view{} : s.substr(0, end + 1);
}

inline std::string_view lstrip(std::string_view s, std::string_view chars = " \t") {
  const auto begin = s.find_first_not_of(chars);
  return begin == std::string_view::npos ? std::string_view{} : s.substr(begin);
}

/// Splits into lines on '\n'. With keep_newline, every element except a
/// final unterminated fragment retains its terminator.
inline std::vector<std::string_view> split_lines(std::string_view text, bool keep_newline) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, nl - start + (keep_newline ? 1 : 0)));
    start = nl + 1;
  }
  return lines;
}

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit draw.
/// Used instead of std::uniform_real_distribution so results are identical
/// across standard library implementations.
template <typename Rng>
double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace detail
}  // namespace linecomp
