#pragma once

/**
 * Reference bracket and quote machine used as the repair oracle in tests.
 * A plain stack walk over the joined context-plus-suggestion text, kept
 * deliberately naive so it cannot share a bug with the production scanner.
 */

#include <optional>
#include <string>

namespace testsupport {

/// Returns the closers the joined text still needs (innermost first), or
/// nothing when a closer arrives without its opener.
inline std::optional<std::string> reference_closers(const std::string& joined) {
  std::string open;
  bool in_string = false;
  char quote = 0;
  for (std::size_t i = 0; i < joined.size(); ++i) {
    const char c = joined[i];
    if (in_string) {
      if (c == '\\')
        ++i;
      else if (c == quote) {
        in_string = false;
        open.pop_back();
      }
      continue;
    }
    if (c == '\'' || c == '"') {
      in_string = true;
      quote = c;
      open.push_back(c);
    } else if (c == '(' || c == '[' || c == '{') {
      open.push_back(c);
    } else if (c == ')' || c == ']' || c == '}') {
      const char expect = c == ')' ? '(' : c == ']' ? '[' : '{';
      if (open.empty() || open.back() != expect) return std::nullopt;
      open.pop_back();
    }
  }
  std::string closers;
  for (auto it = open.rbegin(); it != open.rend(); ++it) {
    const char o = *it;
    closers += o == '(' ? ')' : o == '[' ? ']' : o == '{' ? '}' : o;
  }
  return closers;
}

}  // namespace testsupport
