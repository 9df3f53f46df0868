#pragma once

/**
 * Prefix-state cache for incremental context reuse.
 *
 * A completion request whose context extends the previously cached token
 * sequence reuses the stored model state and only processes the new
 * suffix. A request that diverges falls back to the cold path, which
 * processes just the trailing window of the context, sized as a fixed
 * fraction of capacity, instead of the whole thing.
 *
 * The cache holds one entry: editing is sequential, so the only state
 * worth keeping is the one for the file being typed into.
 */

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "linecomp/common.hpp"
#include "linecomp/lm.hpp"

namespace linecomp::cache {

struct LookupResult {
  std::optional<lm::LmState> state;  // engaged on a warm hit
  std::vector<TokenId> suffix;       // tokens still to process (warm: the
                                     // extension; cold: the trailing window)
  bool warm = false;
};

class PrefixCache {
 public:
  PrefixCache(std::size_t capacity, double init_fraction = 0.5, bool stale_reuse = false)
      : capacity_(capacity), init_fraction_(init_fraction), stale_reuse_(stale_reuse) {
    if (capacity == 0) throw Error("cache: capacity must be positive");
    if (init_fraction <= 0.0 || init_fraction > 1.0)
      throw Error("cache: init fraction must be in (0, 1]");
  }

  std::size_t capacity() const { return capacity_; }

  /// Warm when the cached sequence is a prefix of the context; the suffix
  /// is the part the caller still has to feed to the model. On a miss the
  /// suffix is the trailing window of the context, capped at
  /// floor(init_fraction * capacity) tokens.
  LookupResult lookup(std::span<const TokenId> context) const {
    if (context.size() > capacity_) throw Error("cache: context exceeds capacity");
    if (entry_) {
      const auto& cached = entry_->ids;
      if (cached.size() <= context.size() &&
          std::equal(cached.begin(), cached.end(), context.begin())) {
        return {entry_->state,
                std::vector<TokenId>(context.begin() + static_cast<std::ptrdiff_t>(cached.size()),
                                     context.end()),
                true};
      }
      // Stale reuse: the user deleted text, so the context is now a prefix
      // of what was cached. Off by default; the stored state then reflects
      // more tokens than the context and scores drift accordingly.
      if (stale_reuse_ && context.size() < cached.size() &&
          std::equal(context.begin(), context.end(), cached.begin())) {
        return {entry_->state, {}, true};
      }
    }
    const std::size_t window =
        std::min(context.size(),
                 static_cast<std::size_t>(static_cast<double>(capacity_) * init_fraction_));
    return {std::nullopt,
            std::vector<TokenId>(context.end() - static_cast<std::ptrdiff_t>(window),
                                 context.end()),
            false};
  }

  /// Stores the state for a fully processed context. The state must account
  /// for exactly the given tokens. An oversized context is re-seeded from
  /// its trailing window so the entry stays within capacity.
  void store(std::vector<TokenId> context, lm::LmState state, const lm::LanguageModel& model) {
    if (state.processed_tokens != context) throw Error("cache: state does not match context");
    if (context.size() > capacity_) {
      const std::size_t window =
          static_cast<std::size_t>(static_cast<double>(capacity_) * init_fraction_);
      context.erase(context.begin(),
                    context.end() - static_cast<std::ptrdiff_t>(std::min(window, context.size())));
      state = model.process_context(context);
    }
    entry_ = Entry{std::move(context), std::move(state)};
  }

  void clear() { entry_.reset(); }
  bool empty() const { return !entry_.has_value(); }

  /// Length of the cached token sequence, zero when empty.
  std::size_t cached_length() const { return entry_ ? entry_->ids.size() : 0; }

 private:
  struct Entry {
    std::vector<TokenId> ids;
    lm::LmState state;
  };

  std::size_t capacity_;
  double init_fraction_;
  bool stale_reuse_;
  std::optional<Entry> entry_;
};

}  // namespace linecomp::cache
