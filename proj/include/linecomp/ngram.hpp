#pragma once

/**
 * Count-based n-gram model, the reference backend for the completion
 * pipeline. Scoring is stupid backoff: each token takes the count ratio at
 * the longest matching context, discounted by the backoff factor once per
 * level backed off, and the resulting weights are renormalized with a small
 * additive floor so every token keeps finite log probability.
 *
 * Binary artifact: magic "NGLM1", then order, backoff factor, vocabulary
 * size, then per context length a block of records sorted by (context ids,
 * token id). Counts round-trip exactly; totals are recomputed on load.
 */

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <span>
#include <unordered_map>
#include <vector>

#include "linecomp/common.hpp"
#include "linecomp/lm.hpp"

namespace linecomp::lm {

namespace detail_ngram {

struct IdSeqHash {
  std::size_t operator()(const std::vector<TokenId>& ids) const {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (TokenId id : ids) {
      h ^= id;
      h *= 1099511628211ull;
    }
    return static_cast<std::size_t>(h);
  }
};

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

struct Reader {
  std::string_view data;
  std::size_t at = 0;

  void need(std::size_t n) const {
    if (at + n > data.size()) throw Error("lm: truncated model artifact");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[at + i])) << (8 * i);
    at += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[at + i])) << (8 * i);
    at += 8;
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
};

}  // namespace detail_ngram

class NgramModel final : public LanguageModel {
 public:
  struct Continuations {
    std::uint64_t total = 0;
    std::unordered_map<TokenId, std::uint64_t> counts;
  };

  /// Counts all k-grams for k <= order over each sequence. No padding:
  /// positions near the start use what context exists.
  static NgramModel fit(const std::vector<std::vector<TokenId>>& sequences, std::size_t order,
                        std::size_t vocab_size, double backoff_factor = 0.4) {
    if (order < 2) throw Error("lm: order must be at least 2");
    if (backoff_factor <= 0.0 || backoff_factor >= 1.0)
      throw Error("lm: backoff factor must lie in (0, 1)");
    if (vocab_size == 0) throw Error("lm: vocab size must be positive");
    bool any = false;
    NgramModel model;
    model.order_ = order;
    model.backoff_ = backoff_factor;
    model.vocab_size_ = vocab_size;
    model.levels_.resize(order);  // index = context length
    for (const auto& seq : sequences) {
      if (!seq.empty()) any = true;
      for (std::size_t c = 0; c < order; ++c) {
        if (seq.size() <= c) continue;
        for (std::size_t i = c; i < seq.size(); ++i) {
          if (seq[i] >= vocab_size) throw Error("lm: token id outside vocabulary");
          std::vector<TokenId> ctx(seq.begin() + static_cast<std::ptrdiff_t>(i - c),
                                   seq.begin() + static_cast<std::ptrdiff_t>(i));
          auto& cont = model.levels_[c][std::move(ctx)];
          cont.total += 1;
          cont.counts[seq[i]] += 1;
        }
      }
    }
    if (!any) throw Error("lm: empty training input");
    return model;
  }

  std::size_t vocab_size() const override { return vocab_size_; }
  std::size_t max_context_length() const override { return max_context_; }
  void set_max_context_length(std::size_t n) { max_context_ = n; }
  std::size_t order() const { return order_; }
  double backoff_factor() const { return backoff_; }

  LmState process_context(std::span<const TokenId> ids) const override {
    LmState state;
    state.processed_tokens.assign(ids.begin(), ids.end());
    return state;
  }

  LmState advance(const LmState& state, TokenId token) const override {
    LmState next;
    next.processed_tokens.reserve(state.processed_tokens.size() + 1);
    next.processed_tokens = state.processed_tokens;
    next.processed_tokens.push_back(token);
    return next;
  }

  NextTokenDistribution next_distribution(const LmState& state) const override {
    const auto& ids = state.processed_tokens;
    const std::size_t ctx_len = std::min(order_ - 1, ids.size());

    std::vector<double> weight(vocab_size_, 0.0);
    double factor = 1.0;
    for (std::size_t c = ctx_len + 1; c-- > 0;) {
      std::vector<TokenId> ctx(ids.end() - static_cast<std::ptrdiff_t>(c), ids.end());
      const auto it = levels_[c].find(ctx);
      if (it != levels_[c].end()) {
        const auto& cont = it->second;
        for (const auto& [token, count] : cont.counts) {
          if (weight[token] == 0.0)
            weight[token] = factor * (static_cast<double>(count) / static_cast<double>(cont.total));
        }
      }
      factor *= backoff_;
    }

    const double floor = 1.0 / static_cast<double>(vocab_size_);
    double sum = 0.0;
    for (double w : weight) sum += w + floor;
    const double log_sum = std::log(sum);

    NextTokenDistribution dist;
    dist.log_probs.resize(vocab_size_);
    for (std::size_t t = 0; t < vocab_size_; ++t)
      dist.log_probs[t] = std::log(weight[t] + floor) - log_sum;
    return dist;
  }

  /// Exposed for consistency checks: counts of `token` after `ctx`.
  std::uint64_t count_of(std::span<const TokenId> ctx, TokenId token) const {
    if (ctx.size() >= order_) throw Error("lm: context longer than order allows");
    const auto it = levels_[ctx.size()].find(std::vector<TokenId>(ctx.begin(), ctx.end()));
    if (it == levels_[ctx.size()].end()) return 0;
    const auto jt = it->second.counts.find(token);
    return jt == it->second.counts.end() ? 0 : jt->second;
  }

  std::uint64_t context_total(std::span<const TokenId> ctx) const {
    if (ctx.size() >= order_) throw Error("lm: context longer than order allows");
    const auto it = levels_[ctx.size()].find(std::vector<TokenId>(ctx.begin(), ctx.end()));
    return it == levels_[ctx.size()].end() ? 0 : it->second.total;
  }

  std::string to_bytes() const {
    using namespace detail_ngram;
    std::string out = "NGLM1";
    put_u32(out, static_cast<std::uint32_t>(order_));
    put_f64(out, backoff_);
    put_u32(out, static_cast<std::uint32_t>(vocab_size_));
    for (std::size_t c = 0; c < order_; ++c) {
      // Sorted (context, token, count) records make the artifact canonical.
      std::map<std::vector<TokenId>, std::map<TokenId, std::uint64_t>> sorted;
      for (const auto& [ctx, cont] : levels_[c]) {
        auto& m = sorted[ctx];
        for (const auto& [token, count] : cont.counts) m[token] = count;
      }
      std::uint64_t records = 0;
      for (const auto& [ctx, m] : sorted) records += m.size();
      put_u64(out, records);
      for (const auto& [ctx, m] : sorted) {
        for (const auto& [token, count] : m) {
          for (TokenId id : ctx) put_u32(out, id);
          put_u32(out, token);
          put_u64(out, count);
        }
      }
    }
    return out;
  }

  static NgramModel from_bytes(std::string_view bytes) {
    using namespace detail_ngram;
    Reader r{bytes};
    r.need(5);
    if (bytes.substr(0, 5) != "NGLM1") throw Error("lm: bad model magic");
    r.at = 5;
    NgramModel model;
    model.order_ = r.u32();
    model.backoff_ = r.f64();
    model.vocab_size_ = r.u32();
    if (model.order_ < 2) throw Error("lm: bad model order");
    model.levels_.resize(model.order_);
    for (std::size_t c = 0; c < model.order_; ++c) {
      const std::uint64_t records = r.u64();
      for (std::uint64_t k = 0; k < records; ++k) {
        std::vector<TokenId> ctx(c);
        for (std::size_t i = 0; i < c; ++i) ctx[i] = r.u32();
        const TokenId token = r.u32();
        const std::uint64_t count = r.u64();
        if (token >= model.vocab_size_) throw Error("lm: record token outside vocabulary");
        auto& cont = model.levels_[c][std::move(ctx)];
        cont.total += count;
        cont.counts[token] += count;
      }
    }
    if (r.at != bytes.size()) throw Error("lm: trailing bytes in model artifact");
    return model;
  }

  void save(const std::filesystem::path& path) const { detail::write_file(path, to_bytes()); }

  static NgramModel load(const std::filesystem::path& path) {
    return from_bytes(detail::read_file(path));
  }

 private:
  NgramModel() = default;

  std::size_t order_ = 0;
  double backoff_ = 0.4;
  std::size_t vocab_size_ = 0;
  std::size_t max_context_ = 1536;
  std::vector<std::unordered_map<std::vector<TokenId>, Continuations, detail_ngram::IdSeqHash>> levels_;
};

}  // namespace linecomp::lm
