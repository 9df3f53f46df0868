#pragma once

/**
 * Language model contract used by the beam search.
 *
 * Implementations must be deterministic: identical state in, identical
 * distribution out, bit for bit. advance() must be exactly equivalent to
 * reprocessing the extended token list from scratch.
 */

#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "linecomp/common.hpp"

namespace linecomp::lm {

/// Opaque decoding state. `processed_tokens` is always exposed; backends
/// that carry more (hidden activations, key/value caches) hang it off the
/// shared pointer.
struct LmState {
  std::vector<TokenId> processed_tokens;
  std::shared_ptr<const void> backend_state;
};

struct NextTokenDistribution {
  std::vector<double> log_probs;  // one entry per vocabulary id

  TokenId argmax() const {
    if (log_probs.empty()) throw Error("lm: empty distribution");
    std::size_t best = 0;
    for (std::size_t i = 1; i < log_probs.size(); ++i) {
      if (log_probs[i] > log_probs[best]) best = i;  // ties keep the lowest id
    }
    return static_cast<TokenId>(best);
  }

  /// exp-sum over all entries; 1.0 within tolerance for a proper model.
  double total_probability() const {
    double sum = 0.0;
    for (double lp : log_probs) sum += std::exp(lp);
    return sum;
  }
};

class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t max_context_length() const = 0;

  virtual LmState process_context(std::span<const TokenId> ids) const = 0;
  virtual NextTokenDistribution next_distribution(const LmState& state) const = 0;
  virtual LmState advance(const LmState& state, TokenId token) const = 0;
};

}  // namespace linecomp::lm
