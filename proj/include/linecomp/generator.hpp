#pragma once

/**
 * Prefix-constrained beam search that collects newline-terminated
 * hypotheses.
 *
 * While a pending prefix (recovered by healing_backtrack) is unconsumed,
 * a token is admissible only when its text is a prefix of the remaining
 * pending text or the remaining pending text is a prefix of the token;
 * scores stay raw, no renormalization over the admissible set. At each
 * step every live hypothesis spawns its newline continuation straight into
 * the terminated pool; the pool never competes for beam slots. Reserved
 * tokens other than newline are never generated.
 *
 * Stopping: iteration budget exhausted, no live hypotheses left, or the
 * best live score falls more than log(k) below the best terminated score.
 *
 * CollectionMode::top_beam is the evaluation baseline: newline is an
 * ordinary token, the search always runs the full budget, and the final
 * beam is returned truncated at the first newline.
 */

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "linecomp/common.hpp"
#include "linecomp/lm.hpp"
#include "linecomp/special_tokens.hpp"
#include "linecomp/tokenizer.hpp"

namespace linecomp::generator {

struct Hypothesis {
  std::vector<TokenId> ids;            // generated tokens only, context excluded
  std::vector<double> step_log_probs;  // one entry per generated token
  double log_prob = 0.0;               // sum of step_log_probs
  bool terminated = false;             // last id is the newline token
  lm::LmState state;
  std::size_t pending_matched = 0;     // bytes of the pending prefix consumed

  std::string text(const tokenizer::Vocabulary& vocab) const {
    std::string out;
    for (TokenId id : ids) out += vocab.text(id);
    return out;
  }
};

enum class StopReason { max_iterations, all_terminated, ratio_cutoff };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::max_iterations: return "max_iterations";
    case StopReason::all_terminated: return "all_terminated";
    case StopReason::ratio_cutoff: return "ratio_cutoff";
  }
  return "unknown";
}

enum class CollectionMode { terminated_lines, top_beam };

struct BeamConfig {
  std::size_t beam_width = 5;
  std::size_t max_iterations = 20;
  double termination_ratio = 3.0;  // live best must stay within 1/k of terminated best
  std::string pending_prefix;
  CollectionMode mode = CollectionMode::terminated_lines;
};

struct GenerationResult {
  std::vector<Hypothesis> terminated_hypotheses;  // sorted by score, then ids
  std::size_t iterations_used = 0;
  StopReason stop_reason = StopReason::max_iterations;
  bool constraint_exhausted = false;  // beam died with nothing terminated
};

/// True when the best live hypothesis is less than 1/k as probable as the
/// best terminated one. False by definition while nothing has terminated.
inline bool ratio_cutoff_check(double live_best, std::optional<double> terminated_best, double k) {
  if (k <= 1.0) throw Error("generator: termination ratio must exceed 1");
  if (!terminated_best) return false;
  return live_best < *terminated_best - std::log(k);
}

namespace detail_gen {

// Lexicographic comparison of a+[a_tail] versus b+[b_tail] without
// materializing the concatenations.
inline bool lex_less(const std::vector<TokenId>& a, TokenId a_tail, const std::vector<TokenId>& b,
                     TokenId b_tail) {
  const std::size_t len_a = a.size() + 1;
  const std::size_t len_b = b.size() + 1;
  const std::size_t n = std::min(len_a, len_b);
  for (std::size_t i = 0; i < n; ++i) {
    const TokenId x = i < a.size() ? a[i] : a_tail;
    const TokenId y = i < b.size() ? b[i] : b_tail;
    if (x != y) return x < y;
  }
  return len_a < len_b;
}

inline bool lex_less(const std::vector<TokenId>& a, const std::vector<TokenId>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

struct Candidate {
  std::size_t parent;
  TokenId token;
  double score;  // cumulative log probability
  double step_log_prob;
};

inline void sort_hypotheses(std::vector<Hypothesis>& hyps) {
  std::sort(hyps.begin(), hyps.end(), [](const Hypothesis& a, const Hypothesis& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return lex_less(a.ids, b.ids);
  });
}

}  // namespace detail_gen

inline GenerationResult generate(const lm::LanguageModel& model, const tokenizer::Vocabulary& vocab,
                                 const lm::LmState& context, const BeamConfig& config) {
  if (config.beam_width == 0) throw Error("generator: beam width must be positive");
  if (config.max_iterations == 0) throw Error("generator: iteration budget must be positive");
  if (config.termination_ratio <= 1.0) throw Error("generator: termination ratio must exceed 1");
  if (model.vocab_size() != vocab.size())
    throw Error("generator: model and vocabulary sizes disagree");
  if (config.pending_prefix.find('\n') != std::string::npos)
    throw Error("generator: pending prefix contains newline");

  const bool plain = config.mode == CollectionMode::top_beam;

  std::vector<Hypothesis> live;
  live.push_back(Hypothesis{{}, {}, 0.0, false, context, 0});

  std::map<std::string, Hypothesis> pool;  // text -> best terminated hypothesis
  auto pool_add = [&](Hypothesis&& hyp) {
    auto text = hyp.text(vocab);
    auto it = pool.find(text);
    if (it == pool.end())
      pool.emplace(std::move(text), std::move(hyp));
    else if (hyp.log_prob > it->second.log_prob)
      it->second = std::move(hyp);
  };

  GenerationResult result;
  auto extend = [&](const Hypothesis& parent, const detail_gen::Candidate& cand) {
    Hypothesis next;
    next.ids = parent.ids;
    next.ids.push_back(cand.token);
    next.step_log_probs = parent.step_log_probs;
    next.step_log_probs.push_back(cand.step_log_prob);
    next.log_prob = cand.score;
    next.terminated = cand.token == kNewlineId;
    next.state = model.advance(parent.state, cand.token);
    const auto& tok_text = vocab.text(cand.token);
    next.pending_matched = std::min(config.pending_prefix.size(),
                                    parent.pending_matched + tok_text.size());
    return next;
  };

  for (std::size_t iter = 1; iter <= config.max_iterations; ++iter) {
    std::vector<detail_gen::Candidate> candidates;
    for (std::size_t h = 0; h < live.size(); ++h) {
      const auto& hyp = live[h];
      const auto dist = model.next_distribution(hyp.state);
      if (dist.log_probs.size() != vocab.size())
        throw Error("generator: distribution size mismatch");
      const std::string_view remaining =
          std::string_view(config.pending_prefix).substr(hyp.pending_matched);
      for (TokenId t = 0; t < vocab.size(); ++t) {
        if (is_special_id(t) && t != kNewlineId) continue;  // markers are never generated
        const auto& text = vocab.tokens[t];
        if (!remaining.empty() && !text.starts_with(remaining) && !remaining.starts_with(text))
          continue;
        const double score = hyp.log_prob + dist.log_probs[t];
        if (!plain && t == kNewlineId) {
          pool_add(extend(hyp, {h, t, score, dist.log_probs[t]}));
          continue;
        }
        candidates.push_back({h, t, score, dist.log_probs[t]});
      }
    }

    result.iterations_used = iter;

    if (candidates.empty()) {
      result.stop_reason = StopReason::all_terminated;
      result.constraint_exhausted = plain ? live.empty() : pool.empty();
      if (plain) break;
      live.clear();
      break;
    }

    std::sort(candidates.begin(), candidates.end(),
              [&](const detail_gen::Candidate& a, const detail_gen::Candidate& b) {
                if (a.score != b.score) return a.score > b.score;
                return detail_gen::lex_less(live[a.parent].ids, a.token, live[b.parent].ids, b.token);
              });
    if (candidates.size() > config.beam_width) candidates.resize(config.beam_width);

    std::vector<Hypothesis> next_live;
    next_live.reserve(candidates.size());
    for (const auto& cand : candidates) next_live.push_back(extend(live[cand.parent], cand));
    live = std::move(next_live);

    if (iter == config.max_iterations) {
      result.stop_reason = StopReason::max_iterations;
      break;
    }
    if (!plain) {
      std::optional<double> terminated_best;
      for (const auto& [text, hyp] : pool) {
        (void)text;
        if (!terminated_best || hyp.log_prob > *terminated_best) terminated_best = hyp.log_prob;
      }
      double live_best = live.front().log_prob;
      for (const auto& hyp : live) live_best = std::max(live_best, hyp.log_prob);
      if (ratio_cutoff_check(live_best, terminated_best, config.termination_ratio)) {
        result.stop_reason = StopReason::ratio_cutoff;
        break;
      }
    }
  }

  if (plain) {
    // Baseline collection: final beam, truncated at the first newline.
    for (auto& hyp : live) {
      const auto nl = std::find(hyp.ids.begin(), hyp.ids.end(), kNewlineId);
      if (nl != hyp.ids.end()) {
        const auto keep = static_cast<std::size_t>(nl - hyp.ids.begin()) + 1;
        hyp.ids.resize(keep);
        hyp.step_log_probs.resize(keep);
        hyp.log_prob = 0.0;
        for (double lp : hyp.step_log_probs) hyp.log_prob += lp;
        hyp.terminated = true;
      }
      pool_add(std::move(hyp));
    }
  }

  result.terminated_hypotheses.reserve(pool.size());
  for (auto& [text, hyp] : pool) {
    (void)text;
    result.terminated_hypotheses.push_back(std::move(hyp));
  }
  detail_gen::sort_hypotheses(result.terminated_hypotheses);
  return result;
}

}  // namespace linecomp::generator
