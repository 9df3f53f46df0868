#pragma once

/**
 * End-to-end completion engine.
 *
 * A request carries the whole document and a caret offset in codepoints.
 * The text above the caret line is normalized and scope-encoded; the caret
 * line itself is kept raw (comments and spacing intact) with its
 * indentation floored to whole units and re-expressed as depth markers.
 * Token healing backtracks the line tail into a pending prefix, the
 * context is composed under the token budget, the prefix cache supplies or
 * receives the model state, the beam generates newline-terminated
 * hypotheses constrained by the pending prefix, and the filter pipeline
 * picks the suggestion.
 *
 * The engine itself is immutable after construction and shareable across
 * sessions; each session owns a prefix cache and must not run two
 * completions concurrently.
 */

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "linecomp/cache.hpp"
#include "linecomp/common.hpp"
#include "linecomp/formatter.hpp"
#include "linecomp/generator.hpp"
#include "linecomp/lm.hpp"
#include "linecomp/ngram.hpp"
#include "linecomp/postprocess.hpp"
#include "linecomp/special_tokens.hpp"
#include "linecomp/tokenizer.hpp"

namespace linecomp::engine {

struct CompletionRequest {
  std::string path;
  std::string extension;
  std::string text;          // full document, UTF-8
  std::size_t caret_offset;  // codepoint index, 0..#codepoints
};

struct CompletionResult {
  std::optional<std::string> suggestion;  // single line; disengaged when nothing survived
  double score = 0.0;                     // log probability of the chosen hypothesis
  double latency_ms = 0.0;
  bool cache_hit = false;
  generator::StopReason stop_reason = generator::StopReason::max_iterations;
};

struct EngineConfig {
  std::filesystem::path tokenizer_path;
  std::filesystem::path model_path;
  std::size_t beam_width = 5;
  std::size_t max_iterations = 20;
  double termination_ratio = 3.0;
  std::size_t max_context = 1536;
  double cache_init_fraction = 0.5;
  bool collect_terminated = true;  // false selects the plain top-beam baseline
  formatter::FormatterConfig formatter;
  postprocess::FilterConfig filters;

  static EngineConfig from_file(const std::filesystem::path& path);
};

namespace detail_eng {

inline std::vector<std::string> read_list_file(const std::filesystem::path& path) {
  std::vector<std::string> out;
  for (auto line : detail::split_lines(detail::read_file(path), false)) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    out.emplace_back(line);
  }
  return out;
}

inline std::size_t parse_size(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(value, &pos);
    if (pos != value.size() || v < 0) throw std::invalid_argument(value);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw Error("engine: config key '" + key + "' needs a non-negative integer, got '" + value +
                "'");
  }
}

inline double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw Error("engine: config key '" + key + "' needs a number, got '" + value + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  throw Error("engine: config key '" + key + "' needs true or false, got '" + value + "'");
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace detail_eng

/// Key-value configuration, one `key = value` per line, '#' comments,
/// unknown keys rejected. Relative artifact paths resolve against the
/// directory containing the config file.
inline EngineConfig EngineConfig::from_file(const std::filesystem::path& path) {
  EngineConfig config;
  const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  const auto resolve = [&](const std::string& value) {
    std::filesystem::path p(value);
    return p.is_absolute() ? p : dir / p;
  };
  const std::string body = detail::read_file(path);
  std::size_t line_no = 0;
  for (auto raw : detail::split_lines(body, false)) {
    ++line_no;
    const std::string line = detail_eng::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error("engine: config line " + std::to_string(line_no) + " is not 'key = value'");
    const std::string key = detail_eng::trim(std::string_view(line).substr(0, eq));
    const std::string value = detail_eng::trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw Error("engine: config line " + std::to_string(line_no) + " lacks a key");
    using detail_eng::parse_bool;
    using detail_eng::parse_double;
    using detail_eng::parse_size;
    if (key == "tokenizer")
      config.tokenizer_path = resolve(value);
    else if (key == "model")
      config.model_path = resolve(value);
    else if (key == "beam_width")
      config.beam_width = parse_size(key, value);
    else if (key == "max_iterations")
      config.max_iterations = parse_size(key, value);
    else if (key == "termination_ratio")
      config.termination_ratio = parse_double(key, value);
    else if (key == "max_context")
      config.max_context = parse_size(key, value);
    else if (key == "cache_init_fraction")
      config.cache_init_fraction = parse_double(key, value);
    else if (key == "collect_terminated")
      config.collect_terminated = parse_bool(key, value);
    else if (key == "language")
      config.formatter.language = value;
    else if (key == "min_mean_token_logprob")
      config.filters.min_mean_token_logprob = parse_double(key, value);
    else if (key == "correctness_timeout_ms")
      config.filters.correctness_timeout_ms = static_cast<std::int64_t>(parse_size(key, value));
    else if (key == "secret_entropy_threshold")
      config.filters.secret_entropy_threshold = parse_double(key, value);
    else if (key == "secret_min_length")
      config.filters.secret_min_length = parse_size(key, value);
    else if (key == "danger_patterns_file")
      config.filters.danger_patterns = detail_eng::read_list_file(resolve(value));
    else if (key == "profanity_file")
      config.filters.profanity_list = detail_eng::read_list_file(resolve(value));
    else
      throw Error("engine: unknown config key '" + key + "'");
  }
  config.filters.validate();
  return config;
}

class Engine {
 public:
  /// Loads the tokenizer and model artifacts named by the config.
  explicit Engine(EngineConfig config)
      : config_(std::move(config)),
        tok_(tokenizer::Tokenizer::load(config_.tokenizer_path)),
        model_(std::make_shared<lm::NgramModel>(lm::NgramModel::load(config_.model_path))) {
    validate();
  }

  /// Injection constructor for pre-built components.
  Engine(EngineConfig config, tokenizer::Tokenizer tok,
         std::shared_ptr<const lm::LanguageModel> model)
      : config_(std::move(config)), tok_(std::move(tok)), model_(std::move(model)) {
    validate();
  }

  const EngineConfig& config() const { return config_; }
  const tokenizer::Tokenizer& tok() const { return tok_; }
  const lm::LanguageModel& model() const { return *model_; }

  std::size_t max_context() const {
    return std::min(config_.max_context, model_->max_context_length());
  }

  void set_correctness_checker(postprocess::CorrectnessChecker checker) {
    checker_ = std::move(checker);
  }
  const postprocess::CorrectnessChecker& correctness_checker() const { return checker_; }

 private:
  void validate() const {
    if (!model_) throw Error("engine: model missing");
    if (model_->vocab_size() != tok_.vocab.size())
      throw Error("engine: tokenizer and model vocabulary sizes disagree");
    if (config_.max_context == 0) throw Error("engine: max_context must be positive");
    config_.filters.validate();
  }

  EngineConfig config_;
  tokenizer::Tokenizer tok_;
  std::shared_ptr<const lm::LanguageModel> model_;
  postprocess::CorrectnessChecker checker_ = postprocess::bracket_balance_checker;
};

/// One editing session: owns the prefix cache. Not safe for concurrent
/// completions; use one session per connection or file.
class Session {
 public:
  explicit Session(const Engine& engine)
      : engine_(&engine),
        cache_(engine.max_context(), engine.config().cache_init_fraction) {}

  const cache::PrefixCache& prefix_cache() const { return cache_; }
  void reset_cache() { cache_.clear(); }

  CompletionResult complete(const CompletionRequest& request) {
    const auto t0 = std::chrono::steady_clock::now();
    const Engine& eng = *engine_;
    const auto& config = eng.config();
    const auto& tok = eng.tok();

    if (!detail::is_valid_utf8(request.text)) throw Error("engine: request text is not UTF-8");
    const std::size_t total = detail::count_codepoints(request.text);
    if (request.caret_offset > total) throw Error("engine: caret outside document");
    const std::size_t byte_caret = detail::codepoint_to_byte(request.text, request.caret_offset);

    // Head: complete lines above the caret line. Tail: the caret line so far.
    const std::string_view before(request.text.data(), byte_caret);
    const std::size_t nl = before.rfind('\n');
    const std::string_view head = nl == std::string_view::npos ? std::string_view()
                                                               : before.substr(0, nl + 1);
    const std::string_view tail_raw = nl == std::string_view::npos ? before : before.substr(nl + 1);

    const std::string normalized = formatter::normalize(head, config.formatter);
    const formatter::ScopedText scoped = formatter::encode_scopes(normalized);

    // The caret line stays raw except that stray markers are scrubbed and
    // its indentation is floored to whole units and becomes depth markers.
    const std::string tail = formatter::detail_fmt::scrub_markers(tail_raw);
    std::size_t ws_end = 0;
    while (ws_end < tail.size() && (tail[ws_end] == ' ' || tail[ws_end] == '\t')) ++ws_end;
    const std::string_view ws = std::string_view(tail).substr(0, ws_end);
    const std::string content(std::string_view(tail).substr(ws_end));

    int tail_depth = 0;
    if (!ws.empty() && ws.front() == '\t') {
      while (static_cast<std::size_t>(tail_depth) < ws.size() &&
             ws[static_cast<std::size_t>(tail_depth)] == '\t')
        ++tail_depth;
    } else {
      std::size_t spaces = 0;
      while (spaces < ws.size() && ws[spaces] == ' ') ++spaces;
      const std::size_t unit =
          scoped.indent_unit.front() == '\t' ? 4 : scoped.indent_unit.size();
      tail_depth = static_cast<int>(spaces / std::max<std::size_t>(1, unit));
    }

    const auto heal = tokenizer::healing_backtrack(content, tok.vocab);
    const std::string& pending = heal.pending_prefix;
    const std::string kept = content.substr(0, content.size() - pending.size());

    std::string context_code = scoped.text;
    for (int d = scoped.final_depth; d < tail_depth; ++d) context_code += kScopeIn;
    for (int d = scoped.final_depth; d > tail_depth; --d) context_code += kScopeOut;
    context_code += kept;

    const auto ids = formatter::compose_context(request.extension, request.path, context_code,
                                                tok, eng.max_context());

    auto looked = cache_.lookup(ids);
    lm::LmState state;
    if (looked.state) {
      state = *looked.state;
      for (TokenId id : looked.suffix) state = eng.model().advance(state, id);
      cache_.store(ids, state, eng.model());
    } else {
      state = eng.model().process_context(looked.suffix);
      cache_.store(std::move(looked.suffix), state, eng.model());
    }

    generator::BeamConfig beam;
    beam.beam_width = config.beam_width;
    beam.max_iterations = config.max_iterations;
    beam.termination_ratio = config.termination_ratio;
    beam.pending_prefix = pending;
    beam.mode = config.collect_terminated ? generator::CollectionMode::terminated_lines
                                          : generator::CollectionMode::top_beam;
    const auto gen = generator::generate(eng.model(), tok.vocab, state, beam);

    // Hypotheses carry the healed prefix; the user already typed it, so
    // only the remainder is shown.
    std::vector<postprocess::Candidate> candidates;
    candidates.reserve(gen.terminated_hypotheses.size());
    for (const auto& hyp : gen.terminated_hypotheses) {
      std::string text = hyp.text(tok.vocab);
      if (!text.empty() && text.back() == '\n') text.pop_back();
      if (text.size() < pending.size() || text.compare(0, pending.size(), pending) != 0) continue;
      std::string shown = text.substr(pending.size());
      if (shown.empty()) continue;
      candidates.push_back({std::move(shown), hyp.log_prob, hyp.ids.size()});
    }

    const auto pipe = postprocess::run_pipeline(candidates, tail, config.filters,
                                                eng.correctness_checker());

    CompletionResult result;
    result.cache_hit = looked.warm;
    result.stop_reason = gen.stop_reason;
    if (pipe.suggestion) {
      result.suggestion = formatter::decode_scopes(*pipe.suggestion, scoped.indent_unit);
      result.score = pipe.score;
    }
    const auto t1 = std::chrono::steady_clock::now();
    result.latency_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    return result;
  }

 private:
  const Engine* engine_;
  cache::PrefixCache cache_;
};

}  // namespace linecomp::engine
