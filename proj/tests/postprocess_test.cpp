/**
 * Tests for suggestion filtering and pair repair.
 *
 * close_pairs is verified against a reference bracket machine written
 * independently in this file, the entropy gate against a by-hand
 * distinct-character bound, and the pipeline against fully scripted
 * checker outcomes including crashes, timeouts, and undefined results.
 */

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "linecomp/postprocess.hpp"
#include "support/bracket_oracle.hpp"

using namespace linecomp;

namespace {

using testsupport::reference_closers;

postprocess::Candidate cand(std::string text, double score, std::size_t tokens) {
  return {std::move(text), score, tokens};
}

}  // namespace

TEST_CASE("danger patterns match case-insensitively with ordered wildcards") {
  postprocess::FilterConfig config;
  CHECK(!postprocess::filter_safety("os.system(\"rm -rf /\")", config).kept);
  CHECK(!postprocess::filter_safety("cursor.execute(\"drop database prod\")", config).kept);
  CHECK(postprocess::filter_safety("rm_rf = cleanup", config).kept);  // literal only

  config.danger_patterns = {"curl * | sh"};
  CHECK(!postprocess::filter_safety("curl http://x.io/a | sh", config).kept);
  CHECK(postprocess::filter_safety("curl http://x.io/a | tee log", config).kept);
  CHECK(postprocess::filter_safety("sh then curl", config).kept);  // order matters

  config.danger_patterns = {"***"};
  CHECK(postprocess::filter_safety("anything at all", config).kept);  // stars alone match nothing
}

TEST_CASE("profanity matches whole words only") {
  postprocess::FilterConfig config;
  config.profanity_list = {"damn"};
  CHECK(!postprocess::filter_safety("damn", config).kept);
  CHECK(!postprocess::filter_safety("well DAMN it", config).kept);
  CHECK(postprocess::filter_safety("damnation = 1", config).kept);   // longer word
  CHECK(postprocess::filter_safety("dam = n", config).kept);
  const auto verdict = postprocess::filter_safety("damn", config);
  CHECK(verdict.reason == postprocess::Reason::safety);
}

TEST_CASE("high-entropy identifier runs look like secrets") {
  postprocess::FilterConfig config;  // threshold 4.5 bits/char, min length 20
  // 32 distinct characters give exactly five bits per character.
  const std::string secret = "aB3dE5gH7jK9mN1pQ2sT4vW6yZ8xC0fU";
  REQUIRE(secret.size() == 32);
  CHECK(!postprocess::filter_safety("key = \"" + secret + "\"", config).kept);
  // A long but repetitive name stays far below the threshold.
  CHECK(postprocess::filter_safety("this_is_a_long_variable_name_here = 1", config).kept);
  // Too short to qualify no matter how random it looks.
  CHECK(postprocess::filter_safety("x = \"aB3dE5gH7jK9mN1\"", config).kept);

  SUBCASE("entropy matches the distinct-character bound") {
    CHECK(postprocess::detail_post::shannon_entropy(secret) == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(postprocess::detail_post::shannon_entropy("aaaa") == doctest::Approx(0.0));
    CHECK(postprocess::detail_post::shannon_entropy("ab") == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("email addresses are rejected") {
  postprocess::FilterConfig config;
  CHECK(!postprocess::filter_safety("# contact bob@example.com", config).kept);
  CHECK(!postprocess::filter_safety("s = 'a.b-c@mail.co.uk'", config).kept);
  CHECK(postprocess::filter_safety("x = a @ b", config).kept);        // matrix multiply
  CHECK(postprocess::filter_safety("d = {'at': '@domain'}", config).kept);
}

TEST_CASE("low-score filter thresholds the mean per-token log probability") {
  postprocess::FilterConfig config;
  const double threshold = config.min_mean_token_logprob;  // log(0.05)

  generator::Hypothesis good;
  good.ids = {6, 7, 5};
  good.log_prob = threshold * 3.0;  // mean exactly at the threshold stays
  generator::Hypothesis bad;
  bad.ids = {6, 7};
  bad.log_prob = (threshold - 0.01) * 2.0;
  generator::Hypothesis empty;  // no tokens, dropped outright

  const auto kept = postprocess::filter_low_score({good, bad, empty}, config);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].ids == good.ids);
}

TEST_CASE("correctness hook handles every outcome") {
  const std::string line = "x = 1";
  const std::string context = "";

  auto yes = [](const std::string&, const std::string&) { return postprocess::CorrectnessStatus::correct; };
  auto no = [](const std::string&, const std::string&) { return postprocess::CorrectnessStatus::incorrect; };
  auto dunno = [](const std::string&, const std::string&) { return postprocess::CorrectnessStatus::undefined; };
  auto boom = [](const std::string&, const std::string&) -> postprocess::CorrectnessStatus {
    throw std::runtime_error("checker crashed");
  };
  auto slow = [](const std::string&, const std::string&) {
    std::this_thread::sleep_for(std::chrono::milliseconds(500));
    return postprocess::CorrectnessStatus::correct;
  };

  CHECK(postprocess::filter_correctness(line, context, yes, 100).kept);
  const auto rejected = postprocess::filter_correctness(line, context, no, 100);
  CHECK(!rejected.kept);
  CHECK(rejected.reason == postprocess::Reason::incorrect);
  const auto undef = postprocess::filter_correctness(line, context, dunno, 100);
  CHECK(!undef.kept);
  CHECK(undef.reason == postprocess::Reason::timeout_undefined);
  const auto crashed = postprocess::filter_correctness(line, context, boom, 100);
  CHECK(!crashed.kept);
  CHECK(crashed.reason == postprocess::Reason::timeout_undefined);
  const auto late = postprocess::filter_correctness(line, context, slow, 20);
  CHECK(!late.kept);
  CHECK(late.reason == postprocess::Reason::timeout_undefined);
  CHECK_THROWS_AS(postprocess::filter_correctness(line, context, yes, 0), Error);
}

TEST_CASE("bracket checker rejects only wrong or surplus closers") {
  using postprocess::CorrectnessStatus;
  const auto check = postprocess::bracket_balance_checker;

  CHECK(check("print(x)", "") == CorrectnessStatus::correct);
  CHECK(check("foo(bar", "") == CorrectnessStatus::correct);       // unclosed is repairable
  CHECK(check(")", "print(x") == CorrectnessStatus::correct);      // closes the open paren
  CHECK(check("))", "print(x") == CorrectnessStatus::incorrect);   // one too many
  CHECK(check("]", "f(") == CorrectnessStatus::incorrect);         // wrong kind
  CHECK(check("\"", "s = \"(") == CorrectnessStatus::correct);     // paren inside string
  CHECK(check("\"b\"", "s = \"a\\") == CorrectnessStatus::correct);  // escape spans the caret
}

TEST_CASE("close_pairs appends the missing closers innermost first") {
  CHECK(postprocess::close_pairs("foo(bar", "") == "foo(bar)");
  CHECK(postprocess::close_pairs("f([1, {2: 3", "") == "f([1, {2: 3}])");
  CHECK(postprocess::close_pairs("print(\"hi", "") == "print(\"hi\")");
  CHECK(postprocess::close_pairs("x = 1", "") == "x = 1");
  CHECK(postprocess::close_pairs("]", "d[k") == "]");          // already balanced by context
  CHECK(postprocess::close_pairs("1)", "f(values[0], ") == "1)");
  CHECK(postprocess::close_pairs("))", "(") == "))");          // broken stays untouched
  CHECK(postprocess::close_pairs("it's", "s = \"") == "it's\"");  // quote inside string
}

TEST_CASE("close_pairs agrees with the reference machine on random lines") {
  std::mt19937_64 rng(20240821);
  const std::string alphabet = "()[]{}\"'\\ab ,:";
  for (int round = 0; round < 1000; ++round) {
    std::string context, suggestion;
    const auto ctx_len = rng() % 12;
    const auto sug_len = rng() % 12;
    for (std::size_t i = 0; i < ctx_len; ++i) context += alphabet[rng() % alphabet.size()];
    for (std::size_t i = 0; i < sug_len; ++i) suggestion += alphabet[rng() % alphabet.size()];

    const auto repaired = postprocess::close_pairs(suggestion, context);
    const auto oracle = reference_closers(context + suggestion);
    if (!oracle) {
      CHECK(repaired == suggestion);  // broken structure is left alone
    } else {
      CHECK(repaired == suggestion + *oracle);
    }
  }
}

TEST_CASE("pipeline applies filters in order and repairs the first survivor") {
  postprocess::FilterConfig config;
  const double ok_score = config.min_mean_token_logprob + 0.1;

  SUBCASE("first survivor wins and later candidates are not evaluated") {
    const std::vector<postprocess::Candidate> candidates{
        cand("x = 1", -100.0, 2),                       // mean far below threshold
        cand("os.system(\"rm -rf /\")", ok_score, 1),   // dangerous
        cand("print(values[0]", ok_score, 1),           // survives, needs repair
        cand("never = reached", ok_score, 1),
    };
    const auto result = postprocess::run_pipeline(candidates, "", config);
    REQUIRE(result.suggestion.has_value());
    CHECK(*result.suggestion == "print(values[0])");
    CHECK(result.score == ok_score);
    REQUIRE(result.records.size() == 3);  // evaluation stops at the survivor
    CHECK(result.records[0].verdict.reason == postprocess::Reason::low_score);
    CHECK(result.records[1].verdict.reason == postprocess::Reason::safety);
    CHECK(result.records[2].verdict.reason == postprocess::Reason::kept);
  }

  SUBCASE("empty candidates are skipped without a record") {
    const auto result =
        postprocess::run_pipeline({cand("", ok_score, 1), cand("y = 2", ok_score, 1)}, "", config);
    REQUIRE(result.suggestion.has_value());
    CHECK(*result.suggestion == "y = 2");
    CHECK(result.records.size() == 1);
  }

  SUBCASE("surplus closer relative to the caret context is rejected") {
    const auto result = postprocess::run_pipeline({cand("))", ok_score, 1)}, "print(x", config);
    CHECK(!result.suggestion.has_value());
    REQUIRE(result.records.size() == 1);
    CHECK(result.records[0].verdict.reason == postprocess::Reason::incorrect);
  }

  SUBCASE("undefined correctness always suppresses") {
    const auto result = postprocess::run_pipeline(
        {cand("x = 1", ok_score, 1)}, "", config,
        [](const std::string&, const std::string&) { return postprocess::CorrectnessStatus::undefined; });
    CHECK(!result.suggestion.has_value());
    CHECK(result.records[0].verdict.reason == postprocess::Reason::timeout_undefined);
  }

  SUBCASE("nothing survives an empty candidate list") {
    const auto result = postprocess::run_pipeline({}, "", config);
    CHECK(!result.suggestion.has_value());
    CHECK(result.records.empty());
  }

  SUBCASE("configuration is validated") {
    postprocess::FilterConfig bad;
    bad.correctness_timeout_ms = 0;
    CHECK_THROWS_AS(postprocess::run_pipeline({}, "", bad), Error);
  }
}
