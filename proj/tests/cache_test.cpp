/**
 * Tests for the single-entry prefix cache.
 *
 * The warm/cold equivalence property drives a simulated typing session
 * through the cache and checks every resulting distribution bit for bit
 * against a from-scratch computation.
 */

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <vector>

#include "linecomp/cache.hpp"
#include "linecomp/ngram.hpp"

using namespace linecomp;

namespace {

lm::NgramModel toy_model() {
  std::mt19937_64 rng(77);
  std::vector<std::vector<TokenId>> sequences;
  for (int s = 0; s < 25; ++s) {
    std::vector<TokenId> seq(8 + rng() % 16);
    for (auto& id : seq) id = static_cast<TokenId>(rng() % 10);
    sequences.push_back(std::move(seq));
  }
  return lm::NgramModel::fit(sequences, 3, 10, 0.4);
}

}  // namespace

TEST_CASE("construction validates capacity and fraction") {
  CHECK_THROWS_AS(cache::PrefixCache(0), Error);
  CHECK_THROWS_AS(cache::PrefixCache(8, 0.0), Error);
  CHECK_THROWS_AS(cache::PrefixCache(8, 1.5), Error);
  CHECK_NOTHROW(cache::PrefixCache(8, 1.0));
  CHECK(cache::PrefixCache(8).capacity() == 8);
}

TEST_CASE("cold lookups return the trailing initialization window") {
  const cache::PrefixCache cache(10, 0.5);
  const std::vector<TokenId> short_ctx{1, 2, 3};
  const auto miss_short = cache.lookup(short_ctx);
  CHECK(!miss_short.warm);
  CHECK(!miss_short.state.has_value());
  CHECK(miss_short.suffix == short_ctx);

  const std::vector<TokenId> long_ctx{1, 2, 3, 4, 5, 6, 7, 8};
  const auto miss_long = cache.lookup(long_ctx);
  CHECK(!miss_long.warm);
  CHECK(miss_long.suffix == std::vector<TokenId>{4, 5, 6, 7, 8});  // floor(10 * .5) tokens

  CHECK_THROWS_AS(cache.lookup(std::vector<TokenId>(11, 0)), Error);
}

TEST_CASE("store then lookup follows the strict prefix rule") {
  const auto model = toy_model();
  cache::PrefixCache cache(16, 0.5);
  CHECK(cache.empty());

  const std::vector<TokenId> ctx{1, 2, 3};
  cache.store(ctx, model.process_context(ctx), model);
  CHECK(!cache.empty());
  CHECK(cache.cached_length() == 3);

  SUBCASE("extension of the cached context is warm") {
    const auto hit = cache.lookup(std::vector<TokenId>{1, 2, 3, 4, 5});
    CHECK(hit.warm);
    REQUIRE(hit.state.has_value());
    CHECK(hit.state->processed_tokens == ctx);
    CHECK(hit.suffix == std::vector<TokenId>{4, 5});
  }

  SUBCASE("the exact cached context is warm with nothing left to feed") {
    const auto hit = cache.lookup(ctx);
    CHECK(hit.warm);
    CHECK(hit.suffix.empty());
  }

  SUBCASE("a diverging context misses") {
    const auto miss = cache.lookup(std::vector<TokenId>{1, 9, 3, 4});
    CHECK(!miss.warm);
    CHECK(miss.suffix == std::vector<TokenId>{1, 9, 3, 4});
  }

  SUBCASE("a shorter context misses by default") {
    const auto miss = cache.lookup(std::vector<TokenId>{1, 2});
    CHECK(!miss.warm);
  }

  SUBCASE("clear forgets the entry") {
    cache.clear();
    CHECK(cache.empty());
    CHECK(cache.cached_length() == 0);
    CHECK(!cache.lookup(ctx).warm);
  }
}

TEST_CASE("stale reuse serves a shorter context from the longer state") {
  const auto model = toy_model();
  cache::PrefixCache cache(16, 0.5, true);
  const std::vector<TokenId> ctx{1, 2, 3, 4};
  cache.store(ctx, model.process_context(ctx), model);

  const auto hit = cache.lookup(std::vector<TokenId>{1, 2});
  CHECK(hit.warm);
  CHECK(hit.suffix.empty());
  REQUIRE(hit.state.has_value());
  CHECK(hit.state->processed_tokens.size() == 4);  // deliberately stale
}

TEST_CASE("store rejects a state that does not match the context") {
  const auto model = toy_model();
  cache::PrefixCache cache(16);
  const std::vector<TokenId> ctx{1, 2, 3};
  auto state = model.process_context(std::vector<TokenId>{1, 2});
  CHECK_THROWS_AS(cache.store(ctx, state, model), Error);
}

TEST_CASE("an oversized store is re-seeded from its trailing window") {
  const auto model = toy_model();
  cache::PrefixCache cache(5, 0.5);  // window of two tokens
  const std::vector<TokenId> ctx{1, 2, 3, 4, 5, 6, 7};
  cache.store(ctx, model.process_context(ctx), model);
  CHECK(cache.cached_length() == 2);

  const auto hit = cache.lookup(std::vector<TokenId>{6, 7, 8});
  CHECK(hit.warm);
  CHECK(hit.state->processed_tokens == std::vector<TokenId>{6, 7});
  CHECK(hit.suffix == std::vector<TokenId>{8});
}

TEST_CASE("warm chains reproduce cold distributions bit for bit") {
  const auto model = toy_model();
  std::mt19937_64 rng(20240820);

  for (int session = 0; session < 200; ++session) {
    cache::PrefixCache cache(16, 0.5);
    std::vector<TokenId> context;
    const std::size_t keystrokes = 1 + rng() % 16;
    std::size_t warm_hits = 0;

    for (std::size_t k = 0; k < keystrokes; ++k) {
      context.push_back(static_cast<TokenId>(rng() % 10));

      const auto looked = cache.lookup(context);
      lm::LmState state;
      if (looked.warm) {
        ++warm_hits;
        state = *looked.state;
        for (TokenId id : looked.suffix) state = model.advance(state, id);
        cache.store(context, state, model);
      } else {
        state = model.process_context(looked.suffix);
        cache.store(looked.suffix, state, model);
      }

      // The cached path must be indistinguishable from a fresh computation:
      // the toy model's horizon fits inside the initialization window.
      const auto baseline = model.next_distribution(model.process_context(context));
      CHECK(model.next_distribution(state).log_probs == baseline.log_probs);
    }
    // Append-only typing misses only on the very first keystroke.
    CHECK(warm_hits == keystrokes - 1);
  }
}
