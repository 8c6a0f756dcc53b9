#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <resgate/rng.hpp>
#include <resgate/skipping.hpp>

using namespace resgate;

namespace {

// Reference quantile: sort ascending, pos = q*(n-1), linear interpolation.
double quantile_oracle(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  if (v.size() == 1 || v.front() == v.back()) return v.front();
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const double alpha = pos - std::floor(pos);
  if (i + 1 >= v.size()) return v.back();
  return (1.0 - alpha) * v[i] + alpha * v[i + 1];
}

}  // namespace

TEST_SUITE("skipping") {

TEST_CASE("quantile threshold worked examples") {
  CHECK(quantile_threshold({1, 2, 3, 4, 5}, 0.5) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(quantile_threshold({0.1, 0.2, 0.3, 0.4}, 0.25) ==
        doctest::Approx(0.175).epsilon(1e-15));
  CHECK(quantile_threshold({7.0}, 0.9) == 7.0);
  CHECK(quantile_threshold({2.0, 2.0, 2.0}, 0.9) == 2.0);
  CHECK(quantile_threshold({5, 1, 3, 2, 4}, 0.5) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(quantile_threshold({1, 2}, 0.0) == 1.0);
  CHECK(quantile_threshold({1, 2}, 1.0) == 2.0);

  CHECK_THROWS_AS(quantile_threshold({}, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(quantile_threshold({1.0}, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(quantile_threshold({1.0}, 1.1), std::invalid_argument);
}

TEST_CASE("quantile threshold agrees with a brute-force oracle") {
  Rng rng(123);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + rng.uniform_int(40);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = rng.uniform() * 10.0 - 5.0;
    if (trial % 7 == 0) std::fill(v.begin(), v.end(), v[0]);  // tie branch
    const double q = rng.uniform();
    const double got = quantile_threshold(v, q);
    const double want = quantile_oracle(v, q);
    CHECK(std::fabs(got - want) <= 1e-12);
  }
}

TEST_CASE("budget schedule endpoints and interior") {
  BudgetSchedule s{1.0, 0.8, 2000};
  CHECK(budget_at(s, 1) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(budget_at(s, 2000) == doctest::Approx(0.8).epsilon(1e-15));
  // Interior point: b_t = 1 - 0.2*(t-1)/1999.
  CHECK(budget_at(s, 1000) ==
        doctest::Approx(1.0 - 0.2 * 999.0 / 1999.0).epsilon(1e-15));

  BudgetSchedule one{0.9, 0.5, 1};
  CHECK(budget_at(one, 1) == 0.9);  // one-step schedule stays at b1

  CHECK_THROWS_AS(budget_at(s, 0), std::out_of_range);
  CHECK_THROWS_AS(budget_at(s, 2001), std::out_of_range);
  CHECK_THROWS_AS((BudgetSchedule{0.0, 0.8, 10}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((BudgetSchedule{1.0, 1.2, 10}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((BudgetSchedule{1.0, 0.8, 0}.validate()), std::invalid_argument);
}

TEST_CASE("select_skips worked example") {
  // Scores {0.1, 0.9, 0.5, 0.7} at b=0.5: tau is the 0.5-quantile = 0.6;
  // tokens 0 and 2 fall at or below it.
  auto mask = select_skips({0.1, 0.9, 0.5, 0.7}, 0.5);
  REQUIRE(mask.size() == 4);
  CHECK(mask[0]);
  CHECK_FALSE(mask[1]);
  CHECK(mask[2]);
  CHECK_FALSE(mask[3]);
  CHECK(mask.count() == 2);
}

TEST_CASE("budget one with distinct scores skips only the minimum") {
  auto mask = select_skips({0.4, 0.2, 0.9, 0.3}, 1.0);
  CHECK(mask.count() == 1);
  CHECK(mask[1]);
}

TEST_CASE("all-equal scores degenerate to all skipped and are counted") {
  reset_degenerate_tie_count();
  auto mask = select_skips({0.5, 0.5, 0.5}, 0.7);
  CHECK(mask.count() == 3);
  CHECK(degenerate_tie_count() == 1);
  select_skips({1.0, 1.0}, 0.9);
  CHECK(degenerate_tie_count() == 2);
  reset_degenerate_tie_count();
  CHECK(degenerate_tie_count() == 0);
}

TEST_CASE("skip decisions are invariant to positive affine score maps") {
  Rng rng(77);
  std::vector<double> scores(64);
  for (auto& s : scores) s = rng.uniform();
  for (double b : {0.9, 0.75, 0.5, 0.25}) {
    auto base = select_skips(scores, b);
    std::vector<double> mapped(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) mapped[i] = 3.0 * scores[i] + 11.0;
    auto moved = select_skips(mapped, b);
    for (std::size_t i = 0; i < scores.size(); ++i) CHECK(base[i] == moved[i]);
  }
}

TEST_CASE("skip count tracks (1-b)*n within one token") {
  Rng rng(99);
  std::vector<double> scores(128);
  for (auto& s : scores) s = rng.uniform();
  for (double b : {1.0, 0.95, 0.85, 0.75, 0.6, 0.4}) {
    auto mask = select_skips(scores, b);
    const double want = (1.0 - b) * static_cast<double>(scores.size());
    CHECK(std::fabs(static_cast<double>(mask.count()) - want) <= 1.0 + 1e-9);
  }
}

TEST_CASE("lower budgets skip supersets of higher budgets") {
  Rng rng(5);
  std::vector<double> scores(64);
  for (auto& s : scores) s = rng.uniform();
  auto high = select_skips(scores, 0.9);
  auto mid = select_skips(scores, 0.7);
  auto low = select_skips(scores, 0.5);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (high[i]) CHECK(mid[i]);
    if (mid[i]) CHECK(low[i]);
  }
}

TEST_CASE("inactive tokens are marked skipped and excluded from the quantile") {
  // Only tokens 1..3 active; the huge inactive score must not move tau.
  std::vector<double> scores{1e9, 0.1, 0.9, 0.5};
  auto mask = select_skips(scores, 0.5, {1, 2, 3});
  CHECK(mask[0]);  // inactive -> skipped
  CHECK(mask[1]);  // 0.1 <= tau
  CHECK_FALSE(mask[2]);
  CHECK(mask[3]);  // tau = quantile({0.1,0.9,0.5}, 0.5) = 0.5

  CHECK_THROWS_AS(select_skips(scores, 0.5, {}), std::invalid_argument);
  CHECK_THROWS_AS(select_skips(scores, 0.5, {7}), std::out_of_range);
}

TEST_CASE("select_skips validates the budget") {
  CHECK_THROWS_AS(select_skips({0.5}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(select_skips({0.5}, 1.5), std::invalid_argument);
}

TEST_CASE("random mask skips exactly round(f*n) active tokens") {
  std::vector<int> active(100);
  for (int i = 0; i < 100; ++i) active[i] = i;
  auto mask = random_skip_mask(100, active, 0.25, 42);
  CHECK(mask.count() == 25);

  // Same seed replays identically; different seed differs somewhere.
  auto again = random_skip_mask(100, active, 0.25, 42);
  auto other = random_skip_mask(100, active, 0.25, 43);
  bool same = true, differs = false;
  for (std::size_t i = 0; i < 100; ++i) {
    same = same && (mask[i] == again[i]);
    differs = differs || (mask[i] != other[i]);
  }
  CHECK(same);
  CHECK(differs);

  // Rounding: 0.5 of 3 active -> round(1.5) = 2.
  auto r = random_skip_mask(4, {0, 1, 2}, 0.5, 7);
  CHECK(r[3]);  // inactive marked skipped
  CHECK(r.count() == 3);  // 2 active skips + 1 inactive
}

TEST_CASE("random mask is uniform over tokens") {
  // Token 0 of 4 should be skipped in ~1/4 of trials at f=0.25.
  int hits = 0;
  const int trials = 10000;
  std::vector<int> active{0, 1, 2, 3};
  for (int t = 0; t < trials; ++t) {
    auto mask = random_skip_mask(4, active, 0.25, static_cast<std::uint64_t>(t));
    if (mask[0]) ++hits;
  }
  CHECK(hits > 2500 - 150);
  CHECK(hits < 2500 + 150);
}

TEST_CASE("random mask validates the fraction") {
  CHECK_THROWS_AS(random_skip_mask(4, {0, 1}, -0.1, 0), std::invalid_argument);
  CHECK_THROWS_AS(random_skip_mask(4, {0, 1}, 1.5, 0), std::invalid_argument);
}

}  // TEST_SUITE
