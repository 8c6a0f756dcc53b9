#pragma once

#include <cstdint>
#include <vector>

namespace resgate {

// Linear budget decay from b1 (step 1) to b2 (step T_total).
struct BudgetSchedule {
  double b1 = 1.0;
  double b2 = 0.8;
  int total_steps = 1;

  void validate() const;
};

// Per-token skip decisions for one (layer, sub-module) pair.
// skip[i] == true means token i's module application is skipped.
struct SkipMask {
  std::vector<std::uint8_t> skip;

  std::size_t size() const { return skip.size(); }
  bool operator[](std::size_t i) const { return skip[i] != 0; }
  std::size_t count() const;
};

// Exact quantile with linear interpolation between adjacent order
// statistics. Single-element or all-equal inputs return the first value.
// Throws std::invalid_argument on an empty input.
double quantile_threshold(const std::vector<double>& values, double q);

// Budget at 1-based step t: b1 - (b1-b2)*(t-1)/(T-1); a one-step schedule
// stays at b1. Throws std::out_of_range when t is outside 1..total_steps.
double budget_at(const BudgetSchedule& schedule, int t);

// Threshold the active tokens' scores at the (1-b) quantile and skip every
// active token whose score is <= tau. Tokens outside `active` are marked
// skipped as well: they are never processed. When all active scores are
// equal the threshold equals that value and every active token is skipped;
// each such event increments the degenerate-tie counter.
SkipMask select_skips(const std::vector<double>& scores, double budget,
                      const std::vector<int>& active);

// Convenience overload: every token active.
SkipMask select_skips(const std::vector<double>& scores, double budget);

// Uniform random baseline: exactly round(skip_fraction * |active|) active
// tokens skipped, chosen without replacement; deterministic given the seed.
SkipMask random_skip_mask(std::size_t n_tokens, const std::vector<int>& active,
                          double skip_fraction, std::uint64_t seed);

// Number of select_skips calls that hit the all-scores-equal branch since
// process start (or the last reset). Diagnostic only.
std::uint64_t degenerate_tie_count();
void reset_degenerate_tie_count();

}  // namespace resgate
