#include "resgate/skipping.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "resgate/rng.hpp"

namespace resgate {

namespace {
std::atomic<std::uint64_t> g_degenerate_ties{0};
}

void BudgetSchedule::validate() const {
  if (!(b2 > 0.0 && b2 <= b1 && b1 <= 1.0)) {
    throw std::invalid_argument("budget schedule requires 0 < b2 <= b1 <= 1");
  }
  if (total_steps < 1) {
    throw std::invalid_argument("budget schedule requires total_steps >= 1");
  }
}

std::size_t SkipMask::count() const {
  std::size_t n = 0;
  for (std::uint8_t s : skip) n += (s != 0);
  return n;
}

double quantile_threshold(const std::vector<double>& values, double q) {
  if (values.empty()) {
    throw std::invalid_argument("quantile_threshold: empty input");
  }
  if (q < 0.0 || q > 1.0) {
    throw std::invalid_argument("quantile_threshold: q outside [0,1]");
  }
  const std::size_t n = values.size();
  if (n == 1 ||
      std::all_of(values.begin(), values.end(),
                  [&](double v) { return v == values.front(); })) {
    return values.front();
  }
  std::vector<double> s(values);
  std::sort(s.begin(), s.end());
  const double pos = q * static_cast<double>(n - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  if (i + 1 >= n) return s.back();  // q == 1 lands exactly on the last knot
  const double alpha = pos - static_cast<double>(i);
  return (1.0 - alpha) * s[i] + alpha * s[i + 1];
}

double budget_at(const BudgetSchedule& schedule, int t) {
  schedule.validate();
  if (t < 1 || t > schedule.total_steps) {
    throw std::out_of_range("budget_at: step outside 1..total_steps");
  }
  if (schedule.total_steps == 1) return schedule.b1;
  const double frac = static_cast<double>(t - 1) /
                      static_cast<double>(schedule.total_steps - 1);
  return schedule.b1 - (schedule.b1 - schedule.b2) * frac;
}

SkipMask select_skips(const std::vector<double>& scores, double budget,
                      const std::vector<int>& active) {
  if (active.empty()) {
    throw std::invalid_argument("select_skips: empty active set");
  }
  if (!(budget > 0.0 && budget <= 1.0)) {
    throw std::invalid_argument("select_skips: budget outside (0,1]");
  }
  std::vector<double> active_scores;
  active_scores.reserve(active.size());
  for (int i : active) {
    if (i < 0 || static_cast<std::size_t>(i) >= scores.size()) {
      throw std::out_of_range("select_skips: active index outside scores");
    }
    active_scores.push_back(scores[static_cast<std::size_t>(i)]);
  }
  const bool all_equal =
      std::all_of(active_scores.begin(), active_scores.end(), [&](double v) {
        return v == active_scores.front();
      });
  if (all_equal && active_scores.size() > 1) {
    g_degenerate_ties.fetch_add(1, std::memory_order_relaxed);
  }
  const double tau = quantile_threshold(active_scores, 1.0 - budget);

  SkipMask mask;
  mask.skip.assign(scores.size(), 1);  // outside active: never processed
  for (int i : active) {
    mask.skip[static_cast<std::size_t>(i)] =
        scores[static_cast<std::size_t>(i)] <= tau ? 1 : 0;
  }
  return mask;
}

SkipMask select_skips(const std::vector<double>& scores, double budget) {
  std::vector<int> active(scores.size());
  std::iota(active.begin(), active.end(), 0);
  return select_skips(scores, budget, active);
}

SkipMask random_skip_mask(std::size_t n_tokens, const std::vector<int>& active,
                          double skip_fraction, std::uint64_t seed) {
  if (skip_fraction < 0.0 || skip_fraction > 1.0) {
    throw std::invalid_argument("random_skip_mask: fraction outside [0,1]");
  }
  SkipMask mask;
  mask.skip.assign(n_tokens, 1);  // outside active: never processed
  for (int i : active) {
    if (i < 0 || static_cast<std::size_t>(i) >= n_tokens) {
      throw std::out_of_range("random_skip_mask: active index outside range");
    }
    mask.skip[static_cast<std::size_t>(i)] = 0;
  }
  const auto n_active = active.size();
  const auto n_skip = static_cast<std::size_t>(
      std::llround(skip_fraction * static_cast<double>(n_active)));

  // Partial Fisher-Yates: the first n_skip entries of a shuffled copy.
  std::vector<int> pool(active);
  Rng rng(seed);
  for (std::size_t j = 0; j < n_skip && j + 1 < n_active; ++j) {
    const auto k =
        j + static_cast<std::size_t>(rng.uniform_int(
                static_cast<int>(n_active - j)));
    std::swap(pool[j], pool[k]);
  }
  for (std::size_t j = 0; j < n_skip; ++j) {
    mask.skip[static_cast<std::size_t>(pool[j])] = 1;
  }
  return mask;
}

std::uint64_t degenerate_tie_count() {
  return g_degenerate_ties.load(std::memory_order_relaxed);
}

void reset_degenerate_tie_count() {
  g_degenerate_ties.store(0, std::memory_order_relaxed);
}

}  // namespace resgate
