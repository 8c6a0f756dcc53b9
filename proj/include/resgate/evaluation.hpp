#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "resgate/model.hpp"

namespace resgate {

// Held-out evaluation data: full sequences for teacher-forced metrics and
// prompt/completion pairs for the generative exact-match probe.
struct EvalDataset {
  struct Probe {
    std::vector<int> prompt;
    std::vector<int> completion;
  };
  std::vector<std::vector<int>> sequences;  // each >= 2 tokens
  std::vector<Probe> probes;

  void validate(int vocab, int max_seq) const;
};

// Deterministic windows over a token corpus: `n_sequences` evaluation windows
// of `seq_len` tokens plus `n_probes` prompt/completion splits.
EvalDataset make_eval_dataset(const std::vector<int>& corpus, int seq_len,
                              int n_sequences, int probe_prompt_len,
                              int probe_completion_len, int n_probes,
                              std::uint64_t seed);

struct SweepPoint {
  double requested_budget = 1.0;  // baselines: budget-equivalent 1 - fraction
  double realized_savings = 0.0;
  double accuracy = 0.0;    // teacher-forced next-token accuracy
  double perplexity = 1.0;  // exp(pooled mean CE)
  double exact_match = 0.0;
  bool baseline = false;  // true for random-skip companion points
};

// Teacher-forced metrics and probe exact-match under budgeted skipping at b̂,
// with realized savings taken from the FLOP accounting of the very forwards
// that produced the metrics.
SweepPoint eval_at_budget(const Model& model, const EvalDataset& dataset,
                          double budget);

// Same metrics with per-token random skipping at the given fraction.
SweepPoint eval_random(const Model& model, const EvalDataset& dataset,
                       double skip_fraction, std::uint64_t seed);

std::vector<SweepPoint> compare_random_baseline(
    const Model& model, const EvalDataset& dataset,
    const std::vector<double>& skip_fractions, std::uint64_t seed);

struct GridMetrics {
  double target = 0.0;  // realized-savings coordinate
  bool available = false;
  double accuracy = 0.0;
  double perplexity = 0.0;
  double exact_match = 0.0;
};

// Piecewise-linear interpolation of gate-ranked points in realized-savings
// coordinates. Duplicate abscissae are averaged first; targets outside the
// measured range come back unavailable, never extrapolated. Needs >= 2
// distinct abscissae.
std::vector<GridMetrics> interpolate_to_grid(
    const std::vector<SweepPoint>& points, const std::vector<double>& targets);

struct SweepReport {
  std::vector<SweepPoint> points;
  std::vector<SweepPoint> baseline_points;
  std::vector<GridMetrics> grid;

  std::string to_text() const;
  // requested_budget, realized_savings, accuracy, perplexity, exact_match,
  // baseline — gate-ranked points first, then baselines.
  std::string to_csv() const;
};

std::vector<double> default_budget_grid();   // {1.00 .. 0.75 step 0.05}
std::vector<double> default_savings_grid();  // {0.00 .. 0.25 step 0.05}

// Full protocol: evaluate every budget, optionally pair each with a random
// baseline at the matching skip fraction, interpolate onto the savings grid.
SweepReport run_sweep(const Model& model, const EvalDataset& dataset,
                      const std::vector<double>& budgets,
                      const std::vector<double>& savings_targets,
                      bool with_baseline, std::uint64_t seed);

}  // namespace resgate
