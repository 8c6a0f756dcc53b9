#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "resgate/inference.hpp"
#include "resgate/model.hpp"

namespace resgate {

struct TraceEntry {
  int layer = 0;
  ModuleKind kind = ModuleKind::Attention;
  int position = 0;
  int token_id = 0;
  double score = 0.0;  // per-token mean gate value, in (0,1)
  bool skipped = false;
};

// Every module's per-token mean gate value from one forward pass, plus the
// skip decisions that were applied.
struct GateTrace {
  std::vector<int> tokens;
  double budget = 1.0;
  std::vector<TraceEntry> entries;  // 2·L·S, layer-major, attention first
};

// One inference-semantics forward at the given budget, recording every
// (layer, module, position) score and decision.
GateTrace record_trace(const Model& model, const std::vector<int>& tokens,
                       double budget);

std::string trace_csv(const GateTrace& trace);
GateTrace trace_from_csv(const std::string& text);

struct Heatmap {
  int n_layers = 0;
  std::vector<int> tokens;     // column order = token order
  std::vector<double> values;  // [L×S] row-major, row = layer
};

Heatmap heatmap_matrix(const GateTrace& trace, ModuleKind kind);
// First column is the layer index; remaining column headers are the token
// labels in sequence order.
std::string heatmap_csv(const Heatmap& hm);
Heatmap heatmap_from_csv(const std::string& text);

// Per-token-id running mean of gate activations, averaged across layers,
// positions, and traces.
class VocabStats {
 public:
  struct Entry {
    int id = 0;
    double mean = 0.0;
    std::int64_t count = 0;
  };

  void add(int token_id, double activation);
  void add_trace(const GateTrace& trace, bool include_attention = true,
                 bool include_mlp = true);
  void merge(const VocabStats& other);
  std::vector<Entry> entries() const;  // populated ids, ascending
  std::int64_t total_count() const;

 private:
  std::map<int, Entry> acc_;
};

struct VocabTopK {
  std::vector<VocabStats::Entry> ranked;  // mean descending, ties id ascending
  double rank1_margin = 0.0;              // mean gap to rank 2 (0 if single)
};

VocabTopK vocab_topk(const VocabStats& stats, int k);
std::string vocab_csv(const VocabStats& stats);

struct DistributionSummary {
  int layer = 0;
  ModuleKind kind = ModuleKind::Attention;
  std::int64_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population
  double min = 0.0;
  double max = 0.0;
  // 0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99 — same interpolation rule as the
  // skip-threshold quantile.
  std::array<double, 7> quantiles{};
  std::array<std::int64_t, 256> histogram{};  // fixed bins over [0,1]
};

// Pools scores for one (layer, module) across all traces; needs >= 2 samples.
DistributionSummary distribution_stats(const std::vector<GateTrace>& traces,
                                       int layer, ModuleKind kind);

// One row per layer×module present in the traces.
std::string distribution_csv(const std::vector<DistributionSummary>& rows);

}  // namespace resgate
