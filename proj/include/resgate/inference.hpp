#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "resgate/accounting.hpp"
#include "resgate/model.hpp"
#include "resgate/skipping.hpp"
#include "resgate/tokenizer.hpp"

namespace resgate {

// Per-layer key/value store. A skipped token's rows are bit-exact copies of
// the rows one layer below (layer 0 computes its rows from the pre-block
// stream instead, so the cache is defined everywhere).
struct KVCache {
  int n_layers = 0;
  int hidden = 0;
  int capacity = 0;
  int valid = 0;  // filled positions, equal across layers
  std::vector<std::vector<double>> keys;    // [L][capacity*H]
  std::vector<std::vector<double>> values;  // [L][capacity*H]

  KVCache(int n_layers_, int hidden_, int capacity_);
  double* key_row(int layer, int pos);
  double* value_row(int layer, int pos);
  const double* key_row(int layer, int pos) const;
  const double* value_row(int layer, int pos) const;
};

// keys[layer][token] <- keys[layer-1][token] (and likewise values), bit-exact.
void cache_copy_up(KVCache& cache, int layer, int token);

struct GenerationConfig {
  double budget = 1.0;
  int max_new_tokens = 64;
  bool greedy = true;
  double temperature = 1.0;
  int eos_id = kEosId;
  std::uint64_t seed = 0;
  int threshold_window = 256;
  SkipMode policy = SkipMode::Budget;  // None disables skipping entirely
  double random_fraction = 0.0;        // Random policy only

  void validate() const;
};

// One (layer, module, position) application during prefill or decode.
struct InferenceEvent {
  int layer = 0;
  ModuleKind kind = ModuleKind::Attention;
  int position = 0;
  int token_id = 0;
  double score = 0.0;
  bool skipped = false;
  int ctx_len = 0;  // attended keys including self
};

// Rolling per-module history of importance scores; the streaming analogue of
// ranking the whole active set, seeded by prefill and fed by each decode.
class ScoreWindows {
 public:
  ScoreWindows(int n_slots, int capacity);
  void push(int slot, double value);
  std::vector<double> snapshot(int slot) const;
  bool empty(int slot) const;

 private:
  int cap_;
  std::vector<std::deque<double>> slots_;
};

struct PrefillResult {
  std::vector<double> logits;  // [S×V] row-major, full sequence
  std::vector<InferenceEvent> events;
};

// Full-prompt forward under inference semantics: per-module quantile skip
// decisions over the prompt, cache populated with copy-up rows for skipped
// tokens, skipped hidden states passed through bit-exactly. When `windows`
// is given, every score is appended to its module's history. `forced_masks`
// (one per module slot) overrides the policy; used by tests.
PrefillResult prefill(const Model& model, const std::vector<int>& prompt,
                      const GenerationConfig& config, KVCache& cache,
                      ScoreWindows* windows = nullptr,
                      const std::vector<SkipMask>* forced_masks = nullptr);

// Single-token step at `position` (== cache.valid). The skip decision for
// each module compares the token's score against the quantile of that
// module's rolling history; the score is appended after deciding. Returns
// next-token logits [V]. `random_rng` drives the Random policy.
std::vector<double> decode_step(const Model& model, KVCache& cache,
                                ScoreWindows& windows, int token, int position,
                                const GenerationConfig& config,
                                std::vector<InferenceEvent>* events = nullptr,
                                Rng* random_rng = nullptr);

struct GenerateResult {
  std::vector<int> tokens;  // prompt + generated
  int prompt_len = 0;
  std::vector<InferenceEvent> events;
  FlopReport flops;
  double wall_seconds = 0.0;

  std::string to_text() const;
};

GenerateResult generate(const Model& model, const std::vector<int>& prompt,
                        const GenerationConfig& config);

// Groups events into per-(layer, module) records for FLOP accounting.
std::vector<ModuleRecord> to_module_records(
    const std::vector<InferenceEvent>& events, const ModelConfig& config);

}  // namespace resgate
