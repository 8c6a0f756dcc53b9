#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "resgate/model.hpp"

namespace resgate {

enum class CostKind {
  Attention,
  Mlp,
  GateLinearVector,
  GateLinearScalar,
  GateTwoLayer,
};

// Per-token FLOP cost of one module application, counting 2·m·n per m×n
// matrix-vector product. Attention depends on the token's context length
// (number of attended keys); everything else is context-free.
std::int64_t module_flops(CostKind kind, int hidden, int ff_dim, int s_ctx);

CostKind gate_cost_kind(const GateConfig& config);

// What one forward pass did to one (layer, module) over a token span.
struct ModuleRecord {
  int layer = 0;
  ModuleKind kind = ModuleKind::Attention;
  std::vector<std::uint8_t> skipped;  // per token
  std::vector<int> ctx_len;           // per token (attended keys incl. self)
};

struct LayerFlops {
  std::int64_t skippable = 0;
  std::int64_t skipped = 0;
};

struct FlopReport {
  std::int64_t total_flops = 0;        // all module + gate + head cost
  std::int64_t skippable_flops = 0;    // denominator of saved_fraction
  std::int64_t skipped_flops = 0;
  std::int64_t gate_flops = 0;         // fixed overhead, charged per token
  std::int64_t unskippable_flops = 0;  // modules ineligible under granularity
  std::int64_t head_flops = 0;         // LM head, fixed overhead
  double saved_fraction = 0.0;         // skipped / skippable
  std::vector<LayerFlops> per_layer;

  std::string to_text() const;
};

// Aggregates module records into a report. The denominator counts only
// skip-eligible module cost; gates (always evaluated), granularity-ineligible
// modules, and the LM head are reported as overhead buckets so that a budget
// b maps to saved_fraction ≈ 1−b directly. Embedding lookups cost 0 FLOPs by
// convention. head_positions = token count run through the LM head.
FlopReport flop_report(const std::vector<ModuleRecord>& records,
                       const ModelConfig& config, std::int64_t head_positions);

}  // namespace resgate
