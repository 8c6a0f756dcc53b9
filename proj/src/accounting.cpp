#include "resgate/accounting.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace resgate {

std::int64_t module_flops(CostKind kind, int hidden, int ff_dim, int s_ctx) {
  if (hidden < 1) throw std::invalid_argument("module_flops: hidden < 1");
  const std::int64_t h = hidden;
  switch (kind) {
    case CostKind::Attention:
      if (s_ctx < 1) throw std::invalid_argument("module_flops: s_ctx < 1");
      return 8 * h * h + 4 * h * std::int64_t{s_ctx};
    case CostKind::Mlp:
      if (ff_dim < 1) throw std::invalid_argument("module_flops: ff_dim < 1");
      return 4 * h * std::int64_t{ff_dim};
    case CostKind::GateLinearVector:
      return 2 * h * h;
    case CostKind::GateLinearScalar:
      return 2 * h;
    case CostKind::GateTwoLayer:
      return 8 * h * h;
  }
  throw std::invalid_argument("module_flops: unknown kind");
}

CostKind gate_cost_kind(const GateConfig& config) {
  if (config.arch == GateArch::TwoLayer) return CostKind::GateTwoLayer;
  return config.shape == GateShape::Vector ? CostKind::GateLinearVector
                                           : CostKind::GateLinearScalar;
}

FlopReport flop_report(const std::vector<ModuleRecord>& records,
                       const ModelConfig& config,
                       std::int64_t head_positions) {
  const int h = config.hidden;
  const CostKind gate_kind = gate_cost_kind(config.gate);
  const std::int64_t gate_cost = module_flops(gate_kind, h, config.ff_dim, 1);

  FlopReport report;
  report.per_layer.assign(static_cast<std::size_t>(config.n_layers), {});

  for (const auto& rec : records) {
    if (rec.layer < 0 || rec.layer >= config.n_layers) {
      throw std::invalid_argument("flop_report: record layer " +
                                  std::to_string(rec.layer) +
                                  " outside model of " +
                                  std::to_string(config.n_layers) + " layers");
    }
    if (rec.skipped.size() != rec.ctx_len.size()) {
      throw std::invalid_argument(
          "flop_report: skipped/ctx_len length mismatch at layer " +
          std::to_string(rec.layer));
    }
    const bool eligible =
        skip_eligible(config.gate.granularity, rec.layer, rec.kind);
    const CostKind kind = rec.kind == ModuleKind::Attention
                              ? CostKind::Attention
                              : CostKind::Mlp;
    auto& layer = report.per_layer[static_cast<std::size_t>(rec.layer)];
    for (std::size_t i = 0; i < rec.skipped.size(); ++i) {
      const std::int64_t cost =
          module_flops(kind, h, config.ff_dim, rec.ctx_len[i]);
      report.gate_flops += gate_cost;  // charged even for skipped tokens
      if (eligible) {
        layer.skippable += cost;
        report.skippable_flops += cost;
        if (rec.skipped[i]) {
          layer.skipped += cost;
          report.skipped_flops += cost;
        }
      } else {
        report.unskippable_flops += cost;
      }
    }
  }

  report.head_flops = 2 * std::int64_t{config.vocab} * h * head_positions;
  report.total_flops = report.skippable_flops + report.unskippable_flops +
                       report.gate_flops + report.head_flops;
  report.saved_fraction =
      report.skippable_flops > 0
          ? static_cast<double>(report.skipped_flops) /
                static_cast<double>(report.skippable_flops)
          : 0.0;
  return report;
}

std::string FlopReport::to_text() const {
  std::ostringstream os;
  os << "total_flops " << total_flops << "\n";
  os << "skippable_flops " << skippable_flops << "\n";
  os << "skipped_flops " << skipped_flops << "\n";
  os << "gate_flops " << gate_flops << "\n";
  os << "unskippable_flops " << unskippable_flops << "\n";
  os << "head_flops " << head_flops << "\n";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", saved_fraction);
  os << "saved_fraction " << buf << "\n";
  os << "layer skippable skipped\n";
  for (std::size_t l = 0; l < per_layer.size(); ++l) {
    os << l << " " << per_layer[l].skippable << " " << per_layer[l].skipped
       << "\n";
  }
  return os.str();
}

}  // namespace resgate
