#include "resgate/model.hpp"

#include <numeric>
#include <stdexcept>

namespace resgate {

std::string to_string(GateShape v) {
  return v == GateShape::Scalar ? "scalar" : "vector";
}
std::string to_string(GateSharing v) {
  return v == GateSharing::Shared ? "shared" : "per-module";
}
std::string to_string(GatePlacement v) {
  return v == GatePlacement::Exit ? "exit" : "entry";
}
std::string to_string(GateArch v) {
  return v == GateArch::Linear ? "linear" : "two-layer";
}
std::string to_string(SkipGranularity v) {
  switch (v) {
    case SkipGranularity::All: return "all";
    case SkipGranularity::AttentionOnly: return "attention-only";
    case SkipGranularity::MlpOnly: return "mlp-only";
    case SkipGranularity::WholeLayerByAttnGate:
      return "whole-layer-by-attn-gate";
    case SkipGranularity::EverySecondLayer: return "every-second-layer";
  }
  return "?";
}
std::string to_string(ModuleKind v) {
  return v == ModuleKind::Attention ? "attention" : "mlp";
}

namespace {
[[noreturn]] void bad_enum(const char* field, const std::string& got,
                           const char* options) {
  throw std::invalid_argument(std::string(field) + ": unknown value '" + got +
                              "' (expected one of: " + options + ")");
}
}  // namespace

GateShape gate_shape_from_string(const std::string& s) {
  if (s == "scalar") return GateShape::Scalar;
  if (s == "vector") return GateShape::Vector;
  bad_enum("gate shape", s, "scalar, vector");
}
GateSharing gate_sharing_from_string(const std::string& s) {
  if (s == "shared") return GateSharing::Shared;
  if (s == "per-module") return GateSharing::PerModule;
  bad_enum("gate sharing", s, "shared, per-module");
}
GatePlacement gate_placement_from_string(const std::string& s) {
  if (s == "exit") return GatePlacement::Exit;
  if (s == "entry") return GatePlacement::Entry;
  bad_enum("gate placement", s, "exit, entry");
}
GateArch gate_arch_from_string(const std::string& s) {
  if (s == "linear") return GateArch::Linear;
  if (s == "two-layer") return GateArch::TwoLayer;
  bad_enum("gate arch", s, "linear, two-layer");
}
SkipGranularity skip_granularity_from_string(const std::string& s) {
  if (s == "all") return SkipGranularity::All;
  if (s == "attention-only") return SkipGranularity::AttentionOnly;
  if (s == "mlp-only") return SkipGranularity::MlpOnly;
  if (s == "whole-layer-by-attn-gate")
    return SkipGranularity::WholeLayerByAttnGate;
  if (s == "every-second-layer") return SkipGranularity::EverySecondLayer;
  bad_enum("skip granularity", s,
           "all, attention-only, mlp-only, whole-layer-by-attn-gate, "
           "every-second-layer");
}

void GateConfig::validate() const {
  if (arch == GateArch::TwoLayer && shape != GateShape::Vector) {
    throw std::invalid_argument(
        "gate config: two-layer gates are defined for vector output only");
  }
}

void ModelConfig::validate() const {
  if (n_layers < 1) throw std::invalid_argument("model config: n_layers < 1");
  if (n_heads < 1) throw std::invalid_argument("model config: n_heads < 1");
  if (hidden < n_heads || hidden % n_heads != 0) {
    throw std::invalid_argument(
        "model config: hidden must be a positive multiple of n_heads");
  }
  if (ff_dim < 1) throw std::invalid_argument("model config: ff_dim < 1");
  if (vocab < 1) throw std::invalid_argument("model config: vocab < 1");
  if (max_seq < 1) throw std::invalid_argument("model config: max_seq < 1");
  gate.validate();
}

std::int64_t gate_param_count(const GateConfig& config, int hidden,
                              int n_layers) {
  config.validate();
  if (hidden < 1 || n_layers < 1) {
    throw std::invalid_argument("gate_param_count: hidden and n_layers must be >= 1");
  }
  const std::int64_t h = hidden;
  std::int64_t per_gate;
  if (config.arch == GateArch::TwoLayer) {
    per_gate = 4 * h * h + 3 * h;  // W1 2H×H + b1 2H + W2 H×2H + b2 H
  } else if (config.shape == GateShape::Vector) {
    per_gate = h * h + h;
  } else {
    per_gate = h + 1;
  }
  const std::int64_t n_gates =
      config.sharing == GateSharing::Shared ? 2 : 2 * std::int64_t{n_layers};
  return per_gate * n_gates;
}

GateParams init_gates(const GateConfig& config, int hidden,
                      std::uint64_t seed) {
  config.validate();
  constexpr double kWeightStd = 0.01;
  constexpr double kOutputBias = 5.0;
  Rng rng(seed);
  GateParams p;
  if (config.arch == GateArch::TwoLayer) {
    p.w1 = Tensor::randn({2 * hidden, hidden}, rng, kWeightStd, true);
    p.b1 = Tensor::zeros({2 * hidden}, true);
    p.w2 = Tensor::randn({hidden, 2 * hidden}, rng, kWeightStd, true);
    p.b2 = Tensor::full({hidden}, kOutputBias, true);
  } else {
    const int out = config.shape == GateShape::Vector ? hidden : 1;
    p.w = Tensor::randn({out, hidden}, rng, kWeightStd, true);
    p.b = Tensor::full({out}, kOutputBias, true);
  }
  return p;
}

Tensor gate_forward(const GateParams& params, GateArch arch, const Tensor& h) {
  if (arch == GateArch::TwoLayer) {
    Tensor hid = tanh_act(add_rowvec(linear(h, params.w1), params.b1));
    return sigmoid(add_rowvec(linear(hid, params.w2), params.b2));
  }
  return sigmoid(add_rowvec(linear(h, params.w), params.b));
}

bool skip_eligible(SkipGranularity granularity, int layer, ModuleKind kind) {
  switch (granularity) {
    case SkipGranularity::All: return true;
    case SkipGranularity::AttentionOnly: return kind == ModuleKind::Attention;
    case SkipGranularity::MlpOnly: return kind == ModuleKind::Mlp;
    case SkipGranularity::WholeLayerByAttnGate: return true;
    case SkipGranularity::EverySecondLayer: return layer % 2 == 1;
  }
  return false;
}

namespace {

// Mean over the gate's output width; for scalar gates this is the value.
std::vector<double> mean_scores(const Tensor& gate) {
  const auto& shape = gate.shape();
  const int cols = shape.back();
  const int rows = static_cast<int>(gate.numel()) / cols;
  std::vector<double> scores(static_cast<std::size_t>(rows));
  for (int i = 0; i < rows; ++i) {
    double acc = 0.0;
    for (int j = 0; j < cols; ++j)
      acc += gate.data()[static_cast<std::size_t>(i) * cols + j];
    scores[static_cast<std::size_t>(i)] = acc / cols;
  }
  return scores;
}

Tensor apply_gate(const Tensor& x, const Tensor& g, GateShape shape) {
  if (shape == GateShape::Vector) return mul(x, g);
  return scale_rows(x, g);
}

SkipMask all_false_mask(std::size_t n) {
  SkipMask m;
  m.skip.assign(n, 0);
  return m;
}

}  // namespace

std::uint64_t module_seed(std::uint64_t base, int slot) {
  return base + static_cast<std::uint64_t>(slot + 1) * 0x9E3779B97F4A7C15ULL;
}

Model::Model(ModelConfig config, std::uint64_t seed) : cfg_(std::move(config)) {
  cfg_.validate();
  constexpr double kBackboneStd = 0.02;
  const int h = cfg_.hidden, ff = cfg_.ff_dim;
  Rng rng(seed);

  tok_emb_ = Tensor::randn({cfg_.vocab, h}, rng, kBackboneStd, true);
  pos_emb_ = Tensor::randn({cfg_.max_seq, h}, rng, kBackboneStd, true);
  named_params_.emplace_back("tok_emb", tok_emb_);
  named_params_.emplace_back("pos_emb", pos_emb_);

  const bool shared = cfg_.gate.sharing == GateSharing::Shared;
  GateParams shared_attn, shared_mlp;
  if (shared) {
    shared_attn = init_gates(cfg_.gate, h, module_seed(seed, -2));
    shared_mlp = init_gates(cfg_.gate, h, module_seed(seed, -1));
  }

  blocks_.resize(static_cast<std::size_t>(cfg_.n_layers));
  for (int l = 0; l < cfg_.n_layers; ++l) {
    BlockParams& blk = blocks_[static_cast<std::size_t>(l)];
    blk.wq = Tensor::randn({h, h}, rng, kBackboneStd, true);
    blk.wk = Tensor::randn({h, h}, rng, kBackboneStd, true);
    blk.wv = Tensor::randn({h, h}, rng, kBackboneStd, true);
    blk.wo = Tensor::randn({h, h}, rng, kBackboneStd, true);
    blk.w_up = Tensor::randn({ff, h}, rng, kBackboneStd, true);
    blk.w_down = Tensor::randn({h, ff}, rng, kBackboneStd, true);
    blk.norm_attn = Tensor::full({h}, 1.0, true);
    blk.norm_mlp = Tensor::full({h}, 1.0, true);
    const std::string prefix = "layers." + std::to_string(l) + ".";
    named_params_.emplace_back(prefix + "wq", blk.wq);
    named_params_.emplace_back(prefix + "wk", blk.wk);
    named_params_.emplace_back(prefix + "wv", blk.wv);
    named_params_.emplace_back(prefix + "wo", blk.wo);
    named_params_.emplace_back(prefix + "w_up", blk.w_up);
    named_params_.emplace_back(prefix + "w_down", blk.w_down);
    named_params_.emplace_back(prefix + "norm_attn", blk.norm_attn);
    named_params_.emplace_back(prefix + "norm_mlp", blk.norm_mlp);

    if (shared) {
      blk.attn_gate = shared_attn;
      blk.mlp_gate = shared_mlp;
    } else {
      blk.attn_gate = init_gates(cfg_.gate, h, module_seed(seed, 2 * l));
      blk.mlp_gate = init_gates(cfg_.gate, h, module_seed(seed, 2 * l + 1));
    }
  }

  // Gate parameters serialize after the blocks; shared gates appear once.
  auto push_gate = [this](const std::string& prefix, const GateParams& g) {
    if (cfg_.gate.arch == GateArch::TwoLayer) {
      named_params_.emplace_back(prefix + ".w1", g.w1);
      named_params_.emplace_back(prefix + ".b1", g.b1);
      named_params_.emplace_back(prefix + ".w2", g.w2);
      named_params_.emplace_back(prefix + ".b2", g.b2);
    } else {
      named_params_.emplace_back(prefix + ".w", g.w);
      named_params_.emplace_back(prefix + ".b", g.b);
    }
  };
  if (shared) {
    push_gate("shared.gate_attn", shared_attn);
    push_gate("shared.gate_mlp", shared_mlp);
  } else {
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const std::string prefix = "layers." + std::to_string(l);
      push_gate(prefix + ".gate_attn", blocks_[static_cast<std::size_t>(l)].attn_gate);
      push_gate(prefix + ".gate_mlp", blocks_[static_cast<std::size_t>(l)].mlp_gate);
    }
  }

  final_norm_ = Tensor::full({h}, 1.0, true);
  head_ = Tensor::randn({cfg_.vocab, h}, rng, kBackboneStd, true);
  named_params_.emplace_back("final_norm", final_norm_);
  named_params_.emplace_back("head", head_);
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  out.reserve(named_params_.size());
  for (const auto& [name, t] : named_params_) out.push_back(t);
  return out;
}

std::int64_t Model::param_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : named_params_)
    n += static_cast<std::int64_t>(t.numel());
  return n;
}

std::int64_t Model::backbone_param_count() const {
  return param_count() - gate_param_count(cfg_.gate, cfg_.hidden, cfg_.n_layers);
}

SkipMask decide_skip_mask(const ModelConfig& config,
                          const ForwardOptions& options, int layer,
                          ModuleKind kind, const std::vector<double>& scores,
                          std::size_t seq_len, const SkipMask& attn_mask) {
  const SkipGranularity gran = config.gate.granularity;
  switch (options.mode) {
    case SkipMode::None:
      return all_false_mask(seq_len);
    case SkipMode::Fixed: {
      if (options.fixed_masks == nullptr) {
        throw std::invalid_argument("forward: fixed skip mode without masks");
      }
      const std::size_t slot = static_cast<std::size_t>(layer) * 2 +
                               (kind == ModuleKind::Mlp ? 1 : 0);
      if (slot >= options.fixed_masks->size() ||
          (*options.fixed_masks)[slot].size() != seq_len) {
        throw std::invalid_argument(
            "forward: fixed mask missing or mis-sized for layer " +
            std::to_string(layer) + " " + to_string(kind));
      }
      return (*options.fixed_masks)[slot];
    }
    case SkipMode::Budget: {
      if (!skip_eligible(gran, layer, kind)) return all_false_mask(seq_len);
      if (gran == SkipGranularity::WholeLayerByAttnGate &&
          kind == ModuleKind::Mlp) {
        return attn_mask;  // the attention gate's decision drives the layer
      }
      return select_skips(scores, options.budget);
    }
    case SkipMode::Random: {
      if (!skip_eligible(gran, layer, kind)) return all_false_mask(seq_len);
      if (gran == SkipGranularity::WholeLayerByAttnGate &&
          kind == ModuleKind::Mlp) {
        return attn_mask;
      }
      std::vector<int> active(seq_len);
      std::iota(active.begin(), active.end(), 0);
      const int slot = layer * 2 + (kind == ModuleKind::Mlp ? 1 : 0);
      return random_skip_mask(seq_len, active, options.random_fraction,
                              module_seed(options.random_seed, slot));
    }
  }
  return all_false_mask(seq_len);
}

ForwardResult Model::forward(const std::vector<int>& tokens,
                             const ForwardOptions& options) const {
  if (tokens.empty()) throw std::invalid_argument("forward: empty input");
  if (static_cast<int>(tokens.size()) > cfg_.max_seq) {
    throw std::invalid_argument(
        "forward: sequence of " + std::to_string(tokens.size()) +
        " tokens exceeds max_seq " + std::to_string(cfg_.max_seq));
  }
  const auto s = tokens.size();
  std::vector<int> positions(s);
  std::iota(positions.begin(), positions.end(), 0);

  ForwardResult result;
  Tensor h = add(embedding(tok_emb_, tokens), embedding(pos_emb_, positions));

  for (int l = 0; l < cfg_.n_layers; ++l) {
    const BlockParams& blk = blocks_[static_cast<std::size_t>(l)];
    SkipMask layer_attn_mask;
    for (ModuleKind kind : {ModuleKind::Attention, ModuleKind::Mlp}) {
      const bool is_attn = kind == ModuleKind::Attention;
      const GateParams& gp = is_attn ? blk.attn_gate : blk.mlp_gate;

      ModuleTrace trace;
      trace.layer = l;
      trace.kind = kind;
      if (!options.ungated) {
        // The gate reads the raw residual stream, and is evaluated for every
        // token: the skip decision itself needs the score.
        trace.gate = gate_forward(gp, cfg_.gate.arch, h);
        trace.scores = mean_scores(trace.gate);
      }
      trace.mask = options.ungated
                       ? all_false_mask(s)
                       : decide_skip_mask(cfg_, options, l, kind, trace.scores,
                                          s, layer_attn_mask);
      if (is_attn) layer_attn_mask = trace.mask;

      Tensor normed = rmsnorm(h, is_attn ? blk.norm_attn : blk.norm_mlp);
      Tensor x = normed;
      if (!options.ungated && cfg_.gate.placement == GatePlacement::Entry) {
        x = apply_gate(normed, trace.gate, cfg_.gate.shape);
      }
      Tensor o;
      if (is_attn) {
        Tensor q = linear(x, blk.wq);
        Tensor k = linear(x, blk.wk);
        Tensor v = linear(x, blk.wv);
        o = linear(causal_attention(q, k, v, cfg_.n_heads), blk.wo);
      } else {
        o = linear(gelu(linear(x, blk.w_up)), blk.w_down);
      }
      Tensor branch = o;
      if (!options.ungated && cfg_.gate.placement == GatePlacement::Exit) {
        branch = apply_gate(o, trace.gate, cfg_.gate.shape);
      }

      std::vector<std::uint8_t> keep(s);
      for (std::size_t i = 0; i < s; ++i) keep[i] = trace.mask[i] ? 0 : 1;
      h = masked_residual_add(h, branch, keep);

      if (!options.ungated) result.modules.push_back(std::move(trace));
    }
  }

  result.logits = linear(rmsnorm(h, final_norm_), head_);
  return result;
}

}  // namespace resgate
