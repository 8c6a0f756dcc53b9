#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "resgate/skipping.hpp"
#include "resgate/tensor.hpp"

namespace resgate {

enum class GateShape { Scalar, Vector };
enum class GateSharing { Shared, PerModule };
enum class GatePlacement { Exit, Entry };
enum class GateArch { Linear, TwoLayer };
enum class SkipGranularity {
  All,
  AttentionOnly,
  MlpOnly,
  WholeLayerByAttnGate,
  EverySecondLayer,
};
enum class ModuleKind { Attention, Mlp };

std::string to_string(GateShape v);
std::string to_string(GateSharing v);
std::string to_string(GatePlacement v);
std::string to_string(GateArch v);
std::string to_string(SkipGranularity v);
std::string to_string(ModuleKind v);
GateShape gate_shape_from_string(const std::string& s);
GateSharing gate_sharing_from_string(const std::string& s);
GatePlacement gate_placement_from_string(const std::string& s);
GateArch gate_arch_from_string(const std::string& s);
SkipGranularity skip_granularity_from_string(const std::string& s);

struct GateConfig {
  GateShape shape = GateShape::Vector;
  GateSharing sharing = GateSharing::PerModule;
  GatePlacement placement = GatePlacement::Exit;
  GateArch arch = GateArch::Linear;
  SkipGranularity granularity = SkipGranularity::All;

  void validate() const;
};

struct ModelConfig {
  int n_layers = 4;
  int hidden = 64;
  int n_heads = 4;
  int ff_dim = 256;
  int vocab = 258;
  int max_seq = 256;
  GateConfig gate;

  void validate() const;
};

// Linear gates use w/b; two-layer gates use w1/b1/w2/b2 (hidden width 2H).
struct GateParams {
  Tensor w, b;
  Tensor w1, b1, w2, b2;
};

struct BlockParams {
  Tensor wq, wk, wv, wo;       // each [H×H]
  Tensor w_up;                 // [H_ff×H]
  Tensor w_down;               // [H×H_ff]
  Tensor norm_attn, norm_mlp;  // [H]
  // Under Shared sharing these alias the model-wide gate parameters.
  GateParams attn_gate, mlp_gate;
};

// Exact gate parameter count for a configuration: per-gate cost times the
// number of gate instances (2 shared, or 2 per layer).
std::int64_t gate_param_count(const GateConfig& config, int hidden,
                              int n_layers);

// Fresh gate parameters: weights ~ N(0, 0.01²), output biases 5 exactly
// (two-layer hidden biases 0), deterministic in the seed.
GateParams init_gates(const GateConfig& config, int hidden,
                      std::uint64_t seed);

// g = sigmoid(affine(h)); two-layer variants insert a tanh hidden layer.
// Returns [S×H] for vector gates, [S×1] for scalar gates.
Tensor gate_forward(const GateParams& params, GateArch arch, const Tensor& h);

// True when this (layer, module) honors skip decisions under the granularity.
bool skip_eligible(SkipGranularity granularity, int layer, ModuleKind kind);

enum class SkipMode { None, Budget, Fixed, Random };

// Deterministic per-module seed for the random-skipping baseline.
std::uint64_t module_seed(std::uint64_t base, int slot);

struct ForwardOptions {
  SkipMode mode = SkipMode::None;
  double budget = 1.0;
  // Fixed mode: one mask per module slot (layer*2 + kind), each of length S.
  const std::vector<SkipMask>* fixed_masks = nullptr;
  double random_fraction = 0.0;
  std::uint64_t random_seed = 0;
  bool ungated = false;  // bypass gates entirely (reference model)
};

struct ModuleTrace {
  int layer = 0;
  ModuleKind kind = ModuleKind::Attention;
  Tensor gate;                 // undefined when running ungated
  std::vector<double> scores;  // per-token mean gate value
  SkipMask mask;               // applied decisions, length S
};

struct ForwardResult {
  Tensor logits;  // [S×V]
  std::vector<ModuleTrace> modules;
};

// Skip decision for one (layer, module) under the configured granularity and
// the requested mode. `attn_mask` is the same layer's attention decision,
// consulted when the attention gate drives the whole layer. Shared by the
// training forward and the cached inference path.
SkipMask decide_skip_mask(const ModelConfig& config,
                          const ForwardOptions& options, int layer,
                          ModuleKind kind, const std::vector<double>& scores,
                          std::size_t seq_len, const SkipMask& attn_mask);

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  // Unique trainable tensors in serialization order (shared gates once).
  const std::vector<std::pair<std::string, Tensor>>& named_parameters() const {
    return named_params_;
  }
  std::vector<Tensor> parameters() const;
  std::int64_t param_count() const;
  std::int64_t backbone_param_count() const;

  const BlockParams& block(int layer) const {
    return blocks_[static_cast<std::size_t>(layer)];
  }
  const Tensor& token_embedding() const { return tok_emb_; }
  const Tensor& position_embedding() const { return pos_emb_; }
  const Tensor& final_norm() const { return final_norm_; }
  const Tensor& lm_head() const { return head_; }

  // Full-sequence forward with gating and (optionally) skip decisions made
  // layer by layer from the gate scores. Training semantics: every module
  // output is computed from the current residual stream; a skipped token
  // merely keeps its stream unchanged (no branch add, no branch gradient).
  ForwardResult forward(const std::vector<int>& tokens,
                        const ForwardOptions& options) const;

 private:
  ModelConfig cfg_;
  Tensor tok_emb_;   // [V×H]
  Tensor pos_emb_;   // [max_seq×H]
  std::vector<BlockParams> blocks_;
  Tensor final_norm_;  // [H]
  Tensor head_;        // [V×H]
  std::vector<std::pair<std::string, Tensor>> named_params_;
};

}  // namespace resgate
