#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "resgate/model.hpp"
#include "resgate/skipping.hpp"
#include "resgate/tensor.hpp"

namespace resgate {

struct TrainConfig {
  double lambda_sparsity = 0.1;
  BudgetSchedule schedule{1.0, 0.8, 2000};
  double peak_lr = 3e-3;
  int warmup_steps = 1000;
  int total_steps = 2000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.001;
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 0;
  int batch_size = 8;
  int seq_len = 64;
  int checkpoint_every = 0;  // 0 = final checkpoint only
  int log_every = 1;

  void validate() const;
};

// Linear 0 -> peak over the warmup, then a half cosine from peak back to 0.
double cosine_lr(int t, int warmup, int total, double peak);

// Plain mean of every gate activation this step, as a graph scalar so its
// gradient flows back into the gate parameters.
Tensor sparsity_loss(const std::vector<Tensor>& gate_activations);

// ce + lambda * sparsity, as a graph scalar.
Tensor total_loss(const Tensor& ce, const Tensor& sparsity, double lambda);

// Scales all gradients so the global L2 norm is at most max_norm; returns the
// pre-clip norm.
double clip_gradients(const std::vector<Tensor>& params, double max_norm);

// Decoupled AdamW: weight decay multiplies the parameter before the
// bias-corrected moment update is applied.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, double beta1, double beta2, double eps,
        double weight_decay);

  void zero_grad();
  void step(double lr);
  int step_count() const { return t_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_, weight_decay_;
  int t_ = 0;
};

// One optimizer step's worth of data: `tokens[b][i]` predicts `targets[b][i]`;
// positions with mask 0 are excluded from the loss.
struct Batch {
  std::vector<std::vector<int>> tokens;
  std::vector<std::vector<int>> targets;
  std::vector<std::vector<std::uint8_t>> loss_mask;

  void validate(int vocab) const;
};

// Uniformly samples fixed-length next-token windows from a byte corpus.
class CorpusSampler {
 public:
  CorpusSampler(std::vector<int> corpus, std::uint64_t seed);
  Batch sample(int batch_size, int seq_len);
  std::size_t size() const { return corpus_.size(); }

 private:
  std::vector<int> corpus_;
  Rng rng_;
};

struct TrainStepResult {
  int step = 0;
  double budget = 0.0;
  double lr = 0.0;
  double ce = 0.0;
  double sparsity = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;
  std::vector<double> skip_fraction;  // per layer, both modules pooled
};

class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(const std::string& what)
      : std::runtime_error(what) {}
};

// Budgeted forward over the batch, pooled cross-entropy over unmasked
// targets plus the weighted sparsity penalty, backward, global-norm clip,
// AdamW update at the cosine-warmup rate for step t (1-based).
TrainStepResult train_step(Model& model, AdamW& opt, const Batch& batch, int t,
                           const TrainConfig& config);

// One deterministic log line for a step result.
std::string format_step_log(const TrainStepResult& r);

class Trainer {
 public:
  Trainer(Model& model, TrainConfig config);

  // Runs steps 1..total_steps. Each step's log line goes to `log` (when
  // non-null, every log_every steps); `checkpoint_hook(step)` fires every
  // checkpoint_every steps and after the final step.
  std::vector<TrainStepResult> fit(
      CorpusSampler& sampler, std::ostream* log = nullptr,
      const std::function<void(int)>& checkpoint_hook = {});

  AdamW& optimizer() { return opt_; }

 private:
  Model& model_;
  TrainConfig cfg_;
  AdamW opt_;
};

}  // namespace resgate
