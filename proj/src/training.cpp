#include "resgate/training.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace resgate {

void TrainConfig::validate() const {
  schedule.validate();
  if (lambda_sparsity < 0.0) {
    throw std::invalid_argument("train config: sparsity weight must be >= 0");
  }
  if (warmup_steps < 0 || warmup_steps > total_steps) {
    throw std::invalid_argument(
        "train config: warmup steps must lie in [0, total_steps]");
  }
  if (total_steps < 1) {
    throw std::invalid_argument("train config: total_steps must be >= 1");
  }
  if (schedule.total_steps != total_steps) {
    throw std::invalid_argument(
        "train config: budget schedule length must equal total_steps");
  }
  if (!(peak_lr > 0.0)) {
    throw std::invalid_argument("train config: peak_lr must be > 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("train config: betas must lie in [0,1)");
  }
  if (!(eps > 0.0)) {
    throw std::invalid_argument("train config: eps must be > 0");
  }
  if (weight_decay < 0.0) {
    throw std::invalid_argument("train config: weight decay must be >= 0");
  }
  if (!(grad_clip_norm > 0.0)) {
    throw std::invalid_argument("train config: grad clip norm must be > 0");
  }
  if (batch_size < 1 || seq_len < 1) {
    throw std::invalid_argument("train config: batch size and seq len >= 1");
  }
  if (checkpoint_every < 0 || log_every < 1) {
    throw std::invalid_argument("train config: bad checkpoint/log interval");
  }
}

double cosine_lr(int t, int warmup, int total, double peak) {
  if (t < 0 || t > total) {
    throw std::invalid_argument("cosine_lr: step outside [0, total]");
  }
  if (warmup > 0 && t < warmup) {
    return peak * static_cast<double>(t) / static_cast<double>(warmup);
  }
  if (total == warmup) return peak;
  const double frac =
      static_cast<double>(t - warmup) / static_cast<double>(total - warmup);
  return peak * 0.5 * (1.0 + std::cos(M_PI * frac));
}

Tensor sparsity_loss(const std::vector<Tensor>& gate_activations) {
  if (gate_activations.empty()) {
    throw std::invalid_argument("sparsity_loss: no gate activations recorded");
  }
  std::size_t n = 0;
  Tensor total;
  for (const Tensor& g : gate_activations) {
    n += g.numel();
    Tensor s = sum_all(g);
    total = total.defined() ? add(total, s) : s;
  }
  return scale(total, 1.0 / static_cast<double>(n));
}

Tensor total_loss(const Tensor& ce, const Tensor& sparsity, double lambda) {
  return add(ce, scale(sparsity, lambda));
}

double clip_gradients(const std::vector<Tensor>& params, double max_norm) {
  if (!(max_norm > 0.0)) {
    throw std::invalid_argument("clip_gradients: max_norm must be > 0");
  }
  double sq = 0.0;
  for (const Tensor& p : params) {
    if (p.grad().empty()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (const Tensor& p : params) {
      Tensor t = p;
      for (double& g : t.grad()) g *= s;
    }
  }
  return norm;
}

AdamW::AdamW(std::vector<Tensor> params, double beta1, double beta2,
             double eps, double weight_decay)
    : params_(std::move(params)),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      weight_decay_(weight_decay) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void AdamW::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    p.impl()->ensure_grad();
    auto& data = p.data();
    const auto& grad = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    const double decay = 1.0 - lr * weight_decay_;
    for (std::size_t j = 0; j < data.size(); ++j) {
      data[j] *= decay;
      const double g = grad[j];
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      data[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Batch::validate(int vocab) const {
  if (tokens.empty()) throw std::invalid_argument("batch: empty");
  if (targets.size() != tokens.size() || loss_mask.size() != tokens.size()) {
    throw std::invalid_argument("batch: tokens/targets/mask sizes differ");
  }
  for (std::size_t b = 0; b < tokens.size(); ++b) {
    if (tokens[b].empty() || targets[b].size() != tokens[b].size() ||
        loss_mask[b].size() != tokens[b].size()) {
      throw std::invalid_argument("batch: ragged sequence " +
                                  std::to_string(b));
    }
    for (int id : tokens[b]) {
      if (id < 0 || id >= vocab)
        throw std::out_of_range("batch: token id outside vocabulary");
    }
    for (int id : targets[b]) {
      if (id < 0 || id >= vocab)
        throw std::out_of_range("batch: target id outside vocabulary");
    }
  }
}

CorpusSampler::CorpusSampler(std::vector<int> corpus, std::uint64_t seed)
    : corpus_(std::move(corpus)), rng_(seed) {}

Batch CorpusSampler::sample(int batch_size, int seq_len) {
  if (batch_size < 1 || seq_len < 1) {
    throw std::invalid_argument("sample: batch size and seq len must be >= 1");
  }
  if (corpus_.size() < static_cast<std::size_t>(seq_len) + 1) {
    throw std::invalid_argument(
        "sample: corpus of " + std::to_string(corpus_.size()) +
        " tokens is shorter than seq_len+1 = " + std::to_string(seq_len + 1));
  }
  const std::uint64_t span =
      static_cast<std::uint64_t>(corpus_.size()) - seq_len;
  Batch batch;
  batch.tokens.resize(static_cast<std::size_t>(batch_size));
  batch.targets.resize(static_cast<std::size_t>(batch_size));
  batch.loss_mask.resize(static_cast<std::size_t>(batch_size));
  for (int b = 0; b < batch_size; ++b) {
    const std::size_t start = static_cast<std::size_t>(rng_.uniform_int(span));
    auto& toks = batch.tokens[static_cast<std::size_t>(b)];
    auto& tgts = batch.targets[static_cast<std::size_t>(b)];
    toks.assign(corpus_.begin() + static_cast<std::ptrdiff_t>(start),
                corpus_.begin() + static_cast<std::ptrdiff_t>(start + seq_len));
    tgts.assign(
        corpus_.begin() + static_cast<std::ptrdiff_t>(start + 1),
        corpus_.begin() + static_cast<std::ptrdiff_t>(start + seq_len + 1));
    batch.loss_mask[static_cast<std::size_t>(b)].assign(
        static_cast<std::size_t>(seq_len), 1);
  }
  return batch;
}

TrainStepResult train_step(Model& model, AdamW& opt, const Batch& batch, int t,
                           const TrainConfig& config) {
  config.validate();
  const ModelConfig& cfg = model.config();
  batch.validate(cfg.vocab);

  TrainStepResult result;
  result.step = t;
  result.budget = budget_at(config.schedule, t);
  result.lr = cosine_lr(t, config.warmup_steps, config.total_steps,
                        config.peak_lr);

  ForwardOptions opts;
  opts.mode = SkipMode::Budget;
  opts.budget = result.budget;

  // Pooled CE over every unmasked target in the batch, plus all gates.
  std::size_t total_unmasked = 0;
  std::vector<std::size_t> unmasked(batch.tokens.size(), 0);
  for (std::size_t b = 0; b < batch.tokens.size(); ++b) {
    for (std::uint8_t m : batch.loss_mask[b]) unmasked[b] += m != 0 ? 1 : 0;
    total_unmasked += unmasked[b];
  }
  if (total_unmasked == 0) {
    throw std::invalid_argument("train_step: loss mask excludes every target");
  }

  Tensor ce;
  std::vector<Tensor> gates;
  std::vector<std::int64_t> layer_skipped(
      static_cast<std::size_t>(cfg.n_layers), 0);
  std::vector<std::int64_t> layer_total(static_cast<std::size_t>(cfg.n_layers),
                                        0);
  for (std::size_t b = 0; b < batch.tokens.size(); ++b) {
    ForwardResult fr = model.forward(batch.tokens[b], opts);
    Tensor ce_b =
        cross_entropy(fr.logits, batch.targets[b], batch.loss_mask[b]);
    Tensor weighted =
        scale(ce_b, static_cast<double>(unmasked[b]) /
                        static_cast<double>(total_unmasked));
    ce = ce.defined() ? add(ce, weighted) : weighted;
    for (const ModuleTrace& tr : fr.modules) {
      gates.push_back(tr.gate);
      layer_skipped[static_cast<std::size_t>(tr.layer)] +=
          static_cast<std::int64_t>(tr.mask.count());
      layer_total[static_cast<std::size_t>(tr.layer)] +=
          static_cast<std::int64_t>(tr.mask.size());
    }
  }

  Tensor sp = sparsity_loss(gates);
  Tensor loss = total_loss(ce, sp, config.lambda_sparsity);
  result.ce = ce.item();
  result.sparsity = sp.item();
  result.total = loss.item();
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto li = static_cast<std::size_t>(l);
    result.skip_fraction.push_back(
        layer_total[li] == 0 ? 0.0
                             : static_cast<double>(layer_skipped[li]) /
                                   static_cast<double>(layer_total[li]));
  }

  if (!std::isfinite(result.total)) {
    std::ostringstream os;
    os << "training diverged at step " << t << ": ce=" << result.ce
       << " sparsity=" << result.sparsity << " total=" << result.total
       << " budget=" << result.budget << " lr=" << result.lr;
    throw TrainingDiverged(os.str());
  }

  opt.zero_grad();
  loss.backward();
  result.grad_norm = clip_gradients(opt.params(), config.grad_clip_norm);
  opt.step(result.lr);
  return result;
}

std::string format_step_log(const TrainStepResult& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "step=%d budget=%.6f lr=%.8f ce=%.6f sparsity=%.6f "
                "total=%.6f grad_norm=%.6f skip_frac=",
                r.step, r.budget, r.lr, r.ce, r.sparsity, r.total,
                r.grad_norm);
  std::string line(buf);
  for (std::size_t l = 0; l < r.skip_fraction.size(); ++l) {
    std::snprintf(buf, sizeof buf, "%s%.4f", l == 0 ? "" : ",",
                  r.skip_fraction[l]);
    line += buf;
  }
  return line;
}

Trainer::Trainer(Model& model, TrainConfig config)
    : model_(model),
      cfg_(std::move(config)),
      opt_(model.parameters(), cfg_.beta1, cfg_.beta2, cfg_.eps,
           cfg_.weight_decay) {
  cfg_.validate();
}

std::vector<TrainStepResult> Trainer::fit(
    CorpusSampler& sampler, std::ostream* log,
    const std::function<void(int)>& checkpoint_hook) {
  std::vector<TrainStepResult> history;
  history.reserve(static_cast<std::size_t>(cfg_.total_steps));
  for (int t = 1; t <= cfg_.total_steps; ++t) {
    Batch batch = sampler.sample(cfg_.batch_size, cfg_.seq_len);
    TrainStepResult r = train_step(model_, opt_, batch, t, cfg_);
    if (log != nullptr && (t % cfg_.log_every == 0 || t == cfg_.total_steps)) {
      (*log) << format_step_log(r) << '\n';
    }
    if (checkpoint_hook && cfg_.checkpoint_every > 0 &&
        t % cfg_.checkpoint_every == 0 && t != cfg_.total_steps) {
      checkpoint_hook(t);
    }
    history.push_back(std::move(r));
  }
  if (checkpoint_hook) checkpoint_hook(cfg_.total_steps);
  return history;
}

}  // namespace resgate
