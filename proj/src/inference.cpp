#include "resgate/inference.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "resgate/tensor.hpp"

namespace resgate {

namespace {

// y[out] = W[out×in] · x; same accumulation order as the linear() graph op.
void project_row(const Tensor& w, const double* x, double* y) {
  const int out = w.dim(0), in = w.dim(1);
  const double* wd = w.data().data();
  for (int o = 0; o < out; ++o) {
    const double* wrow = wd + static_cast<std::size_t>(o) * in;
    double acc = 0.0;
    for (int j = 0; j < in; ++j) acc += x[j] * wrow[j];
    y[o] = acc;
  }
}

void rmsnorm_row(const double* x, const Tensor& gain, double* y, int h) {
  double ms = 0.0;
  for (int j = 0; j < h; ++j) ms += x[j] * x[j];
  ms /= h;
  const double inv = 1.0 / std::sqrt(ms + kRmsNormEps);
  const double* gd = gain.data().data();
  for (int j = 0; j < h; ++j) y[j] = x[j] * inv * gd[j];
}

void gate_row(const GateParams& gp, GateArch arch, const double* h,
              std::vector<double>& two_layer_hidden, double* out,
              int out_dim) {
  if (arch == GateArch::TwoLayer) {
    project_row(gp.w1, h, two_layer_hidden.data());
    const int hw = gp.w1.dim(0);
    const double* b1 = gp.b1.data().data();
    for (int j = 0; j < hw; ++j)
      two_layer_hidden[static_cast<std::size_t>(j)] =
          std::tanh(two_layer_hidden[static_cast<std::size_t>(j)] + b1[j]);
    project_row(gp.w2, two_layer_hidden.data(), out);
    const double* b2 = gp.b2.data().data();
    for (int j = 0; j < out_dim; ++j) out[j] = sigmoid_scalar(out[j] + b2[j]);
  } else {
    project_row(gp.w, h, out);
    const double* b = gp.b.data().data();
    for (int j = 0; j < out_dim; ++j) out[j] = sigmoid_scalar(out[j] + b[j]);
  }
}

double row_mean_of(const double* v, int n) {
  double acc = 0.0;
  for (int j = 0; j < n; ++j) acc += v[j];
  return acc / n;
}

void apply_gate_row(const double* g, GateShape shape, const double* x,
                    double* y, int h) {
  if (shape == GateShape::Vector) {
    for (int j = 0; j < h; ++j) y[j] = x[j] * g[j];
  } else {
    const double s = g[0];
    for (int j = 0; j < h; ++j) y[j] = x[j] * s;
  }
}

// One query row against cache rows [0, n_ctx); mirrors causal_attention.
void attend_row(const double* q, const double* keys, const double* values,
                int n_heads, int hidden, int n_ctx, double* out,
                std::vector<double>& logits_buf) {
  const int d = hidden / n_heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (int head = 0; head < n_heads; ++head) {
    const int off = head * d;
    double mx = -1e300;
    for (int j = 0; j < n_ctx; ++j) {
      const double* kj = keys + static_cast<std::size_t>(j) * hidden + off;
      double dot = 0.0;
      for (int c = 0; c < d; ++c) dot += q[off + c] * kj[c];
      logits_buf[static_cast<std::size_t>(j)] = dot * inv_sqrt_d;
      mx = std::max(mx, logits_buf[static_cast<std::size_t>(j)]);
    }
    double sum = 0.0;
    for (int j = 0; j < n_ctx; ++j) {
      logits_buf[static_cast<std::size_t>(j)] =
          std::exp(logits_buf[static_cast<std::size_t>(j)] - mx);
      sum += logits_buf[static_cast<std::size_t>(j)];
    }
    double* orow = out + off;
    for (int c = 0; c < d; ++c) orow[c] = 0.0;
    for (int j = 0; j < n_ctx; ++j) {
      const double a = logits_buf[static_cast<std::size_t>(j)] / sum;
      const double* vj = values + static_cast<std::size_t>(j) * hidden + off;
      for (int c = 0; c < d; ++c) orow[c] += a * vj[c];
    }
  }
}

int sample_token(const std::vector<double>& logits,
                 const GenerationConfig& config, Rng& rng) {
  if (config.greedy) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(logits.size()); ++i) {
      if (logits[static_cast<std::size_t>(i)] >
          logits[static_cast<std::size_t>(best)]) {
        best = i;
      }
    }
    return best;
  }
  // Temperature sampling over softmax(logits / T).
  std::vector<double> p(logits.size());
  double mx = -1e300;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = logits[i] / config.temperature;
    mx = std::max(mx, p[i]);
  }
  double sum = 0.0;
  for (double& v : p) {
    v = std::exp(v - mx);
    sum += v;
  }
  const double u = rng.uniform() * sum;
  double cum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    cum += p[i];
    if (u < cum) return static_cast<int>(i);
  }
  return static_cast<int>(p.size()) - 1;
}

}  // namespace

KVCache::KVCache(int n_layers_, int hidden_, int capacity_)
    : n_layers(n_layers_), hidden(hidden_), capacity(capacity_) {
  if (n_layers < 1 || hidden < 1 || capacity < 1) {
    throw std::invalid_argument("KVCache: layers, hidden, capacity must be >= 1");
  }
  keys.assign(static_cast<std::size_t>(n_layers),
              std::vector<double>(
                  static_cast<std::size_t>(capacity) * hidden, 0.0));
  values = keys;
}

double* KVCache::key_row(int layer, int pos) {
  return keys[static_cast<std::size_t>(layer)].data() +
         static_cast<std::size_t>(pos) * hidden;
}
double* KVCache::value_row(int layer, int pos) {
  return values[static_cast<std::size_t>(layer)].data() +
         static_cast<std::size_t>(pos) * hidden;
}
const double* KVCache::key_row(int layer, int pos) const {
  return keys[static_cast<std::size_t>(layer)].data() +
         static_cast<std::size_t>(pos) * hidden;
}
const double* KVCache::value_row(int layer, int pos) const {
  return values[static_cast<std::size_t>(layer)].data() +
         static_cast<std::size_t>(pos) * hidden;
}

void cache_copy_up(KVCache& cache, int layer, int token) {
  if (layer < 1 || layer >= cache.n_layers) {
    throw std::invalid_argument("cache_copy_up: layer " +
                                std::to_string(layer) + " has no layer below");
  }
  if (token < 0 || token >= cache.capacity) {
    throw std::out_of_range("cache_copy_up: token " + std::to_string(token) +
                            " beyond cache capacity " +
                            std::to_string(cache.capacity));
  }
  const std::size_t bytes = static_cast<std::size_t>(cache.hidden) * sizeof(double);
  std::memcpy(cache.key_row(layer, token), cache.key_row(layer - 1, token),
              bytes);
  std::memcpy(cache.value_row(layer, token),
              cache.value_row(layer - 1, token), bytes);
}

void GenerationConfig::validate() const {
  if (!(budget > 0.0 && budget <= 1.0)) {
    throw std::invalid_argument("generation config: budget outside (0,1]");
  }
  if (max_new_tokens < 0) {
    throw std::invalid_argument("generation config: max_new_tokens < 0");
  }
  if (!greedy && !(temperature > 0.0)) {
    throw std::invalid_argument("generation config: temperature must be > 0");
  }
  if (threshold_window < 1) {
    throw std::invalid_argument("generation config: threshold window < 1");
  }
  if (random_fraction < 0.0 || random_fraction > 1.0) {
    throw std::invalid_argument("generation config: random fraction outside [0,1]");
  }
  if (policy == SkipMode::Fixed) {
    throw std::invalid_argument(
        "generation config: fixed masks are supplied per call, not as policy");
  }
}

ScoreWindows::ScoreWindows(int n_slots, int capacity)
    : cap_(std::max(1, capacity)),
      slots_(static_cast<std::size_t>(std::max(0, n_slots))) {}

void ScoreWindows::push(int slot, double value) {
  auto& d = slots_.at(static_cast<std::size_t>(slot));
  d.push_back(value);
  if (static_cast<int>(d.size()) > cap_) d.pop_front();
}

std::vector<double> ScoreWindows::snapshot(int slot) const {
  const auto& d = slots_.at(static_cast<std::size_t>(slot));
  return std::vector<double>(d.begin(), d.end());
}

bool ScoreWindows::empty(int slot) const {
  return slots_.at(static_cast<std::size_t>(slot)).empty();
}

PrefillResult prefill(const Model& model, const std::vector<int>& prompt,
                      const GenerationConfig& config, KVCache& cache,
                      ScoreWindows* windows,
                      const std::vector<SkipMask>* forced_masks) {
  config.validate();
  const ModelConfig& cfg = model.config();
  const int s = static_cast<int>(prompt.size());
  if (s == 0) throw std::invalid_argument("prefill: empty prompt");
  if (s > cfg.max_seq) {
    throw std::invalid_argument("prefill: prompt of " + std::to_string(s) +
                                " tokens exceeds max_seq " +
                                std::to_string(cfg.max_seq));
  }
  if (cache.n_layers != cfg.n_layers || cache.hidden != cfg.hidden) {
    throw std::invalid_argument("prefill: cache shape does not match model");
  }
  if (cache.capacity < s) {
    throw std::invalid_argument("prefill: cache capacity too small for prompt");
  }
  const int hdim = cfg.hidden;
  const int gate_width = cfg.gate.shape == GateShape::Vector ? hdim : 1;

  std::vector<double> h(static_cast<std::size_t>(s) * hdim);
  const auto& tok = model.token_embedding().data();
  const auto& pos = model.position_embedding().data();
  for (int i = 0; i < s; ++i) {
    const int id = prompt[static_cast<std::size_t>(i)];
    if (id < 0 || id >= cfg.vocab) {
      throw std::out_of_range("prefill: token id " + std::to_string(id) +
                              " outside vocabulary");
    }
    for (int j = 0; j < hdim; ++j) {
      h[static_cast<std::size_t>(i) * hdim + j] =
          tok[static_cast<std::size_t>(id) * hdim + j] +
          pos[static_cast<std::size_t>(i) * hdim + j];
    }
  }

  ForwardOptions opts;
  opts.mode = forced_masks != nullptr ? SkipMode::Fixed : config.policy;
  opts.budget = config.budget;
  opts.fixed_masks = forced_masks;
  opts.random_fraction = config.random_fraction;
  opts.random_seed = config.seed;

  PrefillResult result;
  std::vector<double> normed(static_cast<std::size_t>(s) * hdim);
  std::vector<double> gated(static_cast<std::size_t>(s) * hdim);
  std::vector<double> g(static_cast<std::size_t>(s) * gate_width);
  std::vector<double> scores(static_cast<std::size_t>(s));
  std::vector<double> two_layer_hidden(
      cfg.gate.arch == GateArch::TwoLayer ? 2 * static_cast<std::size_t>(hdim)
                                          : 0);
  std::vector<double> qbuf(static_cast<std::size_t>(hdim));
  std::vector<double> abuf(static_cast<std::size_t>(hdim));
  std::vector<double> obuf(static_cast<std::size_t>(hdim));
  std::vector<double> upbuf(static_cast<std::size_t>(cfg.ff_dim));
  std::vector<double> logits_buf(static_cast<std::size_t>(s));
  const bool entry = cfg.gate.placement == GatePlacement::Entry;

  for (int l = 0; l < cfg.n_layers; ++l) {
    const BlockParams& blk = model.block(l);
    SkipMask attn_mask;
    for (ModuleKind kind : {ModuleKind::Attention, ModuleKind::Mlp}) {
      const bool is_attn = kind == ModuleKind::Attention;
      const GateParams& gp = is_attn ? blk.attn_gate : blk.mlp_gate;
      const Tensor& norm_gain = is_attn ? blk.norm_attn : blk.norm_mlp;
      const int slot = l * 2 + (is_attn ? 0 : 1);

      for (int i = 0; i < s; ++i) {
        gate_row(gp, cfg.gate.arch, &h[static_cast<std::size_t>(i) * hdim],
                 two_layer_hidden, &g[static_cast<std::size_t>(i) * gate_width],
                 gate_width);
        scores[static_cast<std::size_t>(i)] = row_mean_of(
            &g[static_cast<std::size_t>(i) * gate_width], gate_width);
      }
      const SkipMask mask = decide_skip_mask(
          cfg, opts, l, kind, scores, static_cast<std::size_t>(s), attn_mask);
      if (is_attn) attn_mask = mask;

      for (int i = 0; i < s; ++i) {
        rmsnorm_row(&h[static_cast<std::size_t>(i) * hdim], norm_gain,
                    &normed[static_cast<std::size_t>(i) * hdim], hdim);
      }
      const double* xin = normed.data();
      if (entry) {
        for (int i = 0; i < s; ++i) {
          apply_gate_row(&g[static_cast<std::size_t>(i) * gate_width],
                         cfg.gate.shape,
                         &normed[static_cast<std::size_t>(i) * hdim],
                         &gated[static_cast<std::size_t>(i) * hdim], hdim);
        }
        xin = gated.data();
      }

      if (is_attn) {
        // Cache rows first so later queries can attend over copied-up rows.
        for (int i = 0; i < s; ++i) {
          const double* src = xin + static_cast<std::size_t>(i) * hdim;
          if (!mask[static_cast<std::size_t>(i)]) {
            project_row(blk.wk, src, cache.key_row(l, i));
            project_row(blk.wv, src, cache.value_row(l, i));
          } else if (l == 0) {
            // Base rule: no layer below, so project the pre-block stream.
            const double* raw = &normed[static_cast<std::size_t>(i) * hdim];
            project_row(blk.wk, raw, cache.key_row(0, i));
            project_row(blk.wv, raw, cache.value_row(0, i));
          } else {
            cache_copy_up(cache, l, i);
          }
        }
        for (int i = 0; i < s; ++i) {
          if (mask[static_cast<std::size_t>(i)]) continue;
          const double* src = xin + static_cast<std::size_t>(i) * hdim;
          project_row(blk.wq, src, qbuf.data());
          attend_row(qbuf.data(), cache.keys[static_cast<std::size_t>(l)].data(),
                     cache.values[static_cast<std::size_t>(l)].data(),
                     cfg.n_heads, hdim, i + 1, abuf.data(), logits_buf);
          project_row(blk.wo, abuf.data(), obuf.data());
          if (!entry) {
            apply_gate_row(&g[static_cast<std::size_t>(i) * gate_width],
                           cfg.gate.shape, obuf.data(), obuf.data(), hdim);
          }
          for (int j = 0; j < hdim; ++j)
            h[static_cast<std::size_t>(i) * hdim + j] += obuf[j];
        }
      } else {
        for (int i = 0; i < s; ++i) {
          if (mask[static_cast<std::size_t>(i)]) continue;
          const double* src = xin + static_cast<std::size_t>(i) * hdim;
          project_row(blk.w_up, src, upbuf.data());
          for (int j = 0; j < cfg.ff_dim; ++j)
            upbuf[static_cast<std::size_t>(j)] =
                gelu_scalar(upbuf[static_cast<std::size_t>(j)]);
          project_row(blk.w_down, upbuf.data(), obuf.data());
          if (!entry) {
            apply_gate_row(&g[static_cast<std::size_t>(i) * gate_width],
                           cfg.gate.shape, obuf.data(), obuf.data(), hdim);
          }
          for (int j = 0; j < hdim; ++j)
            h[static_cast<std::size_t>(i) * hdim + j] += obuf[j];
        }
      }

      for (int i = 0; i < s; ++i) {
        InferenceEvent ev;
        ev.layer = l;
        ev.kind = kind;
        ev.position = i;
        ev.token_id = prompt[static_cast<std::size_t>(i)];
        ev.score = scores[static_cast<std::size_t>(i)];
        ev.skipped = mask[static_cast<std::size_t>(i)];
        ev.ctx_len = i + 1;
        result.events.push_back(ev);
        if (windows != nullptr) windows->push(slot, ev.score);
      }
    }
  }
  cache.valid = s;

  result.logits.assign(static_cast<std::size_t>(s) * cfg.vocab, 0.0);
  for (int i = 0; i < s; ++i) {
    rmsnorm_row(&h[static_cast<std::size_t>(i) * hdim], model.final_norm(),
                obuf.data(), hdim);
    project_row(model.lm_head(), obuf.data(),
                &result.logits[static_cast<std::size_t>(i) * cfg.vocab]);
  }
  return result;
}

std::vector<double> decode_step(const Model& model, KVCache& cache,
                                ScoreWindows& windows, int token, int position,
                                const GenerationConfig& config,
                                std::vector<InferenceEvent>* events,
                                Rng* random_rng) {
  config.validate();
  const ModelConfig& cfg = model.config();
  if (position != cache.valid) {
    throw std::invalid_argument(
        "decode_step: position " + std::to_string(position) +
        " does not match cache fill " + std::to_string(cache.valid));
  }
  if (position >= cfg.max_seq || position >= cache.capacity) {
    throw std::invalid_argument("decode_step: position " +
                                std::to_string(position) +
                                " beyond sequence capacity");
  }
  if (token < 0 || token >= cfg.vocab) {
    throw std::out_of_range("decode_step: token id " + std::to_string(token) +
                            " outside vocabulary");
  }
  const int hdim = cfg.hidden;
  const int gate_width = cfg.gate.shape == GateShape::Vector ? hdim : 1;
  const bool entry = cfg.gate.placement == GatePlacement::Entry;

  std::vector<double> h(static_cast<std::size_t>(hdim));
  const auto& tok = model.token_embedding().data();
  const auto& pos = model.position_embedding().data();
  for (int j = 0; j < hdim; ++j) {
    h[static_cast<std::size_t>(j)] =
        tok[static_cast<std::size_t>(token) * hdim + j] +
        pos[static_cast<std::size_t>(position) * hdim + j];
  }

  std::vector<double> g(static_cast<std::size_t>(gate_width));
  std::vector<double> normed(static_cast<std::size_t>(hdim));
  std::vector<double> xrow(static_cast<std::size_t>(hdim));
  std::vector<double> qbuf(static_cast<std::size_t>(hdim));
  std::vector<double> abuf(static_cast<std::size_t>(hdim));
  std::vector<double> obuf(static_cast<std::size_t>(hdim));
  std::vector<double> upbuf(static_cast<std::size_t>(cfg.ff_dim));
  std::vector<double> logits_buf(static_cast<std::size_t>(position) + 1);
  std::vector<double> two_layer_hidden(
      cfg.gate.arch == GateArch::TwoLayer ? 2 * static_cast<std::size_t>(hdim)
                                          : 0);

  for (int l = 0; l < cfg.n_layers; ++l) {
    const BlockParams& blk = model.block(l);
    bool layer_attn_skip = false;
    for (ModuleKind kind : {ModuleKind::Attention, ModuleKind::Mlp}) {
      const bool is_attn = kind == ModuleKind::Attention;
      const GateParams& gp = is_attn ? blk.attn_gate : blk.mlp_gate;
      const Tensor& norm_gain = is_attn ? blk.norm_attn : blk.norm_mlp;
      const int slot = l * 2 + (is_attn ? 0 : 1);

      gate_row(gp, cfg.gate.arch, h.data(), two_layer_hidden, g.data(),
               gate_width);
      const double score = row_mean_of(g.data(), gate_width);

      bool skip = false;
      const SkipGranularity gran = cfg.gate.granularity;
      if (config.policy != SkipMode::None && skip_eligible(gran, l, kind)) {
        if (gran == SkipGranularity::WholeLayerByAttnGate && !is_attn) {
          skip = layer_attn_skip;
        } else if (config.policy == SkipMode::Budget) {
          // Fresh history processes the token; otherwise threshold on the
          // rolling window at the (1-budget) quantile.
          const std::vector<double> snap = windows.snapshot(slot);
          if (!snap.empty()) {
            const double tau = quantile_threshold(snap, 1.0 - config.budget);
            skip = score <= tau;
          }
        } else if (config.policy == SkipMode::Random) {
          if (random_rng == nullptr) {
            throw std::invalid_argument(
                "decode_step: random policy requires an rng");
          }
          skip = random_rng->uniform() < config.random_fraction;
        }
      }
      if (is_attn) layer_attn_skip = skip;
      windows.push(slot, score);
      if (events != nullptr) {
        InferenceEvent ev;
        ev.layer = l;
        ev.kind = kind;
        ev.position = position;
        ev.token_id = token;
        ev.score = score;
        ev.skipped = skip;
        ev.ctx_len = position + 1;
        events->push_back(ev);
      }

      if (is_attn) {
        if (!skip) {
          rmsnorm_row(h.data(), norm_gain, normed.data(), hdim);
          const double* src = normed.data();
          if (entry) {
            apply_gate_row(g.data(), cfg.gate.shape, normed.data(),
                           xrow.data(), hdim);
            src = xrow.data();
          }
          project_row(blk.wk, src, cache.key_row(l, position));
          project_row(blk.wv, src, cache.value_row(l, position));
          project_row(blk.wq, src, qbuf.data());
          attend_row(qbuf.data(),
                     cache.keys[static_cast<std::size_t>(l)].data(),
                     cache.values[static_cast<std::size_t>(l)].data(),
                     cfg.n_heads, hdim, position + 1, abuf.data(), logits_buf);
          project_row(blk.wo, abuf.data(), obuf.data());
          if (!entry) {
            apply_gate_row(g.data(), cfg.gate.shape, obuf.data(), obuf.data(),
                           hdim);
          }
          for (int j = 0; j < hdim; ++j) h[static_cast<std::size_t>(j)] += obuf[j];
        } else if (l == 0) {
          rmsnorm_row(h.data(), norm_gain, normed.data(), hdim);
          project_row(blk.wk, normed.data(), cache.key_row(0, position));
          project_row(blk.wv, normed.data(), cache.value_row(0, position));
        } else {
          cache_copy_up(cache, l, position);
        }
      } else if (!skip) {
        rmsnorm_row(h.data(), norm_gain, normed.data(), hdim);
        const double* src = normed.data();
        if (entry) {
          apply_gate_row(g.data(), cfg.gate.shape, normed.data(), xrow.data(),
                         hdim);
          src = xrow.data();
        }
        project_row(blk.w_up, src, upbuf.data());
        for (int j = 0; j < cfg.ff_dim; ++j)
          upbuf[static_cast<std::size_t>(j)] =
              gelu_scalar(upbuf[static_cast<std::size_t>(j)]);
        project_row(blk.w_down, upbuf.data(), obuf.data());
        if (!entry) {
          apply_gate_row(g.data(), cfg.gate.shape, obuf.data(), obuf.data(),
                         hdim);
        }
        for (int j = 0; j < hdim; ++j) h[static_cast<std::size_t>(j)] += obuf[j];
      }
    }
  }
  cache.valid = position + 1;

  rmsnorm_row(h.data(), model.final_norm(), normed.data(), hdim);
  std::vector<double> out(static_cast<std::size_t>(cfg.vocab));
  project_row(model.lm_head(), normed.data(), out.data());
  return out;
}

GenerateResult generate(const Model& model, const std::vector<int>& prompt,
                        const GenerationConfig& config) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const ModelConfig& cfg = model.config();
  KVCache cache(cfg.n_layers, cfg.hidden, cfg.max_seq);
  ScoreWindows windows(cfg.n_layers * 2, config.threshold_window);

  GenerateResult result;
  result.prompt_len = static_cast<int>(prompt.size());
  result.tokens = prompt;

  PrefillResult pf = prefill(model, prompt, config, cache, &windows);
  result.events = std::move(pf.events);
  std::vector<double> last(pf.logits.end() - cfg.vocab, pf.logits.end());

  Rng rng(config.seed);
  std::int64_t head_positions = static_cast<std::int64_t>(prompt.size());
  for (int step = 0; step < config.max_new_tokens; ++step) {
    if (static_cast<int>(result.tokens.size()) >= cfg.max_seq) break;
    const int next = sample_token(last, config, rng);
    result.tokens.push_back(next);
    if (next == config.eos_id) break;
    const int position = static_cast<int>(result.tokens.size()) - 1;
    last = decode_step(model, cache, windows, next, position, config,
                       &result.events, &rng);
    ++head_positions;
  }

  result.flops =
      flop_report(to_module_records(result.events, cfg), cfg, head_positions);
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return result;
}

std::vector<ModuleRecord> to_module_records(
    const std::vector<InferenceEvent>& events, const ModelConfig& config) {
  std::vector<ModuleRecord> records(
      static_cast<std::size_t>(config.n_layers) * 2);
  for (int l = 0; l < config.n_layers; ++l) {
    for (int k = 0; k < 2; ++k) {
      auto& rec = records[static_cast<std::size_t>(l) * 2 + k];
      rec.layer = l;
      rec.kind = k == 0 ? ModuleKind::Attention : ModuleKind::Mlp;
    }
  }
  for (const auto& ev : events) {
    if (ev.layer < 0 || ev.layer >= config.n_layers) {
      throw std::invalid_argument("to_module_records: event layer " +
                                  std::to_string(ev.layer) + " out of range");
    }
    auto& rec = records[static_cast<std::size_t>(ev.layer) * 2 +
                        (ev.kind == ModuleKind::Mlp ? 1 : 0)];
    rec.skipped.push_back(ev.skipped ? 1 : 0);
    rec.ctx_len.push_back(ev.ctx_len);
  }
  return records;
}

std::string GenerateResult::to_text() const {
  std::ostringstream os;
  os << "tokens";
  for (int t : tokens) os << ' ' << t;
  os << '\n';
  os << "text ";
  for (int t : tokens) os << token_label(t);
  os << '\n';
  os << "prompt_len " << prompt_len << '\n';
  os << "generated " << (tokens.size() - static_cast<std::size_t>(prompt_len))
     << '\n';

  // Per-layer skip counts across both modules.
  std::vector<std::array<int, 4>> counts;  // attn_skip, attn_total, mlp_skip, mlp_total
  for (const auto& ev : events) {
    if (ev.layer >= static_cast<int>(counts.size()))
      counts.resize(static_cast<std::size_t>(ev.layer) + 1, {0, 0, 0, 0});
    auto& c = counts[static_cast<std::size_t>(ev.layer)];
    if (ev.kind == ModuleKind::Attention) {
      c[0] += ev.skipped ? 1 : 0;
      c[1] += 1;
    } else {
      c[2] += ev.skipped ? 1 : 0;
      c[3] += 1;
    }
  }
  os << "layer attn_skipped attn_total mlp_skipped mlp_total\n";
  for (std::size_t l = 0; l < counts.size(); ++l) {
    os << l << ' ' << counts[l][0] << ' ' << counts[l][1] << ' '
       << counts[l][2] << ' ' << counts[l][3] << '\n';
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", flops.saved_fraction);
  os << "saved_fraction " << buf << '\n';
  std::snprintf(buf, sizeof buf, "%.3f", wall_seconds);
  os << "wall_seconds " << buf << '\n';
  return os.str();
}

}  // namespace resgate
