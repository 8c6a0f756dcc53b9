// Command-line driver: train / generate / eval-sweep / analyze /
// count-params / simulate-skip. Exit codes: 0 success, 2 usage or
// configuration error, 1 runtime failure.
#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "resgate/analysis.hpp"
#include "resgate/config_file.hpp"
#include "resgate/csv.hpp"
#include "resgate/evaluation.hpp"
#include "resgate/inference.hpp"
#include "resgate/io.hpp"
#include "resgate/model.hpp"
#include "resgate/tokenizer.hpp"
#include "resgate/training.hpp"

namespace {

using namespace resgate;

constexpr const char* kOutDirEnv = "RESGATE_OUT_DIR";

std::string default_out_dir() {
  const char* env = std::getenv(kOutDirEnv);
  return (env != nullptr && *env != '\0') ? env : ".";
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

// Config-file keys: each command consumes the keys it understands and then
// rejects whatever is left over.
class ConfigView {
 public:
  ConfigView() = default;
  explicit ConfigView(std::map<std::string, std::string> kv)
      : kv_(std::move(kv)) {}

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  // Marks the key consumed without using its value (a command-line override).
  void ignore(const std::string& key) { used_.insert(key); }

  template <typename Parse>
  void get_with(const std::string& key, const Parse& parse) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return;
    used_.insert(key);
    try {
      parse(it->second);
    } catch (const std::exception& e) {
      throw std::invalid_argument("config key '" + key + "': bad value '" +
                                  it->second + "' (" + e.what() + ")");
    }
  }

  void get(const std::string& key, int& out) {
    get_with(key, [&out](const std::string& v) { out = parse_int(v); });
  }
  void get(const std::string& key, std::uint64_t& out) {
    get_with(key, [&out](const std::string& v) {
      std::size_t pos = 0;
      out = std::stoull(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("trailing characters");
    });
  }
  void get(const std::string& key, double& out) {
    get_with(key, [&out](const std::string& v) {
      std::size_t pos = 0;
      out = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("trailing characters");
    });
  }
  void get(const std::string& key, bool& out) {
    get_with(key, [&out](const std::string& v) {
      if (v == "true" || v == "1") out = true;
      else if (v == "false" || v == "0") out = false;
      else throw std::invalid_argument("expected true/false");
    });
  }
  void get(const std::string& key, std::string& out) {
    get_with(key, [&out](const std::string& v) { out = v; });
  }

  void finish() const {
    std::vector<std::string> unknown;
    for (const auto& [key, value] : kv_) {
      if (used_.count(key) == 0) unknown.push_back(key);
    }
    if (!unknown.empty()) {
      std::string msg = "unknown config key(s):";
      for (const auto& k : unknown) msg += " '" + k + "'";
      throw std::invalid_argument(msg);
    }
  }

 private:
  static int parse_int(const std::string& v) {
    std::size_t pos = 0;
    const int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return out;
  }

  std::map<std::string, std::string> kv_;
  std::set<std::string> used_;
};

// Config-file value applies only when the flag was not given on the command
// line; command-line overrides win.
template <typename T>
void merge(ConfigView& cv, const CLI::Option* opt, const std::string& key,
           T& value) {
  if (opt != nullptr && opt->count() > 0) {
    cv.ignore(key);
    return;
  }
  cv.get(key, value);
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) throw std::invalid_argument("empty list entry");
    std::size_t pos = 0;
    out.push_back(std::stod(item, &pos));
    if (pos != item.size()) {
      throw std::invalid_argument("bad number '" + item + "'");
    }
  }
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

std::vector<int> read_corpus_tokens(const std::string& path) {
  if (path.empty()) {
    throw std::invalid_argument("no corpus path given (--corpus)");
  }
  if (!std::filesystem::exists(path)) {
    throw std::invalid_argument("corpus file not found: " + path);
  }
  return encode_bytes(read_file(path));
}

// ---- shared option bundles -------------------------------------------------

struct ModelFlags {
  ModelConfig cfg;
  std::string shape = "vector";
  std::string sharing = "per-module";
  std::string placement = "exit";
  std::string arch = "linear";
  std::string granularity = "all";

  CLI::Option* o_layers = nullptr;
  CLI::Option* o_hidden = nullptr;
  CLI::Option* o_heads = nullptr;
  CLI::Option* o_ff = nullptr;
  CLI::Option* o_vocab = nullptr;
  CLI::Option* o_max_seq = nullptr;
  CLI::Option* o_shape = nullptr;
  CLI::Option* o_sharing = nullptr;
  CLI::Option* o_placement = nullptr;
  CLI::Option* o_arch = nullptr;
  CLI::Option* o_gran = nullptr;

  void add_to(CLI::App* cmd) {
    o_layers = cmd->add_option("--layers", cfg.n_layers, "Transformer layers");
    o_hidden = cmd->add_option("--hidden", cfg.hidden, "Hidden width");
    o_heads = cmd->add_option("--heads", cfg.n_heads, "Attention heads");
    o_ff = cmd->add_option("--ff-dim", cfg.ff_dim, "MLP inner width");
    o_vocab = cmd->add_option("--vocab", cfg.vocab, "Vocabulary size");
    o_max_seq = cmd->add_option("--max-seq", cfg.max_seq, "Max sequence length");
    o_shape = cmd->add_option("--gate-shape", shape, "scalar|vector");
    o_sharing = cmd->add_option("--gate-sharing", sharing, "shared|per-module");
    o_placement = cmd->add_option("--gate-placement", placement, "exit|entry");
    o_arch = cmd->add_option("--gate-arch", arch, "linear|two-layer");
    o_gran = cmd->add_option(
        "--granularity", granularity,
        "all|attention-only|mlp-only|whole-layer-by-attn-gate|every-second-layer");
  }

  void merge_config(ConfigView& cv) {
    merge(cv, o_layers, "model.layers", cfg.n_layers);
    merge(cv, o_hidden, "model.hidden", cfg.hidden);
    merge(cv, o_heads, "model.heads", cfg.n_heads);
    merge(cv, o_ff, "model.ff_dim", cfg.ff_dim);
    merge(cv, o_vocab, "model.vocab", cfg.vocab);
    merge(cv, o_max_seq, "model.max_seq", cfg.max_seq);
    merge(cv, o_shape, "gate.shape", shape);
    merge(cv, o_sharing, "gate.sharing", sharing);
    merge(cv, o_placement, "gate.placement", placement);
    merge(cv, o_arch, "gate.arch", arch);
    merge(cv, o_gran, "gate.granularity", granularity);
  }

  ModelConfig build() const {
    ModelConfig out = cfg;
    out.gate.shape = gate_shape_from_string(shape);
    out.gate.sharing = gate_sharing_from_string(sharing);
    out.gate.placement = gate_placement_from_string(placement);
    out.gate.arch = gate_arch_from_string(arch);
    out.gate.granularity = skip_granularity_from_string(granularity);
    out.validate();
    return out;
  }
};

// ---- train ------------------------------------------------------------------

struct TrainCmd {
  std::string config_path, corpus, out_dir = default_out_dir();
  std::uint64_t seed = 0;
  ModelFlags model;
  TrainConfig tc;
  double budget_start = 1.0, budget_end = 0.8;

  CLI::Option *o_corpus = nullptr, *o_out = nullptr, *o_lambda = nullptr,
              *o_b1 = nullptr, *o_b2 = nullptr, *o_lr = nullptr,
              *o_warmup = nullptr, *o_steps = nullptr, *o_wd = nullptr,
              *o_clip = nullptr, *o_batch = nullptr, *o_seq = nullptr,
              *o_ck = nullptr, *o_log = nullptr;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key = value config file");
    o_corpus = cmd->add_option("--corpus", corpus, "UTF-8 training text");
    o_out = cmd->add_option("--out", out_dir, "Output directory");
    cmd->add_option("--seed", seed, "Seed for init and batch sampling");
    model.add_to(cmd);
    o_lambda = cmd->add_option("--lambda", tc.lambda_sparsity,
                               "Sparsity loss weight");
    o_b1 = cmd->add_option("--budget-start", budget_start, "b at step 1");
    o_b2 = cmd->add_option("--budget-end", budget_end, "b at the last step");
    o_lr = cmd->add_option("--peak-lr", tc.peak_lr, "Peak learning rate");
    o_warmup = cmd->add_option("--warmup", tc.warmup_steps, "Warmup steps");
    o_steps = cmd->add_option("--steps", tc.total_steps, "Total steps");
    o_wd = cmd->add_option("--weight-decay", tc.weight_decay, "AdamW decay");
    o_clip = cmd->add_option("--grad-clip", tc.grad_clip_norm,
                             "Global gradient-norm clip");
    o_batch = cmd->add_option("--batch-size", tc.batch_size, "Sequences/step");
    o_seq = cmd->add_option("--seq-len", tc.seq_len, "Training window length");
    o_ck = cmd->add_option("--checkpoint-every", tc.checkpoint_every,
                           "Also checkpoint every N steps (0 = final only)");
    o_log = cmd->add_option("--log-every", tc.log_every,
                            "Echo every Nth step to stdout");
  }

  int run() {
    ConfigView cv;
    if (!config_path.empty()) cv = ConfigView(load_config_file(config_path));
    model.merge_config(cv);
    merge(cv, o_corpus, "paths.corpus", corpus);
    merge(cv, o_out, "paths.out_dir", out_dir);
    merge(cv, o_lambda, "train.lambda_sparsity", tc.lambda_sparsity);
    merge(cv, o_b1, "train.budget_start", budget_start);
    merge(cv, o_b2, "train.budget_end", budget_end);
    merge(cv, o_lr, "train.peak_lr", tc.peak_lr);
    merge(cv, o_warmup, "train.warmup_steps", tc.warmup_steps);
    merge(cv, o_steps, "train.total_steps", tc.total_steps);
    merge(cv, o_wd, "train.weight_decay", tc.weight_decay);
    merge(cv, o_clip, "train.grad_clip_norm", tc.grad_clip_norm);
    merge(cv, o_batch, "train.batch_size", tc.batch_size);
    merge(cv, o_seq, "train.seq_len", tc.seq_len);
    merge(cv, o_ck, "train.checkpoint_every", tc.checkpoint_every);
    merge(cv, o_log, "train.log_every", tc.log_every);
    cv.finish();

    const ModelConfig mc = model.build();
    tc.schedule = BudgetSchedule{budget_start, budget_end, tc.total_steps};
    tc.seed = seed;
    tc.validate();

    const std::vector<int> tokens = read_corpus_tokens(corpus);
    Model m(mc, seed);
    CorpusSampler sampler(tokens, seed + 1);
    Trainer trainer(m, tc);
    const auto checkpoint_path = join_path(out_dir, "checkpoint.bin");
    auto hook = [&](int step) {
      if (step == tc.total_steps) {
        save_checkpoint(checkpoint_path, m);
      } else {
        char name[32];
        std::snprintf(name, sizeof name, "checkpoint-%06d.bin", step);
        save_checkpoint(join_path(out_dir, name), m);
      }
    };
    const auto history = trainer.fit(sampler, &std::cout, hook);

    std::string log_text;
    for (const auto& r : history) log_text += format_step_log(r) + "\n";
    atomic_write_file(join_path(out_dir, "train_log.txt"), log_text);
    std::cout << "wrote " << checkpoint_path << " and "
              << join_path(out_dir, "train_log.txt") << "\n";
    return 0;
  }
};

// ---- generate ----------------------------------------------------------------

struct GenerateCmd {
  std::string config_path, checkpoint, prompt, out_path, policy = "budget";
  std::uint64_t seed = 0;
  GenerationConfig gc;
  bool sample = false;

  CLI::Option *o_budget = nullptr, *o_max_new = nullptr, *o_temp = nullptr,
              *o_window = nullptr, *o_policy = nullptr, *o_frac = nullptr;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key = value config file");
    cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")
        ->required();
    cmd->add_option("--prompt", prompt, "Prompt text (BOS is prepended)");
    cmd->add_option("--seed", seed, "Sampling seed");
    cmd->add_option("--out", out_path, "Also write the report to this file");
    cmd->add_flag("--sample", sample, "Temperature sampling instead of greedy");
    o_budget = cmd->add_option("--budget", gc.budget, "Token budget in (0,1]");
    o_max_new = cmd->add_option("--max-new", gc.max_new_tokens,
                                "Maximum generated tokens");
    o_temp = cmd->add_option("--temperature", gc.temperature,
                             "Sampling temperature (with --sample)");
    o_window = cmd->add_option("--window", gc.threshold_window,
                               "Rolling score-window length for decode");
    o_policy = cmd->add_option("--policy", policy, "budget|none|random");
    o_frac = cmd->add_option("--random-fraction", gc.random_fraction,
                             "Skip fraction for --policy random");
  }

  int run() {
    ConfigView cv;
    if (!config_path.empty()) cv = ConfigView(load_config_file(config_path));
    merge(cv, o_budget, "generate.budget", gc.budget);
    merge(cv, o_max_new, "generate.max_new_tokens", gc.max_new_tokens);
    merge(cv, o_temp, "generate.temperature", gc.temperature);
    merge(cv, o_window, "generate.threshold_window", gc.threshold_window);
    merge(cv, o_policy, "generate.policy", policy);
    merge(cv, o_frac, "generate.random_fraction", gc.random_fraction);
    cv.finish();

    if (policy == "budget") gc.policy = SkipMode::Budget;
    else if (policy == "none") gc.policy = SkipMode::None;
    else if (policy == "random") gc.policy = SkipMode::Random;
    else throw std::invalid_argument("unknown policy '" + policy + "'");
    gc.greedy = !sample;
    gc.seed = seed;
    gc.validate();

    Model m = load_checkpoint(checkpoint);
    std::vector<int> tokens{kBosId};
    for (int id : encode_bytes(prompt)) tokens.push_back(id);
    if (static_cast<int>(tokens.size()) > m.config().max_seq) {
      throw std::invalid_argument("prompt longer than the model's max_seq");
    }
    const GenerateResult result = generate(m, tokens, gc);
    const std::string text = result.to_text();
    std::cout << text;
    if (!out_path.empty()) atomic_write_file(out_path, text);
    return 0;
  }
};

// ---- eval-sweep ----------------------------------------------------------------

struct SweepCmd {
  std::string checkpoint, corpus, out_dir = default_out_dir();
  std::string budgets_text, targets_text;
  bool baseline = false;
  std::uint64_t seed = 0;
  int n_sequences = 8, seq_len = 64, n_probes = 8, probe_prompt = 32,
      probe_completion = 16;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")
        ->required();
    cmd->add_option("--corpus", corpus, "Held-out UTF-8 text")->required();
    cmd->add_option("--out", out_dir, "Output directory");
    cmd->add_option("--budgets", budgets_text,
                    "Comma-separated budgets (default 1.00..0.75)");
    cmd->add_option("--targets", targets_text,
                    "Comma-separated realized-savings targets");
    cmd->add_flag("--baseline", baseline, "Add paired random-skip points");
    cmd->add_option("--seed", seed, "Dataset/baseline seed");
    cmd->add_option("--n-sequences", n_sequences, "Held-out windows");
    cmd->add_option("--seq-len", seq_len, "Held-out window length");
    cmd->add_option("--probes", n_probes, "Exact-match probes");
    cmd->add_option("--probe-prompt", probe_prompt, "Probe prompt length");
    cmd->add_option("--probe-completion", probe_completion,
                    "Probe completion length");
  }

  int run() {
    const std::vector<double> budgets = budgets_text.empty()
                                            ? default_budget_grid()
                                            : parse_double_list(budgets_text);
    const std::vector<double> targets = targets_text.empty()
                                            ? default_savings_grid()
                                            : parse_double_list(targets_text);
    Model m = load_checkpoint(checkpoint);
    const std::vector<int> tokens = read_corpus_tokens(corpus);
    const EvalDataset ds =
        make_eval_dataset(tokens, seq_len, n_sequences, probe_prompt,
                          probe_completion, n_probes, seed);
    const SweepReport report =
        run_sweep(m, ds, budgets, targets, baseline, seed);
    const std::string text = report.to_text();
    std::cout << text;
    atomic_write_file(join_path(out_dir, "sweep.csv"), report.to_csv());
    atomic_write_file(join_path(out_dir, "sweep.txt"), text);
    std::cout << "wrote " << join_path(out_dir, "sweep.csv") << " and "
              << join_path(out_dir, "sweep.txt") << "\n";
    return 0;
  }
};

// ---- analyze -------------------------------------------------------------------

struct AnalyzeCmd {
  std::string checkpoint, text, corpus, out_dir = default_out_dir();
  double budget = 1.0;
  int top_k = 10, n_sequences = 8, seq_len = 64;
  std::uint64_t seed = 0;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")
        ->required();
    cmd->add_option("--text", text, "Analyze this text (BOS is prepended)");
    cmd->add_option("--corpus", corpus, "Or sample windows from this file");
    cmd->add_option("--out", out_dir, "Output directory");
    cmd->add_option("--budget", budget, "Budget while recording (default 1.0)");
    cmd->add_option("--top-k", top_k, "Vocabulary ranking size");
    cmd->add_option("--n-sequences", n_sequences, "Windows in corpus mode");
    cmd->add_option("--seq-len", seq_len, "Window length in corpus mode");
    cmd->add_option("--seed", seed, "Window sampling seed");
  }

  int run() {
    if (text.empty() == corpus.empty()) {
      throw std::invalid_argument("give exactly one of --text or --corpus");
    }
    Model m = load_checkpoint(checkpoint);
    const ModelConfig& cfg = m.config();

    std::vector<std::vector<int>> sequences;
    if (!text.empty()) {
      std::vector<int> tokens{kBosId};
      for (int id : encode_bytes(text)) tokens.push_back(id);
      if (static_cast<int>(tokens.size()) > cfg.max_seq) {
        tokens.resize(static_cast<std::size_t>(cfg.max_seq));
      }
      sequences.push_back(std::move(tokens));
    } else {
      const std::vector<int> tokens = read_corpus_tokens(corpus);
      EvalDataset ds =
          make_eval_dataset(tokens, seq_len, n_sequences, 1, 1, 0, seed);
      sequences = std::move(ds.sequences);
    }

    std::vector<GateTrace> traces;
    traces.reserve(sequences.size());
    for (const auto& seq : sequences) {
      traces.push_back(record_trace(m, seq, budget));
    }

    atomic_write_file(
        join_path(out_dir, "heatmap_attention.csv"),
        heatmap_csv(heatmap_matrix(traces.front(), ModuleKind::Attention)));
    atomic_write_file(
        join_path(out_dir, "heatmap_mlp.csv"),
        heatmap_csv(heatmap_matrix(traces.front(), ModuleKind::Mlp)));
    atomic_write_file(join_path(out_dir, "trace.csv"),
                      trace_csv(traces.front()));

    VocabStats stats;
    for (const GateTrace& t : traces) stats.add_trace(t);
    atomic_write_file(join_path(out_dir, "vocab_stats.csv"), vocab_csv(stats));

    std::vector<DistributionSummary> rows;
    for (int l = 0; l < cfg.n_layers; ++l) {
      for (ModuleKind kind : {ModuleKind::Attention, ModuleKind::Mlp}) {
        rows.push_back(distribution_stats(traces, l, kind));
      }
    }
    atomic_write_file(join_path(out_dir, "distribution.csv"),
                      distribution_csv(rows));

    const VocabTopK ranked = vocab_topk(stats, top_k);
    std::cout << "rank id token mean count\n";
    for (std::size_t i = 0; i < ranked.ranked.size(); ++i) {
      const auto& e = ranked.ranked[i];
      std::cout << (i + 1) << ' ' << e.id << ' ' << token_label(e.id) << ' '
                << fmt_fixed(e.mean, 6) << ' ' << e.count << '\n';
    }
    std::cout << "rank1_margin " << fmt_fixed(ranked.rank1_margin, 6) << '\n';
    std::cout << "wrote heatmap_attention.csv heatmap_mlp.csv trace.csv "
                 "vocab_stats.csv distribution.csv in "
              << out_dir << "\n";
    return 0;
  }
};

// ---- count-params ---------------------------------------------------------------

struct CountParamsCmd {
  int hidden = 1024, layers = 24;
  double backbone = 1.24e9;
  std::string shape = "vector", sharing = "per-module", arch = "linear";
  bool all = false;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--hidden", hidden, "Hidden width");
    cmd->add_option("--layers", layers, "Transformer layers");
    cmd->add_option("--backbone", backbone,
                    "Backbone parameter count for the overhead column");
    cmd->add_option("--gate-shape", shape, "scalar|vector");
    cmd->add_option("--gate-sharing", sharing, "shared|per-module");
    cmd->add_option("--gate-arch", arch, "linear|two-layer");
    cmd->add_flag("--all", all, "Print the five standard variants");
  }

  int run() const {
    if (layers < 1) {
      throw std::invalid_argument("count-params: layers must be >= 1");
    }
    if (!(backbone > 0.0)) {
      throw std::invalid_argument("count-params: backbone must be > 0");
    }
    struct Row {
      GateShape shape;
      GateSharing sharing;
      GateArch arch;
    };
    std::vector<Row> rows;
    if (all) {
      rows = {{GateShape::Vector, GateSharing::PerModule, GateArch::Linear},
              {GateShape::Scalar, GateSharing::PerModule, GateArch::Linear},
              {GateShape::Vector, GateSharing::Shared, GateArch::Linear},
              {GateShape::Scalar, GateSharing::Shared, GateArch::Linear},
              {GateShape::Vector, GateSharing::PerModule, GateArch::TwoLayer}};
    } else {
      rows = {{gate_shape_from_string(shape), gate_sharing_from_string(sharing),
               gate_arch_from_string(arch)}};
    }
    std::cout << "shape sharing arch gate_params overhead_pct\n";
    for (const Row& r : rows) {
      GateConfig gc;
      gc.shape = r.shape;
      gc.sharing = r.sharing;
      gc.arch = r.arch;
      gc.validate();
      const std::int64_t n = gate_param_count(gc, hidden, layers);
      std::cout << to_string(r.shape) << ' ' << to_string(r.sharing) << ' '
                << to_string(r.arch) << ' ' << n << ' '
                << fmt_fixed(100.0 * static_cast<double>(n) / backbone, 4)
                << '\n';
    }
    return 0;
  }
};

// ---- simulate-skip ---------------------------------------------------------------

struct SimulateSkipCmd {
  std::string trace_path, budgets_text, out_path;
  std::uint64_t seed = 0;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--trace", trace_path, "trace.csv from `analyze`")
        ->required();
    cmd->add_option("--budgets", budgets_text,
                    "Comma-separated budgets (default 1.00..0.75)");
    cmd->add_option("--seed", seed, "Random-policy seed");
    cmd->add_option("--out", out_path, "Also write the report to this file");
  }

  int run() const {
    if (!std::filesystem::exists(trace_path)) {
      throw std::invalid_argument("trace file not found: " + trace_path);
    }
    const GateTrace trace = trace_from_csv(read_file(trace_path));
    if (trace.entries.empty()) {
      throw std::invalid_argument("trace file has no entries");
    }
    std::vector<double> budgets = budgets_text.empty()
                                      ? default_budget_grid()
                                      : parse_double_list(budgets_text);
    std::sort(budgets.begin(), budgets.end());  // report ascending

    // Scores per (layer, module) slot, in position order.
    std::map<int, std::vector<double>> slot_scores;
    for (const TraceEntry& e : trace.entries) {
      const int slot = e.layer * 2 + (e.kind == ModuleKind::Mlp ? 1 : 0);
      auto& v = slot_scores[slot];
      if (v.size() <= static_cast<std::size_t>(e.position)) {
        v.resize(static_cast<std::size_t>(e.position) + 1, 0.0);
      }
      v[static_cast<std::size_t>(e.position)] = e.score;
    }

    std::ostringstream os;
    os << "replay of " << trace.entries.size() << " recorded scores over "
       << slot_scores.size() << " modules\n";
    os << "budget quantile_fraction random_fraction overlap\n";
    for (double b : budgets) {
      if (!(b > 0.0 && b <= 1.0)) {
        throw std::invalid_argument("budget outside (0,1]");
      }
      double q_frac = 0.0, r_frac = 0.0, overlap = 0.0;
      for (const auto& [slot, scores] : slot_scores) {
        const SkipMask q = select_skips(scores, b);
        std::vector<int> active(scores.size());
        for (std::size_t i = 0; i < scores.size(); ++i)
          active[i] = static_cast<int>(i);
        const SkipMask r = random_skip_mask(scores.size(), active, 1.0 - b,
                                            module_seed(seed, slot));
        std::size_t inter = 0, uni = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
          inter += (q[i] && r[i]) ? 1 : 0;
          uni += (q[i] || r[i]) ? 1 : 0;
        }
        q_frac += static_cast<double>(q.count()) /
                  static_cast<double>(scores.size());
        r_frac += static_cast<double>(r.count()) /
                  static_cast<double>(scores.size());
        overlap += uni == 0 ? 1.0
                            : static_cast<double>(inter) /
                                  static_cast<double>(uni);
      }
      const double n = static_cast<double>(slot_scores.size());
      os << fmt_fixed(b, 6) << ' ' << fmt_fixed(q_frac / n, 6) << ' '
         << fmt_fixed(r_frac / n, 6) << ' ' << fmt_fixed(overlap / n, 6)
         << '\n';
    }
    std::cout << os.str();
    if (!out_path.empty()) atomic_write_file(out_path, os.str());
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Token-wise layer skipping for a small decoder-only transformer: "
      "train, generate, evaluate, and analyze residual-gated models"};
  app.require_subcommand(1);

  TrainCmd train_cmd;
  GenerateCmd generate_cmd;
  SweepCmd sweep_cmd;
  AnalyzeCmd analyze_cmd;
  CountParamsCmd count_cmd;
  SimulateSkipCmd sim_cmd;

  CLI::App* c_train = app.add_subcommand("train", "Train a gated model");
  train_cmd.add_to(c_train);
  CLI::App* c_gen =
      app.add_subcommand("generate", "Budgeted generation from a checkpoint");
  generate_cmd.add_to(c_gen);
  CLI::App* c_sweep = app.add_subcommand(
      "eval-sweep", "Metrics across a budget grid, with interpolation");
  sweep_cmd.add_to(c_sweep);
  CLI::App* c_analyze = app.add_subcommand(
      "analyze", "Gate heatmaps, vocabulary ranking, distributions");
  analyze_cmd.add_to(c_analyze);
  CLI::App* c_count =
      app.add_subcommand("count-params", "Gate parameter overhead table");
  count_cmd.add_to(c_count);
  CLI::App* c_sim = app.add_subcommand(
      "simulate-skip", "Replay skip policies over a recorded trace");
  sim_cmd.add_to(c_sim);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(c_train)) return train_cmd.run();
    if (app.got_subcommand(c_gen)) return generate_cmd.run();
    if (app.got_subcommand(c_sweep)) return sweep_cmd.run();
    if (app.got_subcommand(c_analyze)) return analyze_cmd.run();
    if (app.got_subcommand(c_count)) return count_cmd.run();
    if (app.got_subcommand(c_sim)) return sim_cmd.run();
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
