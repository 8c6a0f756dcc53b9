#include "resgate/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "resgate/accounting.hpp"
#include "resgate/csv.hpp"
#include "resgate/inference.hpp"

namespace resgate {

void EvalDataset::validate(int vocab, int max_seq) const {
  if (sequences.empty()) {
    throw std::invalid_argument("eval dataset: no sequences");
  }
  auto check_ids = [vocab](const std::vector<int>& ids) {
    for (int id : ids) {
      if (id < 0 || id >= vocab) {
        throw std::out_of_range("eval dataset: token id " +
                                std::to_string(id) + " outside vocabulary");
      }
    }
  };
  for (const auto& seq : sequences) {
    if (seq.size() < 2) {
      throw std::invalid_argument(
          "eval dataset: sequences need >= 2 tokens for next-token metrics");
    }
    if (static_cast<int>(seq.size()) > max_seq) {
      throw std::invalid_argument("eval dataset: sequence longer than max_seq");
    }
    check_ids(seq);
  }
  for (const auto& probe : probes) {
    if (probe.prompt.empty() || probe.completion.empty()) {
      throw std::invalid_argument("eval dataset: probe needs prompt and completion");
    }
    if (static_cast<int>(probe.prompt.size() + probe.completion.size()) >
        max_seq) {
      throw std::invalid_argument("eval dataset: probe longer than max_seq");
    }
    check_ids(probe.prompt);
    check_ids(probe.completion);
  }
}

EvalDataset make_eval_dataset(const std::vector<int>& corpus, int seq_len,
                              int n_sequences, int probe_prompt_len,
                              int probe_completion_len, int n_probes,
                              std::uint64_t seed) {
  if (seq_len < 2 || n_sequences < 1 || n_probes < 0 ||
      (n_probes > 0 && (probe_prompt_len < 1 || probe_completion_len < 1))) {
    throw std::invalid_argument("make_eval_dataset: bad window sizes");
  }
  const std::size_t n = corpus.size();
  const std::size_t probe_len =
      static_cast<std::size_t>(probe_prompt_len + probe_completion_len);
  if (n < static_cast<std::size_t>(seq_len) ||
      (n_probes > 0 && n < probe_len)) {
    throw std::invalid_argument("make_eval_dataset: corpus too short");
  }
  Rng rng(seed);
  EvalDataset ds;
  for (int i = 0; i < n_sequences; ++i) {
    const std::size_t start = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::uint64_t>(n - seq_len + 1)));
    ds.sequences.emplace_back(
        corpus.begin() + static_cast<std::ptrdiff_t>(start),
        corpus.begin() + static_cast<std::ptrdiff_t>(start + seq_len));
  }
  for (int i = 0; i < n_probes; ++i) {
    const std::size_t start = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::uint64_t>(n - probe_len + 1)));
    EvalDataset::Probe probe;
    probe.prompt.assign(
        corpus.begin() + static_cast<std::ptrdiff_t>(start),
        corpus.begin() + static_cast<std::ptrdiff_t>(start + probe_prompt_len));
    probe.completion.assign(
        corpus.begin() + static_cast<std::ptrdiff_t>(start + probe_prompt_len),
        corpus.begin() + static_cast<std::ptrdiff_t>(start + probe_len));
    ds.probes.push_back(std::move(probe));
  }
  return ds;
}

namespace {

SweepPoint eval_core(const Model& model, const EvalDataset& dataset,
                     const GenerationConfig& base, std::uint64_t seed) {
  const ModelConfig& cfg = model.config();
  dataset.validate(cfg.vocab, cfg.max_seq);

  std::vector<InferenceEvent> all_events;
  std::int64_t head_positions = 0;
  std::int64_t correct = 0, predicted = 0;
  double nll = 0.0;

  for (std::size_t si = 0; si < dataset.sequences.size(); ++si) {
    const auto& seq = dataset.sequences[si];
    GenerationConfig gc = base;
    gc.seed = seed + 1000003ull * si;
    KVCache cache(cfg.n_layers, cfg.hidden, static_cast<int>(seq.size()));
    PrefillResult pf = prefill(model, seq, gc, cache);
    all_events.insert(all_events.end(), pf.events.begin(), pf.events.end());
    head_positions += static_cast<std::int64_t>(seq.size());

    const int v = cfg.vocab;
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      const double* row = pf.logits.data() + i * static_cast<std::size_t>(v);
      const int target = seq[i + 1];
      int best = 0;
      double mx = row[0];
      for (int j = 1; j < v; ++j) {
        if (row[j] > mx) {
          mx = row[j];
          best = j;
        }
      }
      double sum = 0.0;
      for (int j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
      nll += (std::log(sum) + mx) - row[target];
      correct += best == target ? 1 : 0;
      predicted += 1;
    }
  }

  std::int64_t matches = 0;
  for (std::size_t pi = 0; pi < dataset.probes.size(); ++pi) {
    const auto& probe = dataset.probes[pi];
    GenerationConfig gc = base;
    gc.seed = seed + 2000003ull * (pi + 1);
    gc.max_new_tokens = static_cast<int>(probe.completion.size());
    gc.greedy = true;
    gc.eos_id = -1;  // run the full completion length
    GenerateResult gen = generate(model, probe.prompt, gc);
    const std::size_t prefix = probe.prompt.size();
    const bool match =
        gen.tokens.size() == prefix + probe.completion.size() &&
        std::equal(probe.completion.begin(), probe.completion.end(),
                   gen.tokens.begin() + static_cast<std::ptrdiff_t>(prefix));
    matches += match ? 1 : 0;
    all_events.insert(all_events.end(), gen.events.begin(), gen.events.end());
    // Every position the head actually scored: the prompt plus each decode.
    const std::int64_t slots = 2ll * cfg.n_layers;
    head_positions += static_cast<std::int64_t>(gen.events.size()) / slots;
  }

  SweepPoint point;
  point.requested_budget = base.budget;
  point.accuracy =
      predicted == 0 ? 0.0
                     : static_cast<double>(correct) /
                           static_cast<double>(predicted);
  point.perplexity =
      predicted == 0 ? 1.0
                     : std::exp(nll / static_cast<double>(predicted));
  point.exact_match =
      dataset.probes.empty()
          ? 0.0
          : static_cast<double>(matches) /
                static_cast<double>(dataset.probes.size());
  const FlopReport report =
      flop_report(to_module_records(all_events, cfg), cfg, head_positions);
  point.realized_savings = report.saved_fraction;
  return point;
}

}  // namespace

SweepPoint eval_at_budget(const Model& model, const EvalDataset& dataset,
                          double budget) {
  GenerationConfig gc;
  gc.policy = SkipMode::Budget;
  gc.budget = budget;
  SweepPoint point = eval_core(model, dataset, gc, 0);
  point.requested_budget = budget;
  point.baseline = false;
  return point;
}

SweepPoint eval_random(const Model& model, const EvalDataset& dataset,
                       double skip_fraction, std::uint64_t seed) {
  if (skip_fraction < 0.0 || skip_fraction > 1.0) {
    throw std::invalid_argument("eval_random: fraction outside [0,1]");
  }
  GenerationConfig gc;
  gc.policy = SkipMode::Random;
  gc.random_fraction = skip_fraction;
  SweepPoint point = eval_core(model, dataset, gc, seed);
  point.requested_budget = 1.0 - skip_fraction;  // budget-equivalent axis
  point.baseline = true;
  return point;
}

std::vector<SweepPoint> compare_random_baseline(
    const Model& model, const EvalDataset& dataset,
    const std::vector<double>& skip_fractions, std::uint64_t seed) {
  std::vector<SweepPoint> out;
  out.reserve(skip_fractions.size());
  for (double f : skip_fractions) out.push_back(eval_random(model, dataset, f, seed));
  return out;
}

std::vector<GridMetrics> interpolate_to_grid(
    const std::vector<SweepPoint>& points,
    const std::vector<double>& targets) {
  // Average duplicate abscissae, then sort ascending.
  std::map<double, std::vector<const SweepPoint*>> by_x;
  for (const SweepPoint& p : points) by_x[p.realized_savings].push_back(&p);
  if (by_x.size() < 2) {
    throw std::invalid_argument(
        "interpolate_to_grid: need >= 2 points with distinct realized savings");
  }
  struct Knot {
    double x, acc, ppl, em;
  };
  std::vector<Knot> knots;
  knots.reserve(by_x.size());
  for (const auto& [x, group] : by_x) {
    Knot k{x, 0.0, 0.0, 0.0};
    for (const SweepPoint* p : group) {
      k.acc += p->accuracy;
      k.ppl += p->perplexity;
      k.em += p->exact_match;
    }
    const double n = static_cast<double>(group.size());
    k.acc /= n;
    k.ppl /= n;
    k.em /= n;
    knots.push_back(k);
  }

  std::vector<GridMetrics> out;
  out.reserve(targets.size());
  for (double t : targets) {
    GridMetrics gm;
    gm.target = t;
    if (t < knots.front().x || t > knots.back().x) {
      gm.available = false;  // outside the measured range: refuse to guess
      out.push_back(gm);
      continue;
    }
    std::size_t hi = 0;
    while (knots[hi].x < t) ++hi;
    if (knots[hi].x == t) {
      gm.available = true;
      gm.accuracy = knots[hi].acc;
      gm.perplexity = knots[hi].ppl;
      gm.exact_match = knots[hi].em;
    } else {
      const Knot& a = knots[hi - 1];
      const Knot& b = knots[hi];
      const double alpha = (t - a.x) / (b.x - a.x);
      gm.available = true;
      gm.accuracy = a.acc + alpha * (b.acc - a.acc);
      gm.perplexity = a.ppl + alpha * (b.ppl - a.ppl);
      gm.exact_match = a.em + alpha * (b.em - a.em);
    }
    out.push_back(gm);
  }
  return out;
}

std::vector<double> default_budget_grid() {
  return {1.00, 0.95, 0.90, 0.85, 0.80, 0.75};
}

std::vector<double> default_savings_grid() {
  return {0.00, 0.05, 0.10, 0.15, 0.20, 0.25};
}

SweepReport run_sweep(const Model& model, const EvalDataset& dataset,
                      const std::vector<double>& budgets,
                      const std::vector<double>& savings_targets,
                      bool with_baseline, std::uint64_t seed) {
  if (budgets.empty()) {
    throw std::invalid_argument("run_sweep: no budgets requested");
  }
  SweepReport report;
  for (double b : budgets) {
    report.points.push_back(eval_at_budget(model, dataset, b));
    if (with_baseline) {
      report.baseline_points.push_back(
          eval_random(model, dataset, 1.0 - b, seed));
    }
  }
  std::vector<double> xs;
  for (const SweepPoint& p : report.points) xs.push_back(p.realized_savings);
  std::sort(xs.begin(), xs.end());
  const bool distinct = xs.size() >= 2 && xs.front() != xs.back();
  if (!savings_targets.empty() && distinct) {
    report.grid = interpolate_to_grid(report.points, savings_targets);
  } else {
    for (double t : savings_targets) {
      GridMetrics gm;
      gm.target = t;
      gm.available = false;
      report.grid.push_back(gm);
    }
  }
  return report;
}

std::string SweepReport::to_text() const {
  std::ostringstream os;
  os << "budget sweep: " << points.size() << " points, "
     << baseline_points.size() << " baseline points\n";
  os << "requested_budget realized_savings accuracy perplexity exact_match "
        "baseline\n";
  auto line = [&os](const SweepPoint& p) {
    os << fmt_fixed(p.requested_budget, 6) << ' '
       << fmt_fixed(p.realized_savings, 6) << ' ' << fmt_fixed(p.accuracy, 6)
       << ' ' << fmt_fixed(p.perplexity, 6) << ' '
       << fmt_fixed(p.exact_match, 6) << ' ' << (p.baseline ? 1 : 0) << '\n';
  };
  for (const SweepPoint& p : points) line(p);
  for (const SweepPoint& p : baseline_points) line(p);
  if (!grid.empty()) {
    os << "interpolated at realized savings:\n";
    os << "target accuracy perplexity exact_match\n";
    for (const GridMetrics& g : grid) {
      os << fmt_fixed(g.target, 6) << ' ';
      if (g.available) {
        os << fmt_fixed(g.accuracy, 6) << ' ' << fmt_fixed(g.perplexity, 6)
           << ' ' << fmt_fixed(g.exact_match, 6) << '\n';
      } else {
        os << "unavailable (outside measured range)\n";
      }
    }
  }
  return os.str();
}

std::string SweepReport::to_csv() const {
  std::string out =
      "requested_budget,realized_savings,accuracy,perplexity,exact_match,"
      "baseline\n";
  auto line = [&out](const SweepPoint& p) {
    out += csv_join({fmt_double(p.requested_budget),
                     fmt_double(p.realized_savings), fmt_double(p.accuracy),
                     fmt_double(p.perplexity), fmt_double(p.exact_match),
                     p.baseline ? "1" : "0"});
    out += '\n';
  };
  for (const SweepPoint& p : points) line(p);
  for (const SweepPoint& p : baseline_points) line(p);
  return out;
}

}  // namespace resgate
