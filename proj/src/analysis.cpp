#include "resgate/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "resgate/csv.hpp"
#include "resgate/skipping.hpp"
#include "resgate/tokenizer.hpp"

namespace resgate {

GateTrace record_trace(const Model& model, const std::vector<int>& tokens,
                       double budget) {
  GenerationConfig gc;
  gc.budget = budget;
  gc.policy = SkipMode::Budget;
  KVCache cache(model.config().n_layers, model.config().hidden,
                std::max<int>(1, static_cast<int>(tokens.size())));
  PrefillResult pf = prefill(model, tokens, gc, cache);

  GateTrace trace;
  trace.tokens = tokens;
  trace.budget = budget;
  trace.entries.reserve(pf.events.size());
  for (const InferenceEvent& ev : pf.events) {
    TraceEntry e;
    e.layer = ev.layer;
    e.kind = ev.kind;
    e.position = ev.position;
    e.token_id = ev.token_id;
    e.score = ev.score;
    e.skipped = ev.skipped;
    trace.entries.push_back(e);
  }
  return trace;
}

std::string trace_csv(const GateTrace& trace) {
  std::string out = "layer,module,position,token,token_id,score,skipped\n";
  for (const TraceEntry& e : trace.entries) {
    out += csv_join({std::to_string(e.layer), to_string(e.kind),
                     std::to_string(e.position), token_label(e.token_id),
                     std::to_string(e.token_id), fmt_double(e.score),
                     e.skipped ? "1" : "0"});
    out += '\n';
  }
  return out;
}

GateTrace trace_from_csv(const std::string& text) {
  const auto rows = csv_parse(text);
  if (rows.empty() || rows[0].size() != 7) {
    throw std::invalid_argument("trace csv: missing or malformed header");
  }
  GateTrace trace;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != 7) {
      throw std::invalid_argument("trace csv: row " + std::to_string(r) +
                                  " has " + std::to_string(row.size()) +
                                  " fields, expected 7");
    }
    TraceEntry e;
    e.layer = std::stoi(row[0]);
    e.kind = row[1] == to_string(ModuleKind::Mlp) ? ModuleKind::Mlp
                                                  : ModuleKind::Attention;
    e.position = std::stoi(row[2]);
    e.token_id = std::stoi(row[4]);
    e.score = std::stod(row[5]);
    e.skipped = row[6] == "1";
    if (e.position >= 0) {
      if (trace.tokens.size() <= static_cast<std::size_t>(e.position)) {
        trace.tokens.resize(static_cast<std::size_t>(e.position) + 1, -1);
      }
      trace.tokens[static_cast<std::size_t>(e.position)] = e.token_id;
    }
    trace.entries.push_back(e);
  }
  return trace;
}

Heatmap heatmap_matrix(const GateTrace& trace, ModuleKind kind) {
  Heatmap hm;
  hm.tokens = trace.tokens;
  const std::size_t s = trace.tokens.size();
  for (const TraceEntry& e : trace.entries) {
    hm.n_layers = std::max(hm.n_layers, e.layer + 1);
  }
  hm.values.assign(static_cast<std::size_t>(hm.n_layers) * s, 0.0);
  for (const TraceEntry& e : trace.entries) {
    if (e.kind != kind) continue;
    if (e.position < 0 || static_cast<std::size_t>(e.position) >= s) {
      throw std::invalid_argument("heatmap: trace position out of range");
    }
    hm.values[static_cast<std::size_t>(e.layer) * s +
              static_cast<std::size_t>(e.position)] = e.score;
  }
  return hm;
}

std::string heatmap_csv(const Heatmap& hm) {
  std::vector<std::string> header{"layer"};
  for (int id : hm.tokens) header.push_back(token_label(id));
  std::string out = csv_join(header) + '\n';
  const std::size_t s = hm.tokens.size();
  for (int l = 0; l < hm.n_layers; ++l) {
    std::vector<std::string> row{std::to_string(l)};
    for (std::size_t i = 0; i < s; ++i) {
      row.push_back(fmt_double(hm.values[static_cast<std::size_t>(l) * s + i]));
    }
    out += csv_join(row) + '\n';
  }
  return out;
}

Heatmap heatmap_from_csv(const std::string& text) {
  const auto rows = csv_parse(text);
  if (rows.empty() || rows[0].empty() || rows[0][0] != "layer") {
    throw std::invalid_argument("heatmap csv: missing header");
  }
  Heatmap hm;
  for (std::size_t i = 1; i < rows[0].size(); ++i) {
    hm.tokens.push_back(token_from_label(rows[0][i]));
  }
  const std::size_t s = hm.tokens.size();
  hm.n_layers = static_cast<int>(rows.size()) - 1;
  hm.values.assign(static_cast<std::size_t>(hm.n_layers) * s, 0.0);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != s + 1) {
      throw std::invalid_argument("heatmap csv: row " + std::to_string(r) +
                                  " has wrong field count");
    }
    for (std::size_t i = 0; i < s; ++i) {
      hm.values[(r - 1) * s + i] = std::stod(rows[r][i + 1]);
    }
  }
  return hm;
}

void VocabStats::add(int token_id, double activation) {
  Entry& e = acc_[token_id];
  e.id = token_id;
  e.count += 1;
  e.mean += (activation - e.mean) / static_cast<double>(e.count);
}

void VocabStats::add_trace(const GateTrace& trace, bool include_attention,
                           bool include_mlp) {
  for (const TraceEntry& e : trace.entries) {
    const bool is_attn = e.kind == ModuleKind::Attention;
    if ((is_attn && include_attention) || (!is_attn && include_mlp)) {
      add(e.token_id, e.score);
    }
  }
}

void VocabStats::merge(const VocabStats& other) {
  for (const auto& [id, oe] : other.acc_) {
    Entry& e = acc_[id];
    e.id = id;
    const std::int64_t combined = e.count + oe.count;
    // Stable running-mean combination; associative up to rounding.
    e.mean += (oe.mean - e.mean) *
              (static_cast<double>(oe.count) / static_cast<double>(combined));
    e.count = combined;
  }
}

std::vector<VocabStats::Entry> VocabStats::entries() const {
  std::vector<Entry> out;
  out.reserve(acc_.size());
  for (const auto& [id, e] : acc_) out.push_back(e);
  return out;
}

std::int64_t VocabStats::total_count() const {
  std::int64_t n = 0;
  for (const auto& [id, e] : acc_) n += e.count;
  return n;
}

VocabTopK vocab_topk(const VocabStats& stats, int k) {
  if (k < 1) throw std::invalid_argument("vocab_topk: k must be >= 1");
  VocabTopK result;
  result.ranked = stats.entries();
  std::sort(result.ranked.begin(), result.ranked.end(),
            [](const VocabStats::Entry& a, const VocabStats::Entry& b) {
              if (a.mean != b.mean) return a.mean > b.mean;
              return a.id < b.id;
            });
  if (result.ranked.size() > static_cast<std::size_t>(k)) {
    result.ranked.resize(static_cast<std::size_t>(k));
  }
  if (result.ranked.size() >= 2) {
    result.rank1_margin = result.ranked[0].mean - result.ranked[1].mean;
  }
  return result;
}

std::string vocab_csv(const VocabStats& stats) {
  std::string out = "id,token,mean,count\n";
  for (const VocabStats::Entry& e : stats.entries()) {
    out += csv_join({std::to_string(e.id), token_label(e.id),
                     fmt_double(e.mean), std::to_string(e.count)});
    out += '\n';
  }
  return out;
}

DistributionSummary distribution_stats(const std::vector<GateTrace>& traces,
                                       int layer, ModuleKind kind) {
  std::vector<double> samples;
  for (const GateTrace& t : traces) {
    for (const TraceEntry& e : t.entries) {
      if (e.layer == layer && e.kind == kind) samples.push_back(e.score);
    }
  }
  if (samples.size() < 2) {
    throw std::invalid_argument(
        "distribution_stats: fewer than 2 samples for layer " +
        std::to_string(layer) + " " + to_string(kind));
  }
  DistributionSummary s;
  s.layer = layer;
  s.kind = kind;
  s.count = static_cast<std::int64_t>(samples.size());
  double sum = 0.0;
  s.min = samples[0];
  s.max = samples[0];
  for (double v : samples) {
    sum += v;
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
  }
  s.mean = sum / static_cast<double>(samples.size());
  double sq = 0.0;
  for (double v : samples) sq += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(sq / static_cast<double>(samples.size()));
  const std::array<double, 7> qs{0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99};
  for (std::size_t i = 0; i < qs.size(); ++i) {
    s.quantiles[i] = quantile_threshold(samples, qs[i]);
  }
  for (double v : samples) {
    int bin = static_cast<int>(v * 256.0);
    bin = std::clamp(bin, 0, 255);
    s.histogram[static_cast<std::size_t>(bin)] += 1;
  }
  return s;
}

std::string distribution_csv(const std::vector<DistributionSummary>& rows) {
  std::vector<std::string> header{"layer", "module", "count", "mean",
                                  "std",   "min",    "max"};
  for (const char* q : {"q01", "q05", "q25", "q50", "q75", "q95", "q99"}) {
    header.push_back(q);
  }
  for (int b = 0; b < 256; ++b) header.push_back("h" + std::to_string(b));
  std::string out = csv_join(header) + '\n';
  for (const DistributionSummary& s : rows) {
    std::vector<std::string> row{
        std::to_string(s.layer), to_string(s.kind), std::to_string(s.count),
        fmt_double(s.mean),      fmt_double(s.stddev),
        fmt_double(s.min),       fmt_double(s.max)};
    for (double q : s.quantiles) row.push_back(fmt_double(q));
    for (std::int64_t h : s.histogram) row.push_back(std::to_string(h));
    out += csv_join(row) + '\n';
  }
  return out;
}

}  // namespace resgate
