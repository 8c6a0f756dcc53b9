// Python bindings for the main operations: gate parameter accounting,
// quantile thresholding, budget schedules, model construction, budgeted
// forward/generate, checkpoints, and the FLOP model.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "resgate/accounting.hpp"
#include "resgate/analysis.hpp"
#include "resgate/inference.hpp"
#include "resgate/io.hpp"
#include "resgate/model.hpp"
#include "resgate/skipping.hpp"
#include "resgate/tokenizer.hpp"

namespace py = pybind11;
using namespace resgate;

namespace {

GateConfig make_gate_config(const std::string& shape,
                            const std::string& sharing,
                            const std::string& placement,
                            const std::string& arch,
                            const std::string& granularity) {
  GateConfig gc;
  gc.shape = gate_shape_from_string(shape);
  gc.sharing = gate_sharing_from_string(sharing);
  gc.placement = gate_placement_from_string(placement);
  gc.arch = gate_arch_from_string(arch);
  gc.granularity = skip_granularity_from_string(granularity);
  gc.validate();
  return gc;
}

class PyModel {
 public:
  PyModel(int layers, int hidden, int heads, int ff_dim, int vocab,
          int max_seq, const std::string& shape, const std::string& sharing,
          const std::string& placement, const std::string& arch,
          const std::string& granularity, std::uint64_t seed) {
    ModelConfig cfg;
    cfg.n_layers = layers;
    cfg.hidden = hidden;
    cfg.n_heads = heads;
    cfg.ff_dim = ff_dim;
    cfg.vocab = vocab;
    cfg.max_seq = max_seq;
    cfg.gate = make_gate_config(shape, sharing, placement, arch, granularity);
    cfg.validate();
    model_ = std::make_unique<Model>(cfg, seed);
  }

  explicit PyModel(std::unique_ptr<Model> m) : model_(std::move(m)) {}

  std::int64_t param_count() const { return model_->param_count(); }
  std::int64_t backbone_param_count() const {
    return model_->backbone_param_count();
  }
  std::int64_t gate_params() const {
    const ModelConfig& c = model_->config();
    return gate_param_count(c.gate, c.hidden, c.n_layers);
  }

  // Full-sequence logits plus per-module skip masks under budgeted skipping.
  py::tuple forward(const std::vector<int>& tokens, double budget) const {
    GenerationConfig gc;
    gc.budget = budget;
    gc.policy = budget >= 1.0 ? SkipMode::None : SkipMode::Budget;
    KVCache cache(model_->config().n_layers, model_->config().hidden,
                  std::max<int>(1, static_cast<int>(tokens.size())));
    PrefillResult pf = prefill(*model_, tokens, gc, cache);
    std::vector<std::vector<bool>> masks;
    const std::size_t s = tokens.size();
    std::vector<bool> current;
    for (std::size_t i = 0; i < pf.events.size(); ++i) {
      current.push_back(pf.events[i].skipped);
      if (current.size() == s) {
        masks.push_back(current);
        current.clear();
      }
    }
    return py::make_tuple(pf.logits, masks);
  }

  py::dict generate(const std::vector<int>& prompt, double budget,
                    int max_new_tokens, std::uint64_t seed) const {
    GenerationConfig gc;
    gc.budget = budget;
    gc.policy = budget >= 1.0 ? SkipMode::None : SkipMode::Budget;
    gc.max_new_tokens = max_new_tokens;
    gc.seed = seed;
    GenerateResult r = resgate::generate(*model_, prompt, gc);
    py::dict out;
    out["tokens"] = r.tokens;
    out["prompt_len"] = r.prompt_len;
    out["saved_fraction"] = r.flops.saved_fraction;
    out["total_flops"] = r.flops.total_flops;
    return out;
  }

  void save(const std::string& path) const { save_checkpoint(path, *model_); }

  const Model& model() const { return *model_; }

 private:
  std::unique_ptr<Model> model_;
};

}  // namespace

PYBIND11_MODULE(_resgate, m) {
  m.doc() =
      "Residual-gated transformer with token-wise layer skipping: core "
      "operations";

  m.def(
      "gate_param_count",
      [](const std::string& shape, const std::string& sharing,
         const std::string& arch, int hidden, int layers) {
        GateConfig gc = make_gate_config(shape, sharing, "exit", arch, "all");
        return gate_param_count(gc, hidden, layers);
      },
      py::arg("shape"), py::arg("sharing"), py::arg("arch"), py::arg("hidden"),
      py::arg("layers"), "Exact gate parameter count for a configuration");

  m.def("quantile_threshold", &quantile_threshold, py::arg("values"),
        py::arg("q"),
        "Quantile with linear interpolation between order statistics");

  m.def(
      "budget_at",
      [](double b1, double b2, int total_steps, int t) {
        return budget_at(BudgetSchedule{b1, b2, total_steps}, t);
      },
      py::arg("b1"), py::arg("b2"), py::arg("total_steps"), py::arg("t"),
      "Linearly decayed budget at 1-based step t");

  m.def(
      "select_skips",
      [](const std::vector<double>& scores, double budget) {
        const SkipMask mask = select_skips(scores, budget);
        std::vector<bool> out(mask.size());
        for (std::size_t i = 0; i < mask.size(); ++i) out[i] = mask[i];
        return out;
      },
      py::arg("scores"), py::arg("budget"),
      "Skip decisions: score <= (1-b)-quantile threshold");

  m.def(
      "random_skip_mask",
      [](std::size_t n, double fraction, std::uint64_t seed) {
        std::vector<int> active(n);
        for (std::size_t i = 0; i < n; ++i) active[i] = static_cast<int>(i);
        const SkipMask mask = random_skip_mask(n, active, fraction, seed);
        std::vector<bool> out(mask.size());
        for (std::size_t i = 0; i < mask.size(); ++i) out[i] = mask[i];
        return out;
      },
      py::arg("n"), py::arg("fraction"), py::arg("seed"),
      "Uniform random skip baseline with an exact skip count");

  m.def(
      "module_flops",
      [](const std::string& kind, int hidden, int ff_dim, int ctx) {
        CostKind ck;
        if (kind == "attention") ck = CostKind::Attention;
        else if (kind == "mlp") ck = CostKind::Mlp;
        else if (kind == "gate-linear-vector") ck = CostKind::GateLinearVector;
        else if (kind == "gate-linear-scalar") ck = CostKind::GateLinearScalar;
        else if (kind == "gate-two-layer") ck = CostKind::GateTwoLayer;
        else throw std::invalid_argument("unknown cost kind: " + kind);
        return module_flops(ck, hidden, ff_dim, ctx);
      },
      py::arg("kind"), py::arg("hidden"), py::arg("ff_dim"),
      py::arg("ctx") = 1, "Per-token FLOPs of one module application");

  m.def("encode_bytes", &encode_bytes, py::arg("text"));
  m.def("decode_bytes", &decode_bytes, py::arg("ids"));
  m.def("token_label", &token_label, py::arg("id"));
  m.attr("BOS_ID") = kBosId;
  m.attr("EOS_ID") = kEosId;

  py::class_<PyModel>(m, "Model")
      .def(py::init<int, int, int, int, int, int, const std::string&,
                    const std::string&, const std::string&, const std::string&,
                    const std::string&, std::uint64_t>(),
           py::arg("layers") = 4, py::arg("hidden") = 64, py::arg("heads") = 4,
           py::arg("ff_dim") = 256, py::arg("vocab") = 258,
           py::arg("max_seq") = 256, py::arg("shape") = "vector",
           py::arg("sharing") = "per-module", py::arg("placement") = "exit",
           py::arg("arch") = "linear", py::arg("granularity") = "all",
           py::arg("seed") = 0)
      .def("param_count", &PyModel::param_count)
      .def("backbone_param_count", &PyModel::backbone_param_count)
      .def("gate_param_count", &PyModel::gate_params)
      .def("forward", &PyModel::forward, py::arg("tokens"),
           py::arg("budget") = 1.0,
           "Returns (logits row-major [S*V], per-module skip masks)")
      .def("generate", &PyModel::generate, py::arg("prompt"),
           py::arg("budget") = 1.0, py::arg("max_new_tokens") = 32,
           py::arg("seed") = 0)
      .def("save", &PyModel::save, py::arg("path"))
      .def_static("load", [](const std::string& path) {
        return PyModel(std::make_unique<Model>(load_checkpoint(path)));
      });
}
