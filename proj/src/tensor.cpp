#include "resgate/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace resgate {

namespace {

thread_local int g_no_grad_depth = 0;

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dimensions must be >= 1");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::shared_ptr<TensorImpl> make_impl(std::vector<int> shape,
                                      std::vector<double> data) {
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("tensor data length does not match shape " +
                                shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

// Treats a tensor as a matrix: last dimension = columns, the rest = rows.
int last_dim(const TensorImpl& t) {
  if (t.shape.empty()) return 1;
  return t.shape.back();
}
int row_count(const TensorImpl& t) {
  return static_cast<int>(t.numel()) / last_dim(t);
}

void require_2d(const Tensor& t, const char* op) {
  if (t.shape().size() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected 2-D tensor, got " +
                                shape_str(t.shape()));
  }
}

// Builds the output node and wires the graph when recording is active.
Tensor make_result(std::vector<int> shape, std::vector<double> data,
                   std::vector<Tensor> parents,
                   std::function<void(TensorImpl&)> backward_fn) {
  auto impl = make_impl(std::move(shape), std::move(data));
  bool needs_grad = false;
  if (grad_enabled()) {
    for (const Tensor& p : parents) needs_grad = needs_grad || p.requires_grad();
  }
  if (needs_grad) {
    impl->requires_grad = true;
    impl->parents.reserve(parents.size());
    for (const Tensor& p : parents) impl->parents.push_back(p.impl_ptr());
    impl->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(impl));
}

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_no_grad_depth == 0; }
NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

// ---- factories ----

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  auto impl = make_impl(std::move(shape), std::vector<double>(n, 0.0));
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  auto impl = make_impl(std::move(shape), std::vector<double>(n, value));
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values,
                    bool requires_grad) {
  auto impl = make_impl(std::move(shape), std::move(values));
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev,
                     bool requires_grad) {
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = rng.normal() * stddev;
  auto impl = make_impl(std::move(shape), std::move(values));
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item: tensor " + shape_str(shape()) +
                                " is not a scalar");
  }
  return impl_->data[0];
}

double Tensor::at(int i) const { return impl_->data[static_cast<std::size_t>(i)]; }

double Tensor::at(int i, int j) const {
  const int cols = last_dim(*impl_);
  return impl_->data[static_cast<std::size_t>(i) * cols + j];
}

// ---- backward ----

void Tensor::backward() const {
  if (!impl_) throw std::invalid_argument("backward: undefined tensor");
  if (impl_->numel() != 1) {
    throw std::invalid_argument("backward: expected scalar, got " +
                                shape_str(impl_->shape));
  }
  if (!impl_->requires_grad) {
    throw std::invalid_argument("backward: tensor does not require grad");
  }

  // Iterative post-order DFS over parent edges; reversed it is a valid
  // topological order, so every node's grad is complete before its rule runs.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  struct Frame {
    TensorImpl* node;
    std::size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({impl_.get(), 0});
  visited.insert(impl_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      TensorImpl* p = f.node->parents[f.next++].get();
      if (p->requires_grad && visited.insert(p).second) {
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  impl_->ensure_grad();
  impl_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

// ---- raw kernels ----

void mm_ab(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void mm_abt(const double* a, const double* b, double* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * n;
    double* crow = c + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double* brow = b + static_cast<std::size_t>(p) * n;
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

void mm_atb(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    const double* brow = b + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// ---- operations ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const int m = a.dim(0), k = a.dim(1);
  if (b.dim(0) != k) {
    throw std::invalid_argument("matmul: inner dimensions differ: " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  const int n = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  mm_ab(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {a, b},
                     [m, k, n](TensorImpl& self) {
                       auto& pa = *self.parents[0];
                       auto& pb = *self.parents[1];
                       if (pa.requires_grad) {
                         pa.ensure_grad();
                         mm_abt(self.grad.data(), pb.data.data(),
                                pa.grad.data(), m, n, k);
                       }
                       if (pb.requires_grad) {
                         pb.ensure_grad();
                         mm_atb(pa.data.data(), self.grad.data(),
                                pb.grad.data(), m, k, n);
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& w) {
  require_2d(x, "linear");
  require_2d(w, "linear");
  const int m = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  if (w.dim(1) != in) {
    throw std::invalid_argument("linear: input width mismatch: " +
                                shape_str(x.shape()) + " vs weight " +
                                shape_str(w.shape()));
  }
  std::vector<double> out(static_cast<std::size_t>(m) * out_dim, 0.0);
  mm_abt(x.data().data(), w.data().data(), out.data(), m, in, out_dim);
  return make_result({m, out_dim}, std::move(out), {x, w},
                     [m, in, out_dim](TensorImpl& self) {
                       auto& px = *self.parents[0];
                       auto& pw = *self.parents[1];
                       if (px.requires_grad) {
                         px.ensure_grad();
                         mm_ab(self.grad.data(), pw.data.data(),
                               px.grad.data(), m, out_dim, in);
                       }
                       if (pw.requires_grad) {
                         pw.ensure_grad();
                         mm_atb(self.grad.data(), px.data.data(),
                                pw.grad.data(), m, out_dim, in);
                       }
                     });
}

namespace {
void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch: " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
    for (int which = 0; which < 2; ++which) {
      auto& p = *self.parents[static_cast<std::size_t>(which)];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        p.grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pb.grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pa.grad[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pb.grad[i] += self.grad[i] * pa.data[i];
    }
  });
}

Tensor add_rowvec(const Tensor& x, const Tensor& bias) {
  const int n = last_dim(*x.impl());
  if (static_cast<int>(bias.numel()) != n) {
    throw std::invalid_argument("add_rowvec: bias " + shape_str(bias.shape()) +
                                " does not match row width of " +
                                shape_str(x.shape()));
  }
  const int m = row_count(*x.impl());
  std::vector<double> out(x.data());
  const auto& bd = bias.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] += bd[j];
  return make_result(x.shape(), std::move(out), {x, bias},
                     [m, n](TensorImpl& self) {
                       auto& px = *self.parents[0];
                       auto& pb = *self.parents[1];
                       if (px.requires_grad) {
                         px.ensure_grad();
                         for (std::size_t i = 0; i < self.grad.size(); ++i)
                           px.grad[i] += self.grad[i];
                       }
                       if (pb.requires_grad) {
                         pb.ensure_grad();
                         for (int i = 0; i < m; ++i)
                           for (int j = 0; j < n; ++j)
                             pb.grad[j] +=
                                 self.grad[static_cast<std::size_t>(i) * n + j];
                       }
                     });
}

Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.data());
  for (double& v : out) v *= c;
  return make_result(x.shape(), std::move(out), {x}, [c](TensorImpl& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    px.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      px.grad[i] += c * self.grad[i];
  });
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  const int n = last_dim(*x.impl());
  const int m = row_count(*x.impl());
  if (static_cast<int>(s.numel()) != m) {
    throw std::invalid_argument("scale_rows: scales " + shape_str(s.shape()) +
                                " do not match row count of " +
                                shape_str(x.shape()));
  }
  std::vector<double> out(x.data());
  const auto& sd = s.data();
  for (int i = 0; i < m; ++i) {
    const double sv = sd[static_cast<std::size_t>(i)];
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] *= sv;
  }
  return make_result(x.shape(), std::move(out), {x, s},
                     [m, n](TensorImpl& self) {
                       auto& px = *self.parents[0];
                       auto& ps = *self.parents[1];
                       if (px.requires_grad) {
                         px.ensure_grad();
                         for (int i = 0; i < m; ++i) {
                           const double sv = ps.data[static_cast<std::size_t>(i)];
                           for (int j = 0; j < n; ++j) {
                             const auto idx = static_cast<std::size_t>(i) * n + j;
                             px.grad[idx] += self.grad[idx] * sv;
                           }
                         }
                       }
                       if (ps.requires_grad) {
                         ps.ensure_grad();
                         for (int i = 0; i < m; ++i) {
                           double acc = 0.0;
                           for (int j = 0; j < n; ++j) {
                             const auto idx = static_cast<std::size_t>(i) * n + j;
                             acc += self.grad[idx] * px.data[idx];
                           }
                           ps.grad[static_cast<std::size_t>(i)] += acc;
                         }
                       }
                     });
}

Tensor masked_residual_add(const Tensor& h, const Tensor& branch,
                           const std::vector<std::uint8_t>& keep) {
  require_same_shape(h, branch, "masked_residual_add");
  const int n = last_dim(*h.impl());
  const int m = row_count(*h.impl());
  if (static_cast<int>(keep.size()) != m) {
    throw std::invalid_argument(
        "masked_residual_add: keep length " + std::to_string(keep.size()) +
        " does not match row count of " + shape_str(h.shape()));
  }
  std::vector<double> out(h.data());
  const auto& bd = branch.data();
  for (int i = 0; i < m; ++i) {
    if (!keep[static_cast<std::size_t>(i)]) continue;
    for (int j = 0; j < n; ++j) {
      const auto idx = static_cast<std::size_t>(i) * n + j;
      out[idx] += bd[idx];
    }
  }
  return make_result(h.shape(), std::move(out), {h, branch},
                     [m, n, keep](TensorImpl& self) {
                       auto& ph = *self.parents[0];
                       auto& pb = *self.parents[1];
                       if (ph.requires_grad) {
                         ph.ensure_grad();
                         for (std::size_t i = 0; i < self.grad.size(); ++i)
                           ph.grad[i] += self.grad[i];
                       }
                       if (pb.requires_grad) {
                         pb.ensure_grad();
                         for (int i = 0; i < m; ++i) {
                           if (!keep[static_cast<std::size_t>(i)]) continue;
                           for (int j = 0; j < n; ++j) {
                             const auto idx =
                                 static_cast<std::size_t>(i) * n + j;
                             pb.grad[idx] += self.grad[idx];
                           }
                         }
                       }
                     });
}

double sigmoid_scalar(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                  : std::exp(x) / (1.0 + std::exp(x));
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = sigmoid_scalar(x.data()[i]);
  }
  return make_result(x.shape(), std::move(out), {x}, [](TensorImpl& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    px.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.data[i];
      px.grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor tanh_act(const Tensor& x) {
  std::vector<double> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.data()[i]);
  return make_result(x.shape(), std::move(out), {x}, [](TensorImpl& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    px.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.data[i];
      px.grad[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

namespace {
constexpr double kSqrt2OverPi = 0.7978845608028654;
constexpr double kCubic = 0.044715;
}  // namespace

double gelu_scalar(double x) {
  // tanh form: 0.5·x·(1 + tanh(k·(x + c·x³))); smooth everywhere, which keeps
  // finite-difference gradient checks clean.
  const double t = std::tanh(kSqrt2OverPi * (x + kCubic * x * x * x));
  return 0.5 * x * (1.0 + t);
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = gelu_scalar(x.data()[i]);
  }
  return make_result(x.shape(), std::move(out), {x}, [](TensorImpl& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    px.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = px.data[i];
      const double u = kSqrt2OverPi * (v + kCubic * v * v * v);
      const double t = std::tanh(u);
      const double du = kSqrt2OverPi * (1.0 + 3.0 * kCubic * v * v);
      const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      px.grad[i] += self.grad[i] * d;
    }
  });
}

Tensor softmax_lastdim(const Tensor& x) {
  const int n = last_dim(*x.impl());
  const int m = row_count(*x.impl());
  std::vector<double> out(x.data().size());
  for (int i = 0; i < m; ++i) {
    const double* row = x.data().data() + static_cast<std::size_t>(i) * n;
    double* orow = out.data() + static_cast<std::size_t>(i) * n;
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (int j = 0; j < n; ++j) orow[j] /= sum;
  }
  return make_result(x.shape(), std::move(out), {x}, [m, n](TensorImpl& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    px.ensure_grad();
    for (int i = 0; i < m; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += self.grad[base + j] * self.data[base + j];
      for (int j = 0; j < n; ++j)
        px.grad[base + j] += self.data[base + j] * (self.grad[base + j] - dot);
    }
  });
}

Tensor rmsnorm(const Tensor& x, const Tensor& gain) {
  constexpr double kEps = kRmsNormEps;
  const int h = last_dim(*x.impl());
  if (static_cast<int>(gain.numel()) != h) {
    throw std::invalid_argument("rmsnorm: gain " + shape_str(gain.shape()) +
                                " does not match row width of " +
                                shape_str(x.shape()));
  }
  const int m = row_count(*x.impl());
  std::vector<double> out(x.data().size());
  std::vector<double> inv_rms(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const double* row = x.data().data() + static_cast<std::size_t>(i) * h;
    double ms = 0.0;
    for (int j = 0; j < h; ++j) ms += row[j] * row[j];
    ms /= h;
    const double inv = 1.0 / std::sqrt(ms + kEps);
    inv_rms[static_cast<std::size_t>(i)] = inv;
    double* orow = out.data() + static_cast<std::size_t>(i) * h;
    for (int j = 0; j < h; ++j) orow[j] = row[j] * inv * gain.data()[j];
  }
  return make_result(
      x.shape(), std::move(out), {x, gain},
      [m, h, inv_rms = std::move(inv_rms)](TensorImpl& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        for (int i = 0; i < m; ++i) {
          const std::size_t base = static_cast<std::size_t>(i) * h;
          const double inv = inv_rms[static_cast<std::size_t>(i)];
          if (px.requires_grad) {
            px.ensure_grad();
            double s = 0.0;
            for (int j = 0; j < h; ++j)
              s += self.grad[base + j] * pg.data[static_cast<std::size_t>(j)] *
                   px.data[base + j];
            const double inv3_over_h = inv * inv * inv / h;
            for (int j = 0; j < h; ++j) {
              px.grad[base + j] +=
                  self.grad[base + j] * pg.data[static_cast<std::size_t>(j)] *
                      inv -
                  px.data[base + j] * s * inv3_over_h;
            }
          }
          if (pg.requires_grad) {
            pg.ensure_grad();
            for (int j = 0; j < h; ++j)
              pg.grad[static_cast<std::size_t>(j)] +=
                  self.grad[base + j] * px.data[base + j] * inv;
          }
        }
      });
}

Tensor row_mean(const Tensor& x) {
  const int n = last_dim(*x.impl());
  const int m = row_count(*x.impl());
  std::vector<double> out(static_cast<std::size_t>(m), 0.0);
  for (int i = 0; i < m; ++i) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) acc += x.data()[static_cast<std::size_t>(i) * n + j];
    out[static_cast<std::size_t>(i)] = acc / n;
  }
  return make_result({m}, std::move(out), {x}, [m, n](TensorImpl& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    px.ensure_grad();
    for (int i = 0; i < m; ++i) {
      const double g = self.grad[static_cast<std::size_t>(i)] / n;
      for (int j = 0; j < n; ++j) px.grad[static_cast<std::size_t>(i) * n + j] += g;
    }
  });
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_result({1}, {acc}, {x}, [](TensorImpl& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    px.ensure_grad();
    for (double& g : px.grad) g += self.grad[0];
  });
}

Tensor mean_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const double inv_n = 1.0 / static_cast<double>(x.numel());
  return make_result({1}, {acc * inv_n}, {x}, [inv_n](TensorImpl& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    px.ensure_grad();
    for (double& g : px.grad) g += self.grad[0] * inv_n;
  });
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
  require_2d(table, "embedding");
  const int v = table.dim(0), h = table.dim(1);
  const int s = static_cast<int>(ids.size());
  std::vector<double> out(static_cast<std::size_t>(s) * h);
  for (int i = 0; i < s; ++i) {
    if (ids[static_cast<std::size_t>(i)] < 0 ||
        ids[static_cast<std::size_t>(i)] >= v) {
      throw std::out_of_range("embedding: id " +
                              std::to_string(ids[static_cast<std::size_t>(i)]) +
                              " outside table of " + std::to_string(v) + " rows");
    }
    const double* row =
        table.data().data() +
        static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * h;
    std::copy(row, row + h, out.begin() + static_cast<std::size_t>(i) * h);
  }
  return make_result({s, h}, std::move(out), {table},
                     [ids, h](TensorImpl& self) {
                       auto& pt = *self.parents[0];
                       if (!pt.requires_grad) return;
                       pt.ensure_grad();
                       for (std::size_t i = 0; i < ids.size(); ++i) {
                         double* trow =
                             pt.grad.data() +
                             static_cast<std::size_t>(ids[i]) * h;
                         const double* grow = self.grad.data() + i * h;
                         for (int j = 0; j < h; ++j) trow[j] += grow[j];
                       }
                     });
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        int n_heads) {
  require_2d(q, "causal_attention");
  require_same_shape(q, k, "causal_attention");
  require_same_shape(q, v, "causal_attention");
  const int s = q.dim(0), hdim = q.dim(1);
  if (n_heads < 1 || hdim % n_heads != 0) {
    throw std::invalid_argument(
        "causal_attention: width " + std::to_string(hdim) +
        " not divisible into " + std::to_string(n_heads) + " heads");
  }
  const int d = hdim / n_heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  // Attention weights are kept for the backward pass: attn[h][i][j], j <= i.
  std::vector<double> attn(
      static_cast<std::size_t>(n_heads) * s * s, 0.0);
  std::vector<double> out(static_cast<std::size_t>(s) * hdim, 0.0);
  std::vector<double> logits(static_cast<std::size_t>(s));
  for (int head = 0; head < n_heads; ++head) {
    const int off = head * d;
    double* ahead = attn.data() + static_cast<std::size_t>(head) * s * s;
    for (int i = 0; i < s; ++i) {
      const double* qi = q.data().data() + static_cast<std::size_t>(i) * hdim + off;
      double mx = -1e300;
      for (int j = 0; j <= i; ++j) {
        const double* kj =
            k.data().data() + static_cast<std::size_t>(j) * hdim + off;
        double dot = 0.0;
        for (int c = 0; c < d; ++c) dot += qi[c] * kj[c];
        logits[static_cast<std::size_t>(j)] = dot * inv_sqrt_d;
        mx = std::max(mx, logits[static_cast<std::size_t>(j)]);
      }
      double sum = 0.0;
      double* arow = ahead + static_cast<std::size_t>(i) * s;
      for (int j = 0; j <= i; ++j) {
        arow[j] = std::exp(logits[static_cast<std::size_t>(j)] - mx);
        sum += arow[j];
      }
      double* orow = out.data() + static_cast<std::size_t>(i) * hdim + off;
      for (int j = 0; j <= i; ++j) {
        arow[j] /= sum;
        const double* vj =
            v.data().data() + static_cast<std::size_t>(j) * hdim + off;
        for (int c = 0; c < d; ++c) orow[c] += arow[j] * vj[c];
      }
    }
  }
  return make_result(
      q.shape(), std::move(out), {q, k, v},
      [s, hdim, n_heads, d, inv_sqrt_d, attn = std::move(attn)](TensorImpl& self) {
        auto& pq = *self.parents[0];
        auto& pk = *self.parents[1];
        auto& pv = *self.parents[2];
        pq.ensure_grad();
        pk.ensure_grad();
        pv.ensure_grad();
        std::vector<double> da(static_cast<std::size_t>(s));
        std::vector<double> ds(static_cast<std::size_t>(s));
        for (int head = 0; head < n_heads; ++head) {
          const int off = head * d;
          const double* ahead =
              attn.data() + static_cast<std::size_t>(head) * s * s;
          for (int i = 0; i < s; ++i) {
            const double* arow = ahead + static_cast<std::size_t>(i) * s;
            const double* grow =
                self.grad.data() + static_cast<std::size_t>(i) * hdim + off;
            // dV and dA over the causal window.
            double dot = 0.0;
            for (int j = 0; j <= i; ++j) {
              const double* vj =
                  pv.data.data() + static_cast<std::size_t>(j) * hdim + off;
              double acc = 0.0;
              for (int c = 0; c < d; ++c) acc += grow[c] * vj[c];
              da[static_cast<std::size_t>(j)] = acc;
              dot += acc * arow[j];
              double* dvj =
                  pv.grad.data() + static_cast<std::size_t>(j) * hdim + off;
              for (int c = 0; c < d; ++c) dvj[c] += arow[j] * grow[c];
            }
            // Softmax backward, then dQ/dK through the scaled dot products.
            double* dqi =
                pq.grad.data() + static_cast<std::size_t>(i) * hdim + off;
            const double* qi =
                pq.data.data() + static_cast<std::size_t>(i) * hdim + off;
            for (int j = 0; j <= i; ++j) {
              ds[static_cast<std::size_t>(j)] =
                  arow[j] * (da[static_cast<std::size_t>(j)] - dot) * inv_sqrt_d;
              const double* kj =
                  pk.data.data() + static_cast<std::size_t>(j) * hdim + off;
              double* dkj =
                  pk.grad.data() + static_cast<std::size_t>(j) * hdim + off;
              const double dsj = ds[static_cast<std::size_t>(j)];
              for (int c = 0; c < d; ++c) {
                dqi[c] += dsj * kj[c];
                dkj[c] += dsj * qi[c];
              }
            }
          }
        }
      });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<std::uint8_t>& mask) {
  require_2d(logits, "cross_entropy");
  const int t = logits.dim(0), v = logits.dim(1);
  if (static_cast<int>(targets.size()) != t ||
      static_cast<int>(mask.size()) != t) {
    throw std::invalid_argument(
        "cross_entropy: targets/mask length does not match logits " +
        shape_str(logits.shape()));
  }
  int n_active = 0;
  for (std::uint8_t m : mask) n_active += (m != 0);
  if (n_active == 0) {
    throw std::invalid_argument("cross_entropy: every position is masked out");
  }
  std::vector<double> lse(static_cast<std::size_t>(t));
  double loss = 0.0;
  for (int i = 0; i < t; ++i) {
    const int target = targets[static_cast<std::size_t>(i)];
    if (target < 0 || target >= v) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(target) +
                              " outside vocabulary of " + std::to_string(v));
    }
    const double* row = logits.data().data() + static_cast<std::size_t>(i) * v;
    double mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
    lse[static_cast<std::size_t>(i)] = mx + std::log(sum);
    if (mask[static_cast<std::size_t>(i)]) {
      loss += lse[static_cast<std::size_t>(i)] - row[target];
    }
  }
  loss /= n_active;
  return make_result(
      {1}, {loss}, {logits},
      [t, v, targets, mask, n_active, lse = std::move(lse)](TensorImpl& self) {
        auto& pl = *self.parents[0];
        if (!pl.requires_grad) return;
        pl.ensure_grad();
        const double gscale = self.grad[0] / n_active;
        for (int i = 0; i < t; ++i) {
          if (!mask[static_cast<std::size_t>(i)]) continue;
          const double* row =
              pl.data.data() + static_cast<std::size_t>(i) * v;
          double* grow = pl.grad.data() + static_cast<std::size_t>(i) * v;
          const double l = lse[static_cast<std::size_t>(i)];
          for (int j = 0; j < v; ++j) grow[j] += gscale * std::exp(row[j] - l);
          grow[targets[static_cast<std::size_t>(i)]] -= gscale;
        }
      });
}

}  // namespace resgate
