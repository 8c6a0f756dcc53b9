#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "resgate/rng.hpp"

namespace resgate {

// Reverse-mode autodiff over dense row-major double tensors. The graph is a
// DAG of TensorImpl nodes; each non-leaf node carries a closure that routes
// its output gradient into its parents' gradient buffers.
struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily, same length as data
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;

  std::size_t numel() const { return data.size(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value,
                     bool requires_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor randn(std::vector<int> shape, Rng& rng, double stddev,
                      bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  std::size_t numel() const { return impl_->numel(); }
  int dim(std::size_t i) const { return impl_->shape[i]; }
  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  std::vector<double>& grad() { return impl_->grad; }
  const std::vector<double>& grad() const { return impl_->grad; }
  bool requires_grad() const { return impl_->requires_grad; }
  TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<TensorImpl> impl_ptr() const { return impl_; }

  double item() const;                 // scalar tensors only
  double at(int i) const;              // 1-D (or flat) indexing
  double at(int i, int j) const;       // 2-D indexing
  void zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

  // Runs reverse-mode accumulation from this scalar. Throws when the tensor
  // holds more than one element.
  void backward() const;

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Gradient recording is on by default; a NoGradGuard disables it for the
// guard's lifetime (inference paths).
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// ---- raw row-major kernels (accumulate into c; caller zeroes) ----
void mm_ab(const double* a, const double* b, double* c, int m, int k, int n);
void mm_abt(const double* a, const double* b, double* c, int m, int n, int k);
void mm_atb(const double* a, const double* b, double* c, int m, int k, int n);

// ---- differentiable operations ----
Tensor matmul(const Tensor& a, const Tensor& b);
// y = x · Wᵀ with W stored [out×in]; the layout used by every weight here.
Tensor linear(const Tensor& x, const Tensor& w);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_rowvec(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& x, double c);
// Multiplies row i of x by s[i]; s holds one value per row ([m] or [m×1]).
Tensor scale_rows(const Tensor& x, const Tensor& s);
// Row i of the result is h[i] + branch[i] where keep[i] != 0, and a bit-exact
// copy of h[i] otherwise; kept rows receive branch gradient, skipped rows none.
Tensor masked_residual_add(const Tensor& h, const Tensor& branch,
                           const std::vector<std::uint8_t>& keep);
Tensor sigmoid(const Tensor& x);
Tensor tanh_act(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor softmax_lastdim(const Tensor& x);
Tensor rmsnorm(const Tensor& x, const Tensor& gain);
Tensor row_mean(const Tensor& x);  // [m×n] -> [m]
Tensor sum_all(const Tensor& x);   // -> scalar
Tensor mean_all(const Tensor& x);  // -> scalar
Tensor embedding(const Tensor& table, const std::vector<int>& ids);
// Multi-head self-attention with a causal mask; q,k,v are [S×H].
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        int n_heads);
// Mean negative log-likelihood over positions where mask is non-zero.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<std::uint8_t>& mask);

std::string shape_str(const std::vector<int>& shape);

// Scalar forms shared by the graph ops and the raw inference kernels so both
// paths evaluate the exact same formulas.
constexpr double kRmsNormEps = 1e-6;
double sigmoid_scalar(double x);
double gelu_scalar(double x);

}  // namespace resgate
