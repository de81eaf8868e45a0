#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "scmoe/rng.h"

namespace scmoe {

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

// Dense row-major tensor of 64-bit floats with reverse-mode autodiff.
// Copying a Tensor copies a handle; the storage and graph node are shared.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const std::vector<int>& shape, bool requires_grad = false);
  static Tensor full(const std::vector<int>& shape, double value, bool requires_grad = false);
  static Tensor from(const std::vector<int>& shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor rand_uniform(const std::vector<int>& shape, double lo, double hi, Rng& rng,
                             bool requires_grad = false);
  static Tensor rand_normal(const std::vector<int>& shape, double mean, double stddev, Rng& rng,
                            bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const;
  int ndim() const;
  int size(int axis) const;
  int64_t numel() const;
  std::string shape_str() const;

  std::vector<double>& data();
  const std::vector<double>& data() const;
  double item() const;  // scalar tensors only
  double at(int i) const;
  double at(int i, int j) const;
  void set(int i, int j, double v);

  bool requires_grad() const;
  void set_requires_grad(bool rg);
  bool has_grad() const;
  std::vector<double>& grad();          // allocated on demand, zero-filled
  const std::vector<double>& grad() const;
  void zero_grad();

  // Same storage, no graph history, requires_grad off.
  Tensor detach() const;
  // Deep copy of the values, fresh leaf node.
  Tensor clone() const;

  TensorImpl* impl() const { return impl_.get(); }
  TensorImplPtr impl_ptr() const { return impl_; }

 private:
  explicit Tensor(TensorImplPtr impl) : impl_(std::move(impl)) {}
  TensorImplPtr impl_;
  friend Tensor make_node(std::vector<int> shape, std::vector<TensorImplPtr> parents);
};

// Graph-node factory for custom differentiable operations: the result is
// zero-filled and requires grad iff any parent does; the caller fills data
// and installs impl()->backward_fn.
Tensor make_node(std::vector<int> shape, std::vector<TensorImplPtr> parents);

struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until touched
  std::vector<TensorImplPtr> parents;
  std::function<void()> backward_fn;  // accumulates into parents' grads
  bool backward_done = false;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

// Boolean attention mask, true = visible.
struct Mask {
  int rows = 0;
  int cols = 0;
  std::vector<uint8_t> bits;

  Mask() = default;
  Mask(int r, int c, bool value = false)
      : rows(r), cols(c), bits(static_cast<size_t>(r) * c, value ? 1 : 0) {}
  static Mask all_true(int r, int c) { return Mask(r, c, true); }

  bool at(int r, int c) const { return bits[static_cast<size_t>(r) * cols + c] != 0; }
  void set(int r, int c, bool v) { bits[static_cast<size_t>(r) * cols + c] = v ? 1 : 0; }
};

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);  // exact shape or scalar operand
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double c);
Tensor mul(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor swish(const Tensor& a);  // x * sigmoid(x)

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator+(const Tensor& a, double c) { return add(a, c); }
inline Tensor operator*(const Tensor& a, double c) { return mul(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul(a, c); }

// ---- linear algebra (2-D) ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// ---- structural ----
Tensor rows_gather(const Tensor& a, const std::vector<int>& row_ids);
Tensor rows_scatter(const Tensor& rows, const std::vector<int>& row_ids, int total_rows);
Tensor select_per_row(const Tensor& a, const std::vector<int>& col_ids);  // [N x 1]
Tensor scale_rows(const Tensor& a, const Tensor& scale_col);              // scale: [N x 1]
Tensor add_row_vector(const Tensor& a, const Tensor& bias);               // bias: [C]
Tensor slice_cols(const Tensor& a, int col0, int ncols);
Tensor concat_cols(const std::vector<Tensor>& parts);

// ---- normalization ----
Tensor softmax(const Tensor& a, int axis = -1);
Tensor log_softmax(const Tensor& a, int axis = -1);
Tensor masked_softmax(const Tensor& scores, const Mask& mask);  // last-axis, 2-D
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// ---- gated / conv ----
Tensor glu(const Tensor& x);  // [N x 2C] -> [N x C]
enum class PadMode { kCausal, kSame };
Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernel, PadMode mode);
// Full convolution over time with stride; weight shape [K x Cin x Cout].
// Causal left padding of K-1 frames; output length is ceil(T / stride).
Tensor conv1d_strided(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride);

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// ---- regularization ----
Tensor dropout(const Tensor& a, double p, Rng& rng, bool training);

// ---- attention ----
// q: [Tq x D], k,v: [Tk x D], mask: [Tq x Tk]. Per-head scaled dot product
// over visible positions; a fully masked query row is an error.
Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Mask& mask,
                        int heads);

// ---- autodiff ----
// Reverse-mode accumulation from a scalar loss. Visits each reachable node
// once in reverse topological order; calling twice on the same loss throws.
void backward(const Tensor& loss);

bool all_finite(const Tensor& t);

// ---- gradient checking ----
struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  int64_t worst_index = -1;
  double autodiff_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

// Central finite differences against autodiff for a scalar-valued f(x).
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double step = 1e-5, double tol = 1e-4);

// Same, for a closure over a set of parameter tensors (perturbed in place).
GradCheckReport grad_check_params(const std::function<Tensor()>& f,
                                  const std::vector<Tensor>& params, double step = 1e-5,
                                  double tol = 1e-4);

}  // namespace scmoe
