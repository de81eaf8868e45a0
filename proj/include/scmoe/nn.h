#pragma once

#include <string>
#include <vector>

#include "scmoe/tensor.h"

namespace scmoe {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedParam>;

// Per-call forward context: training toggles dropout, rng feeds its masks.
struct ForwardCtx {
  bool training = false;
  Rng* rng = nullptr;
};

inline ForwardCtx eval_ctx() { return ForwardCtx{}; }

// y = x W + b
class Linear {
 public:
  Linear() = default;
  Linear(int in_dim, int out_dim, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect_params(const std::string& prefix, ParamList& out) const;
  int64_t param_count() const;
  int in_dim() const { return weight_.size(0); }
  int out_dim() const { return weight_.size(1); }

 private:
  Tensor weight_;  // [in x out]
  Tensor bias_;    // [out]
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(int dim);
  Tensor forward(const Tensor& x) const;
  void collect_params(const std::string& prefix, ParamList& out) const;

  static constexpr double kEps = 1e-5;

 private:
  Tensor gamma_;
  Tensor beta_;
};

class Dropout {
 public:
  Dropout() = default;
  explicit Dropout(double p) : p_(p) {}
  Tensor forward(const Tensor& x, const ForwardCtx& ctx) const;

 private:
  double p_ = 0.0;
};

// Two-layer position-wise feed forward: linear -> swish -> dropout -> linear.
// Doubles as the expert network inside MoE layers.
class PositionwiseFFN {
 public:
  PositionwiseFFN() = default;
  PositionwiseFFN(int d_model, int d_ff, double dropout, Rng& rng);
  Tensor forward(const Tensor& x, const ForwardCtx& ctx) const;
  void collect_params(const std::string& prefix, ParamList& out) const;
  int64_t param_count() const;

 private:
  Linear lin1_;
  Linear lin2_;
  Dropout drop_;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(int d_model, int heads, double dropout, Rng& rng);
  Tensor forward(const Tensor& q, const Tensor& k, const Tensor& v, const Mask& mask,
                 const ForwardCtx& ctx) const;
  void collect_params(const std::string& prefix, ParamList& out) const;

 private:
  Linear wq_, wk_, wv_, wo_;
  Dropout drop_;
  int heads_ = 1;
};

// Conformer convolution module: pointwise (D -> 2D), GLU, causal depthwise
// conv, layer norm, swish, pointwise (D -> D), dropout. Causal padding keeps
// every frame independent of the future in all modes.
class ConvModule {
 public:
  ConvModule() = default;
  ConvModule(int d_model, int kernel_size, double dropout, Rng& rng);
  Tensor forward(const Tensor& x, const ForwardCtx& ctx) const;
  void collect_params(const std::string& prefix, ParamList& out) const;

 private:
  Linear pointwise1_;   // D -> 2D
  Tensor depthwise_;    // [K x D]
  LayerNorm norm_;
  Linear pointwise2_;   // D -> D
  Dropout drop_;
};

// Token embedding with sqrt(D) scaling plus fixed sinusoidal positions.
class Embedding {
 public:
  Embedding() = default;
  Embedding(int vocab, int d_model, Rng& rng);
  Tensor forward(const std::vector<int>& ids) const;
  void collect_params(const std::string& prefix, ParamList& out) const;

 private:
  Tensor table_;  // [V x D]
  int d_model_ = 0;
};

// Fixed sinusoidal positional encoding rows [T x D] starting at position 0.
Tensor sinusoidal_positions(int length, int d_model);

// Xavier-uniform initialization bound for a (fan_in, fan_out) matrix.
double xavier_bound(int fan_in, int fan_out);

}  // namespace scmoe
