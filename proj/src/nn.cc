#include "scmoe/nn.h"

#include <cmath>
#include <stdexcept>

namespace scmoe {

double xavier_bound(int fan_in, int fan_out) {
  return std::sqrt(6.0 / (fan_in + fan_out));
}

// ---- Linear ----

Linear::Linear(int in_dim, int out_dim, Rng& rng) {
  const double b = xavier_bound(in_dim, out_dim);
  weight_ = Tensor::rand_uniform({in_dim, out_dim}, -b, b, rng, /*requires_grad=*/true);
  bias_ = Tensor::zeros({out_dim}, /*requires_grad=*/true);
}

Tensor Linear::forward(const Tensor& x) const {
  return add_row_vector(matmul(x, weight_), bias_);
}

void Linear::collect_params(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight_});
  out.push_back({prefix + ".bias", bias_});
}

int64_t Linear::param_count() const { return weight_.numel() + bias_.numel(); }

// ---- LayerNorm ----

LayerNorm::LayerNorm(int dim) {
  gamma_ = Tensor::full({dim}, 1.0, /*requires_grad=*/true);
  beta_ = Tensor::zeros({dim}, /*requires_grad=*/true);
}

Tensor LayerNorm::forward(const Tensor& x) const {
  return layer_norm(x, gamma_, beta_, kEps);
}

void LayerNorm::collect_params(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma_});
  out.push_back({prefix + ".beta", beta_});
}

// ---- Dropout ----

Tensor Dropout::forward(const Tensor& x, const ForwardCtx& ctx) const {
  if (!ctx.training || p_ == 0.0) return x;
  if (ctx.rng == nullptr) throw std::invalid_argument("dropout: training forward needs an rng");
  return dropout(x, p_, *ctx.rng, true);
}

// ---- PositionwiseFFN ----

PositionwiseFFN::PositionwiseFFN(int d_model, int d_ff, double dropout, Rng& rng)
    : lin1_(d_model, d_ff, rng), lin2_(d_ff, d_model, rng), drop_(dropout) {}

Tensor PositionwiseFFN::forward(const Tensor& x, const ForwardCtx& ctx) const {
  return lin2_.forward(drop_.forward(swish(lin1_.forward(x)), ctx));
}

void PositionwiseFFN::collect_params(const std::string& prefix, ParamList& out) const {
  lin1_.collect_params(prefix + ".lin1", out);
  lin2_.collect_params(prefix + ".lin2", out);
}

int64_t PositionwiseFFN::param_count() const {
  return lin1_.param_count() + lin2_.param_count();
}

// ---- MultiHeadAttention ----

MultiHeadAttention::MultiHeadAttention(int d_model, int heads, double dropout, Rng& rng)
    : wq_(d_model, d_model, rng),
      wk_(d_model, d_model, rng),
      wv_(d_model, d_model, rng),
      wo_(d_model, d_model, rng),
      drop_(dropout),
      heads_(heads) {
  if (d_model % heads != 0)
    throw std::invalid_argument("MultiHeadAttention: d_model not divisible by heads");
}

Tensor MultiHeadAttention::forward(const Tensor& q, const Tensor& k, const Tensor& v,
                                   const Mask& mask, const ForwardCtx& ctx) const {
  Tensor ctxv = masked_attention(wq_.forward(q), wk_.forward(k), wv_.forward(v), mask, heads_);
  return drop_.forward(wo_.forward(ctxv), ctx);
}

void MultiHeadAttention::collect_params(const std::string& prefix, ParamList& out) const {
  wq_.collect_params(prefix + ".wq", out);
  wk_.collect_params(prefix + ".wk", out);
  wv_.collect_params(prefix + ".wv", out);
  wo_.collect_params(prefix + ".wo", out);
}

// ---- ConvModule ----

ConvModule::ConvModule(int d_model, int kernel_size, double dropout, Rng& rng)
    : pointwise1_(d_model, 2 * d_model, rng),
      norm_(d_model),
      pointwise2_(d_model, d_model, rng),
      drop_(dropout) {
  const double b = xavier_bound(kernel_size, 1);
  depthwise_ = Tensor::rand_uniform({kernel_size, d_model}, -b, b, rng, /*requires_grad=*/true);
}

Tensor ConvModule::forward(const Tensor& x, const ForwardCtx& ctx) const {
  Tensor h = glu(pointwise1_.forward(x));
  h = depthwise_conv1d(h, depthwise_, PadMode::kCausal);
  h = swish(norm_.forward(h));
  return drop_.forward(pointwise2_.forward(h), ctx);
}

void ConvModule::collect_params(const std::string& prefix, ParamList& out) const {
  pointwise1_.collect_params(prefix + ".pointwise1", out);
  out.push_back({prefix + ".depthwise", depthwise_});
  norm_.collect_params(prefix + ".norm", out);
  pointwise2_.collect_params(prefix + ".pointwise2", out);
}

// ---- Embedding ----

Embedding::Embedding(int vocab, int d_model, Rng& rng) : d_model_(d_model) {
  const double b = xavier_bound(vocab, d_model);
  table_ = Tensor::rand_uniform({vocab, d_model}, -b, b, rng, /*requires_grad=*/true);
}

Tensor Embedding::forward(const std::vector<int>& ids) const {
  Tensor e = mul(rows_gather(table_, ids), std::sqrt(static_cast<double>(d_model_)));
  return add(e, sinusoidal_positions(static_cast<int>(ids.size()), d_model_));
}

void Embedding::collect_params(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".table", table_});
}

Tensor sinusoidal_positions(int length, int d_model) {
  Tensor pe = Tensor::zeros({length, d_model});
  for (int t = 0; t < length; ++t)
    for (int i = 0; i < d_model; i += 2) {
      const double angle = t / std::pow(10000.0, static_cast<double>(i) / d_model);
      pe.set(t, i, std::sin(angle));
      if (i + 1 < d_model) pe.set(t, i + 1, std::cos(angle));
    }
  return pe;
}

}  // namespace scmoe
