#include "scmoe/decoder.h"

#include <stdexcept>

namespace scmoe {

namespace {

Mask causal_mask(int n) {
  Mask m(n, n, false);
  for (int t = 0; t < n; ++t)
    for (int s = 0; s <= t; ++s) m.set(t, s, true);
  return m;
}

}  // namespace

// ---- standard layer ----

TransformerDecoderLayer::TransformerDecoderLayer(const ModelConfig& cfg, Rng& rng)
    : norm_self_(cfg.d_model),
      norm_cross_(cfg.d_model),
      norm_ffn_(cfg.d_model),
      self_attn_(cfg.d_model, cfg.heads, cfg.dropout, rng),
      cross_attn_(cfg.d_model, cfg.heads, cfg.dropout, rng),
      ffn_(cfg.d_model, cfg.d_ff, cfg.dropout, rng),
      drop_(cfg.dropout) {}

Tensor TransformerDecoderLayer::forward(const Tensor& x, const Tensor& enc, const Mask& self_mask,
                                        const Mask& cross_mask, const ForwardCtx& ctx) const {
  Tensor a = norm_self_.forward(x);
  Tensor h = add(x, self_attn_.forward(a, a, a, self_mask, ctx));
  Tensor c = norm_cross_.forward(h);
  h = add(h, cross_attn_.forward(c, enc, enc, cross_mask, ctx));
  h = add(h, drop_.forward(ffn_.forward(norm_ffn_.forward(h), ctx), ctx));
  return h;
}

void TransformerDecoderLayer::collect_params(const std::string& prefix, ParamList& out) const {
  norm_self_.collect_params(prefix + ".norm_self", out);
  self_attn_.collect_params(prefix + ".self_attn", out);
  norm_cross_.collect_params(prefix + ".norm_cross", out);
  cross_attn_.collect_params(prefix + ".cross_attn", out);
  norm_ffn_.collect_params(prefix + ".norm_ffn", out);
  ffn_.collect_params(prefix + ".ffn", out);
}

// ---- switch layer ----

SwitchTransformerDecoderLayer::SwitchTransformerDecoderLayer(const ModelConfig& cfg, Rng& rng)
    : norm_self_(cfg.d_model),
      norm_cross_(cfg.d_model),
      norm_ffn_(cfg.d_model),
      self_attn_(cfg.d_model, cfg.heads, cfg.dropout, rng),
      cross_attn_(cfg.d_model, cfg.heads, cfg.dropout, rng),
      smoe_(cfg.d_model, cfg.d_ff, kDecoderExperts, cfg.dropout, rng),
      router_(cfg.d_model, kDecoderExperts, rng),
      drop_(cfg.dropout) {}

SwitchTransformerDecoderLayer::Output SwitchTransformerDecoderLayer::forward(
    const Tensor& x, const Tensor& enc, const Mask& self_mask, const Mask& cross_mask,
    const ForwardCtx& ctx, const std::vector<int>* forced) const {
  Output out;
  out.route = route_probs(router_, x);  // h_rd: the layer's input sequence
  if (forced) out.route.indices = *forced;

  Tensor a = norm_self_.forward(x);
  Tensor h = add(x, self_attn_.forward(a, a, a, self_mask, ctx));
  Tensor c = norm_cross_.forward(h);
  h = add(h, cross_attn_.forward(c, enc, enc, cross_mask, ctx));
  h = add(h, smoe_.apply(norm_ffn_.forward(h), out.route, ctx));
  out.out = h;
  return out;
}

void SwitchTransformerDecoderLayer::collect_params(const std::string& prefix,
                                                   ParamList& out) const {
  norm_self_.collect_params(prefix + ".norm_self", out);
  self_attn_.collect_params(prefix + ".self_attn", out);
  norm_cross_.collect_params(prefix + ".norm_cross", out);
  cross_attn_.collect_params(prefix + ".cross_attn", out);
  norm_ffn_.collect_params(prefix + ".norm_ffn", out);
  smoe_.collect_params(prefix + ".smoe", out);
  router_.collect_params(prefix + ".router", out);
}

// ---- decoder stack ----

Decoder::Decoder(const ModelConfig& cfg, Rng& rng)
    : cfg_(cfg),
      embed_(cfg.vocab, cfg.d_model, rng),
      input_drop_(cfg.dropout),
      norm_final_(cfg.d_model),
      out_proj_(cfg.d_model, cfg.vocab, rng) {
  for (int i = 0; i < cfg.k; ++i) std_layers_.emplace_back(cfg, rng);
  for (int i = 0; i < cfg.g; ++i) st_layers_.emplace_back(cfg, rng);
}

DecoderOutput Decoder::forward(const std::vector<int>& input_ids, const Tensor& enc,
                               const ForwardCtx& ctx, const RoutingOverride* force,
                               RoutingOverride* capture) const {
  if (input_ids.empty()) throw std::invalid_argument("Decoder: empty target sequence");
  for (int id : input_ids)
    if (id < 0 || id >= cfg_.vocab)
      throw std::invalid_argument("Decoder: token id " + std::to_string(id) +
                                  " outside vocabulary");
  const int u_len = static_cast<int>(input_ids.size());
  const Mask self_mask = causal_mask(u_len);
  const Mask cross_mask = Mask::all_true(u_len, enc.size(0));

  Tensor x = input_drop_.forward(embed_.forward(input_ids), ctx);
  for (const auto& layer : std_layers_) x = layer.forward(x, enc, self_mask, cross_mask, ctx);

  DecoderOutput out;
  if (capture) capture->indices.clear();
  size_t cursor = 0;
  for (const auto& layer : st_layers_) {
    const std::vector<int>* forced = nullptr;
    if (force) {
      if (cursor >= force->indices.size())
        throw std::invalid_argument("Decoder: routing override shorter than decision count");
      forced = &force->indices[cursor++];
    }
    auto layer_out = layer.forward(x, enc, self_mask, cross_mask, ctx, forced);
    out.lid_logits.push_back(layer_out.route.logits);
    out.st_indices.push_back(layer_out.route.indices);
    if (capture) capture->indices.push_back(layer_out.route.indices);
    x = layer_out.out;
  }
  out.token_logits = out_proj_.forward(norm_final_.forward(x));
  return out;
}

void Decoder::collect_params(const std::string& prefix, ParamList& out) const {
  embed_.collect_params(prefix + ".embed", out);
  for (size_t i = 0; i < std_layers_.size(); ++i)
    std_layers_[i].collect_params(prefix + ".layer" + std::to_string(i), out);
  for (size_t i = 0; i < st_layers_.size(); ++i)
    st_layers_[i].collect_params(prefix + ".st_layer" + std::to_string(i + std_layers_.size()),
                                 out);
  norm_final_.collect_params(prefix + ".norm_final", out);
  out_proj_.collect_params(prefix + ".out_proj", out);
}

}  // namespace scmoe
