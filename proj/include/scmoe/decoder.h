#pragma once

#include <vector>

#include "scmoe/config.h"
#include "scmoe/encoder.h"
#include "scmoe/nn.h"
#include "scmoe/routing.h"

namespace scmoe {

class TransformerDecoderLayer {
 public:
  TransformerDecoderLayer() = default;
  TransformerDecoderLayer(const ModelConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& enc, const Mask& self_mask,
                 const Mask& cross_mask, const ForwardCtx& ctx) const;
  void collect_params(const std::string& prefix, ParamList& out) const;

 private:
  LayerNorm norm_self_, norm_cross_, norm_ffn_;
  MultiHeadAttention self_attn_, cross_attn_;
  PositionwiseFFN ffn_;
  Dropout drop_;
};

// Transformer decoder layer whose FFN is a two-expert MoE routed by the
// layer's own 2-class LID network; the router reads the layer input.
class SwitchTransformerDecoderLayer {
 public:
  struct Output {
    Tensor out;
    RouteDecision route;
  };

  SwitchTransformerDecoderLayer() = default;
  SwitchTransformerDecoderLayer(const ModelConfig& cfg, Rng& rng);
  Output forward(const Tensor& x, const Tensor& enc, const Mask& self_mask,
                 const Mask& cross_mask, const ForwardCtx& ctx,
                 const std::vector<int>* forced) const;
  const StreamingMoELayer& smoe() const { return smoe_; }
  void collect_params(const std::string& prefix, ParamList& out) const;

 private:
  LayerNorm norm_self_, norm_cross_, norm_ffn_;
  MultiHeadAttention self_attn_, cross_attn_;
  StreamingMoELayer smoe_;
  Router router_;
  Dropout drop_;
};

struct DecoderOutput {
  Tensor token_logits;             // [U x V]
  std::vector<Tensor> lid_logits;  // one [U x 2] grid per switch layer
  std::vector<std::vector<int>> st_indices;
};

// One decoding direction: k standard layers followed by g switch layers over
// teacher-forced inputs with causal self attention. The caller reverses the
// token sequence for the right-to-left instance.
class Decoder {
 public:
  Decoder() = default;
  Decoder(const ModelConfig& cfg, Rng& rng);

  DecoderOutput forward(const std::vector<int>& input_ids, const Tensor& enc,
                        const ForwardCtx& ctx, const RoutingOverride* force = nullptr,
                        RoutingOverride* capture = nullptr) const;

  int num_route_decisions() const { return static_cast<int>(st_layers_.size()); }
  int num_st_layers() const { return static_cast<int>(st_layers_.size()); }
  const SwitchTransformerDecoderLayer& st_layer(int i) const { return st_layers_.at(i); }
  void collect_params(const std::string& prefix, ParamList& out) const;

 private:
  ModelConfig cfg_;
  Embedding embed_;
  Dropout input_drop_;
  std::vector<TransformerDecoderLayer> std_layers_;
  std::vector<SwitchTransformerDecoderLayer> st_layers_;
  LayerNorm norm_final_;
  Linear out_proj_;
};

}  // namespace scmoe
