#pragma once

#include <array>
#include <memory>
#include <vector>

#include "scmoe/config.h"
#include "scmoe/nn.h"
#include "scmoe/routing.h"
#include "scmoe/tensor.h"

namespace scmoe {

// Streaming attention window. chunk_size -1 means full context,
// num_left_chunks -1 means every preceding chunk is visible.
struct ChunkSpec {
  int chunk_size = -1;
  int num_left_chunks = -1;

  bool full_context() const { return chunk_size < 0; }
  bool operator==(const ChunkSpec& o) const {
    return chunk_size == o.chunk_size && num_left_chunks == o.num_left_chunks;
  }
};

// Block-lower-triangular visibility at chunk granularity: frame t sees every
// frame of its own chunk plus num_left_chunks preceding chunks.
Mask make_chunk_mask(int frames, const ChunkSpec& spec);

// Training-time sampling: half the batches see full context, the rest get
// chunk_size uniform in [1, 16] and a left-chunk budget uniform over
// {0..8, unlimited}.
ChunkSpec sample_dynamic_chunk(Rng& rng);

// Frame-index override for gradient checking with frozen routing: one entry
// per routing decision in forward order.
struct RoutingOverride {
  std::vector<std::vector<int>> indices;
};

class ConformerLayer {
 public:
  ConformerLayer() = default;
  ConformerLayer(const ModelConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& x, const Mask& mask, const ForwardCtx& ctx) const;
  void collect_params(const std::string& prefix, ParamList& out) const;

 private:
  LayerNorm norm_ffn1_, norm_mha_, norm_conv_, norm_ffn2_, norm_final_;
  PositionwiseFFN ffn1_, ffn2_;
  MultiHeadAttention mha_;
  ConvModule conv_;
  Dropout drop_;
};

// Conformer block with both macaron FFN slots replaced by streaming MoE
// layers. The router input is the block input (the previous block's output),
// so both slots can share one decision; router ownership follows the sharing
// mode: R3 one per block, R2 one per slot, R1 none (the encoder owns it).
class SwitchConformerLayer {
 public:
  struct Output {
    Tensor out;
    std::vector<RouteDecision> routes;  // decisions made here (empty under R1)
    std::array<std::vector<int>, 2> slot_indices;
  };

  SwitchConformerLayer() = default;
  SwitchConformerLayer(const ModelConfig& cfg, Rng& rng);

  // global_route must be supplied exactly when sharing is R1.
  Output forward(const Tensor& x, const Mask& mask, const ForwardCtx& ctx,
                 const RouteDecision* global_route,
                 const std::vector<const std::vector<int>*>& forced) const;

  int num_local_routers() const { return static_cast<int>(routers_.size()); }
  const StreamingMoELayer& smoe(int slot) const { return slot == 0 ? smoe1_ : smoe2_; }
  void collect_params(const std::string& prefix, ParamList& out) const;

 private:
  LayerNorm norm_ffn1_, norm_mha_, norm_conv_, norm_ffn2_, norm_final_;
  StreamingMoELayer smoe1_, smoe2_;
  std::vector<Router> routers_;  // size 1 under R3, 2 under R2, 0 under R1
  MultiHeadAttention mha_;
  ConvModule conv_;
  RouterSharing sharing_ = RouterSharing::kPerBlock;
};

struct ScBlockRecord {
  std::vector<Tensor> lid_logits;  // grids produced by this block's decisions
  std::array<std::vector<int>, 2> slot_indices;
};

struct EncoderOutput {
  Tensor features;  // [T' x D]
  std::vector<ScBlockRecord> sc_blocks;
  // Grids that receive a LID-CTC term: 1 under R1, h under R3, 2h under R2.
  std::vector<Tensor> lid_ctc_logits;
  int frames = 0;  // T' after subsampling
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(const ModelConfig& cfg, Rng& rng);

  EncoderOutput forward(const Tensor& feats, const ChunkSpec& spec, const ForwardCtx& ctx,
                        const RoutingOverride* force = nullptr,
                        RoutingOverride* capture = nullptr) const;

  // Output length contract of the front-end: ceil(T / subsample_factor).
  int output_frames(int input_frames) const;
  int num_sc_blocks() const { return static_cast<int>(sc_blocks_.size()); }
  const SwitchConformerLayer& sc_block(int i) const { return sc_blocks_.at(i); }
  int num_route_decisions() const;  // per forward pass
  void collect_params(const std::string& prefix, ParamList& out) const;

 private:
  ModelConfig cfg_;
  // Front-end: either a plain projection or two stride-2 conv stages.
  Linear input_proj_;
  Tensor sub_w1_, sub_b1_, sub_w2_, sub_b2_;
  Dropout input_drop_;
  std::vector<ConformerLayer> std_blocks_;
  std::vector<SwitchConformerLayer> sc_blocks_;
  std::unique_ptr<Router> global_router_;  // R1 only
};

}  // namespace scmoe
