#include "scmoe/encoder.h"

#include <cmath>
#include <stdexcept>

namespace scmoe {

Mask make_chunk_mask(int frames, const ChunkSpec& spec) {
  if (frames < 1) throw std::invalid_argument("make_chunk_mask: need at least one frame");
  if (spec.full_context()) return Mask::all_true(frames, frames);
  if (spec.chunk_size < 1) throw std::invalid_argument("make_chunk_mask: chunk_size must be >= 1 or -1");
  Mask mask(frames, frames, false);
  for (int t = 0; t < frames; ++t) {
    const int chunk_of_t = t / spec.chunk_size;
    const int first_chunk =
        spec.num_left_chunks < 0 ? 0 : std::max(0, chunk_of_t - spec.num_left_chunks);
    const int s_begin = first_chunk * spec.chunk_size;
    const int s_end = std::min(frames, (chunk_of_t + 1) * spec.chunk_size);
    for (int s = s_begin; s < s_end; ++s) mask.set(t, s, true);
  }
  return mask;
}

ChunkSpec sample_dynamic_chunk(Rng& rng) {
  if (rng.bernoulli(0.5)) return ChunkSpec{-1, -1};
  ChunkSpec spec;
  spec.chunk_size = rng.uniform_int(1, 16);
  const int left = rng.uniform_int(0, 9);  // 9 encodes "unlimited"
  spec.num_left_chunks = left == 9 ? -1 : left;
  return spec;
}

// ---- ConformerLayer ----

ConformerLayer::ConformerLayer(const ModelConfig& cfg, Rng& rng)
    : norm_ffn1_(cfg.d_model),
      norm_mha_(cfg.d_model),
      norm_conv_(cfg.d_model),
      norm_ffn2_(cfg.d_model),
      norm_final_(cfg.d_model),
      ffn1_(cfg.d_model, cfg.d_ff, cfg.dropout, rng),
      ffn2_(cfg.d_model, cfg.d_ff, cfg.dropout, rng),
      mha_(cfg.d_model, cfg.heads, cfg.dropout, rng),
      conv_(cfg.d_model, cfg.conv_kernel, cfg.dropout, rng),
      drop_(cfg.dropout) {}

Tensor ConformerLayer::forward(const Tensor& x, const Mask& mask, const ForwardCtx& ctx) const {
  Tensor h = add(x, mul(drop_.forward(ffn1_.forward(norm_ffn1_.forward(x), ctx), ctx), 0.5));
  Tensor a = norm_mha_.forward(h);
  h = add(h, mha_.forward(a, a, a, mask, ctx));
  h = add(h, conv_.forward(norm_conv_.forward(h), ctx));
  h = add(h, mul(drop_.forward(ffn2_.forward(norm_ffn2_.forward(h), ctx), ctx), 0.5));
  return norm_final_.forward(h);
}

void ConformerLayer::collect_params(const std::string& prefix, ParamList& out) const {
  norm_ffn1_.collect_params(prefix + ".norm_ffn1", out);
  ffn1_.collect_params(prefix + ".ffn1", out);
  norm_mha_.collect_params(prefix + ".norm_mha", out);
  mha_.collect_params(prefix + ".mha", out);
  norm_conv_.collect_params(prefix + ".norm_conv", out);
  conv_.collect_params(prefix + ".conv", out);
  norm_ffn2_.collect_params(prefix + ".norm_ffn2", out);
  ffn2_.collect_params(prefix + ".ffn2", out);
  norm_final_.collect_params(prefix + ".norm_final", out);
}

// ---- SwitchConformerLayer ----

SwitchConformerLayer::SwitchConformerLayer(const ModelConfig& cfg, Rng& rng)
    : norm_ffn1_(cfg.d_model),
      norm_mha_(cfg.d_model),
      norm_conv_(cfg.d_model),
      norm_ffn2_(cfg.d_model),
      norm_final_(cfg.d_model),
      smoe1_(cfg.d_model, cfg.d_ff, kEncoderExperts, cfg.dropout, rng),
      smoe2_(cfg.d_model, cfg.d_ff, kEncoderExperts, cfg.dropout, rng),
      mha_(cfg.d_model, cfg.heads, cfg.dropout, rng),
      conv_(cfg.d_model, cfg.conv_kernel, cfg.dropout, rng),
      sharing_(cfg.router_sharing) {
  if (sharing_ == RouterSharing::kPerBlock) {
    routers_.emplace_back(cfg.d_model, kEncoderExperts, rng);
  } else if (sharing_ == RouterSharing::kPerLayer) {
    routers_.emplace_back(cfg.d_model, kEncoderExperts, rng);
    routers_.emplace_back(cfg.d_model, kEncoderExperts, rng);
  }
}

SwitchConformerLayer::Output SwitchConformerLayer::forward(
    const Tensor& x, const Mask& mask, const ForwardCtx& ctx, const RouteDecision* global_route,
    const std::vector<const std::vector<int>*>& forced) const {
  Output out;
  out.routes.reserve(2);
  const RouteDecision* route1 = nullptr;
  const RouteDecision* route2 = nullptr;
  switch (sharing_) {
    case RouterSharing::kPerBlock:
      out.routes.push_back(route_probs(routers_[0], x));
      if (!forced.empty() && forced[0]) out.routes[0].indices = *forced[0];
      route1 = route2 = &out.routes[0];
      break;
    case RouterSharing::kPerLayer:
      out.routes.push_back(route_probs(routers_[0], x));
      out.routes.push_back(route_probs(routers_[1], x));
      if (forced.size() > 0 && forced[0]) out.routes[0].indices = *forced[0];
      if (forced.size() > 1 && forced[1]) out.routes[1].indices = *forced[1];
      route1 = &out.routes[0];
      route2 = &out.routes[1];
      break;
    case RouterSharing::kGlobal:
      if (global_route == nullptr)
        throw std::invalid_argument("SwitchConformerLayer: R1 sharing needs the global route");
      route1 = route2 = global_route;
      break;
  }

  Tensor h = add(x, mul(smoe1_.apply(norm_ffn1_.forward(x), *route1, ctx), 0.5));
  Tensor a = norm_mha_.forward(h);
  h = add(h, mha_.forward(a, a, a, mask, ctx));
  h = add(h, conv_.forward(norm_conv_.forward(h), ctx));
  h = add(h, mul(smoe2_.apply(norm_ffn2_.forward(h), *route2, ctx), 0.5));
  out.out = norm_final_.forward(h);
  out.slot_indices = {route1->indices, route2->indices};
  return out;
}

void SwitchConformerLayer::collect_params(const std::string& prefix, ParamList& out) const {
  norm_ffn1_.collect_params(prefix + ".norm_ffn1", out);
  smoe1_.collect_params(prefix + ".smoe1", out);
  norm_mha_.collect_params(prefix + ".norm_mha", out);
  mha_.collect_params(prefix + ".mha", out);
  norm_conv_.collect_params(prefix + ".norm_conv", out);
  conv_.collect_params(prefix + ".conv", out);
  norm_ffn2_.collect_params(prefix + ".norm_ffn2", out);
  smoe2_.collect_params(prefix + ".smoe2", out);
  norm_final_.collect_params(prefix + ".norm_final", out);
  for (size_t i = 0; i < routers_.size(); ++i)
    routers_[i].collect_params(prefix + ".router" + std::to_string(i), out);
}

// ---- Encoder ----

Encoder::Encoder(const ModelConfig& cfg, Rng& rng) : cfg_(cfg), input_drop_(cfg.dropout) {
  cfg.validate();
  if (cfg.subsample_factor == 4) {
    const double b1 = xavier_bound(3 * cfg.feat_dim, cfg.d_model);
    sub_w1_ = Tensor::rand_uniform({3, cfg.feat_dim, cfg.d_model}, -b1, b1, rng, true);
    sub_b1_ = Tensor::zeros({cfg.d_model}, true);
    const double b2 = xavier_bound(3 * cfg.d_model, cfg.d_model);
    sub_w2_ = Tensor::rand_uniform({3, cfg.d_model, cfg.d_model}, -b2, b2, rng, true);
    sub_b2_ = Tensor::zeros({cfg.d_model}, true);
  } else {
    input_proj_ = Linear(cfg.feat_dim, cfg.d_model, rng);
  }
  for (int i = 0; i < cfg.m; ++i) std_blocks_.emplace_back(cfg, rng);
  for (int i = 0; i < cfg.h; ++i) sc_blocks_.emplace_back(cfg, rng);
  if (cfg.router_sharing == RouterSharing::kGlobal && cfg.h > 0)
    global_router_ = std::make_unique<Router>(cfg.d_model, kEncoderExperts, rng);
}

int Encoder::output_frames(int input_frames) const {
  if (cfg_.subsample_factor == 1) return input_frames;
  const int after1 = (input_frames - 1) / 2 + 1;
  return (after1 - 1) / 2 + 1;  // ceil(T/4) overall
}

int Encoder::num_route_decisions() const {
  if (sc_blocks_.empty()) return 0;
  switch (cfg_.router_sharing) {
    case RouterSharing::kGlobal: return 1;
    case RouterSharing::kPerBlock: return static_cast<int>(sc_blocks_.size());
    case RouterSharing::kPerLayer: return 2 * static_cast<int>(sc_blocks_.size());
  }
  return 0;
}

EncoderOutput Encoder::forward(const Tensor& feats, const ChunkSpec& spec, const ForwardCtx& ctx,
                               const RoutingOverride* force, RoutingOverride* capture) const {
  if (feats.ndim() != 2 || feats.size(1) != cfg_.feat_dim)
    throw std::invalid_argument("Encoder: expected [T x " + std::to_string(cfg_.feat_dim) +
                                "] features, got " + feats.shape_str());
  Tensor x;
  if (cfg_.subsample_factor == 4) {
    x = swish(conv1d_strided(feats, sub_w1_, sub_b1_, 2));
    x = swish(conv1d_strided(x, sub_w2_, sub_b2_, 2));
  } else {
    x = input_proj_.forward(feats);
  }
  const int frames = x.size(0);
  x = add(mul(x, std::sqrt(static_cast<double>(cfg_.d_model))),
          sinusoidal_positions(frames, cfg_.d_model));
  x = input_drop_.forward(x, ctx);

  const Mask mask = make_chunk_mask(frames, spec);
  for (const auto& block : std_blocks_) x = block.forward(x, mask, ctx);

  EncoderOutput out;
  out.frames = frames;
  if (capture) capture->indices.clear();
  size_t forced_cursor = 0;
  auto next_forced = [&]() -> const std::vector<int>* {
    if (force == nullptr) return nullptr;
    if (forced_cursor >= force->indices.size())
      throw std::invalid_argument("Encoder: routing override shorter than decision count");
    return &force->indices[forced_cursor++];
  };

  RouteDecision global_route;
  const bool global = cfg_.router_sharing == RouterSharing::kGlobal && !sc_blocks_.empty();
  if (global) {
    // One decision for the whole stack, taken at the first switch block input.
    global_route = route_probs(*global_router_, x);
    if (const auto* f = next_forced()) global_route.indices = *f;
    if (capture) capture->indices.push_back(global_route.indices);
    out.lid_ctc_logits.push_back(global_route.logits);
  }

  for (const auto& block : sc_blocks_) {
    std::vector<const std::vector<int>*> forced_local;
    const int locals = cfg_.router_sharing == RouterSharing::kPerLayer ? 2
                       : cfg_.router_sharing == RouterSharing::kPerBlock ? 1
                                                                         : 0;
    for (int i = 0; i < locals; ++i) forced_local.push_back(next_forced());
    auto block_out = block.forward(x, mask, ctx, global ? &global_route : nullptr, forced_local);

    ScBlockRecord record;
    record.slot_indices = block_out.slot_indices;
    for (auto& route : block_out.routes) {
      record.lid_logits.push_back(route.logits);
      out.lid_ctc_logits.push_back(route.logits);
      if (capture) capture->indices.push_back(route.indices);
    }
    out.sc_blocks.push_back(std::move(record));
    x = block_out.out;
  }
  out.features = x;
  return out;
}

void Encoder::collect_params(const std::string& prefix, ParamList& out) const {
  if (cfg_.subsample_factor == 4) {
    out.push_back({prefix + ".sub.w1", sub_w1_});
    out.push_back({prefix + ".sub.b1", sub_b1_});
    out.push_back({prefix + ".sub.w2", sub_w2_});
    out.push_back({prefix + ".sub.b2", sub_b2_});
  } else {
    input_proj_.collect_params(prefix + ".input_proj", out);
  }
  for (size_t i = 0; i < std_blocks_.size(); ++i)
    std_blocks_[i].collect_params(prefix + ".block" + std::to_string(i), out);
  for (size_t i = 0; i < sc_blocks_.size(); ++i)
    sc_blocks_[i].collect_params(prefix + ".sc_block" + std::to_string(i + std_blocks_.size()), out);
  if (global_router_) global_router_->collect_params(prefix + ".global_router", out);
}

}  // namespace scmoe
