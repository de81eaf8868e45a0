#include "scmoe/routing.h"

#include <stdexcept>

namespace scmoe {

RouterSharing router_sharing_from_string(const std::string& s) {
  if (s == "R1") return RouterSharing::kGlobal;
  if (s == "R2") return RouterSharing::kPerLayer;
  if (s == "R3") return RouterSharing::kPerBlock;
  throw std::invalid_argument("unknown router sharing mode '" + s + "', expected R1|R2|R3");
}

std::string to_string(RouterSharing mode) {
  switch (mode) {
    case RouterSharing::kGlobal: return "R1";
    case RouterSharing::kPerLayer: return "R2";
    case RouterSharing::kPerBlock: return "R3";
  }
  return "?";
}

Router::Router(int d_model, int num_experts, Rng& rng)
    : linear_(d_model, num_experts, rng), num_experts_(num_experts) {
  if (num_experts < 2) throw std::invalid_argument("Router: need at least 2 experts");
}

void Router::collect_params(const std::string& prefix, ParamList& out) const {
  linear_.collect_params(prefix, out);
}

RouteDecision route_probs(const Router& router, const Tensor& h) {
  RouteDecision d;
  d.logits = router.linear().forward(h);
  d.probs = softmax(d.logits, -1);
  d.indices = select_expert(d.probs);
  return d;
}

std::vector<int> select_expert(const Tensor& probs) {
  if (probs.ndim() != 2)
    throw std::invalid_argument("select_expert: probs must be [T x E], got " + probs.shape_str());
  const int t_len = probs.size(0), e = probs.size(1);
  std::vector<int> indices(t_len, 0);
  for (int t = 0; t < t_len; ++t) {
    int best = 0;
    for (int i = 1; i < e; ++i)
      if (probs.at(t, i) > probs.at(t, best)) best = i;  // strict: ties keep lowest index
    indices[t] = best;
  }
  return indices;
}

StreamingMoELayer::StreamingMoELayer(int d_model, int d_ff, int num_experts, double dropout,
                                     Rng& rng) {
  if (num_experts < 2) throw std::invalid_argument("StreamingMoELayer: need at least 2 experts");
  experts_.reserve(num_experts);
  for (int i = 0; i < num_experts; ++i) experts_.emplace_back(d_model, d_ff, dropout, rng);
}

StreamingMoELayer::Output StreamingMoELayer::forward(const Router& router, const Tensor& x_expert,
                                                     const Tensor& h_router,
                                                     const ForwardCtx& ctx) const {
  if (x_expert.size(0) != h_router.size(0))
    throw std::invalid_argument("StreamingMoELayer: expert input has " +
                                std::to_string(x_expert.size(0)) + " frames but router input has " +
                                std::to_string(h_router.size(0)));
  Output out;
  out.route = route_probs(router, h_router);
  out.out = apply(x_expert, out.route, ctx);
  return out;
}

Tensor StreamingMoELayer::apply(const Tensor& x_expert, const RouteDecision& route,
                                const ForwardCtx& ctx) const {
  const int t_len = x_expert.size(0);
  const int e = num_experts();
  if (static_cast<int>(route.indices.size()) != t_len)
    throw std::invalid_argument("StreamingMoELayer: routing covers " +
                                std::to_string(route.indices.size()) + " frames, input has " +
                                std::to_string(t_len));
  if (route.probs.size(1) != e)
    throw std::invalid_argument("StreamingMoELayer: route width mismatch");

  // Winning gate value per frame, differentiable into the router.
  Tensor gate = select_per_row(route.probs, route.indices);

  std::vector<std::vector<int>> frames_of(e);
  for (int t = 0; t < t_len; ++t) frames_of[route.indices[t]].push_back(t);

  Tensor out;
  for (int i = 0; i < e; ++i) {
    if (frames_of[i].empty()) continue;
    invocations_ += static_cast<int64_t>(frames_of[i].size());
    Tensor xi = rows_gather(x_expert, frames_of[i]);
    Tensor gi = rows_gather(gate, frames_of[i]);
    Tensor yi = scale_rows(experts_[i].forward(xi, ctx), gi);
    Tensor placed = rows_scatter(yi, frames_of[i], t_len);
    out = out.defined() ? add(out, placed) : placed;
  }
  return out;
}

int64_t StreamingMoELayer::expert_param_count() const {
  return experts_.empty() ? 0 : experts_[0].param_count();
}

void StreamingMoELayer::collect_params(const std::string& prefix, ParamList& out) const {
  for (size_t i = 0; i < experts_.size(); ++i)
    experts_[i].collect_params(prefix + ".expert" + std::to_string(i), out);
}

RoutingStats::RoutingStats(int num_layers, int num_experts)
    : num_layers_(num_layers),
      num_experts_(num_experts),
      counts_(num_layers, std::vector<int64_t>(num_experts, 0)),
      agree_(num_layers, std::vector<int64_t>(num_layers, 0)) {}

void RoutingStats::add_utterance(const std::vector<std::vector<int>>& per_layer_indices) {
  if (static_cast<int>(per_layer_indices.size()) != num_layers_)
    throw std::invalid_argument("RoutingStats: layer count mismatch");
  if (num_layers_ == 0) return;
  const size_t frames = per_layer_indices[0].size();
  for (const auto& layer : per_layer_indices)
    if (layer.size() != frames) throw std::invalid_argument("RoutingStats: frame count mismatch");
  total_frames_ += static_cast<int64_t>(frames);
  for (int l = 0; l < num_layers_; ++l)
    for (int idx : per_layer_indices[l]) counts_[l].at(idx) += 1;
  for (int a = 0; a < num_layers_; ++a)
    for (int b = 0; b < num_layers_; ++b)
      for (size_t t = 0; t < frames; ++t)
        if (per_layer_indices[a][t] == per_layer_indices[b][t]) agree_[a][b] += 1;
}

std::vector<std::vector<double>> RoutingStats::agreement() const {
  std::vector<std::vector<double>> out(num_layers_, std::vector<double>(num_layers_, 0.0));
  if (total_frames_ == 0) return out;
  for (int a = 0; a < num_layers_; ++a)
    for (int b = 0; b < num_layers_; ++b)
      out[a][b] = static_cast<double>(agree_[a][b]) / static_cast<double>(total_frames_);
  return out;
}

}  // namespace scmoe
