#pragma once

#include <string>
#include <vector>

#include "scmoe/nn.h"
#include "scmoe/tensor.h"

namespace scmoe {

// Encoder expert slots. The blank expert exists so that CTC-spiky LID output
// can route blank frames without any lookahead replacement rule.
enum EncoderExpert { kExpertMandarin = 0, kExpertEnglish = 1, kExpertBlank = 2 };
constexpr int kEncoderExperts = 3;
constexpr int kDecoderExperts = 2;

// Router sharing topologies across the switch-conformer encoder stack.
//   kGlobal   (R1): one router; the routing decision is computed once, at the
//                   first switch block's input, and reused by every block.
//   kPerLayer (R2): every sMoE layer owns an independent router.
//   kPerBlock (R3): the two sMoE layers of one block share that block's router.
enum class RouterSharing { kGlobal, kPerLayer, kPerBlock };

RouterSharing router_sharing_from_string(const std::string& s);
std::string to_string(RouterSharing mode);

// Linear LID network: logits = h W_r + b_r, gates = softmax(logits).
class Router {
 public:
  Router() = default;
  Router(int d_model, int num_experts, Rng& rng);
  int num_experts() const { return num_experts_; }
  void collect_params(const std::string& prefix, ParamList& out) const;
  int64_t param_count() const { return linear_.param_count(); }
  const Linear& linear() const { return linear_; }

 private:
  Linear linear_;
  int num_experts_ = 0;
};

// One routing decision over a [T x D] sequence.
struct RouteDecision {
  Tensor logits;             // [T x E]
  Tensor probs;              // [T x E]
  std::vector<int> indices;  // per-frame argmax, ties to the lowest index
};

RouteDecision route_probs(const Router& router, const Tensor& h);
std::vector<int> select_expert(const Tensor& probs);

// Top-1 gated expert layer. Only the selected expert runs for each frame;
// its output is scaled by the winning gate value, which keeps the router on
// the gradient path.
class StreamingMoELayer {
 public:
  StreamingMoELayer() = default;
  StreamingMoELayer(int d_model, int d_ff, int num_experts, double dropout, Rng& rng);

  // Standalone form: routes internally with the given router input.
  struct Output {
    Tensor out;
    RouteDecision route;
  };
  Output forward(const Router& router, const Tensor& x_expert, const Tensor& h_router,
                 const ForwardCtx& ctx) const;

  // Block form: applies a routing decision computed by the caller (shared
  // routers compute it once per block or once per model).
  Tensor apply(const Tensor& x_expert, const RouteDecision& route, const ForwardCtx& ctx) const;

  int num_experts() const { return static_cast<int>(experts_.size()); }
  const PositionwiseFFN& expert(int i) const { return experts_.at(i); }
  int64_t expert_param_count() const;  // single expert

  // Frames routed through experts since the last reset; equals T per forward.
  int64_t invocation_count() const { return invocations_; }
  void reset_invocation_count() const { invocations_ = 0; }

  void collect_params(const std::string& prefix, ParamList& out) const;

 private:
  std::vector<PositionwiseFFN> experts_;
  mutable int64_t invocations_ = 0;
};

// Expert utilization and inter-layer agreement over a decoded corpus.
class RoutingStats {
 public:
  RoutingStats() = default;
  RoutingStats(int num_layers, int num_experts);

  // One utterance worth of per-layer frame indices (outer size = layers).
  void add_utterance(const std::vector<std::vector<int>>& per_layer_indices);

  int64_t total_frames() const { return total_frames_; }
  const std::vector<std::vector<int64_t>>& counts() const { return counts_; }
  // agreement[a][b]: fraction of frames where layers a and b chose the same expert.
  std::vector<std::vector<double>> agreement() const;

 private:
  int num_layers_ = 0;
  int num_experts_ = 0;
  int64_t total_frames_ = 0;
  std::vector<std::vector<int64_t>> counts_;
  std::vector<std::vector<int64_t>> agree_;
};

}  // namespace scmoe
