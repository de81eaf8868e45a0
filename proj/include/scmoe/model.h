#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "scmoe/config.h"
#include "scmoe/data.h"
#include "scmoe/decoder.h"
#include "scmoe/encoder.h"
#include "scmoe/losses.h"

namespace scmoe {

// ---- loss combination (Eq. 5-9 shapes, shared by training and decoding) ----

double combine_asr_value(double ctc, double ce_l2r, double ce_r2l, double lambda, double alpha);
double combine_lid_value(const std::vector<double>& ctc_terms,
                         const std::vector<std::pair<double, double>>& ce_terms, double lambda,
                         double alpha);
// Decode-time fusion of hypothesis log scores (same shape, decode weights).
double fuse_decode_score(double ctc, double l2r, double r2l, double lambda, double alpha);

struct LossBreakdown {
  Tensor total;  // scalar, differentiable
  double asr_ctc = 0.0;
  double asr_ce_l2r = 0.0;
  double asr_ce_r2l = 0.0;
  std::vector<double> lid_ctc;     // one per encoder LID grid
  std::vector<double> lid_ce_l2r;  // one per decoder switch layer
  std::vector<double> lid_ce_r2l;

  double asr_value(const LossWeights& w) const;
  double lid_value(const LossWeights& w) const;
};

struct Hypothesis {
  std::vector<int> tokens;
  double ctc_score = 0.0;
  double l2r_score = 0.0;
  double r2l_score = 0.0;
  double fused_score = 0.0;
};

struct DecodeResult {
  std::vector<Hypothesis> nbest;  // sorted by fused score, best first
  const Hypothesis& best() const;
};

// Routing overrides for whole-model gradient checks: encoder decisions, then
// L2R decoder decisions, then R2L.
struct ModelRoutingOverride {
  RoutingOverride encoder, l2r, r2l;
};

// U2++-style two-pass model: conformer/switch-conformer encoder with a CTC
// head, plus left-to-right and right-to-left (switch) transformer decoders.
class ScMoeModel {
 public:
  ScMoeModel(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamList params() const;
  int64_t total_parameters() const;
  // Parameters touched for one frame/position under top-1 routing: every
  // non-expert parameter plus exactly one expert per MoE layer.
  int64_t activated_parameters() const;

  EncoderOutput encode(const Tensor& feats, const ChunkSpec& spec, const ForwardCtx& ctx,
                       const RoutingOverride* force = nullptr,
                       RoutingOverride* capture = nullptr) const;
  PosteriorGrid ctc_log_probs(const EncoderOutput& enc) const;

  enum class Direction { kL2R, kR2L };
  DecoderOutput run_decoder(Direction dir, const std::vector<int>& input_ids, const Tensor& enc,
                            const ForwardCtx& ctx, const RoutingOverride* force = nullptr,
                            RoutingOverride* capture = nullptr) const;

  LossBreakdown total_loss(const Utterance& utt, const ChunkSpec& spec, const LossWeights& weights,
                           const ForwardCtx& ctx, const ModelRoutingOverride* force = nullptr,
                           ModelRoutingOverride* capture = nullptr) const;

  // Two-pass decoding: CTC prefix beam search n-best, then teacher-forced
  // rescoring by both decoders; fused with decode weights (lambda,
  // decode_alpha). An all-blank first pass yields the empty hypothesis.
  DecodeResult attention_rescoring_decode(const Tensor& feats, const ChunkSpec& spec, int beam,
                                          const LossWeights& weights) const;

  // Teacher-forced log likelihood of a hypothesis (eos included).
  double decoder_score(Direction dir, const std::vector<int>& tokens, const Tensor& enc) const;

  void save_checkpoint(const std::string& path) const;
  static ScMoeModel load_checkpoint(const std::string& path);
  // Copies matching parameters from another checkpoint; with partial=false
  // every parameter must be covered. Used for pre-trained initialization of
  // the shared layers.
  void load_parameters(const std::string& path, bool partial);

  // Uniform weight averaging over checkpoints with compatible configs.
  static ScMoeModel average_checkpoints(const std::vector<std::string>& paths);

  const Encoder& encoder() const { return encoder_; }

 private:
  ModelConfig cfg_;
  Encoder encoder_;
  Linear ctc_head_;
  Decoder l2r_, r2l_;
};

// ---- optimizer ----

class AdamOptimizer {
 public:
  struct Options {
    double peak_lr = 1e-3;
    int warmup_steps = 200;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
    double grad_clip = 5.0;  // global norm; <= 0 disables
  };

  AdamOptimizer(ParamList params, Options options);
  void zero_grad();
  // One update from accumulated gradients; returns the learning rate used.
  double step();
  double current_lr() const;  // lr the next step will use
  int64_t step_count() const { return t_; }

  void save_state(const std::string& path) const;
  void load_state(const std::string& path);

 private:
  ParamList params_;
  Options options_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
};

// ---- training step ----

struct TrainStepReport {
  double loss = 0.0;
  double asr_ctc = 0.0;
  double asr_ce_l2r = 0.0;
  double asr_ce_r2l = 0.0;
  std::vector<double> lid_ctc;
  std::vector<double> lid_ce_l2r;
  std::vector<double> lid_ce_r2l;
  double grad_norm = 0.0;
  double lr = 0.0;
  ChunkSpec chunk;
};

// One optimizer update on the mean total loss over the batch. The chunk spec
// is sampled once per batch; a non-finite loss raises NumericError after
// dumping per-utterance diagnostics into the report.
TrainStepReport train_step(const ScMoeModel& model, const std::vector<const Utterance*>& batch,
                           AdamOptimizer& optimizer, const LossWeights& weights, Rng& chunk_rng,
                           Rng& dropout_rng, bool dynamic_chunk,
                           const ChunkSpec& fixed_chunk = ChunkSpec{});

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- streaming session ----

// Sequential chunk-by-chunk decoding. A partial transcript is emitted after
// every full chunk (chunk_size post-subsampling frames, i.e. chunk_size *
// subsample_factor input frames) by recomputing the masked forward over the
// accumulated prefix; the first partial therefore appears after exactly one
// chunk. finish() handles a trailing short chunk and runs attention
// rescoring over the whole utterance.
class StreamingSession {
 public:
  struct Partial {
    int chunk_index = 0;  // 1-based
    std::vector<int> tokens;
  };

  StreamingSession(const ScMoeModel& model, ChunkSpec spec, int beam, LossWeights weights);

  std::vector<Partial> push(const Tensor& frames);
  DecodeResult finish();

  int input_chunk_frames() const;  // frames per emission; -1 for full context
  const std::vector<Partial>& partials() const { return partials_; }
  bool finished() const { return finished_; }

 private:
  Partial emit(int rows);
  Tensor buffered(int rows) const;

  const ScMoeModel* model_;
  ChunkSpec spec_;
  int beam_;
  LossWeights weights_;
  std::vector<double> buffer_;  // row-major [rows x feat_dim]
  int rows_ = 0;
  int emitted_chunks_ = 0;
  std::vector<Partial> partials_;
  bool finished_ = false;
};

}  // namespace scmoe
