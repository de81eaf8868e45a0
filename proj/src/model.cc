#include "scmoe/model.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace scmoe {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

// ---- loss combination ----

double combine_asr_value(double ctc, double ce_l2r, double ce_r2l, double lambda, double alpha) {
  return lambda * ctc + (1.0 - lambda) * ((1.0 - alpha) * ce_l2r + alpha * ce_r2l);
}

double combine_lid_value(const std::vector<double>& ctc_terms,
                         const std::vector<std::pair<double, double>>& ce_terms, double lambda,
                         double alpha) {
  double ctc_sum = 0.0;
  for (double v : ctc_terms) ctc_sum += v;
  double ce_sum = 0.0;
  for (const auto& [l2r, r2l] : ce_terms) ce_sum += (1.0 - alpha) * l2r + alpha * r2l;
  return lambda * ctc_sum + (1.0 - lambda) * ce_sum;
}

double fuse_decode_score(double ctc, double l2r, double r2l, double lambda, double alpha) {
  return combine_asr_value(ctc, l2r, r2l, lambda, alpha);
}

double LossBreakdown::asr_value(const LossWeights& w) const {
  return combine_asr_value(asr_ctc, asr_ce_l2r, asr_ce_r2l, w.lambda, w.alpha);
}

double LossBreakdown::lid_value(const LossWeights& w) const {
  std::vector<std::pair<double, double>> ce;
  for (size_t i = 0; i < lid_ce_l2r.size(); ++i) ce.emplace_back(lid_ce_l2r[i], lid_ce_r2l[i]);
  return combine_lid_value(lid_ctc, ce, w.lambda, w.alpha);
}

const Hypothesis& DecodeResult::best() const {
  if (nbest.empty()) throw std::runtime_error("DecodeResult: empty n-best");
  return nbest.front();
}

// ---- model ----

ScMoeModel::ScMoeModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  Rng rng = Rng(seed).derive("model-init");
  encoder_ = Encoder(cfg, rng);
  ctc_head_ = Linear(cfg.d_model, cfg.vocab, rng);
  l2r_ = Decoder(cfg, rng);
  r2l_ = Decoder(cfg, rng);
}

ParamList ScMoeModel::params() const {
  ParamList out;
  encoder_.collect_params("encoder", out);
  ctc_head_.collect_params("ctc_head", out);
  l2r_.collect_params("decoder_l2r", out);
  r2l_.collect_params("decoder_r2l", out);
  return out;
}

int64_t ScMoeModel::total_parameters() const {
  int64_t total = 0;
  for (const auto& p : params()) total += p.tensor.numel();
  return total;
}

int64_t ScMoeModel::activated_parameters() const {
  int64_t inactive = 0;
  for (int b = 0; b < encoder_.num_sc_blocks(); ++b)
    for (int slot = 0; slot < 2; ++slot) {
      const auto& smoe = encoder_.sc_block(b).smoe(slot);
      inactive += (smoe.num_experts() - 1) * smoe.expert_param_count();
    }
  for (const Decoder* dec : {&l2r_, &r2l_})
    for (int j = 0; j < dec->num_st_layers(); ++j) {
      const auto& smoe = dec->st_layer(j).smoe();
      inactive += (smoe.num_experts() - 1) * smoe.expert_param_count();
    }
  return total_parameters() - inactive;
}

EncoderOutput ScMoeModel::encode(const Tensor& feats, const ChunkSpec& spec, const ForwardCtx& ctx,
                                 const RoutingOverride* force, RoutingOverride* capture) const {
  return encoder_.forward(feats, spec, ctx, force, capture);
}

PosteriorGrid ScMoeModel::ctc_log_probs(const EncoderOutput& enc) const {
  return PosteriorGrid::from_log_probs(log_softmax(ctc_head_.forward(enc.features), -1));
}

DecoderOutput ScMoeModel::run_decoder(Direction dir, const std::vector<int>& input_ids,
                                      const Tensor& enc, const ForwardCtx& ctx,
                                      const RoutingOverride* force,
                                      RoutingOverride* capture) const {
  const Decoder& dec = dir == Direction::kL2R ? l2r_ : r2l_;
  return dec.forward(input_ids, enc, ctx, force, capture);
}

namespace {

std::vector<int> reversed(const std::vector<int>& v) {
  return std::vector<int>(v.rbegin(), v.rend());
}

// Router logits come out in expert order (MA, EN, blank); the LID-CTC
// alphabet puts blank at index 0.
Tensor lid_ctc_grid(const Tensor& router_logits) {
  Tensor reordered = concat_cols({slice_cols(router_logits, kExpertBlank, 1),
                                  slice_cols(router_logits, kExpertMandarin, 1),
                                  slice_cols(router_logits, kExpertEnglish, 1)});
  return log_softmax(reordered, -1);
}

}  // namespace

LossBreakdown ScMoeModel::total_loss(const Utterance& utt, const ChunkSpec& spec,
                                     const LossWeights& weights, const ForwardCtx& ctx,
                                     const ModelRoutingOverride* force,
                                     ModelRoutingOverride* capture) const {
  weights.validate();
  if (utt.tokens.empty()) throw std::invalid_argument("total_loss: utterance has no tokens");
  if (utt.langs.size() != utt.tokens.size())
    throw std::invalid_argument("total_loss: language labels do not align with tokens");

  const int sos = cfg_.sos_eos_id();
  const auto& y = utt.tokens;
  const auto& z = utt.langs;

  EncoderOutput enc = encode(utt.features, spec, ctx, force ? &force->encoder : nullptr,
                             capture ? &capture->encoder : nullptr);
  PosteriorGrid grid = ctc_log_probs(enc);

  LossBreakdown lb;
  Tensor asr_ctc = ctc_loss(grid, LabelSequence(y));
  lb.asr_ctc = asr_ctc.item();

  // Teacher forcing: inputs [sos, y...], targets [y..., eos]; the R2L
  // decoder consumes the reversed sequence with mirrored conventions.
  std::vector<int> l2r_in{sos};
  l2r_in.insert(l2r_in.end(), y.begin(), y.end());
  std::vector<int> l2r_tgt(y);
  l2r_tgt.push_back(sos);
  const std::vector<int> yr = reversed(y);
  std::vector<int> r2l_in{sos};
  r2l_in.insert(r2l_in.end(), yr.begin(), yr.end());
  std::vector<int> r2l_tgt(yr);
  r2l_tgt.push_back(sos);

  DecoderOutput l2r_out = run_decoder(Direction::kL2R, l2r_in, enc.features, ctx,
                                      force ? &force->l2r : nullptr,
                                      capture ? &capture->l2r : nullptr);
  DecoderOutput r2l_out = run_decoder(Direction::kR2L, r2l_in, enc.features, ctx,
                                      force ? &force->r2l : nullptr,
                                      capture ? &capture->r2l : nullptr);
  Tensor ce_l2r = cross_entropy(l2r_out.token_logits, l2r_tgt, weights.asr_smoothing);
  Tensor ce_r2l = cross_entropy(r2l_out.token_logits, r2l_tgt, weights.asr_smoothing);
  lb.asr_ce_l2r = ce_l2r.item();
  lb.asr_ce_r2l = ce_r2l.item();

  Tensor asr = add(mul(asr_ctc, weights.lambda),
                   mul(add(mul(ce_l2r, 1.0 - weights.alpha), mul(ce_r2l, weights.alpha)),
                       1.0 - weights.lambda));

  // LID supervision: CTC on every encoder router grid, token-level CE on
  // every decoder switch layer (labels aligned with the predicted token,
  // the eos position ignored).
  Tensor lid_ctc_sum;
  for (const Tensor& logits : enc.lid_ctc_logits) {
    Tensor term = ctc_loss(PosteriorGrid::from_log_probs(lid_ctc_grid(logits)), LabelSequence(z));
    lb.lid_ctc.push_back(term.item());
    lid_ctc_sum = lid_ctc_sum.defined() ? add(lid_ctc_sum, term) : term;
  }

  std::vector<int> lid_tgt_l2r;
  for (int lang : z) lid_tgt_l2r.push_back(lang - 1);
  lid_tgt_l2r.push_back(-1);  // eos position carries no language
  std::vector<int> lid_tgt_r2l;
  for (auto it = z.rbegin(); it != z.rend(); ++it) lid_tgt_r2l.push_back(*it - 1);
  lid_tgt_r2l.push_back(-1);

  Tensor lid_ce_sum;
  for (size_t j = 0; j < l2r_out.lid_logits.size(); ++j) {
    Tensor term_l = cross_entropy(l2r_out.lid_logits[j], lid_tgt_l2r, 0.0);
    Tensor term_r = cross_entropy(r2l_out.lid_logits[j], lid_tgt_r2l, 0.0);
    lb.lid_ce_l2r.push_back(term_l.item());
    lb.lid_ce_r2l.push_back(term_r.item());
    Tensor term =
        add(mul(term_l, 1.0 - weights.alpha), mul(term_r, weights.alpha));
    lid_ce_sum = lid_ce_sum.defined() ? add(lid_ce_sum, term) : term;
  }

  Tensor lid;
  if (lid_ctc_sum.defined() && lid_ce_sum.defined())
    lid = add(mul(lid_ctc_sum, weights.lambda), mul(lid_ce_sum, 1.0 - weights.lambda));
  else if (lid_ctc_sum.defined())
    lid = mul(lid_ctc_sum, weights.lambda);
  else if (lid_ce_sum.defined())
    lid = mul(lid_ce_sum, 1.0 - weights.lambda);

  lb.total = lid.defined() ? add(asr, mul(lid, weights.lid_scale)) : asr;
  return lb;
}

double ScMoeModel::decoder_score(Direction dir, const std::vector<int>& tokens,
                                 const Tensor& enc) const {
  const int sos = cfg_.sos_eos_id();
  std::vector<int> seq = dir == Direction::kL2R ? tokens : reversed(tokens);
  std::vector<int> input{sos};
  input.insert(input.end(), seq.begin(), seq.end());
  std::vector<int> targets(seq);
  targets.push_back(sos);

  ForwardCtx ctx = eval_ctx();
  DecoderOutput out = run_decoder(dir, input, enc, ctx);
  Tensor logp = log_softmax(out.token_logits, -1);
  double score = 0.0;
  for (size_t u = 0; u < targets.size(); ++u) score += logp.at(static_cast<int>(u), targets[u]);
  return score;
}

DecodeResult ScMoeModel::attention_rescoring_decode(const Tensor& feats, const ChunkSpec& spec,
                                                    int beam, const LossWeights& weights) const {
  ForwardCtx ctx = eval_ctx();
  EncoderOutput enc = encode(feats, spec, ctx);
  PosteriorGrid grid = ctc_log_probs(enc);
  std::vector<NBestEntry> nbest = ctc_prefix_beam_search(grid, beam);

  DecodeResult result;
  for (const auto& entry : nbest) {
    Hypothesis hyp;
    hyp.tokens = entry.labels.ids;
    hyp.ctc_score = entry.log_score;
    hyp.l2r_score = decoder_score(Direction::kL2R, hyp.tokens, enc.features);
    hyp.r2l_score = decoder_score(Direction::kR2L, hyp.tokens, enc.features);
    hyp.fused_score = fuse_decode_score(hyp.ctc_score, hyp.l2r_score, hyp.r2l_score,
                                        weights.lambda, weights.decode_alpha);
    result.nbest.push_back(std::move(hyp));
  }
  std::stable_sort(result.nbest.begin(), result.nbest.end(),
                   [](const Hypothesis& a, const Hypothesis& b) {
                     return a.fused_score > b.fused_score;
                   });
  return result;
}

// ---- checkpoint io ----

namespace {

constexpr char kMagic[8] = {'S', 'C', 'M', 'O', 'E', 'C', 'K', 'P'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& out, uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
uint64_t read_u64(std::istream& in) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

json config_to_json(const ModelConfig& cfg) {
  return json{{"feat_dim", cfg.feat_dim},
              {"d_model", cfg.d_model},
              {"d_ff", cfg.d_ff},
              {"heads", cfg.heads},
              {"conv_kernel", cfg.conv_kernel},
              {"m", cfg.m},
              {"h", cfg.h},
              {"k", cfg.k},
              {"g", cfg.g},
              {"vocab", cfg.vocab},
              {"subsample_factor", cfg.subsample_factor},
              {"router_sharing", to_string(cfg.router_sharing)},
              {"dropout", cfg.dropout}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.feat_dim = j.at("feat_dim").get<int>();
  cfg.d_model = j.at("d_model").get<int>();
  cfg.d_ff = j.at("d_ff").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.conv_kernel = j.at("conv_kernel").get<int>();
  cfg.m = j.at("m").get<int>();
  cfg.h = j.at("h").get<int>();
  cfg.k = j.at("k").get<int>();
  cfg.g = j.at("g").get<int>();
  cfg.vocab = j.at("vocab").get<int>();
  cfg.subsample_factor = j.at("subsample_factor").get<int>();
  cfg.router_sharing = router_sharing_from_string(j.at("router_sharing").get<std::string>());
  cfg.dropout = j.at("dropout").get<double>();
  return cfg;
}

struct CheckpointBlobs {
  ModelConfig config;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

CheckpointBlobs read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint32_t version = read_u32(in);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const uint64_t json_len = read_u64(in);
  std::string config_str(json_len, '\0');
  in.read(config_str.data(), static_cast<std::streamsize>(json_len));
  CheckpointBlobs blobs;
  blobs.config = config_from_json(json::parse(config_str));
  const uint64_t n = read_u64(in);
  for (uint64_t i = 0; i < n; ++i) {
    const uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const uint32_t ndim = read_u32(in);
    std::vector<int> shape(ndim);
    int64_t numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      shape[d] = static_cast<int>(read_u64(in));
      numel *= shape[d];
    }
    std::vector<double> data(numel);
    in.read(reinterpret_cast<char*>(data.data()), numel * 8);
    if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
    blobs.tensors.emplace_back(std::move(name), Tensor::from(shape, std::move(data)));
  }
  return blobs;
}

}  // namespace

void ScMoeModel::save_checkpoint(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write(kMagic, 8);
  write_u32(out, kVersion);
  const std::string config_str = config_to_json(cfg_).dump();
  write_u64(out, config_str.size());
  out.write(config_str.data(), static_cast<std::streamsize>(config_str.size()));
  const ParamList plist = params();
  write_u64(out, plist.size());
  for (const auto& p : plist) {
    write_u32(out, static_cast<uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_u32(out, static_cast<uint32_t>(p.tensor.ndim()));
    for (int d : p.tensor.shape()) write_u64(out, static_cast<uint64_t>(d));
    out.write(reinterpret_cast<const char*>(p.tensor.data().data()),
              static_cast<std::streamsize>(p.tensor.numel() * 8));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

ScMoeModel ScMoeModel::load_checkpoint(const std::string& path) {
  CheckpointBlobs blobs = read_checkpoint(path);
  ScMoeModel model(blobs.config, /*seed=*/0);
  ParamList plist = model.params();
  if (plist.size() != blobs.tensors.size())
    throw std::runtime_error("checkpoint: parameter count mismatch in " + path);
  for (size_t i = 0; i < plist.size(); ++i) {
    const auto& [name, tensor] = blobs.tensors[i];
    if (name != plist[i].name)
      throw std::runtime_error("checkpoint: parameter order mismatch at '" + name + "'");
    if (tensor.shape() != plist[i].tensor.shape())
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
    plist[i].tensor.data() = tensor.data();
  }
  return model;
}

void ScMoeModel::load_parameters(const std::string& path, bool partial) {
  CheckpointBlobs blobs = read_checkpoint(path);
  if (!partial && !cfg_.compatible_with(blobs.config))
    throw std::runtime_error("checkpoint: incompatible config in " + path);
  ParamList plist = params();
  size_t loaded = 0;
  for (auto& p : plist) {
    const auto it = std::find_if(blobs.tensors.begin(), blobs.tensors.end(),
                                 [&](const auto& kv) { return kv.first == p.name; });
    if (it == blobs.tensors.end() || it->second.shape() != p.tensor.shape()) {
      if (!partial)
        throw std::runtime_error("checkpoint: missing or mismatched parameter '" + p.name + "'");
      continue;
    }
    p.tensor.data() = it->second.data();
    ++loaded;
  }
  if (loaded == 0) throw std::runtime_error("checkpoint: no parameters matched " + path);
}

ScMoeModel ScMoeModel::average_checkpoints(const std::vector<std::string>& paths) {
  if (paths.empty()) throw std::invalid_argument("average_checkpoints: no paths");
  ScMoeModel model = load_checkpoint(paths[0]);
  ParamList plist = model.params();
  for (size_t c = 1; c < paths.size(); ++c) {
    CheckpointBlobs blobs = read_checkpoint(paths[c]);
    if (!model.cfg_.compatible_with(blobs.config))
      throw std::runtime_error("average_checkpoints: incompatible config in " + paths[c]);
    if (blobs.tensors.size() != plist.size())
      throw std::runtime_error("average_checkpoints: parameter count mismatch in " + paths[c]);
    for (size_t i = 0; i < plist.size(); ++i) {
      auto& dst = plist[i].tensor.data();
      const auto& src = blobs.tensors[i].second.data();
      for (size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  }
  const double inv = 1.0 / static_cast<double>(paths.size());
  for (auto& p : plist)
    for (double& v : p.tensor.data()) v *= inv;
  return model;
}

// ---- optimizer ----

AdamOptimizer::AdamOptimizer(ParamList params, Options options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void AdamOptimizer::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

double AdamOptimizer::current_lr() const {
  const double t = static_cast<double>(t_ + 1);
  const double w = static_cast<double>(options_.warmup_steps);
  return options_.peak_lr * std::sqrt(w) * std::min(1.0 / std::sqrt(t), t / (w * std::sqrt(w)));
}

double AdamOptimizer::step() {
  const double lr = current_lr();
  ++t_;

  double scale = 1.0;
  if (options_.grad_clip > 0.0) {
    double sq = 0.0;
    for (auto& p : params_)
      for (double g : p.tensor.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > options_.grad_clip) scale = options_.grad_clip / norm;
  }

  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& data = params_[i].tensor.data();
    const auto& grad = params_[i].tensor.grad();
    for (size_t j = 0; j < data.size(); ++j) {
      const double g = grad[j] * scale;
      m_[i][j] = options_.beta1 * m_[i][j] + (1.0 - options_.beta1) * g;
      v_[i][j] = options_.beta2 * v_[i][j] + (1.0 - options_.beta2) * g * g;
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      data[j] -= lr * mhat / (std::sqrt(vhat) + options_.eps);
    }
  }
  return lr;
}

void AdamOptimizer::save_state(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("optimizer: cannot write " + path);
  write_u64(out, static_cast<uint64_t>(t_));
  write_u64(out, m_.size());
  for (size_t i = 0; i < m_.size(); ++i) {
    write_u64(out, m_[i].size());
    out.write(reinterpret_cast<const char*>(m_[i].data()),
              static_cast<std::streamsize>(m_[i].size() * 8));
    out.write(reinterpret_cast<const char*>(v_[i].data()),
              static_cast<std::streamsize>(v_[i].size() * 8));
  }
}

void AdamOptimizer::load_state(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("optimizer: cannot read " + path);
  t_ = static_cast<int64_t>(read_u64(in));
  const uint64_t n = read_u64(in);
  if (n != m_.size()) throw std::runtime_error("optimizer: state size mismatch");
  for (size_t i = 0; i < m_.size(); ++i) {
    const uint64_t len = read_u64(in);
    if (len != m_[i].size()) throw std::runtime_error("optimizer: state shape mismatch");
    in.read(reinterpret_cast<char*>(m_[i].data()), static_cast<std::streamsize>(len * 8));
    in.read(reinterpret_cast<char*>(v_[i].data()), static_cast<std::streamsize>(len * 8));
  }
  if (!in) throw std::runtime_error("optimizer: truncated state file");
}

// ---- training step ----

TrainStepReport train_step(const ScMoeModel& model, const std::vector<const Utterance*>& batch,
                           AdamOptimizer& optimizer, const LossWeights& weights, Rng& chunk_rng,
                           Rng& dropout_rng, bool dynamic_chunk, const ChunkSpec& fixed_chunk) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  TrainStepReport report;
  report.chunk = dynamic_chunk ? sample_dynamic_chunk(chunk_rng) : fixed_chunk;

  ForwardCtx ctx;
  ctx.training = true;
  ctx.rng = &dropout_rng;

  Tensor loss_sum;
  for (const Utterance* utt : batch) {
    LossBreakdown lb = model.total_loss(*utt, report.chunk, weights, ctx);
    loss_sum = loss_sum.defined() ? add(loss_sum, lb.total) : lb.total;
    report.asr_ctc += lb.asr_ctc;
    report.asr_ce_l2r += lb.asr_ce_l2r;
    report.asr_ce_r2l += lb.asr_ce_r2l;
    auto accumulate = [](std::vector<double>& into, const std::vector<double>& from) {
      if (into.empty()) into.assign(from.size(), 0.0);
      for (size_t i = 0; i < from.size(); ++i) into[i] += from[i];
    };
    accumulate(report.lid_ctc, lb.lid_ctc);
    accumulate(report.lid_ce_l2r, lb.lid_ce_l2r);
    accumulate(report.lid_ce_r2l, lb.lid_ce_r2l);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  Tensor loss = mul(loss_sum, inv);
  report.loss = loss.item();
  report.asr_ctc *= inv;
  report.asr_ce_l2r *= inv;
  report.asr_ce_r2l *= inv;
  for (auto* vec : {&report.lid_ctc, &report.lid_ce_l2r, &report.lid_ce_r2l})
    for (double& v : *vec) v *= inv;

  if (!std::isfinite(report.loss)) {
    std::ostringstream os;
    os << "train_step: non-finite loss " << report.loss << " (asr_ctc=" << report.asr_ctc
       << ", asr_ce_l2r=" << report.asr_ce_l2r << ", asr_ce_r2l=" << report.asr_ce_r2l
       << ", chunk=" << report.chunk.chunk_size << "/" << report.chunk.num_left_chunks << ")";
    throw NumericError(os.str());
  }

  optimizer.zero_grad();
  backward(loss);

  double sq = 0.0;
  ParamList plist = model.params();
  for (auto& p : plist)
    for (double g : p.tensor.grad()) sq += g * g;
  report.grad_norm = std::sqrt(sq);
  if (!std::isfinite(report.grad_norm))
    throw NumericError("train_step: non-finite gradient norm");

  report.lr = optimizer.step();
  return report;
}

// ---- streaming session ----

StreamingSession::StreamingSession(const ScMoeModel& model, ChunkSpec spec, int beam,
                                   LossWeights weights)
    : model_(&model), spec_(spec), beam_(beam), weights_(weights) {
  if (beam < 1) throw std::invalid_argument("StreamingSession: beam must be >= 1");
}

int StreamingSession::input_chunk_frames() const {
  if (spec_.full_context()) return -1;
  return spec_.chunk_size * model_->config().subsample_factor;
}

Tensor StreamingSession::buffered(int rows) const {
  const int f = model_->config().feat_dim;
  std::vector<double> data(buffer_.begin(), buffer_.begin() + static_cast<size_t>(rows) * f);
  return Tensor::from({rows, f}, std::move(data));
}

StreamingSession::Partial StreamingSession::emit(int rows) {
  ForwardCtx ctx = eval_ctx();
  EncoderOutput enc = model_->encode(buffered(rows), spec_, ctx);
  PosteriorGrid grid = model_->ctc_log_probs(enc);
  Partial partial;
  partial.chunk_index = ++emitted_chunks_;
  partial.tokens = ctc_greedy_decode(grid).ids;
  partials_.push_back(partial);
  return partial;
}

std::vector<StreamingSession::Partial> StreamingSession::push(const Tensor& frames) {
  if (finished_) throw std::runtime_error("StreamingSession: already finished");
  const int f = model_->config().feat_dim;
  if (frames.ndim() != 2 || frames.size(1) != f)
    throw std::invalid_argument("StreamingSession: expected [n x " + std::to_string(f) +
                                "] frames, got " + frames.shape_str());
  buffer_.insert(buffer_.end(), frames.data().begin(), frames.data().end());
  rows_ += frames.size(0);

  std::vector<Partial> emitted;
  const int chunk = input_chunk_frames();
  if (chunk < 0) return emitted;  // full context degenerates to single-shot
  while ((emitted_chunks_ + 1) * chunk <= rows_)
    emitted.push_back(emit((emitted_chunks_ + 1) * chunk));
  return emitted;
}

DecodeResult StreamingSession::finish() {
  if (finished_) throw std::runtime_error("StreamingSession: already finished");
  if (rows_ == 0) throw std::runtime_error("StreamingSession: no frames received");
  finished_ = true;
  const int chunk = input_chunk_frames();
  // A trailing remainder (or a stream shorter than one chunk) is processed
  // as a short chunk so the final partial always covers the full prefix.
  if (chunk > 0 && rows_ > emitted_chunks_ * chunk) emit(rows_);
  return model_->attention_rescoring_decode(buffered(rows_), spec_, beam_, weights_);
}

}  // namespace scmoe
