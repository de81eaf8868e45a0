#include "scmoe/config.h"

#include <stdexcept>

namespace scmoe {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("ModelConfig: " + msg); };
  if (feat_dim < 1) fail("feat_dim must be positive");
  if (d_model < 1) fail("d_model must be positive");
  if (d_ff < 1) fail("d_ff must be positive");
  if (heads < 1 || d_model % heads != 0) fail("d_model must be divisible by heads");
  if (conv_kernel < 1) fail("conv_kernel must be positive");
  if (m < 0 || h < 0 || k < 0 || g < 0) fail("layer counts must be non-negative");
  if (m + h < 1) fail("encoder needs at least one block");
  if (vocab < 3) fail("vocab must hold blank, at least one token, and sos/eos");
  if (subsample_factor != 1 && subsample_factor != 4) fail("subsample_factor must be 1 or 4");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
}

bool ModelConfig::compatible_with(const ModelConfig& other) const {
  return feat_dim == other.feat_dim && d_model == other.d_model && d_ff == other.d_ff &&
         heads == other.heads && conv_kernel == other.conv_kernel && m == other.m &&
         h == other.h && k == other.k && g == other.g && vocab == other.vocab &&
         subsample_factor == other.subsample_factor && router_sharing == other.router_sharing;
}

void LossWeights::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("LossWeights: " + msg); };
  if (lambda < 0.0 || lambda > 1.0) fail("lambda must be in [0, 1]");
  if (alpha < 0.0 || alpha > 1.0) fail("alpha must be in [0, 1]");
  if (decode_alpha < 0.0 || decode_alpha > 1.0) fail("decode_alpha must be in [0, 1]");
  if (lid_scale < 0.0) fail("lid_scale must be non-negative");
  if (asr_smoothing < 0.0 || asr_smoothing >= 1.0) fail("asr_smoothing must be in [0, 1)");
}

}  // namespace scmoe
