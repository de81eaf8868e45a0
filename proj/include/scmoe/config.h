#pragma once

#include <string>

#include "scmoe/routing.h"

namespace scmoe {

// Architecture description. m/h count standard/switch conformer encoder
// blocks; k/g count standard/switch transformer decoder layers per direction.
// The dense baseline is h = 0, g = 0.
struct ModelConfig {
  int feat_dim = 16;
  int d_model = 64;
  int d_ff = 128;
  int heads = 4;
  int conv_kernel = 7;
  int m = 2;
  int h = 2;
  int k = 1;
  int g = 1;
  int vocab = 22;            // joint vocabulary: blank, tokens, sos/eos
  int subsample_factor = 1;  // 1 (off) or 4 (two stride-2 conv stages)
  RouterSharing router_sharing = RouterSharing::kPerBlock;
  double dropout = 0.1;

  int sos_eos_id() const { return vocab - 1; }
  void validate() const;
  bool compatible_with(const ModelConfig& other) const;
};

// Loss-balance hyperparameters: lambda weighs CTC against attention CE,
// alpha weighs the R2L decoder against the L2R one. Training uses
// (0.3, 0.3); decoding fuses scores with (0.3, 0.6).
struct LossWeights {
  double lambda = 0.3;
  double alpha = 0.3;
  double lid_scale = 1.0;      // weight of the LID loss against the ASR loss
  double asr_smoothing = 0.1;  // label smoothing for token CE
  double decode_alpha = 0.6;

  void validate() const;
};

}  // namespace scmoe
