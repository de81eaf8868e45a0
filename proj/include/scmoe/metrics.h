#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "scmoe/data.h"

namespace scmoe {

// Plain Levenshtein distance over token ids (unit costs).
int64_t edit_distance(const std::vector<int>& ref, const std::vector<int>& hyp);

// Token error accounting with per-language attribution: substitutions and
// deletions belong to the reference token's language, insertions to the
// hypothesis token's language.
struct MetricsReport {
  int64_t utterances = 0;
  int64_t ref_tokens = 0;
  int64_t substitutions = 0;
  int64_t deletions = 0;
  int64_t insertions = 0;
  std::array<int64_t, 2> ref_tokens_lang{};  // [kLangA-1], [kLangB-1]
  std::array<int64_t, 2> errors_lang{};

  int64_t total_edits() const { return substitutions + deletions + insertions; }
  double mer() const;
  double lang_error_rate(int lang) const;  // kLangA or kLangB
};

MetricsReport compute_metrics(const std::vector<std::vector<int>>& refs,
                              const std::vector<std::vector<int>>& hyps, const VocabMap& vocab);

// Frame-level LID accuracy of encoder routing against alignment metadata.
// Expert 0 counts as language A, expert 1 as language B; frames routed to
// the blank expert are excluded from the denominator.
struct LidAccuracy {
  int64_t considered = 0;
  int64_t correct = 0;
  int64_t blank_routed = 0;

  double accuracy() const { return considered == 0 ? 0.0 : static_cast<double>(correct) / considered; }
};

// frame_langs holds per-input-frame languages; subsample_factor maps routed
// frame t' back to input frame t' * factor (clamped).
void accumulate_lid_accuracy(const std::vector<int>& routing_indices,
                             const std::vector<int>& frame_langs, int subsample_factor,
                             LidAccuracy& acc);

}  // namespace scmoe
