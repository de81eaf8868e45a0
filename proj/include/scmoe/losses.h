#pragma once

#include <string>
#include <vector>

#include "scmoe/tensor.h"

namespace scmoe {

// Index 0 is the blank symbol in every CTC alphabet (tokens and LID alike).
constexpr int kBlankId = 0;

// Non-blank symbol sequence; ids live in [1, V-1].
struct LabelSequence {
  std::vector<int> ids;

  LabelSequence() = default;
  explicit LabelSequence(std::vector<int> v);
  int length() const { return static_cast<int>(ids.size()); }
  bool operator==(const LabelSequence& other) const { return ids == other.ids; }
};

// Per-frame log posterior grid [T x V], each row normalized to logsumexp 0.
struct PosteriorGrid {
  Tensor log_probs;

  static PosteriorGrid from_log_probs(Tensor t);  // validates normalization
  int frames() const { return log_probs.size(0); }
  int vocab() const { return log_probs.size(1); }
};

// Negative log probability of the target under the CTC alignment model,
// computed with a log-space forward pass over the 2L+1 extended label
// sequence. Differentiable; the backward pass runs the matching backward DP.
// Throws if the target cannot be aligned within the available frames.
Tensor ctc_loss(const PosteriorGrid& grid, const LabelSequence& target);

// Per-frame argmax, collapse repeats, drop blanks.
LabelSequence ctc_greedy_decode(const PosteriorGrid& grid);

struct NBestEntry {
  LabelSequence labels;
  double log_score = 0.0;
};

// Standard CTC prefix beam search tracking blank/non-blank ending mass.
// Scores are total prefix log probabilities; result sorted descending.
std::vector<NBestEntry> ctc_prefix_beam_search(const PosteriorGrid& grid, int beam);

// Label-smoothed cross entropy, mean over positions whose target is not
// ignore_id. Smoothing mass epsilon is spread uniformly over all classes.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, double smoothing,
                     int ignore_id = -1);

double log_sum_exp(double a, double b);

}  // namespace scmoe
