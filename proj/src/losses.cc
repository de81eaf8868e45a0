#include "scmoe/losses.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace scmoe {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

double log_sum_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

LabelSequence::LabelSequence(std::vector<int> v) : ids(std::move(v)) {
  for (int id : ids)
    if (id < 1)
      throw std::invalid_argument("LabelSequence: id " + std::to_string(id) +
                                  " invalid, non-blank ids start at 1");
}

PosteriorGrid PosteriorGrid::from_log_probs(Tensor t) {
  if (t.ndim() != 2)
    throw std::invalid_argument("PosteriorGrid: expected [T x V], got " + t.shape_str());
  const int rows = t.size(0), v = t.size(1);
  for (int r = 0; r < rows; ++r) {
    double mx = kNegInf;
    for (int c = 0; c < v; ++c) mx = std::max(mx, t.at(r, c));
    double z = 0;
    for (int c = 0; c < v; ++c) z += std::exp(t.at(r, c) - mx);
    const double lse = mx + std::log(z);
    if (std::abs(lse) > 1e-8)
      throw std::invalid_argument("PosteriorGrid: row " + std::to_string(r) +
                                  " is not log-normalized (logsumexp = " + std::to_string(lse) +
                                  ")");
  }
  return PosteriorGrid{std::move(t)};
}

// ---- CTC loss ----

Tensor ctc_loss(const PosteriorGrid& grid, const LabelSequence& target) {
  const Tensor& lp = grid.log_probs;
  const int t_len = grid.frames();
  const int vocab = grid.vocab();
  const int l_len = target.length();
  for (int id : target.ids)
    if (id >= vocab)
      throw std::invalid_argument("ctc_loss: label id " + std::to_string(id) +
                                  " outside vocabulary of size " + std::to_string(vocab));
  int repeats = 0;
  for (int i = 1; i < l_len; ++i)
    if (target.ids[i] == target.ids[i - 1]) ++repeats;
  if (t_len < l_len + repeats)
    throw std::invalid_argument("ctc_loss: infeasible target, needs at least " +
                                std::to_string(l_len + repeats) + " frames but grid has " +
                                std::to_string(t_len));

  // Extended label sequence: blank, l1, blank, l2, ..., blank.
  const int s_len = 2 * l_len + 1;
  std::vector<int> ext(s_len, kBlankId);
  for (int i = 0; i < l_len; ++i) ext[2 * i + 1] = target.ids[i];

  auto lpv = [&](int t, int v) { return lp.data()[static_cast<size_t>(t) * vocab + v]; };
  auto allow_skip = [&](int s) {
    return s >= 2 && ext[s] != kBlankId && ext[s] != ext[s - 2];
  };

  // Forward variables, alpha[t][s] includes the emission at frame t.
  std::vector<std::vector<double>> alpha(t_len, std::vector<double>(s_len, kNegInf));
  alpha[0][0] = lpv(0, ext[0]);
  if (s_len > 1) alpha[0][1] = lpv(0, ext[1]);
  for (int t = 1; t < t_len; ++t)
    for (int s = 0; s < s_len; ++s) {
      double acc = alpha[t - 1][s];
      if (s >= 1) acc = log_sum_exp(acc, alpha[t - 1][s - 1]);
      if (allow_skip(s)) acc = log_sum_exp(acc, alpha[t - 1][s - 2]);
      if (acc != kNegInf) alpha[t][s] = acc + lpv(t, ext[s]);
    }
  double log_p = alpha[t_len - 1][s_len - 1];
  if (s_len > 1) log_p = log_sum_exp(log_p, alpha[t_len - 1][s_len - 2]);
  if (log_p == kNegInf)
    throw std::runtime_error("ctc_loss: zero total alignment probability");

  Tensor out = make_node({1}, {lp.impl_ptr()});
  out.data()[0] = -log_p;

  if (out.requires_grad()) {
    TensorImpl* oi = out.impl();
    TensorImpl* li = lp.impl();
    out.impl()->backward_fn = [oi, li, alpha, ext, log_p, t_len, vocab, s_len]() {
      // Backward variables, beta[t][s] excludes the emission at frame t, so
      // alpha + beta counts each frame exactly once.
      std::vector<std::vector<double>> beta(t_len, std::vector<double>(s_len, kNegInf));
      auto lpv = [&](int t, int v) { return li->data[static_cast<size_t>(t) * vocab + v]; };
      auto allow_skip = [&ext](int s) {
        return s >= 2 && ext[s] != kBlankId && ext[s] != ext[s - 2];
      };
      beta[t_len - 1][s_len - 1] = 0.0;
      if (s_len > 1) beta[t_len - 1][s_len - 2] = 0.0;
      for (int t = t_len - 2; t >= 0; --t)
        for (int s = 0; s < s_len; ++s) {
          double acc = beta[t + 1][s] == kNegInf ? kNegInf : beta[t + 1][s] + lpv(t + 1, ext[s]);
          if (s + 1 < s_len && beta[t + 1][s + 1] != kNegInf)
            acc = log_sum_exp(acc, beta[t + 1][s + 1] + lpv(t + 1, ext[s + 1]));
          if (s + 2 < s_len && allow_skip(s + 2) && beta[t + 1][s + 2] != kNegInf)
            acc = log_sum_exp(acc, beta[t + 1][s + 2] + lpv(t + 1, ext[s + 2]));
          beta[t][s] = acc;
        }
      const double g = oi->grad[0];
      li->ensure_grad();
      std::vector<double> occ(vocab, kNegInf);
      for (int t = 0; t < t_len; ++t) {
        std::fill(occ.begin(), occ.end(), kNegInf);
        for (int s = 0; s < s_len; ++s) {
          if (alpha[t][s] == kNegInf || beta[t][s] == kNegInf) continue;
          occ[ext[s]] = log_sum_exp(occ[ext[s]], alpha[t][s] + beta[t][s]);
        }
        for (int v = 0; v < vocab; ++v)
          if (occ[v] != kNegInf)
            li->grad[static_cast<size_t>(t) * vocab + v] -= g * std::exp(occ[v] - log_p);
      }
    };
  }
  return out;
}

// ---- greedy decode ----

LabelSequence ctc_greedy_decode(const PosteriorGrid& grid) {
  const int t_len = grid.frames(), vocab = grid.vocab();
  LabelSequence out;
  int prev = kBlankId;
  for (int t = 0; t < t_len; ++t) {
    int best = 0;
    for (int v = 1; v < vocab; ++v)
      if (grid.log_probs.at(t, v) > grid.log_probs.at(t, best)) best = v;
    if (best != kBlankId && best != prev) out.ids.push_back(best);
    prev = best;
  }
  return out;
}

// ---- prefix beam search ----

std::vector<NBestEntry> ctc_prefix_beam_search(const PosteriorGrid& grid, int beam) {
  if (beam < 1) throw std::invalid_argument("ctc_prefix_beam_search: beam must be >= 1");
  const int t_len = grid.frames(), vocab = grid.vocab();

  struct PrefixScore {
    double blank = kNegInf;      // log prob of the prefix ending in blank
    double non_blank = kNegInf;  // log prob of the prefix ending in its last symbol
    double total() const { return log_sum_exp(blank, non_blank); }
  };
  // Ordered map keeps beam iteration deterministic.
  using Beams = std::map<std::vector<int>, PrefixScore>;
  Beams beams;
  beams[{}] = PrefixScore{0.0, kNegInf};

  for (int t = 0; t < t_len; ++t) {
    Beams next;
    auto bump_blank = [&next](const std::vector<int>& key, double mass) {
      if (mass == kNegInf) return;
      PrefixScore& ns = next[key];
      ns.blank = log_sum_exp(ns.blank, mass);
    };
    auto bump_non_blank = [&next](const std::vector<int>& key, double mass) {
      if (mass == kNegInf) return;
      PrefixScore& ns = next[key];
      ns.non_blank = log_sum_exp(ns.non_blank, mass);
    };
    for (const auto& [prefix, score] : beams) {
      for (int v = 0; v < vocab; ++v) {
        const double lp = grid.log_probs.at(t, v);
        if (v == kBlankId) {
          bump_blank(prefix, score.total() + lp);
        } else if (!prefix.empty() && prefix.back() == v) {
          // Repeating the last symbol extends the same prefix; a blank gap
          // in between instead starts a new copy of it.
          bump_non_blank(prefix, score.non_blank + lp);
          std::vector<int> longer = prefix;
          longer.push_back(v);
          bump_non_blank(longer, score.blank + lp);
        } else {
          std::vector<int> longer = prefix;
          longer.push_back(v);
          bump_non_blank(longer, score.total() + lp);
        }
      }
    }
    // Prune to the beam.
    std::vector<std::pair<std::vector<int>, PrefixScore>> ranked(next.begin(), next.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.second.total() > b.second.total();
    });
    if (static_cast<int>(ranked.size()) > beam) ranked.resize(beam);
    beams = Beams(ranked.begin(), ranked.end());
  }

  std::vector<NBestEntry> out;
  for (const auto& [prefix, score] : beams)
    out.push_back({LabelSequence(prefix), score.total()});
  std::stable_sort(out.begin(), out.end(),
                   [](const NBestEntry& a, const NBestEntry& b) { return a.log_score > b.log_score; });
  return out;
}

// ---- cross entropy ----

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, double smoothing,
                     int ignore_id) {
  if (logits.ndim() != 2)
    throw std::invalid_argument("cross_entropy: logits must be [N x C], got " + logits.shape_str());
  const int n = logits.size(0), c = logits.size(1);
  if (static_cast<int>(targets.size()) != n)
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(n) + " rows");
  int kept = 0;
  for (int tgt : targets) {
    if (tgt == ignore_id) continue;
    if (tgt < 0 || tgt >= c)
      throw std::invalid_argument("cross_entropy: target " + std::to_string(tgt) +
                                  " outside [0, " + std::to_string(c) + ")");
    ++kept;
  }
  if (kept == 0) throw std::invalid_argument("cross_entropy: every position is ignored");

  // Row-wise log-softmax (max-shifted) cached for the backward pass.
  auto logp = std::make_shared<std::vector<double>>(logits.numel());
  double loss = 0;
  for (int i = 0; i < n; ++i) {
    const size_t base = static_cast<size_t>(i) * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j) mx = std::max(mx, logits.data()[base + j]);
    double z = 0;
    for (int j = 0; j < c; ++j) z += std::exp(logits.data()[base + j] - mx);
    const double lz = mx + std::log(z);
    for (int j = 0; j < c; ++j) (*logp)[base + j] = logits.data()[base + j] - lz;
    if (targets[i] == ignore_id) continue;
    double row = -(1.0 - smoothing) * (*logp)[base + targets[i]];
    if (smoothing > 0.0) {
      double s = 0;
      for (int j = 0; j < c; ++j) s += (*logp)[base + j];
      row -= smoothing / c * s;
    }
    loss += row;
  }
  loss /= kept;

  Tensor out = make_node({1}, {logits.impl_ptr()});
  out.data()[0] = loss;
  if (out.requires_grad()) {
    TensorImpl* oi = out.impl();
    TensorImpl* li = logits.impl();
    const double eps = smoothing;
    out.impl()->backward_fn = [oi, li, logp, targets, ignore_id, n, c, kept, eps]() {
      li->ensure_grad();
      const double g = oi->grad[0] / kept;
      for (int i = 0; i < n; ++i) {
        if (targets[i] == ignore_id) continue;
        const size_t base = static_cast<size_t>(i) * c;
        for (int j = 0; j < c; ++j) {
          const double q = eps / c + (j == targets[i] ? 1.0 - eps : 0.0);
          li->grad[base + j] += g * (std::exp((*logp)[base + j]) - q);
        }
      }
    };
  }
  return out;
}

}  // namespace scmoe
