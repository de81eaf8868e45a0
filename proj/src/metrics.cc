#include "scmoe/metrics.h"

#include <algorithm>
#include <stdexcept>

namespace scmoe {

int64_t edit_distance(const std::vector<int>& ref, const std::vector<int>& hyp) {
  const size_t n = ref.size(), m = hyp.size();
  std::vector<int64_t> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int64_t>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int64_t>(i);
    for (size_t j = 1; j <= m; ++j) {
      const int64_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double MetricsReport::mer() const {
  return ref_tokens == 0 ? 0.0 : static_cast<double>(total_edits()) / ref_tokens;
}

double MetricsReport::lang_error_rate(int lang) const {
  if (lang != kLangA && lang != kLangB) throw std::invalid_argument("unknown language");
  const int64_t refs = ref_tokens_lang[lang - 1];
  return refs == 0 ? 0.0 : static_cast<double>(errors_lang[lang - 1]) / refs;
}

namespace {

// Full DP with backtrace so each edit can be attributed to a language.
// Tie order: match/substitution, then deletion, then insertion.
void attribute_edits(const std::vector<int>& ref, const std::vector<int>& hyp,
                     const VocabMap& vocab, MetricsReport& report) {
  const size_t n = ref.size(), m = hyp.size();
  std::vector<std::vector<int64_t>> d(n + 1, std::vector<int64_t>(m + 1, 0));
  for (size_t i = 0; i <= n; ++i) d[i][0] = static_cast<int64_t>(i);
  for (size_t j = 0; j <= m; ++j) d[0][j] = static_cast<int64_t>(j);
  for (size_t i = 1; i <= n; ++i)
    for (size_t j = 1; j <= m; ++j)
      d[i][j] = std::min({d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1), d[i - 1][j] + 1,
                          d[i][j - 1] + 1});

  size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) {
        ++report.substitutions;
        ++report.errors_lang[vocab.language_of(ref[i - 1]) - 1];
      }
      --i;
      --j;
    } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      ++report.deletions;
      ++report.errors_lang[vocab.language_of(ref[i - 1]) - 1];
      --i;
    } else {
      ++report.insertions;
      ++report.errors_lang[vocab.language_of(hyp[j - 1]) - 1];
      --j;
    }
  }
}

}  // namespace

MetricsReport compute_metrics(const std::vector<std::vector<int>>& refs,
                              const std::vector<std::vector<int>>& hyps, const VocabMap& vocab) {
  if (refs.size() != hyps.size())
    throw std::invalid_argument("compute_metrics: " + std::to_string(refs.size()) +
                                " references vs " + std::to_string(hyps.size()) + " hypotheses");
  MetricsReport report;
  report.utterances = static_cast<int64_t>(refs.size());
  for (size_t u = 0; u < refs.size(); ++u) {
    report.ref_tokens += static_cast<int64_t>(refs[u].size());
    for (int id : refs[u]) ++report.ref_tokens_lang[vocab.language_of(id) - 1];
    attribute_edits(refs[u], hyps[u], vocab, report);
  }
  return report;
}

void accumulate_lid_accuracy(const std::vector<int>& routing_indices,
                             const std::vector<int>& frame_langs, int subsample_factor,
                             LidAccuracy& acc) {
  const int input_frames = static_cast<int>(frame_langs.size());
  for (size_t t = 0; t < routing_indices.size(); ++t) {
    const int expert = routing_indices[t];
    if (expert == 2) {
      ++acc.blank_routed;
      continue;
    }
    const int src = std::min(static_cast<int>(t) * subsample_factor, input_frames - 1);
    const int truth = frame_langs[src];  // kLangA=1 or kLangB=2
    ++acc.considered;
    if (expert + 1 == truth) ++acc.correct;
  }
}

}  // namespace scmoe
