#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scmoe/tensor.h"

namespace scmoe {

// LID alphabet: 0 is the CTC blank, languages start at 1.
constexpr int kLangA = 1;  // plays the Mandarin role
constexpr int kLangB = 2;  // plays the English role

// Joint token vocabulary: 0 = blank, 1..K = language-A tokens,
// K+1..2K = language-B tokens, 2K+1 = sos/eos.
struct VocabMap {
  int tokens_per_language = 0;

  int vocab_size() const { return 2 * tokens_per_language + 2; }
  int sos_eos_id() const { return vocab_size() - 1; }
  int token_id(int lang, int index) const;
  int language_of(int token_id) const;  // kLangA or kLangB; throws on specials
  std::string token_name(int token_id) const;
  std::string render(const std::vector<int>& tokens) const;
};

// Two artificial languages emitting prototype vectors. At confusability 0
// language A occupies the first half of feature space and B the second half
// (disjoint supports); at 1 both collapse onto a shared subspace.
struct SynthLanguageSpec {
  int tokens_per_language = 10;
  int feat_dim = 16;  // must be even
  int frames_per_token_min = 2;
  int frames_per_token_max = 4;
  double confusability = 0.3;
  double noise_sigma = 0.1;

  void validate() const;
};

struct Utterance {
  std::string id;
  Tensor features;               // [T x F]
  std::vector<int> tokens;       // joint-vocab ids, no blank/sos/eos
  std::vector<int> langs;        // per token, kLangA or kLangB
  std::vector<int> frame_langs;  // alignment metadata, per frame
  std::vector<int> frame_token;  // alignment metadata, token index per frame

  int frames() const { return features.size(0); }
};

struct Corpus {
  SynthLanguageSpec spec;
  double switch_prob = 0.3;
  uint64_t seed = 0;
  std::vector<Utterance> train, dev, test;

  VocabMap vocab() const { return VocabMap{spec.tokens_per_language}; }
  const std::vector<Utterance>& split(const std::string& name) const;
};

// Token language follows a two-state Markov chain with the given switch
// probability; utterance lengths are uniform in [4, 12] tokens. Fully
// deterministic in (spec, seed): splits draw from independent derived
// streams.
Corpus generate_corpus(const SynthLanguageSpec& spec, int n_train, int n_dev, int n_test,
                       double switch_prob, uint64_t seed);

// Per-token language labels from the vocabulary map; |z| == |y|.
std::vector<int> language_labels(const std::vector<int>& tokens, const VocabMap& vocab);

// JSON-lines corpus persistence: one record per utterance plus a manifest.
void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

}  // namespace scmoe
