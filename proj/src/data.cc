#include "scmoe/data.h"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace scmoe {

using nlohmann::json;

// ---- vocabulary ----

int VocabMap::token_id(int lang, int index) const {
  if (index < 0 || index >= tokens_per_language)
    throw std::out_of_range("VocabMap: token index out of range");
  if (lang == kLangA) return 1 + index;
  if (lang == kLangB) return 1 + tokens_per_language + index;
  throw std::invalid_argument("VocabMap: unknown language " + std::to_string(lang));
}

int VocabMap::language_of(int token_id) const {
  if (token_id >= 1 && token_id <= tokens_per_language) return kLangA;
  if (token_id > tokens_per_language && token_id <= 2 * tokens_per_language) return kLangB;
  throw std::invalid_argument("VocabMap: token id " + std::to_string(token_id) +
                              " has no language");
}

std::string VocabMap::token_name(int token_id) const {
  if (token_id == 0) return "<blank>";
  if (token_id == sos_eos_id()) return "<sos/eos>";
  const int lang = language_of(token_id);
  const int index = lang == kLangA ? token_id - 1 : token_id - 1 - tokens_per_language;
  return (lang == kLangA ? "A" : "B") + std::to_string(index);
}

std::string VocabMap::render(const std::vector<int>& tokens) const {
  std::ostringstream os;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) os << " ";
    os << token_name(tokens[i]);
  }
  return os.str();
}

// ---- spec ----

void SynthLanguageSpec::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("SynthLanguageSpec: " + m); };
  if (tokens_per_language < 2) fail("need at least 2 tokens per language");
  if (feat_dim < 2 || feat_dim % 2 != 0) fail("feat_dim must be even and >= 2");
  if (frames_per_token_min < 1 || frames_per_token_max < frames_per_token_min)
    fail("bad frames-per-token range");
  if (confusability < 0.0 || confusability > 1.0) fail("confusability must be in [0, 1]");
  if (noise_sigma < 0.0) fail("noise_sigma must be non-negative");
}

const std::vector<Utterance>& Corpus::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "dev") return dev;
  if (name == "test") return test;
  throw std::invalid_argument("Corpus: unknown split '" + name + "'");
}

// ---- generation ----

namespace {

// Token prototypes. Each language has a mean block in its own half of the
// feature space plus per-token scatter; confusability c moves both languages
// toward a shared subspace and widens scatter into the foreign half.
std::vector<std::vector<double>> make_prototypes(const SynthLanguageSpec& spec, Rng& rng) {
  const int f = spec.feat_dim;
  const int half = f / 2;
  const double c = spec.confusability;
  const double base = 1.0;
  const double scatter = 0.5;
  std::vector<std::vector<double>> protos;
  protos.reserve(2 * spec.tokens_per_language);
  for (int lang = 0; lang < 2; ++lang)
    for (int tok = 0; tok < spec.tokens_per_language; ++tok) {
      std::vector<double> p(f, 0.0);
      for (int d = 0; d < f; ++d) {
        const bool own_half = (lang == 0) == (d < half);
        const double mean = own_half ? (1.0 - c) * base + c * base / 2 : c * base / 2;
        const double dev = rng.normal(0.0, scatter);
        p[d] = mean + (own_half ? dev : c * dev);
      }
      protos.push_back(std::move(p));
    }
  return protos;
}

Utterance make_utterance(const SynthLanguageSpec& spec, const VocabMap& vocab,
                         const std::vector<std::vector<double>>& protos, double switch_prob,
                         const std::string& id, Rng& rng) {
  Utterance utt;
  utt.id = id;
  const int n_tokens = rng.uniform_int(4, 12);
  int lang = rng.bernoulli(0.5) ? kLangA : kLangB;
  std::vector<double> feat_rows;
  for (int i = 0; i < n_tokens; ++i) {
    if (i > 0 && rng.bernoulli(switch_prob)) lang = lang == kLangA ? kLangB : kLangA;
    const int tok = rng.uniform_int(0, spec.tokens_per_language - 1);
    utt.tokens.push_back(vocab.token_id(lang, tok));
    utt.langs.push_back(lang);
    const auto& proto = protos[(lang == kLangA ? 0 : spec.tokens_per_language) + tok];
    const int frames = rng.uniform_int(spec.frames_per_token_min, spec.frames_per_token_max);
    for (int fidx = 0; fidx < frames; ++fidx) {
      utt.frame_langs.push_back(lang);
      utt.frame_token.push_back(i);
      for (double v : proto) feat_rows.push_back(v + rng.normal(0.0, spec.noise_sigma));
    }
  }
  const int t_total = static_cast<int>(utt.frame_langs.size());
  utt.features = Tensor::from({t_total, spec.feat_dim}, std::move(feat_rows));
  return utt;
}

std::vector<Utterance> make_split(const SynthLanguageSpec& spec, const VocabMap& vocab,
                                  const std::vector<std::vector<double>>& protos,
                                  double switch_prob, const std::string& name, int count,
                                  Rng rng) {
  std::vector<Utterance> utts;
  utts.reserve(count);
  for (int i = 0; i < count; ++i) {
    std::ostringstream id;
    id << name << "-" << i;
    utts.push_back(make_utterance(spec, vocab, protos, switch_prob, id.str(), rng));
  }
  return utts;
}

}  // namespace

Corpus generate_corpus(const SynthLanguageSpec& spec, int n_train, int n_dev, int n_test,
                       double switch_prob, uint64_t seed) {
  spec.validate();
  if (switch_prob < 0.0 || switch_prob > 1.0)
    throw std::invalid_argument("generate_corpus: switch_prob must be in [0, 1]");
  if (n_train < 0 || n_dev < 0 || n_test < 0)
    throw std::invalid_argument("generate_corpus: negative split size");

  Corpus corpus;
  corpus.spec = spec;
  corpus.switch_prob = switch_prob;
  corpus.seed = seed;
  const VocabMap vocab = corpus.vocab();

  Rng base(seed);
  Rng proto_rng = base.derive("prototypes");
  const auto protos = make_prototypes(spec, proto_rng);
  corpus.train = make_split(spec, vocab, protos, switch_prob, "train", n_train, base.derive("train"));
  corpus.dev = make_split(spec, vocab, protos, switch_prob, "dev", n_dev, base.derive("dev"));
  corpus.test = make_split(spec, vocab, protos, switch_prob, "test", n_test, base.derive("test"));
  return corpus;
}

std::vector<int> language_labels(const std::vector<int>& tokens, const VocabMap& vocab) {
  std::vector<int> z;
  z.reserve(tokens.size());
  for (int id : tokens) z.push_back(vocab.language_of(id));
  return z;
}

// ---- persistence ----

namespace {

json spec_to_json(const SynthLanguageSpec& spec) {
  return json{{"tokens_per_language", spec.tokens_per_language},
              {"feat_dim", spec.feat_dim},
              {"frames_per_token_min", spec.frames_per_token_min},
              {"frames_per_token_max", spec.frames_per_token_max},
              {"confusability", spec.confusability},
              {"noise_sigma", spec.noise_sigma}};
}

SynthLanguageSpec spec_from_json(const json& j) {
  SynthLanguageSpec spec;
  spec.tokens_per_language = j.at("tokens_per_language").get<int>();
  spec.feat_dim = j.at("feat_dim").get<int>();
  spec.frames_per_token_min = j.at("frames_per_token_min").get<int>();
  spec.frames_per_token_max = j.at("frames_per_token_max").get<int>();
  spec.confusability = j.at("confusability").get<double>();
  spec.noise_sigma = j.at("noise_sigma").get<double>();
  return spec;
}

void write_split(const std::vector<Utterance>& utts, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& utt : utts) {
    json features = json::array();
    for (int t = 0; t < utt.frames(); ++t) {
      json row = json::array();
      for (int d = 0; d < utt.features.size(1); ++d) row.push_back(utt.features.at(t, d));
      features.push_back(std::move(row));
    }
    json record{{"id", utt.id},
                {"features", std::move(features)},
                {"tokens", utt.tokens},
                {"langs", utt.langs},
                {"frame_langs", utt.frame_langs},
                {"frame_token", utt.frame_token}};
    out << record.dump() << "\n";
  }
}

std::vector<Utterance> read_split(const std::string& path, int feat_dim) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<Utterance> utts;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json record = json::parse(line);
    Utterance utt;
    utt.id = record.at("id").get<std::string>();
    utt.tokens = record.at("tokens").get<std::vector<int>>();
    utt.langs = record.at("langs").get<std::vector<int>>();
    utt.frame_langs = record.at("frame_langs").get<std::vector<int>>();
    utt.frame_token = record.at("frame_token").get<std::vector<int>>();
    const auto& rows = record.at("features");
    std::vector<double> flat;
    for (const auto& row : rows)
      for (const auto& v : row) flat.push_back(v.get<double>());
    const int t_total = static_cast<int>(rows.size());
    utt.features = Tensor::from({t_total, feat_dim}, std::move(flat));
    utts.push_back(std::move(utt));
  }
  return utts;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);
  json manifest{{"spec", spec_to_json(corpus.spec)},
                {"switch_prob", corpus.switch_prob},
                {"seed", corpus.seed},
                {"splits",
                 {{"train", corpus.train.size()},
                  {"dev", corpus.dev.size()},
                  {"test", corpus.test.size()}}},
                {"vocab_size", corpus.vocab().vocab_size()}};
  std::ofstream mout(dir + "/manifest.json");
  if (!mout) throw std::runtime_error("cannot write " + dir + "/manifest.json");
  mout << manifest.dump(2) << "\n";
  write_split(corpus.train, dir + "/train.jsonl");
  write_split(corpus.dev, dir + "/dev.jsonl");
  write_split(corpus.test, dir + "/test.jsonl");
}

Corpus load_corpus(const std::string& dir) {
  std::ifstream min(dir + "/manifest.json");
  if (!min) throw std::runtime_error("cannot read " + dir + "/manifest.json");
  json manifest = json::parse(min);
  Corpus corpus;
  corpus.spec = spec_from_json(manifest.at("spec"));
  corpus.switch_prob = manifest.at("switch_prob").get<double>();
  corpus.seed = manifest.at("seed").get<uint64_t>();
  corpus.train = read_split(dir + "/train.jsonl", corpus.spec.feat_dim);
  corpus.dev = read_split(dir + "/dev.jsonl", corpus.spec.feat_dim);
  corpus.test = read_split(dir + "/test.jsonl", corpus.spec.feat_dim);
  return corpus;
}

}  // namespace scmoe
