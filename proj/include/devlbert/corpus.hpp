#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "devlbert/rng.hpp"
#include "devlbert/sequences.hpp"

namespace devlbert {

/// Maps corpus words to model ids. Word i gets id kNumSpecialTokens + i, so
/// the special slots stay fixed.
struct Vocabulary {
  std::vector<std::string> words;
  std::vector<bool> noun_flags;  // same length as words

  int size() const { return kNumSpecialTokens + static_cast<int>(words.size()); }
  /// Id for a word, or kUnkId when out of vocabulary.
  int word_id(const std::string& word) const;
  /// Word for an id; special ids render as "[cls]", "[mask]", "[unk]".
  std::string id_word(int id) const;
  bool is_noun_id(int id) const;

  void validate() const;
};

/// One latent confounder state: its prior and the presence probabilities it
/// induces on words and object classes (the Z→X and Z→Y edges).
struct LatentSpec {
  std::string name;
  double prior = 0;
  std::map<std::string, double> word_probs;   // P(word present | z)
  std::map<std::string, double> class_probs;  // P(class present | z)
};

/// A real causal edge: cause present forces effect present with the given
/// probability, independent of the latent.
struct GenuinePair {
  std::string cause, effect;
  double strength = 0;
};

/// Ground-truth generator: a causal graph Z→X, Z→Y with optional direct
/// X→Y edges. Spurious pairs are word pairs correlated only through Z; they
/// are listed so downstream probes know what was planted, and carry no edge.
struct GeneratorSpec {
  Vocabulary vocab;
  std::vector<std::string> classes;
  std::vector<LatentSpec> latents;
  std::vector<GenuinePair> genuine_pairs;
  std::vector<std::pair<std::string, std::string>> spurious_pairs;
  double base_word_rate = 0.05;   // P(word present | z) for unlisted words
  double base_class_rate = 0.05;  // same for classes
  int min_regions = 2;
  int max_regions = 6;
  int feature_dim = 16;
  double feature_noise = 0.25;
  double soft_label_temperature = 0.5;
  std::uint64_t seed = 0;

  void validate() const;  // throws ValidationError naming the offending table
  nlohmann::json to_json() const;
  static GeneratorSpec from_json(const nlohmann::json& j);
};

/// Per-class mean feature vectors, derived deterministically from the spec
/// seed (not from the per-record streams).
std::vector<std::vector<double>> class_means(const GeneratorSpec& spec);

struct GeneratedCorpus {
  std::string corpus_path;   // model-visible JSONL
  std::string stats_path;    // {"x": [...], "y": [...], "z": [...]} projections
  std::string latents_path;  // sidecar with the ground-truth draws
  int n = 0;
};

/// Samples n pairs from the declared graph and writes the three files.
/// Deterministic under spec.seed (byte-identical files).
GeneratedCorpus generate(const GeneratorSpec& spec, int n, const std::string& out_dir);

/// Whitespace split, case-fold, map to ids (unknown → [UNK]), prepend [CLS].
TokenSequence tokenize(const std::string& text, const Vocabulary& vocab);

/// Inverse of tokenize for display: words joined by single spaces, [CLS]
/// dropped, special ids rendered in brackets.
std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab);

struct LoadOptions {
  bool shuffle = false;
  std::uint64_t shuffle_seed = 0;
  int max_records = 0;  // 0 = no limit
};

/// Reads a model-visible corpus JSONL into PairSamples, validating every
/// record; errors carry the 1-based line number. Shuffles deterministically
/// when asked.
std::vector<PairSample> load_corpus(const std::string& path, const Vocabulary& vocab,
                                    const LoadOptions& options = {});

}  // namespace devlbert
