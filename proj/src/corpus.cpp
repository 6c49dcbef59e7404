#include "devlbert/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "devlbert/error.hpp"

namespace devlbert {

int Vocabulary::word_id(const std::string& word) const {
  for (size_t i = 0; i < words.size(); ++i) {
    if (words[i] == word) return kNumSpecialTokens + static_cast<int>(i);
  }
  return kUnkId;
}

std::string Vocabulary::id_word(int id) const {
  if (id == kClsId) return "[cls]";
  if (id == kMaskId) return "[mask]";
  if (id == kUnkId) return "[unk]";
  const int i = id - kNumSpecialTokens;
  if (i < 0 || i >= static_cast<int>(words.size())) {
    throw ValidationError("id " + std::to_string(id) + " outside the vocabulary");
  }
  return words[static_cast<size_t>(i)];
}

bool Vocabulary::is_noun_id(int id) const {
  const int i = id - kNumSpecialTokens;
  if (i < 0 || i >= static_cast<int>(words.size())) return false;
  return noun_flags[static_cast<size_t>(i)];
}

void Vocabulary::validate() const {
  if (words.empty()) throw ValidationError("vocabulary has no words");
  if (noun_flags.size() != words.size()) {
    throw ValidationError("vocabulary noun flags do not match the word list");
  }
  std::set<std::string> seen;
  for (const auto& w : words) {
    if (w.empty()) throw ValidationError("vocabulary contains an empty word");
    for (char c : w) {
      if (std::isspace(static_cast<unsigned char>(c)) ||
          std::isupper(static_cast<unsigned char>(c))) {
        throw ValidationError("vocabulary word \"" + w +
                              "\" must be lowercase without whitespace");
      }
    }
    if (!seen.insert(w).second) throw ValidationError("duplicate vocabulary word: " + w);
  }
}

// ------------------------------------------------------------------------
// GeneratorSpec

namespace {

void check_prob(double p, const std::string& what) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ValidationError(what + " = " + std::to_string(p) + " is not a probability");
  }
}

}  // namespace

void GeneratorSpec::validate() const {
  vocab.validate();
  if (std::none_of(vocab.noun_flags.begin(), vocab.noun_flags.end(), [](bool b) { return b; })) {
    throw ValidationError("generator vocabulary needs at least one noun");
  }
  if (classes.empty()) throw ValidationError("generator needs at least one object class");
  if (std::set<std::string>(classes.begin(), classes.end()).size() != classes.size()) {
    throw ValidationError("object class names must be unique");
  }
  if (latents.empty()) throw ValidationError("generator needs at least one latent state");

  double prior_sum = 0;
  for (const auto& z : latents) {
    check_prob(z.prior, "latent " + z.name + " prior");
    prior_sum += z.prior;
    for (const auto& [word, p] : z.word_probs) {
      if (vocab.word_id(word) == kUnkId) {
        throw ValidationError("latent " + z.name + " word_probs: unknown word \"" + word + "\"");
      }
      check_prob(p, "latent " + z.name + " P(" + word + ")");
    }
    for (const auto& [cls, p] : z.class_probs) {
      if (std::find(classes.begin(), classes.end(), cls) == classes.end()) {
        throw ValidationError("latent " + z.name + " class_probs: unknown class \"" + cls + "\"");
      }
      check_prob(p, "latent " + z.name + " P(" + cls + ")");
    }
  }
  if (std::abs(prior_sum - 1.0) > 1e-9) {
    throw ValidationError("latent priors sum to " + std::to_string(prior_sum) + ", expected 1");
  }

  check_prob(base_word_rate, "base_word_rate");
  check_prob(base_class_rate, "base_class_rate");
  for (const auto& g : genuine_pairs) {
    if (vocab.word_id(g.cause) == kUnkId || vocab.word_id(g.effect) == kUnkId) {
      throw ValidationError("genuine pair (" + g.cause + ", " + g.effect +
                            ") names an unknown word");
    }
    check_prob(g.strength, "genuine pair (" + g.cause + ", " + g.effect + ") strength");
  }
  for (const auto& [x, y] : spurious_pairs) {
    if (vocab.word_id(x) == kUnkId || vocab.word_id(y) == kUnkId) {
      throw ValidationError("spurious pair (" + x + ", " + y + ") names an unknown word");
    }
    for (const auto& g : genuine_pairs) {
      if (g.cause == x && g.effect == y) {
        throw ValidationError("pair (" + x + ", " + y +
                              ") is declared both spurious and genuine");
      }
    }
  }
  if (min_regions < 1) throw ValidationError("min_regions must be at least 1");
  if (max_regions < min_regions) throw ValidationError("max_regions below min_regions");
  if (feature_dim < 1) throw ValidationError("feature_dim must be positive");
  if (feature_noise < 0) throw ValidationError("feature_noise must be nonnegative");
  if (soft_label_temperature <= 0) throw ValidationError("soft_label_temperature must be positive");
}

nlohmann::json GeneratorSpec::to_json() const {
  nlohmann::json v = nlohmann::json::array();
  for (size_t i = 0; i < vocab.words.size(); ++i) {
    v.push_back({{"word", vocab.words[i]}, {"noun", static_cast<bool>(vocab.noun_flags[i])}});
  }
  nlohmann::json zs = nlohmann::json::array();
  for (const auto& z : latents) {
    zs.push_back({{"name", z.name},
                  {"prior", z.prior},
                  {"word_probs", z.word_probs},
                  {"class_probs", z.class_probs}});
  }
  nlohmann::json gp = nlohmann::json::array();
  for (const auto& g : genuine_pairs) {
    gp.push_back({{"cause", g.cause}, {"effect", g.effect}, {"strength", g.strength}});
  }
  nlohmann::json sp = nlohmann::json::array();
  for (const auto& [x, y] : spurious_pairs) sp.push_back({x, y});
  return nlohmann::json{{"seed", seed},
                        {"vocab", v},
                        {"classes", classes},
                        {"latents", zs},
                        {"genuine_pairs", gp},
                        {"spurious_pairs", sp},
                        {"base_word_rate", base_word_rate},
                        {"base_class_rate", base_class_rate},
                        {"regions", {{"min", min_regions}, {"max", max_regions}}},
                        {"features",
                         {{"dim", feature_dim},
                          {"noise", feature_noise},
                          {"temperature", soft_label_temperature}}}};
}

GeneratorSpec GeneratorSpec::from_json(const nlohmann::json& j) {
  GeneratorSpec s;
  s.seed = j.value("seed", std::uint64_t{0});
  for (const auto& v : j.at("vocab")) {
    s.vocab.words.push_back(v.at("word").get<std::string>());
    s.vocab.noun_flags.push_back(v.value("noun", false));
  }
  s.classes = j.at("classes").get<std::vector<std::string>>();
  for (const auto& z : j.at("latents")) {
    LatentSpec l;
    l.name = z.at("name").get<std::string>();
    l.prior = z.at("prior").get<double>();
    if (z.contains("word_probs")) {
      l.word_probs = z.at("word_probs").get<std::map<std::string, double>>();
    }
    if (z.contains("class_probs")) {
      l.class_probs = z.at("class_probs").get<std::map<std::string, double>>();
    }
    s.latents.push_back(std::move(l));
  }
  for (const auto& g : j.value("genuine_pairs", nlohmann::json::array())) {
    s.genuine_pairs.push_back(
        {g.at("cause").get<std::string>(), g.at("effect").get<std::string>(),
         g.at("strength").get<double>()});
  }
  for (const auto& p : j.value("spurious_pairs", nlohmann::json::array())) {
    s.spurious_pairs.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
  }
  s.base_word_rate = j.value("base_word_rate", s.base_word_rate);
  s.base_class_rate = j.value("base_class_rate", s.base_class_rate);
  if (j.contains("regions")) {
    s.min_regions = j.at("regions").value("min", s.min_regions);
    s.max_regions = j.at("regions").value("max", s.max_regions);
  }
  if (j.contains("features")) {
    s.feature_dim = j.at("features").value("dim", s.feature_dim);
    s.feature_noise = j.at("features").value("noise", s.feature_noise);
    s.soft_label_temperature = j.at("features").value("temperature", s.soft_label_temperature);
  }
  s.validate();
  return s;
}

// ------------------------------------------------------------------------
// generation

namespace {

// Fixed substream tag for the class-mean draws, far outside the per-record
// index range.
constexpr std::uint64_t kClassMeanStream = 0xC1A55'00000000ULL;

const LatentSpec& draw_latent(const GeneratorSpec& spec, Rng& rng) {
  double u = rng.uniform();
  double cum = 0;
  for (const auto& z : spec.latents) {
    cum += z.prior;
    if (u < cum) return z;
  }
  return spec.latents.back();
}

double word_prob(const GeneratorSpec& spec, const LatentSpec& z, const std::string& word) {
  auto it = z.word_probs.find(word);
  return it == z.word_probs.end() ? spec.base_word_rate : it->second;
}

double class_prob(const GeneratorSpec& spec, const LatentSpec& z, const std::string& cls) {
  auto it = z.class_probs.find(cls);
  return it == z.class_probs.end() ? spec.base_class_rate : it->second;
}

}  // namespace

std::vector<std::vector<double>> class_means(const GeneratorSpec& spec) {
  Rng rng = Rng(spec.seed).substream(kClassMeanStream);
  std::vector<std::vector<double>> means;
  for (size_t c = 0; c < spec.classes.size(); ++c) {
    std::vector<double> m(static_cast<size_t>(spec.feature_dim));
    for (auto& v : m) v = rng.gaussian();
    means.push_back(std::move(m));
  }
  return means;
}

GeneratedCorpus generate(const GeneratorSpec& spec, int n, const std::string& out_dir) {
  spec.validate();
  if (n < 0) throw ValidationError("cannot generate a negative number of records");
  std::filesystem::create_directories(out_dir);

  GeneratedCorpus out;
  out.corpus_path = (std::filesystem::path(out_dir) / "corpus.jsonl").string();
  out.stats_path = (std::filesystem::path(out_dir) / "stats.jsonl").string();
  out.latents_path = (std::filesystem::path(out_dir) / "latents.jsonl").string();
  out.n = n;

  std::ofstream corpus_file(out.corpus_path);
  std::ofstream stats_file(out.stats_path);
  std::ofstream latents_file(out.latents_path);
  if (!corpus_file || !stats_file || !latents_file) {
    throw ValidationError("cannot open output files under " + out_dir);
  }

  const auto means = class_means(spec);
  const Rng root(spec.seed);

  for (int rec = 0; rec < n; ++rec) {
    Rng rng = root.substream(static_cast<std::uint64_t>(rec));
    const LatentSpec& z = draw_latent(spec, rng);

    // words: independent presence draws given z, then the direct X→Y edges
    std::vector<std::string> sentence;
    for (const auto& w : spec.vocab.words) {
      if (rng.uniform() < word_prob(spec, z, w)) sentence.push_back(w);
    }
    for (const auto& g : spec.genuine_pairs) {
      bool cause_in = std::find(sentence.begin(), sentence.end(), g.cause) != sentence.end();
      bool effect_in = std::find(sentence.begin(), sentence.end(), g.effect) != sentence.end();
      if (cause_in && !effect_in && rng.uniform() < g.strength) sentence.push_back(g.effect);
    }
    if (sentence.empty()) {
      sentence.push_back(spec.vocab.words[static_cast<size_t>(
          rng.uniform_int(static_cast<int>(spec.vocab.words.size())))]);
    }
    rng.shuffle(sentence);

    std::vector<int> noun_indices;
    for (size_t i = 0; i < sentence.size(); ++i) {
      if (spec.vocab.is_noun_id(spec.vocab.word_id(sentence[i]))) {
        noun_indices.push_back(static_cast<int>(i));
      }
    }

    // object classes: presence draws, padded up to min_regions and truncated
    // at max_regions
    std::vector<int> region_classes;
    for (size_t c = 0; c < spec.classes.size(); ++c) {
      if (rng.uniform() < class_prob(spec, z, spec.classes[c])) {
        region_classes.push_back(static_cast<int>(c));
      }
    }
    while (static_cast<int>(region_classes.size()) < spec.min_regions) {
      region_classes.push_back(rng.uniform_int(static_cast<int>(spec.classes.size())));
    }
    rng.shuffle(region_classes);
    if (static_cast<int>(region_classes.size()) > spec.max_regions) {
      region_classes.resize(static_cast<size_t>(spec.max_regions));
    }

    nlohmann::json regions = nlohmann::json::array();
    for (int cls : region_classes) {
      std::vector<double> feat(static_cast<size_t>(spec.feature_dim));
      for (size_t j = 0; j < feat.size(); ++j) {
        feat[j] = means[static_cast<size_t>(cls)][j] + spec.feature_noise * rng.gaussian();
      }
      // soft labels: softmax of -||feat - mean_k||^2 / temperature
      std::vector<double> sims(spec.classes.size());
      double best = -1e300;
      for (size_t k = 0; k < spec.classes.size(); ++k) {
        double d2 = 0;
        for (size_t j = 0; j < feat.size(); ++j) {
          double diff = feat[j] - means[k][j];
          d2 += diff * diff;
        }
        sims[k] = -d2 / spec.soft_label_temperature;
        best = std::max(best, sims[k]);
      }
      double denom = 0;
      for (double& s : sims) {
        s = std::exp(s - best);
        denom += s;
      }
      for (double& s : sims) s /= denom;

      double ax = rng.uniform(), bx = rng.uniform();
      double ay = rng.uniform(), by = rng.uniform();
      double x1 = std::min(ax, bx), x2 = std::max(ax, bx);
      double y1 = std::min(ay, by), y2 = std::max(ay, by);
      regions.push_back({{"feat", feat},
                         {"box", {x1, y1, x2, y2, (x2 - x1) * (y2 - y1)}},
                         {"soft_label", sims}});
    }

    nlohmann::json record{
        {"sentence", sentence}, {"nouns", noun_indices}, {"regions", regions}};
    corpus_file << record.dump() << "\n";

    std::set<std::string> nouns_present;
    for (int i : noun_indices) nouns_present.insert(sentence[static_cast<size_t>(i)]);
    std::vector<std::string> xs(nouns_present.begin(), nouns_present.end());
    nlohmann::json stats{{"x", xs}, {"y", xs}, {"z", {z.name}}};
    stats_file << stats.dump() << "\n";

    latents_file << nlohmann::json{{"latents", {z.name}}}.dump() << "\n";
  }
  return out;
}

// ------------------------------------------------------------------------
// tokenization and loading

TokenSequence tokenize(const std::string& text, const Vocabulary& vocab) {
  std::vector<int> ids{kClsId};
  std::vector<bool> nouns{false};
  std::string word;
  std::istringstream in(text);
  while (in >> word) {
    for (char& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    int id = vocab.word_id(word);
    ids.push_back(id);
    nouns.push_back(vocab.is_noun_id(id));
  }
  return make_token_sequence(std::move(ids), std::move(nouns));
}

std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab) {
  std::string out;
  for (int i = 1; i < seq.length(); ++i) {
    if (!out.empty()) out += ' ';
    out += vocab.id_word(seq.ids[static_cast<size_t>(i)]);
  }
  return out;
}

std::vector<PairSample> load_corpus(const std::string& path, const Vocabulary& vocab,
                                    const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open corpus file: " + path);

  std::vector<PairSample> samples;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    if (options.max_records > 0 && static_cast<int>(samples.size()) >= options.max_records) break;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      std::vector<int> ids{kClsId};
      std::vector<bool> nouns{false};
      const auto& sentence = j.at("sentence");
      for (const auto& w : sentence) {
        ids.push_back(vocab.word_id(w.get<std::string>()));
        nouns.push_back(false);
      }
      for (const auto& idx : j.at("nouns")) {
        int i = idx.get<int>();
        if (i < 0 || i >= static_cast<int>(sentence.size())) {
          throw ValidationError("noun index " + std::to_string(i) + " out of range");
        }
        nouns[static_cast<size_t>(i) + 1] = true;
      }

      const auto& regions = j.at("regions");
      if (regions.empty()) throw ValidationError("record has no regions");
      const int nr = static_cast<int>(regions.size());
      const int d = static_cast<int>(regions.at(0).at("feat").size());
      const int classes = static_cast<int>(regions.at(0).at("soft_label").size());
      Tensor feats({nr, d}), boxes({nr, 5}), labels({nr, classes});
      for (int r = 0; r < nr; ++r) {
        const auto& reg = regions.at(static_cast<size_t>(r));
        const auto feat = reg.at("feat").get<std::vector<double>>();
        const auto box = reg.at("box").get<std::vector<double>>();
        const auto soft = reg.at("soft_label").get<std::vector<double>>();
        if (static_cast<int>(feat.size()) != d || box.size() != 5 ||
            static_cast<int>(soft.size()) != classes) {
          throw ValidationError("region " + std::to_string(r) + " has inconsistent widths");
        }
        for (int c = 0; c < d; ++c) feats.at(r, c) = feat[static_cast<size_t>(c)];
        for (int c = 0; c < 5; ++c) boxes.at(r, c) = box[static_cast<size_t>(c)];
        for (int c = 0; c < classes; ++c) labels.at(r, c) = soft[static_cast<size_t>(c)];
      }

      PairSample s;
      s.tokens = make_token_sequence(std::move(ids), std::move(nouns));
      s.regions = make_region_sequence(feats, boxes, labels);
      samples.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("line " + std::to_string(line_number) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw ValidationError("line " + std::to_string(line_number) + ": " + e.what());
    }
  }

  if (options.shuffle) {
    Rng rng(options.shuffle_seed);
    rng.shuffle(samples);
  }
  return samples;
}

}  // namespace devlbert
