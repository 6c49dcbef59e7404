#include "devlbert/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>

#include "CLI11.hpp"

#include "devlbert/checkpoint.hpp"
#include "devlbert/error.hpp"
#include "devlbert/ops.hpp"
#include "devlbert/trainer.hpp"

namespace devlbert {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open file: " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ValidationError("file is not valid JSON: " + path);
  return j;
}

/// Pairs files hold a JSON array of two-element [x, y] arrays.
std::vector<std::pair<std::string, std::string>> read_pairs_file(const std::string& path) {
  nlohmann::json j = read_json_file(path);
  if (!j.is_array()) throw ValidationError("pairs file must hold a JSON array: " + path);
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& entry : j) {
    if (!entry.is_array() || entry.size() != 2 || !entry.at(0).is_string() ||
        !entry.at(1).is_string()) {
      throw ValidationError("pairs file entries must be [\"x\", \"y\"] arrays: " + path);
    }
    pairs.emplace_back(entry.at(0).get<std::string>(), entry.at(1).get<std::string>());
  }
  return pairs;
}

std::optional<std::uint64_t> env_seed() {
  const char* raw = std::getenv("DEVLBERT_SEED");
  if (!raw || !*raw) return std::nullopt;
  char* end = nullptr;
  errno = 0;
  unsigned long long v = std::strtoull(raw, &end, 10);
  if (errno != 0 || end == raw || *end != '\0') {
    throw ValidationError(std::string("DEVLBERT_SEED is not an unsigned integer: ") + raw);
  }
  return static_cast<std::uint64_t>(v);
}

nlohmann::json nan_to_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json();
}

// ----------------------------------------------------------------------
// probe engine

/// Fresh unmasked sequence with the first y occurrence turned into [MASK];
/// positions carrying drop_id (if >= 0) are removed first.
TokenSequence probe_sequence(const TokenSequence& base, int y_id, int drop_id) {
  std::vector<int> ids;
  std::vector<bool> nouns;
  for (int t = 0; t < base.length(); ++t) {
    if (t > 0 && base.ids[static_cast<size_t>(t)] == drop_id) continue;
    ids.push_back(base.ids[static_cast<size_t>(t)]);
    nouns.push_back(base.is_noun[static_cast<size_t>(t)]);
  }
  TokenSequence seq = make_token_sequence(std::move(ids), std::move(nouns));
  for (int t = 1; t < seq.length(); ++t) {
    if (seq.ids[static_cast<size_t>(t)] == y_id) {
      seq.ids[static_cast<size_t>(t)] = kMaskId;
      seq.mask_state[static_cast<size_t>(t)] = MaskState::masked_to_mask;
      return seq;
    }
  }
  throw ValidationError("probe target vanished from the sequence");
}

double masked_probability(const TwoStreamModel& model, const PretrainHeads& heads,
                          const TokenSequence& tokens, const RegionSequence& regions,
                          int y_id) {
  int y_pos = -1;
  for (int t = 1; t < tokens.length(); ++t) {
    if (tokens.mask_state[static_cast<size_t>(t)] == MaskState::masked_to_mask) {
      y_pos = t;
      break;
    }
  }
  StreamOutput out = model.forward(tokens, regions);
  Tensor rep = gather_rows(out.lang_final, {y_pos});
  Tensor logits = add_rowwise(matmul(rep, transpose(model.word_table)), heads.mlm_bias);
  Tensor probs = softmax(logits, 1);
  return probs.at(0, y_id);
}

}  // namespace

ProbeReport run_probe(const TwoStreamModel& model, const PretrainHeads& heads,
                      const std::vector<PairSample>& corpus, const Vocabulary& vocab,
                      const std::vector<std::pair<std::string, std::string>>& pairs,
                      const CooccurrenceTable<std::uint64_t>* table, int max_records) {
  if (max_records < 1) throw ValidationError("probe max_records must be positive");
  ProbeReport report;
  for (const auto& [x, y] : pairs) {
    if (x == y) throw ValidationError("probe pair (" + x + ", " + y + ") repeats one word");
    const int x_id = vocab.word_id(x);
    const int y_id = vocab.word_id(y);
    if (x_id == kUnkId || y_id == kUnkId) {
      throw ValidationError("probe pair (" + x + ", " + y + ") names an unknown word");
    }

    ProbePair p;
    p.x = x;
    p.y = y;
    double with_sum = 0, without_sum = 0;
    for (const auto& sample : corpus) {
      if (p.records_used >= max_records) break;
      bool has_x = false, has_y = false;
      for (int t = 1; t < sample.tokens.length(); ++t) {
        has_x |= sample.tokens.ids[static_cast<size_t>(t)] == x_id;
        has_y |= sample.tokens.ids[static_cast<size_t>(t)] == y_id;
      }
      if (!has_x || !has_y) continue;
      with_sum += masked_probability(model, heads, probe_sequence(sample.tokens, y_id, -1),
                                     sample.regions, y_id);
      without_sum += masked_probability(model, heads, probe_sequence(sample.tokens, y_id, x_id),
                                        sample.regions, y_id);
      ++p.records_used;
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    p.model_with_x = p.records_used ? with_sum / p.records_used : nan;
    p.model_without_x = p.records_used ? without_sum / p.records_used : nan;
    p.conditional = nan;
    p.interventional = nan;
    if (table) {
      try {
        p.conditional = table->conditional(y, x);
        p.interventional = table->interventional(y, x);
      } catch (const UndefinedError&) {
        // leave the undefined estimate as NaN; the model columns stand alone
      }
    }
    report.pairs.push_back(std::move(p));
  }
  return report;
}

nlohmann::json probe_report_to_json(const ProbeReport& report) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : report.pairs) {
    pairs.push_back({{"x", p.x},
                     {"y", p.y},
                     {"records_used", p.records_used},
                     {"model_with_x", nan_to_null(p.model_with_x)},
                     {"model_without_x", nan_to_null(p.model_without_x)},
                     {"conditional", nan_to_null(p.conditional)},
                     {"interventional", nan_to_null(p.interventional)}});
  }
  return nlohmann::json{{"pairs", pairs}};
}

namespace {

// ----------------------------------------------------------------------
// subcommands

struct SynthArgs {
  std::string spec_path, out_dir;
  int n = 0;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

int cmd_synth(const SynthArgs& args) {
  GeneratorSpec spec = GeneratorSpec::from_json(read_json_file(args.spec_path));
  if (args.seed_set) {
    spec.seed = args.seed;
  } else if (auto seed = env_seed()) {
    spec.seed = *seed;
  }
  GeneratedCorpus out = generate(spec, args.n, args.out_dir);
  nlohmann::json manifest{{"corpus", out.corpus_path},
                          {"stats", out.stats_path},
                          {"latents", out.latents_path},
                          {"n", out.n}};
  std::cout << manifest.dump(2) << "\n";
  return kExitOk;
}

struct PretrainArgs {
  std::string config_path, preset;
  std::string spec_path, corpus_path, checkpoint_path, metrics_path;
  int steps = -1, batch_size = -1;
  double lr = -1, negative_rate = -1;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

int cmd_pretrain(const PretrainArgs& args) {
  RunConfig config = RunConfig::from_json(read_json_file(args.config_path));
  if (!args.preset.empty()) config.apply_preset(args.preset);
  if (!args.spec_path.empty()) config.spec_path = args.spec_path;
  if (!args.corpus_path.empty()) config.corpus_path = args.corpus_path;
  if (!args.checkpoint_path.empty()) config.checkpoint_path = args.checkpoint_path;
  if (!args.metrics_path.empty()) config.metrics_path = args.metrics_path;
  if (args.steps >= 0) config.training.steps = args.steps;
  if (args.batch_size >= 0) config.training.batch_size = args.batch_size;
  if (args.lr >= 0) config.training.optimizer.lr = args.lr;
  if (args.negative_rate >= 0) config.training.negative_rate = args.negative_rate;
  if (args.seed_set) {
    config.training.seed = args.seed;
  } else if (auto seed = env_seed()) {
    config.training.seed = *seed;
  }

  if (config.spec_path.empty()) {
    throw ValidationError("pretrain needs a generator spec (config paths.spec or --spec)");
  }
  GeneratorSpec spec = GeneratorSpec::from_json(read_json_file(config.spec_path));

  // the data fixes these three; everything else stays as configured
  config.model.vocab_size = spec.vocab.size();
  config.model.n_classes = static_cast<int>(spec.classes.size());
  config.model.d_feat = spec.feature_dim;
  config.validate();

  std::vector<PairSample> corpus = load_corpus(config.corpus_path, spec.vocab);
  std::vector<LossReport> reports = run_pretraining(config, corpus);

  nlohmann::json summary{{"steps", config.training.steps},
                         {"checkpoint", config.checkpoint_path},
                         {"metrics", config.metrics_path},
                         {"final_total", reports.empty() ? nlohmann::json()
                                                         : nlohmann::json(reports.back().total)}};
  std::cout << summary.dump(2) << "\n";
  return kExitOk;
}

struct StatsArgs {
  std::string input_path, pairs_path, json_path;
  bool multiplicity = false;
};

int cmd_stats(const StatsArgs& args) {
  std::ifstream in(args.input_path);
  if (!in) throw ValidationError("cannot open stats file: " + args.input_path);
  std::vector<StatsRecord> records = read_stats_jsonl(in);
  auto pairs = read_pairs_file(args.pairs_path);

  auto table = ingest(records, args.multiplicity);
  StatsReport report = pairs.empty() ? StatsReport{} : make_report(table, pairs);

  std::cout << report_to_text(report);
  if (!args.json_path.empty()) {
    std::ofstream out(args.json_path, std::ios::trunc);
    if (!out) throw ValidationError("cannot open output file: " + args.json_path);
    out << report_to_json(report).dump(2) << "\n";
  }
  return kExitOk;
}

struct ProbeArgs {
  std::string checkpoint_path, corpus_path, spec_path, pairs_path, stats_path, out_path;
  int max_records = 50;
};

int cmd_probe(const ProbeArgs& args) {
  GeneratorSpec spec = GeneratorSpec::from_json(read_json_file(args.spec_path));
  auto pairs = read_pairs_file(args.pairs_path);

  Checkpoint ckpt = load_checkpoint(args.checkpoint_path);
  RunConfig config = RunConfig::from_json(ckpt.meta);
  config.designs.clear();  // the probe only needs the encoder and heads

  std::vector<PairSample> corpus = load_corpus(args.corpus_path, spec.vocab);
  TrainState state = init_state(config, corpus);
  auto params = state.all_parameters();
  restore_parameters(ckpt, params);

  // default to the stats file generate() writes next to the corpus
  std::string stats_path = args.stats_path;
  bool stats_required = !stats_path.empty();
  if (stats_path.empty()) {
    stats_path =
        (std::filesystem::path(args.corpus_path).parent_path() / "stats.jsonl").string();
  }
  std::optional<CooccurrenceTable<std::uint64_t>> table;
  std::ifstream stats_in(stats_path);
  if (stats_in) {
    table = ingest(read_stats_jsonl(stats_in));
  } else if (stats_required) {
    throw ValidationError("cannot open stats file: " + stats_path);
  }

  ProbeReport report = run_probe(state.model, state.heads, corpus, spec.vocab, pairs,
                                 table ? &*table : nullptr, args.max_records);
  nlohmann::json j = probe_report_to_json(report);
  std::cout << j.dump(2) << "\n";
  if (!args.out_path.empty()) {
    std::ofstream out(args.out_path, std::ios::trunc);
    if (!out) throw ValidationError("cannot open output file: " + args.out_path);
    out << j.dump(2) << "\n";
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"deconfounded visio-linguistic pretraining toolkit"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a planted-confounder corpus");
  synth_cmd->add_option("--spec", synth.spec_path, "generator spec JSON")->required();
  synth_cmd->add_option("--n", synth.n, "number of pairs")->required();
  synth_cmd->add_option("--out", synth.out_dir, "output directory")->required();
  auto* synth_seed = synth_cmd->add_option("--seed", synth.seed, "override the spec seed");

  PretrainArgs pretrain;
  auto* pretrain_cmd = app.add_subcommand("pretrain", "run the pretraining loop");
  pretrain_cmd->add_option("--config", pretrain.config_path, "run config JSON")->required();
  pretrain_cmd->add_option("--preset", pretrain.preset,
                           "baseline|A-V|A-VL|B-V|C-V|D-V|D-VL|D-VLC");
  pretrain_cmd->add_option("--spec", pretrain.spec_path, "generator spec JSON");
  pretrain_cmd->add_option("--corpus", pretrain.corpus_path, "corpus JSONL");
  pretrain_cmd->add_option("--checkpoint", pretrain.checkpoint_path, "checkpoint output");
  pretrain_cmd->add_option("--metrics", pretrain.metrics_path, "metrics JSONL output");
  pretrain_cmd->add_option("--steps", pretrain.steps, "training steps");
  pretrain_cmd->add_option("--batch-size", pretrain.batch_size, "pairs per step");
  pretrain_cmd->add_option("--lr", pretrain.lr, "learning rate");
  pretrain_cmd->add_option("--negative-rate", pretrain.negative_rate,
                           "fraction of resampled-sentence pairs");
  auto* pretrain_seed = pretrain_cmd->add_option("--seed", pretrain.seed, "training seed");

  StatsArgs stats;
  auto* stats_cmd = app.add_subcommand("stats", "conditional vs interventional report");
  stats_cmd->add_option("--input", stats.input_path, "stats JSONL")->required();
  stats_cmd->add_option("--pairs", stats.pairs_path, "JSON array of [x, y] pairs")->required();
  stats_cmd->add_option("--json", stats.json_path, "also write the report as JSON");
  stats_cmd->add_flag("--multiplicity", stats.multiplicity,
                      "count every occurrence combination instead of presence");

  ProbeArgs probe;
  auto* probe_cmd = app.add_subcommand("probe", "masked-prediction dependence probe");
  probe_cmd->add_option("--checkpoint", probe.checkpoint_path, "trained checkpoint")->required();
  probe_cmd->add_option("--corpus", probe.corpus_path, "corpus JSONL")->required();
  probe_cmd->add_option("--spec", probe.spec_path, "generator spec JSON")->required();
  probe_cmd->add_option("--pairs", probe.pairs_path, "JSON array of [x, y] pairs")->required();
  probe_cmd->add_option("--stats", probe.stats_path,
                        "stats JSONL (default: stats.jsonl beside the corpus)");
  probe_cmd->add_option("--max-records", probe.max_records, "records probed per pair");
  probe_cmd->add_option("--out", probe.out_path, "also write the report to a file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*synth_cmd) {
      synth.seed_set = synth_seed->count() > 0;
      return cmd_synth(synth);
    }
    if (*pretrain_cmd) {
      pretrain.seed_set = pretrain_seed->count() > 0;
      return cmd_pretrain(pretrain);
    }
    if (*stats_cmd) return cmd_stats(stats);
    if (*probe_cmd) return cmd_probe(probe);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitValidation;
}

}  // namespace devlbert
