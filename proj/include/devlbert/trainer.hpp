#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "devlbert/deconfound.hpp"
#include "devlbert/model.hpp"
#include "devlbert/optimizer.hpp"
#include "devlbert/pretraining.hpp"
#include "devlbert/sequences.hpp"

namespace devlbert {

/// One pair in a training batch. `aligned` is false for negative-sampled
/// pairs (the sentence was resampled from a different record, image kept).
struct BatchItem {
  TokenSequence tokens;
  RegionSequence regions;
  bool aligned = true;
};

struct Batch {
  std::vector<BatchItem> items;
};

struct ObjectiveConfig {
  bool mlm = true, mom = true, align = true;
  double mlm_weight = 1.0, mom_weight = 1.0, align_weight = 1.0;
  double intervention_weight = 1.0;
  // masked-token and intervention losses only on aligned pairs; predicting
  // masked content from a mismatched image is ill-posed
  bool aligned_only_mtm = true;
};

struct InterventionSpec {
  Design design = Design::D;
  Scope scope = Scope::vision_intra;
};

struct DictionaryConfig {
  int min_count = 1;
  int refresh_every = 0;  // 0 = build once before training, never refresh
  int d_shared = 16;      // width of the alpha projection space
};

struct TrainingConfig {
  int steps = 300;
  int batch_size = 4;
  double negative_rate = 0.5;  // fraction of pairs with a resampled sentence
  std::uint64_t seed = 0;
  OptimizerConfig optimizer;
};

struct RunConfig {
  ModelConfig model;
  MaskingPolicy masking;
  ObjectiveConfig objectives;
  std::vector<InterventionSpec> designs;
  DictionaryConfig dictionaries;
  TrainingConfig training;
  bool stop_grad_y = true;
  bool softmax_alpha = false;
  std::string spec_path;  // generator spec, the vocabulary source
  std::string corpus_path;
  std::string checkpoint_path;
  std::string metrics_path;

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);

  /// Table-2 style presets: baseline clears the design list; "<D>-V",
  /// "<D>-VL", "<D>-VLC" add vision_intra, +language_intra, +inter_modal
  /// for design letter <D>.
  void apply_preset(const std::string& name);
};

/// Per-step scalar losses; zero when an objective had nothing to score.
struct LossReport {
  int step = 0;
  double mlm = 0, mom = 0, align = 0, total = 0;
  std::vector<std::pair<std::string, double>> interventions;  // key: "<design>_<scope>"
  nlohmann::json to_json() const;  // {step, mlm, mom, align, intervention_*, total}
};

/// Everything mutable during a run: encoder, heads, dictionaries, optimizer.
struct TrainState {
  TwoStreamModel model;
  PretrainHeads heads;
  struct Unit {
    InterventionSpec spec;
    ConfounderDictionary dict;
    InterventionHead head;
  };
  std::vector<Unit> units;
  std::unique_ptr<Optimizer> optimizer;

  std::vector<Parameter> all_parameters();
};

/// Builds model, heads, dictionaries (pre-pass over the corpus), and the
/// optimizer. Deterministic under config.training.seed.
TrainState init_state(const RunConfig& config, const std::vector<PairSample>& corpus);

/// Rebuilds the dictionaries with the current encoder (refresh mode).
void refresh_dictionaries(TrainState& state, const RunConfig& config,
                          const std::vector<PairSample>& corpus);

/// Draws batch_size pairs with replacement; negatives resample the sentence
/// from a different record and keep the image.
Batch assemble_batch(const std::vector<PairSample>& corpus, const RunConfig& config, Rng& rng);

/// Masks, forwards, scores every enabled objective, and takes one optimizer
/// step. Throws NumericError on a non-finite total before stepping, so the
/// parameters still hold the last good state.
LossReport training_step(const Batch& batch, TrainState& state, const RunConfig& config,
                         int step, Rng& rng);

/// The full pretraining loop: init, metrics JSONL (one line per step,
/// flushed immediately), final checkpoint. On NaN abort the last-good
/// checkpoint is written before the NumericError propagates.
std::vector<LossReport> run_pretraining(const RunConfig& config,
                                        const std::vector<PairSample>& corpus);

}  // namespace devlbert
