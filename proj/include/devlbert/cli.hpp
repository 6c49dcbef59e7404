#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "devlbert/causal_stats.hpp"
#include "devlbert/corpus.hpp"
#include "devlbert/model.hpp"
#include "devlbert/pretraining.hpp"
#include "devlbert/sequences.hpp"

namespace devlbert {

/// One probed word pair. Model probabilities are the masked-prediction
/// probability of y averaged over corpus records containing both words,
/// once as-is and once with every x token removed. Count-based estimates
/// are NaN when no stats table was supplied or the estimator is undefined.
struct ProbePair {
  std::string x, y;
  int records_used = 0;
  double model_with_x = 0;
  double model_without_x = 0;
  double conditional = 0;
  double interventional = 0;
};

struct ProbeReport {
  std::vector<ProbePair> pairs;
};

/// The model-side deconfounding diagnostic: for each (x, y), how much the
/// model's belief in y at a masked position depends on x being present.
/// Deterministic; touches at most max_records records per pair.
ProbeReport run_probe(const TwoStreamModel& model, const PretrainHeads& heads,
                      const std::vector<PairSample>& corpus, const Vocabulary& vocab,
                      const std::vector<std::pair<std::string, std::string>>& pairs,
                      const CooccurrenceTable<std::uint64_t>* table, int max_records);

nlohmann::json probe_report_to_json(const ProbeReport& report);

/// Entry point behind the `devlbert` binary: synth | pretrain | stats | probe.
/// Returns the process exit code (0 ok, 2 validation error, 3 numeric failure).
int run_cli(int argc, char** argv);

}  // namespace devlbert
