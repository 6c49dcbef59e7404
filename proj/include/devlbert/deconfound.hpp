#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "devlbert/model.hpp"
#include "devlbert/pretraining.hpp"
#include "devlbert/sequences.hpp"

namespace devlbert {

enum class Design { A, B, C, D };
enum class Scope { vision_intra, language_intra, inter_modal };

Design design_from_string(const std::string& s);
std::string to_string(Design d);
Scope scope_from_string(const std::string& s);
std::string to_string(Scope s);

/// Confounder candidates with pre-counted priors. Vision entries are
/// class-mean raw region features keyed by object class; language entries are
/// mean contextual embeddings keyed by word id; joint dictionaries hold both,
/// zero-padded to a common width, with vision class ids offset by the word
/// vocabulary size so ids stay unique.
struct ConfounderDictionary {
  std::string modality;  // "vision" | "language" | "joint"
  std::vector<int> class_ids;
  std::vector<std::string> entry_modalities;  // per-entry tags, used by joint
  Tensor features;                            // [m x d_z], gradient-free
  std::vector<double> priors;                 // nonnegative, sum to 1

  int size() const { return static_cast<int>(class_ids.size()); }
  int dim() const { return features.defined() ? features.size(1) : 0; }

  /// Index of a class id, or -1.
  int find(int class_id) const;

  void validate() const;  // throws ValidationError
  nlohmann::json to_json() const;
  static ConfounderDictionary from_json(const nlohmann::json& j);
};

/// Class-mean raw features over detected regions (the global region row is
/// not a detection and is skipped). Classes seen fewer than min_count times
/// are dropped; priors are renormalized over the survivors.
ConfounderDictionary build_vision_dictionary(const std::vector<PairSample>& corpus,
                                             int min_count = 2);

/// Mean contextual embedding per noun over a frozen forward pass of each
/// pair. Nouns below min_count are dropped; priors renormalize over the rest.
ConfounderDictionary build_language_dictionary(const std::vector<PairSample>& corpus,
                                               const TwoStreamModel& model, int min_count = 2);

/// Union of the two dictionaries: features zero-padded to the wider width,
/// vision class ids offset by vocab_size, priors halved so they sum to 1.
ConfounderDictionary build_joint_dictionary(const ConfounderDictionary& vision,
                                            const ConfounderDictionary& language, int vocab_size);

/// Projections and classifier for one intervention objective.
struct InterventionHead {
  Design design = Design::D;
  Tensor w_y;  // projects y (designs A/B/C) or r (design D) into the shared space
  Tensor w_z;  // projects dictionary features into the shared space
  Tensor w_c, b_c;  // classifier over the target space
  bool exclusion_enabled = true;  // ignored by design D (its denominator is over all z)
  bool softmax_alpha = false;     // ratio normalization unless flagged
  bool stop_grad_y = true;        // detach the clean-pass y (designs A/C)

  /// d_x = 0 for design D (the classifier sees the pooled vector alone).
  static InterventionHead init(Design design, int d_y, int d_x, int d_z, int d_shared,
                               int n_targets, Rng& rng);
  std::vector<Parameter> parameters(const std::string& prefix);

  long invocations() const { return invocation_count_->load(); }
  void reset_invocations() { invocation_count_->store(0); }
  void count_invocation() const { invocation_count_->fetch_add(1); }

 private:
  std::shared_ptr<std::atomic<long>> invocation_count_ =
      std::make_shared<std::atomic<long>>(0);
};

inline constexpr double kAlphaDenominatorGuard = 1e-8;

/// Ratio-normalized confounder weights for one y (or r): dot products of the
/// projected y against each projected entry, zeroed at the excluded class and
/// divided by their own sum. Returns an [m x 1] column. Weights may be
/// negative; they sum to 1 over non-excluded entries. Near-zero denominators
/// (|den| < kAlphaDenominatorGuard) fall back to constant uniform weights.
Tensor alpha_weights(const Tensor& y, const InterventionHead& head,
                     const ConfounderDictionary& dict, std::optional<int> exclude_class);

/// NWGM-pooled backdoor logits: pooled = Σ_z P(z)·α(z)·z, classifier input is
/// [x ∥ pooled] for designs A/B/C and pooled alone for D. `x` must be present
/// iff the design expects it. Counts one head invocation.
Tensor intervention_logits(const std::optional<Tensor>& x, const Tensor& y_or_r,
                           const ConfounderDictionary& dict, const InterventionHead& head,
                           std::optional<int> exclude_class);

/// One selected (x, y) pair: representations plus the target row used for the
/// cross-entropy and the class excluded from the confounder sum.
struct InterventionItem {
  std::optional<Tensor> x;  // absent for design D
  Tensor y;                 // y (A/B/C) or r (D)
  std::optional<int> exclusion_class;
  Tensor target;  // [1 x n_targets] distribution row
};

struct XYPair {
  Tensor x;
  Tensor y;
  int y_position;  // index into the stream the selection ran over
};

/// Design A: per masked t, x = masked-pass row t, y = clean-pass row t.
std::vector<XYPair> select_xy_design_A(const Tensor& masked_final, const Tensor& clean_final,
                                       const std::vector<int>& masked_positions, bool stop_grad_y);

/// Design B: cartesian (unmasked k, masked t), both from the masked pass.
std::vector<XYPair> select_xy_design_B(const Tensor& masked_final,
                                       const std::vector<int>& masked_positions,
                                       const std::vector<int>& unmasked_positions);

/// Design C: y = clean-pass row per masked t, x = every unmasked masked-pass row.
std::vector<XYPair> select_xy_design_C(const Tensor& masked_final, const Tensor& clean_final,
                                       const std::vector<int>& masked_positions,
                                       const std::vector<int>& unmasked_positions,
                                       bool stop_grad_y);

/// Design D: one integrated r per unmasked position; y_position is that
/// position (its own label is the prediction target).
std::vector<XYPair> select_r_design_D(const Tensor& masked_final,
                                      const std::vector<int>& unmasked_positions);

/// Assembles the per-scope intervention items for one pair. `clean_pass` is
/// required for designs A and C. Targets and exclusion classes follow the
/// scope: word ids for language positions, soft labels / argmax classes for
/// regions, and the concatenated (vocab + classes) space for inter_modal.
std::vector<InterventionItem> build_intervention_items(
    Design design, Scope scope, const StreamOutput& masked_pass, const StreamOutput* clean_pass,
    const TokenSequence& tokens, const RegionSequence& regions, const ModelConfig& config,
    bool stop_grad_y);

/// Mean cross-entropy of intervention_logits over the items. nullopt when the
/// selection is empty.
std::optional<Tensor> intervention_loss(const std::vector<InterventionItem>& items,
                                        const ConfounderDictionary& dict,
                                        const InterventionHead& head);

/// Masked positions a design claims from the MTM objective: designs A and B
/// replace MTM at intervened positions, C and D leave it untouched.
bool design_replaces_mtm(Design d);

}  // namespace devlbert
