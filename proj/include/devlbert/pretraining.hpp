#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "devlbert/model.hpp"
#include "devlbert/rng.hpp"
#include "devlbert/sequences.hpp"

namespace devlbert {

/// Bert-style masking rates for both modalities.
struct MaskingPolicy {
  double lang_mask_rate = 0.15;
  // split of a masked language position: replaced by [MASK] / kept / random word
  double lang_to_mask = 0.8;
  double lang_keep = 0.1;
  double lang_random = 0.1;
  double vis_mask_rate = 0.15;
  double vis_keep_original_rate = 0.10;
  bool noun_only = false;  // restrict language masking to noun positions

  void validate() const;  // throws ValidationError
};

void to_json(nlohmann::json& j, const MaskingPolicy& p);
void from_json(const nlohmann::json& j, MaskingPolicy& p);

/// Draws mask states for a fresh pair. [CLS] and the global region are never
/// touched; each masked position keeps its original id / target.
std::pair<TokenSequence, RegionSequence> apply_masking(const TokenSequence& tokens,
                                                       const RegionSequence& regions,
                                                       const MaskingPolicy& policy, int vocab_size,
                                                       Rng& rng);

/// Positions whose mask_state is any masked_* value. Skips position 0.
std::vector<int> masked_token_positions(const TokenSequence& seq);
std::vector<int> unmasked_token_positions(const TokenSequence& seq);  // still skips position 0
std::vector<int> masked_region_rows(const RegionSequence& seq);
std::vector<int> unmasked_region_rows(const RegionSequence& seq);  // skips the global row

/// Output heads for the three proxy tasks. The MLM head shares the encoder's
/// word table and owns only the per-word bias.
struct PretrainHeads {
  Tensor mlm_bias;              // [vocab]
  Tensor mom_w, mom_b;          // d_vis -> C_obj
  Tensor align_w1, align_b1;    // (d_lang + d_vis) -> d_lang
  Tensor align_w2, align_b2;    // d_lang -> 1

  static PretrainHeads init(const ModelConfig& config, Rng& rng);
  std::vector<Parameter> parameters();
};

/// Masked-word prediction over `positions` (default: every masked position).
/// Logits are lang_final · word_tableᵀ + bias; targets the original ids.
/// nullopt when there is nothing to predict.
std::optional<Tensor> mlm_loss(const StreamOutput& out, const TokenSequence& seq,
                               const Tensor& word_table, const Tensor& mlm_bias,
                               const std::vector<int>* positions = nullptr);

/// Masked-region soft-label classification over `rows` (default: every masked
/// region, including kept-original ones, which still carry a target).
std::optional<Tensor> mom_loss(const StreamOutput& out, const RegionSequence& seq,
                               const Tensor& mom_w, const Tensor& mom_b,
                               const std::vector<int>* rows = nullptr);

/// Sigmoid BCE of the alignment score on [w_CLS ∥ o_G] against `aligned`.
Tensor alignment_loss(const StreamOutput& out, bool aligned, const PretrainHeads& heads);

}  // namespace devlbert
