#pragma once

#include <vector>

#include "devlbert/tensor.hpp"

namespace devlbert {

// Special vocabulary slots, fixed across the project.
inline constexpr int kClsId = 0;
inline constexpr int kMaskId = 1;
inline constexpr int kUnkId = 2;
inline constexpr int kNumSpecialTokens = 3;

/// Per-position masking outcome. Language positions use the first four
/// states; regions use unmasked / masked_to_mask / masked_kept_original.
enum class MaskState {
  unmasked,
  masked_to_mask,        // input replaced by [MASK] / the visual mask embedding
  masked_kept,           // language: masked for the loss but input keeps the token
  masked_random,         // language: input replaced by a random vocabulary id
  masked_kept_original,  // vision: masked for the loss but input keeps the feature
};

inline bool is_masked(MaskState s) { return s != MaskState::unmasked; }

/// A tokenized sentence as the model sees it. `ids` holds the post-masking
/// input ids; `original_ids` always holds the pre-masking ids so masked
/// positions keep their prediction target. Position 0 is [CLS], never masked.
struct TokenSequence {
  std::vector<int> ids;
  std::vector<MaskState> mask_state;  // same length as ids
  std::vector<int> original_ids;      // same length as ids
  std::vector<bool> is_noun;          // same length; [CLS] is not a noun

  int length() const { return static_cast<int>(ids.size()); }
};

/// Creates an unmasked sequence from raw ids.
TokenSequence make_token_sequence(std::vector<int> ids, std::vector<bool> is_noun = {});

/// Throws ValidationError when the structural invariants are broken
/// (length mismatches, missing [CLS], masked [CLS], vision-only states).
void validate_token_sequence(const TokenSequence& seq);

/// Detected regions plus the global context region in row 0. Row 0 features
/// are the mean of rows 1..N_v, its box spans the full image, and soft label
/// rows are distributions over object classes.
struct RegionSequence {
  Tensor features;     // [N_v+1 x d_feat]
  Tensor boxes;        // [N_v+1 x 5], (x1, y1, x2, y2, area_fraction) in [0,1]
  Tensor soft_labels;  // [N_v+1 x C_obj], rows sum to 1
  std::vector<MaskState> mask_state;  // length N_v+1; row 0 never masked

  int num_rows() const { return features.defined() ? features.size(0) : 0; }
};

/// Assembles a sequence from per-region data, prepending the global region
/// (mean feature, full-image box, mean soft label).
RegionSequence make_region_sequence(const Tensor& region_features, const Tensor& region_boxes,
                                    const Tensor& region_soft_labels);

/// Construction-time invariants: row 0 is the mean of the rest (1e-9), its
/// box is (0,0,1,1,1), boxes lie in [0,1], soft label rows sum to 1 (1e-6),
/// language-only mask states are absent. Throws ValidationError.
void validate_region_sequence(const RegionSequence& seq);

/// Argmax class of each soft label row.
std::vector<int> hard_labels(const RegionSequence& seq);

/// One aligned sentence/image pair as loaded from a corpus.
struct PairSample {
  TokenSequence tokens;
  RegionSequence regions;
};

}  // namespace devlbert
