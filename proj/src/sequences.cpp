#include "devlbert/sequences.hpp"

#include <cmath>
#include <utility>

#include "devlbert/error.hpp"

namespace devlbert {

TokenSequence make_token_sequence(std::vector<int> ids, std::vector<bool> is_noun) {
  TokenSequence seq;
  const size_t n = ids.size();
  seq.ids = std::move(ids);
  seq.original_ids = seq.ids;
  seq.mask_state.assign(n, MaskState::unmasked);
  seq.is_noun = is_noun.empty() ? std::vector<bool>(n, false) : std::move(is_noun);
  validate_token_sequence(seq);
  return seq;
}

void validate_token_sequence(const TokenSequence& seq) {
  const size_t n = seq.ids.size();
  if (n == 0) throw ValidationError("token sequence is empty");
  if (seq.mask_state.size() != n || seq.original_ids.size() != n || seq.is_noun.size() != n) {
    throw ValidationError("token sequence field lengths disagree");
  }
  if (seq.original_ids[0] != kClsId) {
    throw ValidationError("token sequence must start with [CLS]");
  }
  if (seq.mask_state[0] != MaskState::unmasked) {
    throw ValidationError("[CLS] must never be masked");
  }
  for (size_t t = 0; t < n; ++t) {
    if (seq.mask_state[t] == MaskState::masked_kept_original) {
      throw ValidationError("masked_kept_original is a region state, not a language state");
    }
    if (seq.ids[t] < 0 || seq.original_ids[t] < 0) {
      throw ValidationError("negative token id at position " + std::to_string(t));
    }
    if (seq.mask_state[t] == MaskState::unmasked && seq.ids[t] != seq.original_ids[t]) {
      throw ValidationError("unmasked position " + std::to_string(t) + " has rewritten id");
    }
  }
}

RegionSequence make_region_sequence(const Tensor& region_features, const Tensor& region_boxes,
                                    const Tensor& region_soft_labels) {
  if (region_features.dim() != 2 || region_boxes.dim() != 2 || region_soft_labels.dim() != 2) {
    throw DimensionError("region inputs must be 2-d");
  }
  const int n = region_features.size(0);
  if (region_boxes.size(0) != n || region_soft_labels.size(0) != n) {
    throw DimensionError("region inputs disagree on region count");
  }
  if (region_boxes.size(1) != 5) {
    throw DimensionError("boxes must be [n x 5]");
  }
  const int d = region_features.size(1);
  const int c = region_soft_labels.size(1);

  RegionSequence seq;
  seq.features = Tensor({n + 1, d});
  seq.boxes = Tensor({n + 1, 5});
  seq.soft_labels = Tensor({n + 1, c});
  seq.mask_state.assign(static_cast<size_t>(n + 1), MaskState::unmasked);

  // row 0: global region = means, full-image box
  for (int j = 0; j < d; ++j) {
    double m = 0;
    for (int i = 0; i < n; ++i) m += region_features.at(i, j);
    seq.features.at(0, j) = m / n;
  }
  double box0[5] = {0, 0, 1, 1, 1};
  for (int j = 0; j < 5; ++j) seq.boxes.at(0, j) = box0[j];
  for (int j = 0; j < c; ++j) {
    double m = 0;
    for (int i = 0; i < n; ++i) m += region_soft_labels.at(i, j);
    seq.soft_labels.at(0, j) = m / n;
  }

  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) seq.features.at(i + 1, j) = region_features.at(i, j);
    for (int j = 0; j < 5; ++j) seq.boxes.at(i + 1, j) = region_boxes.at(i, j);
    for (int j = 0; j < c; ++j) seq.soft_labels.at(i + 1, j) = region_soft_labels.at(i, j);
  }
  validate_region_sequence(seq);
  return seq;
}

void validate_region_sequence(const RegionSequence& seq) {
  if (!seq.features.defined() || seq.features.dim() != 2) {
    throw ValidationError("region sequence has no feature matrix");
  }
  const int rows = seq.features.size(0);
  if (rows < 2) throw ValidationError("region sequence needs the global region plus at least one region");
  if (seq.boxes.size(0) != rows || seq.soft_labels.size(0) != rows ||
      static_cast<int>(seq.mask_state.size()) != rows) {
    throw ValidationError("region sequence field lengths disagree");
  }
  if (seq.boxes.size(1) != 5) throw ValidationError("boxes must have 5 columns");

  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < 5; ++j) {
      double v = seq.boxes.at(i, j);
      if (v < 0.0 || v > 1.0) {
        throw ValidationError("box coordinate out of [0,1] at region " + std::to_string(i));
      }
    }
    double s = 0;
    for (int j = 0; j < seq.soft_labels.size(1); ++j) {
      double v = seq.soft_labels.at(i, j);
      if (v < 0) throw ValidationError("negative soft label at region " + std::to_string(i));
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6) {
      throw ValidationError("soft label row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
  }

  // global region invariants
  const int d = seq.features.size(1);
  for (int j = 0; j < d; ++j) {
    double m = 0;
    for (int i = 1; i < rows; ++i) m += seq.features.at(i, j);
    m /= (rows - 1);
    if (std::abs(seq.features.at(0, j) - m) > 1e-9) {
      throw ValidationError("global region feature is not the mean of the regions");
    }
  }
  const double box0[5] = {0, 0, 1, 1, 1};
  for (int j = 0; j < 5; ++j) {
    if (seq.boxes.at(0, j) != box0[j]) {
      throw ValidationError("global region box must be the full image (0,0,1,1,1)");
    }
  }
  if (seq.mask_state[0] != MaskState::unmasked) {
    throw ValidationError("global region must never be masked");
  }
  for (int i = 0; i < rows; ++i) {
    MaskState s = seq.mask_state[static_cast<size_t>(i)];
    if (s == MaskState::masked_kept || s == MaskState::masked_random) {
      throw ValidationError("language-only mask state on region " + std::to_string(i));
    }
  }
}

std::vector<int> hard_labels(const RegionSequence& seq) {
  const int rows = seq.soft_labels.size(0);
  const int c = seq.soft_labels.size(1);
  std::vector<int> out(static_cast<size_t>(rows));
  for (int i = 0; i < rows; ++i) {
    int best = 0;
    for (int j = 1; j < c; ++j) {
      if (seq.soft_labels.at(i, j) > seq.soft_labels.at(i, best)) best = j;
    }
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

}  // namespace devlbert
