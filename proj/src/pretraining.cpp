#include "devlbert/pretraining.hpp"

#include <cmath>
#include <string>

#include "devlbert/error.hpp"
#include "devlbert/ops.hpp"

namespace devlbert {

void MaskingPolicy::validate() const {
  auto rate = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ValidationError(std::string("MaskingPolicy: ") + name + " must lie in [0,1]");
    }
  };
  rate(lang_mask_rate, "lang_mask_rate");
  rate(lang_to_mask, "lang_to_mask");
  rate(lang_keep, "lang_keep");
  rate(lang_random, "lang_random");
  rate(vis_mask_rate, "vis_mask_rate");
  rate(vis_keep_original_rate, "vis_keep_original_rate");
  if (std::abs(lang_to_mask + lang_keep + lang_random - 1.0) > 1e-9) {
    throw ValidationError("MaskingPolicy: language split must sum to 1");
  }
}

void to_json(nlohmann::json& j, const MaskingPolicy& p) {
  j = nlohmann::json{{"lang_mask_rate", p.lang_mask_rate},
                     {"lang_to_mask", p.lang_to_mask},
                     {"lang_keep", p.lang_keep},
                     {"lang_random", p.lang_random},
                     {"vis_mask_rate", p.vis_mask_rate},
                     {"vis_keep_original_rate", p.vis_keep_original_rate},
                     {"noun_only", p.noun_only}};
}

void from_json(const nlohmann::json& j, MaskingPolicy& p) {
  MaskingPolicy d;
  p.lang_mask_rate = j.value("lang_mask_rate", d.lang_mask_rate);
  p.lang_to_mask = j.value("lang_to_mask", d.lang_to_mask);
  p.lang_keep = j.value("lang_keep", d.lang_keep);
  p.lang_random = j.value("lang_random", d.lang_random);
  p.vis_mask_rate = j.value("vis_mask_rate", d.vis_mask_rate);
  p.vis_keep_original_rate = j.value("vis_keep_original_rate", d.vis_keep_original_rate);
  p.noun_only = j.value("noun_only", d.noun_only);
}

std::pair<TokenSequence, RegionSequence> apply_masking(const TokenSequence& tokens,
                                                       const RegionSequence& regions,
                                                       const MaskingPolicy& policy, int vocab_size,
                                                       Rng& rng) {
  policy.validate();
  validate_token_sequence(tokens);
  if (vocab_size <= kNumSpecialTokens) {
    throw ValidationError("vocab too small to draw random replacement words");
  }

  TokenSequence t = tokens;
  for (int i = 1; i < t.length(); ++i) {
    if (policy.noun_only && !t.is_noun[static_cast<size_t>(i)]) continue;
    if (rng.uniform() >= policy.lang_mask_rate) continue;
    const double r = rng.uniform();
    if (r < policy.lang_to_mask) {
      t.mask_state[static_cast<size_t>(i)] = MaskState::masked_to_mask;
      t.ids[static_cast<size_t>(i)] = kMaskId;
    } else if (r < policy.lang_to_mask + policy.lang_keep) {
      t.mask_state[static_cast<size_t>(i)] = MaskState::masked_kept;
    } else {
      t.mask_state[static_cast<size_t>(i)] = MaskState::masked_random;
      // uniform over the vocabulary minus [CLS] and [MASK]
      int id = kUnkId + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(vocab_size - kUnkId)));
      t.ids[static_cast<size_t>(i)] = id;
    }
  }

  RegionSequence v = regions;
  v.mask_state = regions.mask_state;
  for (int i = 1; i < v.num_rows(); ++i) {
    if (rng.uniform() >= policy.vis_mask_rate) continue;
    const double r = rng.uniform();
    v.mask_state[static_cast<size_t>(i)] = (r < policy.vis_keep_original_rate)
                                               ? MaskState::masked_kept_original
                                               : MaskState::masked_to_mask;
  }
  return {std::move(t), std::move(v)};
}

std::vector<int> masked_token_positions(const TokenSequence& seq) {
  std::vector<int> out;
  for (int i = 1; i < seq.length(); ++i) {
    if (is_masked(seq.mask_state[static_cast<size_t>(i)])) out.push_back(i);
  }
  return out;
}

std::vector<int> unmasked_token_positions(const TokenSequence& seq) {
  std::vector<int> out;
  for (int i = 1; i < seq.length(); ++i) {
    if (!is_masked(seq.mask_state[static_cast<size_t>(i)])) out.push_back(i);
  }
  return out;
}

std::vector<int> masked_region_rows(const RegionSequence& seq) {
  std::vector<int> out;
  for (int i = 1; i < seq.num_rows(); ++i) {
    if (is_masked(seq.mask_state[static_cast<size_t>(i)])) out.push_back(i);
  }
  return out;
}

std::vector<int> unmasked_region_rows(const RegionSequence& seq) {
  std::vector<int> out;
  for (int i = 1; i < seq.num_rows(); ++i) {
    if (!is_masked(seq.mask_state[static_cast<size_t>(i)])) out.push_back(i);
  }
  return out;
}

PretrainHeads PretrainHeads::init(const ModelConfig& config, Rng& rng) {
  PretrainHeads h;
  h.mlm_bias = Tensor({config.vocab_size}, 0.0, true);
  auto mat = [&rng](int r, int c) {
    std::vector<double> data(static_cast<size_t>(r) * c);
    for (auto& v : data) v = rng.truncated_normal(0.02);
    return Tensor({r, c}, std::move(data), true);
  };
  h.mom_w = mat(config.d_vis, config.n_classes);
  h.mom_b = Tensor({config.n_classes}, 0.0, true);
  h.align_w1 = mat(config.d_lang + config.d_vis, config.d_lang);
  h.align_b1 = Tensor({config.d_lang}, 0.0, true);
  h.align_w2 = mat(config.d_lang, 1);
  h.align_b2 = Tensor({1}, 0.0, true);
  return h;
}

std::vector<Parameter> PretrainHeads::parameters() {
  return {{"head.mlm.bias", mlm_bias},   {"head.mom.w", mom_w},
          {"head.mom.b", mom_b},         {"head.align.w1", align_w1},
          {"head.align.b1", align_b1},   {"head.align.w2", align_w2},
          {"head.align.b2", align_b2}};
}

std::optional<Tensor> mlm_loss(const StreamOutput& out, const TokenSequence& seq,
                               const Tensor& word_table, const Tensor& mlm_bias,
                               const std::vector<int>* positions) {
  std::vector<int> pos = positions ? *positions : masked_token_positions(seq);
  if (pos.empty()) return std::nullopt;
  std::vector<int> targets;
  targets.reserve(pos.size());
  for (int p : pos) targets.push_back(seq.original_ids[static_cast<size_t>(p)]);

  Tensor reps = gather_rows(out.lang_final, pos);
  Tensor logits = add_rowwise(matmul(reps, transpose(word_table)), mlm_bias);
  Tensor target_rows = one_hot(targets, word_table.size(0));
  return cross_entropy_soft(logits, target_rows);
}

std::optional<Tensor> mom_loss(const StreamOutput& out, const RegionSequence& seq,
                               const Tensor& mom_w, const Tensor& mom_b,
                               const std::vector<int>* rows) {
  std::vector<int> sel = rows ? *rows : masked_region_rows(seq);
  if (sel.empty()) return std::nullopt;

  Tensor reps = gather_rows(out.vis_final, sel);
  Tensor logits = add_rowwise(matmul(reps, mom_w), mom_b);
  Tensor targets = gather_rows(seq.soft_labels, sel);
  return cross_entropy_soft(logits, targets);
}

Tensor alignment_loss(const StreamOutput& out, bool aligned, const PretrainHeads& heads) {
  Tensor joint = concat(out.lang_cls, out.vis_global, 1);
  Tensor hidden = gelu(add_rowwise(matmul(joint, heads.align_w1), heads.align_b1));
  Tensor logit = add_rowwise(matmul(hidden, heads.align_w2), heads.align_b2);
  Tensor label({1, 1}, aligned ? 1.0 : 0.0);
  return bce_with_logits(logit, label);
}

}  // namespace devlbert
