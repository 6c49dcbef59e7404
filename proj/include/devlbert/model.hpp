#pragma once

#include <atomic>
#include <memory>
#include <vector>

#include "json.hpp"

#include "devlbert/optimizer.hpp"
#include "devlbert/rng.hpp"
#include "devlbert/sequences.hpp"
#include "devlbert/tensor.hpp"

namespace devlbert {

/// Backbone hyper-parameters. Defaults are the desk-scale configuration.
struct ModelConfig {
  int vocab_size = 512;
  int n_classes = 32;  // object classes (C_obj)
  int d_feat = 64;     // raw region feature width
  int d_lang = 64;
  int d_vis = 64;
  int lang_layers = 2;  // language-only layers ahead of the cross-modal blocks
  int blocks = 2;       // blocks of (co-attention, language layer, visual layer)
  int heads = 4;
  int ffn_width = 256;
  int max_lang_len = 64;
  int max_regions = 36;  // detected regions, excluding the global one

  void validate() const;  // throws ValidationError
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct LayerParams {
  AttentionParams attn;
  Tensor ln1_gain, ln1_bias;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor ln2_gain, ln2_bias;
};

/// One cross-modal exchange: `l2v` carries language queries over visual
/// keys/values, `v2l` the reverse. Both read the same input snapshots.
struct CoAttentionParams {
  AttentionParams l2v, v2l;
  Tensor lang_ln_gain, lang_ln_bias;
  Tensor vis_ln_gain, vis_ln_bias;
};

struct BlockParams {
  CoAttentionParams co;
  LayerParams lang;
  LayerParams vis;
};

struct StreamOutput {
  Tensor lang_final;  // [N_w x d_lang]
  Tensor vis_final;   // [(N_v+1) x d_vis]
  Tensor lang_cls;    // [1 x d_lang], row 0 of lang_final
  Tensor vis_global;  // [1 x d_vis], row 0 of vis_final
};

/// Optional per-forward instrumentation: every attention probability matrix
/// ([queries x keys], one per head) in evaluation order.
struct ForwardTrace {
  std::vector<Tensor> attention_probs;
};

/// The two-stream encoder: token/region embedding, language-only layers,
/// then stacked (co-attention, per-stream transformer) blocks.
class TwoStreamModel {
 public:
  static TwoStreamModel init(const ModelConfig& config, Rng& rng);

  StreamOutput forward(const TokenSequence& lang, const RegionSequence& vis,
                       ForwardTrace* trace = nullptr) const;

  /// Embedding sub-steps, exposed for reuse and for component-level tests.
  Tensor embed_language(const TokenSequence& seq) const;
  Tensor embed_regions(const RegionSequence& seq) const;

  /// All learnable tensors under stable dotted names, in a fixed order.
  std::vector<Parameter> parameters();

  const ModelConfig& config() const { return config_; }

  /// Number of completed encoder invocations (intervention designs are
  /// audited on this counter).
  long forward_passes() const { return forward_count_->load(); }
  void reset_forward_passes() { forward_count_->store(0); }

  // Embedding tables and projections; public so heads can share the word
  // table and tests can ablate pieces directly.
  Tensor word_table, pos_table;
  Tensor vis_proj_w, vis_proj_b;
  Tensor vis_mask_emb;  // learned stand-in feature for masked regions
  Tensor box_w1, box_b1, box_w2, box_b2;
  std::vector<LayerParams> lang_layers;
  std::vector<BlockParams> blocks;

 private:
  explicit TwoStreamModel(ModelConfig config) : config_(std::move(config)) {}

  ModelConfig config_;
  std::shared_ptr<std::atomic<long>> forward_count_ = std::make_shared<std::atomic<long>>(0);
};

/// Multi-head scaled dot-product attention. Queries come from `x_q`, keys and
/// values from `x_kv`; logits are scaled by 1/sqrt(full query-side width), as
/// in the reference formulation. Appends per-head probability matrices to
/// `trace` when given.
Tensor attention(const Tensor& x_q, const Tensor& x_kv, const AttentionParams& p, int heads,
                 int scale_width, ForwardTrace* trace = nullptr);

/// attention -> add & norm -> feed-forward (GeLU) -> add & norm.
Tensor transformer_layer(const Tensor& x, const LayerParams& p, int heads, int scale_width,
                         ForwardTrace* trace = nullptr);

/// Both cross-modal directions from the same snapshots; returns the raw
/// attended outputs (residual + norm is applied by the caller's stack).
std::pair<Tensor, Tensor> co_attention_layer(const Tensor& lang, const Tensor& vis,
                                             const CoAttentionParams& p, int heads, int d_lang,
                                             int d_vis, ForwardTrace* trace = nullptr);

}  // namespace devlbert
