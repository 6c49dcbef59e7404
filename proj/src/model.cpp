#include "devlbert/model.hpp"

#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "devlbert/error.hpp"
#include "devlbert/ops.hpp"

namespace devlbert {

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ValidationError(std::string("ModelConfig: ") + name + " must be positive");
  };
  positive(vocab_size, "vocab_size");
  positive(n_classes, "n_classes");
  positive(d_feat, "d_feat");
  positive(d_lang, "d_lang");
  positive(d_vis, "d_vis");
  positive(heads, "heads");
  positive(ffn_width, "ffn_width");
  positive(max_lang_len, "max_lang_len");
  positive(max_regions, "max_regions");
  if (lang_layers < 0 || blocks < 0) {
    throw ValidationError("ModelConfig: layer counts must be nonnegative");
  }
  if (vocab_size <= kNumSpecialTokens) {
    throw ValidationError("ModelConfig: vocab_size must exceed the special tokens");
  }
  if (d_lang % heads != 0 || d_vis % heads != 0) {
    throw ValidationError("ModelConfig: d_lang and d_vis must be divisible by heads");
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size}, {"n_classes", c.n_classes},
                     {"d_feat", c.d_feat},         {"d_lang", c.d_lang},
                     {"d_vis", c.d_vis},           {"lang_layers", c.lang_layers},
                     {"blocks", c.blocks},         {"heads", c.heads},
                     {"ffn_width", c.ffn_width},   {"max_lang_len", c.max_lang_len},
                     {"max_regions", c.max_regions}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig defaults;
  c.vocab_size = j.value("vocab_size", defaults.vocab_size);
  c.n_classes = j.value("n_classes", defaults.n_classes);
  c.d_feat = j.value("d_feat", defaults.d_feat);
  c.d_lang = j.value("d_lang", defaults.d_lang);
  c.d_vis = j.value("d_vis", defaults.d_vis);
  c.lang_layers = j.value("lang_layers", defaults.lang_layers);
  c.blocks = j.value("blocks", defaults.blocks);
  c.heads = j.value("heads", defaults.heads);
  c.ffn_width = j.value("ffn_width", defaults.ffn_width);
  c.max_lang_len = j.value("max_lang_len", defaults.max_lang_len);
  c.max_regions = j.value("max_regions", defaults.max_regions);
}

namespace {

Tensor init_matrix(int rows, int cols, Rng& rng) {
  std::vector<double> data(static_cast<size_t>(rows) * cols);
  for (auto& v : data) v = rng.truncated_normal(0.02);
  return Tensor({rows, cols}, std::move(data), true);
}

Tensor init_vector(int n, double fill, Rng& rng, bool random = false) {
  if (!random) return Tensor({n}, fill, true);
  std::vector<double> data(static_cast<size_t>(n));
  for (auto& v : data) v = rng.truncated_normal(0.02);
  return Tensor({n}, std::move(data), true);
}

AttentionParams init_attention(int d_q, int d_kv, int d_out, Rng& rng) {
  AttentionParams p;
  p.wq = init_matrix(d_q, d_out, rng);
  p.bq = init_vector(d_out, 0.0, rng);
  p.wk = init_matrix(d_kv, d_out, rng);
  p.bk = init_vector(d_out, 0.0, rng);
  p.wv = init_matrix(d_kv, d_out, rng);
  p.bv = init_vector(d_out, 0.0, rng);
  p.wo = init_matrix(d_out, d_out, rng);
  p.bo = init_vector(d_out, 0.0, rng);
  return p;
}

LayerParams init_layer(int d, int ffn_width, Rng& rng) {
  LayerParams p;
  p.attn = init_attention(d, d, d, rng);
  p.ln1_gain = init_vector(d, 1.0, rng);
  p.ln1_bias = init_vector(d, 0.0, rng);
  p.ffn_w1 = init_matrix(d, ffn_width, rng);
  p.ffn_b1 = init_vector(ffn_width, 0.0, rng);
  p.ffn_w2 = init_matrix(ffn_width, d, rng);
  p.ffn_b2 = init_vector(d, 0.0, rng);
  p.ln2_gain = init_vector(d, 1.0, rng);
  p.ln2_bias = init_vector(d, 0.0, rng);
  return p;
}

void collect_attention(std::vector<Parameter>& out, const std::string& prefix,
                       AttentionParams& p) {
  out.push_back({prefix + ".wq", p.wq});
  out.push_back({prefix + ".bq", p.bq});
  out.push_back({prefix + ".wk", p.wk});
  out.push_back({prefix + ".bk", p.bk});
  out.push_back({prefix + ".wv", p.wv});
  out.push_back({prefix + ".bv", p.bv});
  out.push_back({prefix + ".wo", p.wo});
  out.push_back({prefix + ".bo", p.bo});
}

void collect_layer(std::vector<Parameter>& out, const std::string& prefix, LayerParams& p) {
  collect_attention(out, prefix + ".attn", p.attn);
  out.push_back({prefix + ".ln1.gain", p.ln1_gain});
  out.push_back({prefix + ".ln1.bias", p.ln1_bias});
  out.push_back({prefix + ".ffn.w1", p.ffn_w1});
  out.push_back({prefix + ".ffn.b1", p.ffn_b1});
  out.push_back({prefix + ".ffn.w2", p.ffn_w2});
  out.push_back({prefix + ".ffn.b2", p.ffn_b2});
  out.push_back({prefix + ".ln2.gain", p.ln2_gain});
  out.push_back({prefix + ".ln2.bias", p.ln2_bias});
}

std::vector<int> iota_ids(int n) {
  std::vector<int> ids(static_cast<size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

}  // namespace

Tensor attention(const Tensor& x_q, const Tensor& x_kv, const AttentionParams& p, int heads,
                 int scale_width, ForwardTrace* trace) {
  const Tensor q = add_rowwise(matmul(x_q, p.wq), p.bq);
  const Tensor k = add_rowwise(matmul(x_kv, p.wk), p.bk);
  const Tensor v = add_rowwise(matmul(x_kv, p.wv), p.bv);
  const int d_out = q.size(1);
  if (d_out % heads != 0) throw DimensionError("attention width not divisible by heads");
  const int dk = d_out / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(scale_width));

  Tensor merged;
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dk, (h + 1) * dk);
    Tensor kh = slice_cols(k, h * dk, (h + 1) * dk);
    Tensor vh = slice_cols(v, h * dk, (h + 1) * dk);
    Tensor probs = softmax(scale(matmul(qh, transpose(kh)), inv_scale), 1);
    if (trace) trace->attention_probs.push_back(probs);
    Tensor oh = matmul(probs, vh);
    merged = (h == 0) ? oh : concat(merged, oh, 1);
  }
  return add_rowwise(matmul(merged, p.wo), p.bo);
}

Tensor transformer_layer(const Tensor& x, const LayerParams& p, int heads, int scale_width,
                         ForwardTrace* trace) {
  Tensor attended = attention(x, x, p.attn, heads, scale_width, trace);
  Tensor h = layer_norm(add(x, attended), p.ln1_gain, p.ln1_bias);
  Tensor ff = add_rowwise(matmul(gelu(add_rowwise(matmul(h, p.ffn_w1), p.ffn_b1)), p.ffn_w2),
                          p.ffn_b2);
  return layer_norm(add(h, ff), p.ln2_gain, p.ln2_bias);
}

std::pair<Tensor, Tensor> co_attention_layer(const Tensor& lang, const Tensor& vis,
                                             const CoAttentionParams& p, int heads, int d_lang,
                                             int d_vis, ForwardTrace* trace) {
  // Both directions read the same pre-layer snapshots.
  Tensor to_lang = attention(lang, vis, p.l2v, heads, d_lang, trace);
  Tensor to_vis = attention(vis, lang, p.v2l, heads, d_vis, trace);
  return {to_lang, to_vis};
}

TwoStreamModel TwoStreamModel::init(const ModelConfig& config, Rng& rng) {
  config.validate();
  TwoStreamModel m(config);
  m.word_table = init_matrix(config.vocab_size, config.d_lang, rng);
  m.pos_table = init_matrix(config.max_lang_len, config.d_lang, rng);
  m.vis_proj_w = init_matrix(config.d_feat, config.d_vis, rng);
  m.vis_proj_b = init_vector(config.d_vis, 0.0, rng);
  m.vis_mask_emb = init_vector(config.d_feat, 0.0, rng, /*random=*/true);
  m.box_w1 = init_matrix(5, config.d_vis, rng);
  m.box_b1 = init_vector(config.d_vis, 0.0, rng);
  m.box_w2 = init_matrix(config.d_vis, config.d_vis, rng);
  m.box_b2 = init_vector(config.d_vis, 0.0, rng);
  m.lang_layers.reserve(static_cast<size_t>(config.lang_layers));
  for (int l = 0; l < config.lang_layers; ++l) {
    m.lang_layers.push_back(init_layer(config.d_lang, config.ffn_width, rng));
  }
  m.blocks.reserve(static_cast<size_t>(config.blocks));
  for (int b = 0; b < config.blocks; ++b) {
    BlockParams blk;
    blk.co.l2v = init_attention(config.d_lang, config.d_vis, config.d_lang, rng);
    blk.co.v2l = init_attention(config.d_vis, config.d_lang, config.d_vis, rng);
    blk.co.lang_ln_gain = init_vector(config.d_lang, 1.0, rng);
    blk.co.lang_ln_bias = init_vector(config.d_lang, 0.0, rng);
    blk.co.vis_ln_gain = init_vector(config.d_vis, 1.0, rng);
    blk.co.vis_ln_bias = init_vector(config.d_vis, 0.0, rng);
    blk.lang = init_layer(config.d_lang, config.ffn_width, rng);
    blk.vis = init_layer(config.d_vis, config.ffn_width, rng);
    m.blocks.push_back(std::move(blk));
  }
  return m;
}

std::vector<Parameter> TwoStreamModel::parameters() {
  std::vector<Parameter> out;
  out.push_back({"lang.words", word_table});
  out.push_back({"lang.positions", pos_table});
  out.push_back({"vis.proj.w", vis_proj_w});
  out.push_back({"vis.proj.b", vis_proj_b});
  out.push_back({"vis.mask", vis_mask_emb});
  out.push_back({"vis.box.w1", box_w1});
  out.push_back({"vis.box.b1", box_b1});
  out.push_back({"vis.box.w2", box_w2});
  out.push_back({"vis.box.b2", box_b2});
  for (size_t l = 0; l < lang_layers.size(); ++l) {
    collect_layer(out, "lang_layer." + std::to_string(l), lang_layers[l]);
  }
  for (size_t b = 0; b < blocks.size(); ++b) {
    const std::string prefix = "block." + std::to_string(b);
    collect_attention(out, prefix + ".co.l2v", blocks[b].co.l2v);
    collect_attention(out, prefix + ".co.v2l", blocks[b].co.v2l);
    out.push_back({prefix + ".co.lang_ln.gain", blocks[b].co.lang_ln_gain});
    out.push_back({prefix + ".co.lang_ln.bias", blocks[b].co.lang_ln_bias});
    out.push_back({prefix + ".co.vis_ln.gain", blocks[b].co.vis_ln_gain});
    out.push_back({prefix + ".co.vis_ln.bias", blocks[b].co.vis_ln_bias});
    collect_layer(out, prefix + ".lang", blocks[b].lang);
    collect_layer(out, prefix + ".vis", blocks[b].vis);
  }
  return out;
}

Tensor TwoStreamModel::embed_language(const TokenSequence& seq) const {
  validate_token_sequence(seq);
  const int n = seq.length();
  if (n > config_.max_lang_len) {
    throw ValidationError("token sequence length " + std::to_string(n) + " exceeds max " +
                          std::to_string(config_.max_lang_len));
  }
  for (int id : seq.ids) {
    if (id >= config_.vocab_size) {
      throw ValidationError("token id " + std::to_string(id) + " out of vocabulary");
    }
  }
  Tensor words = gather_rows(word_table, seq.ids);
  Tensor positions = gather_rows(pos_table, iota_ids(n));
  return add(words, positions);
}

Tensor TwoStreamModel::embed_regions(const RegionSequence& seq) const {
  if (!seq.features.defined()) throw ValidationError("region sequence has no features");
  const int rows = seq.features.size(0);
  if (seq.features.size(1) != config_.d_feat) {
    throw ValidationError("region feature width " + std::to_string(seq.features.size(1)) +
                          " does not match configured d_feat");
  }
  if (rows - 1 > config_.max_regions) {
    throw ValidationError("region count exceeds configured maximum");
  }
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < 5; ++j) {
      double v = seq.boxes.at(i, j);
      if (v < 0.0 || v > 1.0) throw ValidationError("box coordinate out of [0,1]");
    }
  }

  // Masked rows (except kept-original ones) swap their feature for the
  // learned mask embedding: features .* keep + outer(masked, mask_emb).
  std::vector<double> keep(static_cast<size_t>(rows) * config_.d_feat, 1.0);
  std::vector<double> masked_col(static_cast<size_t>(rows), 0.0);
  bool any_masked = false;
  for (int i = 0; i < rows; ++i) {
    if (seq.mask_state[static_cast<size_t>(i)] == MaskState::masked_to_mask) {
      any_masked = true;
      masked_col[static_cast<size_t>(i)] = 1.0;
      for (int j = 0; j < config_.d_feat; ++j) keep[static_cast<size_t>(i) * config_.d_feat + j] = 0.0;
    }
  }
  Tensor eff = seq.features;
  if (any_masked) {
    Tensor keep_mat({rows, config_.d_feat}, std::move(keep));
    Tensor sel({rows, 1}, std::move(masked_col));
    Tensor fill = matmul(sel, reshape(vis_mask_emb, {1, config_.d_feat}));
    eff = add(mul(seq.features, keep_mat), fill);
  }

  Tensor projected = add_rowwise(matmul(eff, vis_proj_w), vis_proj_b);
  Tensor box_h = gelu(add_rowwise(matmul(seq.boxes, box_w1), box_b1));
  Tensor box_enc = add_rowwise(matmul(box_h, box_w2), box_b2);
  return add(projected, box_enc);
}

StreamOutput TwoStreamModel::forward(const TokenSequence& lang_seq, const RegionSequence& vis_seq,
                                     ForwardTrace* trace) const {
  Tensor lang = embed_language(lang_seq);
  Tensor vis = embed_regions(vis_seq);

  for (const auto& layer : lang_layers) {
    lang = transformer_layer(lang, layer, config_.heads, config_.d_lang, trace);
  }
  for (const auto& blk : blocks) {
    auto [to_lang, to_vis] =
        co_attention_layer(lang, vis, blk.co, config_.heads, config_.d_lang, config_.d_vis, trace);
    lang = layer_norm(add(lang, to_lang), blk.co.lang_ln_gain, blk.co.lang_ln_bias);
    vis = layer_norm(add(vis, to_vis), blk.co.vis_ln_gain, blk.co.vis_ln_bias);
    lang = transformer_layer(lang, blk.lang, config_.heads, config_.d_lang, trace);
    vis = transformer_layer(vis, blk.vis, config_.heads, config_.d_vis, trace);
  }

  StreamOutput out;
  out.lang_final = lang;
  out.vis_final = vis;
  out.lang_cls = slice_rows(lang, 0, 1);
  out.vis_global = slice_rows(vis, 0, 1);
  forward_count_->fetch_add(1);
  return out;
}

}  // namespace devlbert
