#include "devlbert/deconfound.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <utility>

#include "devlbert/error.hpp"
#include "devlbert/ops.hpp"

namespace devlbert {

Design design_from_string(const std::string& s) {
  if (s == "A") return Design::A;
  if (s == "B") return Design::B;
  if (s == "C") return Design::C;
  if (s == "D") return Design::D;
  throw ValidationError("unknown design: " + s);
}

std::string to_string(Design d) {
  switch (d) {
    case Design::A: return "A";
    case Design::B: return "B";
    case Design::C: return "C";
    case Design::D: return "D";
  }
  return "?";
}

Scope scope_from_string(const std::string& s) {
  if (s == "vision_intra") return Scope::vision_intra;
  if (s == "language_intra") return Scope::language_intra;
  if (s == "inter_modal") return Scope::inter_modal;
  throw ValidationError("unknown scope: " + s);
}

std::string to_string(Scope s) {
  switch (s) {
    case Scope::vision_intra: return "vision_intra";
    case Scope::language_intra: return "language_intra";
    case Scope::inter_modal: return "inter_modal";
  }
  return "?";
}

int ConfounderDictionary::find(int class_id) const {
  for (size_t i = 0; i < class_ids.size(); ++i) {
    if (class_ids[i] == class_id) return static_cast<int>(i);
  }
  return -1;
}

void ConfounderDictionary::validate() const {
  if (modality != "vision" && modality != "language" && modality != "joint") {
    throw ValidationError("dictionary modality must be vision, language, or joint");
  }
  const size_t m = class_ids.size();
  if (m == 0) throw ValidationError("dictionary has no entries");
  if (!features.defined() || features.dim() != 2 ||
      features.size(0) != static_cast<int>(m)) {
    throw ValidationError("dictionary feature matrix does not match entry count");
  }
  if (priors.size() != m) throw ValidationError("dictionary prior count mismatch");
  double sum = 0;
  for (double p : priors) {
    if (p < 0) throw ValidationError("dictionary prior is negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ValidationError("dictionary priors sum to " + std::to_string(sum) + ", expected 1");
  }
  std::set<int> seen(class_ids.begin(), class_ids.end());
  if (seen.size() != m) throw ValidationError("duplicate class ids in dictionary");
  if (modality == "joint") {
    if (entry_modalities.size() != m) {
      throw ValidationError("joint dictionary is missing per-entry modality tags");
    }
    for (const auto& tag : entry_modalities) {
      if (tag != "vision" && tag != "language") {
        throw ValidationError("joint dictionary entry has unknown modality tag: " + tag);
      }
    }
  }
}

nlohmann::json ConfounderDictionary::to_json() const {
  nlohmann::json j;
  j["modality"] = modality;
  auto entries = nlohmann::json::array();
  for (int i = 0; i < size(); ++i) {
    nlohmann::json e;
    e["class_id"] = class_ids[static_cast<size_t>(i)];
    e["prior"] = priors[static_cast<size_t>(i)];
    std::vector<double> feat(static_cast<size_t>(dim()));
    for (int jcol = 0; jcol < dim(); ++jcol) feat[static_cast<size_t>(jcol)] = features.at(i, jcol);
    e["feature"] = feat;
    if (modality == "joint") e["modality"] = entry_modalities[static_cast<size_t>(i)];
    entries.push_back(std::move(e));
  }
  j["entries"] = std::move(entries);
  return j;
}

ConfounderDictionary ConfounderDictionary::from_json(const nlohmann::json& j) {
  ConfounderDictionary d;
  d.modality = j.at("modality").get<std::string>();
  const auto& entries = j.at("entries");
  if (entries.empty()) throw ValidationError("dictionary json has no entries");
  const int m = static_cast<int>(entries.size());
  const int dim = static_cast<int>(entries.at(0).at("feature").size());
  d.features = Tensor({m, dim});
  for (int i = 0; i < m; ++i) {
    const auto& e = entries.at(static_cast<size_t>(i));
    d.class_ids.push_back(e.at("class_id").get<int>());
    d.priors.push_back(e.at("prior").get<double>());
    const auto feat = e.at("feature").get<std::vector<double>>();
    if (static_cast<int>(feat.size()) != dim) {
      throw ValidationError("dictionary entry " + std::to_string(i) + " has inconsistent width");
    }
    for (int jcol = 0; jcol < dim; ++jcol) d.features.at(i, jcol) = feat[static_cast<size_t>(jcol)];
    if (d.modality == "joint") {
      d.entry_modalities.push_back(e.at("modality").get<std::string>());
    }
  }
  d.validate();
  return d;
}

namespace {

struct Accumulator {
  long count = 0;
  std::vector<double> sum;
};

ConfounderDictionary finish_dictionary(std::string modality,
                                       const std::map<int, Accumulator>& acc, int min_count,
                                       int dim, const char* what) {
  long total = 0;
  std::vector<int> kept;
  for (const auto& [cls, a] : acc) {
    if (a.count >= min_count) {
      kept.push_back(cls);
      total += a.count;
    }
  }
  if (kept.empty()) {
    throw ValidationError(std::string("no ") + what + " meet min_count; dictionary is empty");
  }

  ConfounderDictionary d;
  d.modality = std::move(modality);
  d.features = Tensor({static_cast<int>(kept.size()), dim});
  for (size_t i = 0; i < kept.size(); ++i) {
    const Accumulator& a = acc.at(kept[i]);
    d.class_ids.push_back(kept[i]);
    d.priors.push_back(static_cast<double>(a.count) / static_cast<double>(total));
    for (int j = 0; j < dim; ++j) {
      d.features.at(static_cast<int>(i), j) = a.sum[static_cast<size_t>(j)] / static_cast<double>(a.count);
    }
  }
  d.validate();
  return d;
}

}  // namespace

ConfounderDictionary build_vision_dictionary(const std::vector<PairSample>& corpus,
                                             int min_count) {
  if (corpus.empty()) throw ValidationError("cannot build a dictionary from an empty corpus");
  if (min_count < 1) throw ValidationError("min_count must be at least 1");
  std::map<int, Accumulator> acc;
  int dim = 0;
  for (const auto& pair : corpus) {
    const RegionSequence& seq = pair.regions;
    dim = seq.features.size(1);
    std::vector<int> classes = hard_labels(seq);
    for (int i = 1; i < seq.num_rows(); ++i) {  // skip the synthetic global row
      Accumulator& a = acc[classes[static_cast<size_t>(i)]];
      if (a.sum.empty()) a.sum.assign(static_cast<size_t>(dim), 0.0);
      a.count += 1;
      for (int j = 0; j < dim; ++j) a.sum[static_cast<size_t>(j)] += seq.features.at(i, j);
    }
  }
  return finish_dictionary("vision", acc, min_count, dim, "object classes");
}

ConfounderDictionary build_language_dictionary(const std::vector<PairSample>& corpus,
                                               const TwoStreamModel& model, int min_count) {
  if (corpus.empty()) throw ValidationError("cannot build a dictionary from an empty corpus");
  if (min_count < 1) throw ValidationError("min_count must be at least 1");
  std::map<int, Accumulator> acc;
  const int dim = model.config().d_lang;
  for (const auto& pair : corpus) {
    StreamOutput out = model.forward(pair.tokens, pair.regions);
    const Tensor& reps = out.lang_final;
    for (int t = 1; t < pair.tokens.length(); ++t) {
      if (!pair.tokens.is_noun[static_cast<size_t>(t)]) continue;
      Accumulator& a = acc[pair.tokens.original_ids[static_cast<size_t>(t)]];
      if (a.sum.empty()) a.sum.assign(static_cast<size_t>(dim), 0.0);
      a.count += 1;
      for (int j = 0; j < dim; ++j) a.sum[static_cast<size_t>(j)] += reps.at(t, j);
    }
  }
  if (acc.empty()) throw ValidationError("corpus has no noun occurrences");
  return finish_dictionary("language", acc, min_count, dim, "nouns");
}

ConfounderDictionary build_joint_dictionary(const ConfounderDictionary& vision,
                                            const ConfounderDictionary& language,
                                            int vocab_size) {
  vision.validate();
  language.validate();
  if (vision.modality != "vision" || language.modality != "language") {
    throw ValidationError("joint dictionary needs one vision and one language dictionary");
  }
  const int d = std::max(vision.dim(), language.dim());
  const int m = vision.size() + language.size();

  ConfounderDictionary joint;
  joint.modality = "joint";
  joint.features = Tensor({m, d});
  int row = 0;
  for (int i = 0; i < language.size(); ++i, ++row) {
    joint.class_ids.push_back(language.class_ids[static_cast<size_t>(i)]);
    joint.entry_modalities.push_back("language");
    joint.priors.push_back(language.priors[static_cast<size_t>(i)] / 2.0);
    for (int j = 0; j < language.dim(); ++j) joint.features.at(row, j) = language.features.at(i, j);
  }
  for (int i = 0; i < vision.size(); ++i, ++row) {
    joint.class_ids.push_back(vocab_size + vision.class_ids[static_cast<size_t>(i)]);
    joint.entry_modalities.push_back("vision");
    joint.priors.push_back(vision.priors[static_cast<size_t>(i)] / 2.0);
    for (int j = 0; j < vision.dim(); ++j) joint.features.at(row, j) = vision.features.at(i, j);
  }
  joint.validate();
  return joint;
}

InterventionHead InterventionHead::init(Design design, int d_y, int d_x, int d_z, int d_shared,
                                        int n_targets, Rng& rng) {
  if (design == Design::D && d_x != 0) {
    throw ValidationError("design D takes no x input; pass d_x = 0");
  }
  if (design != Design::D && d_x <= 0) {
    throw ValidationError("designs A/B/C need the x width");
  }
  auto mat = [&rng](int r, int c) {
    std::vector<double> data(static_cast<size_t>(r) * c);
    for (auto& v : data) v = rng.truncated_normal(0.02);
    return Tensor({r, c}, std::move(data), true);
  };
  InterventionHead h;
  h.design = design;
  h.w_y = mat(d_y, d_shared);
  h.w_z = mat(d_z, d_shared);
  h.w_c = mat(d_x + d_z, n_targets);
  h.b_c = Tensor({n_targets}, 0.0, true);
  h.exclusion_enabled = (design != Design::D);
  return h;
}

std::vector<Parameter> InterventionHead::parameters(const std::string& prefix) {
  const char* proj = (design == Design::D) ? ".wr" : ".wy";
  return {{prefix + proj, w_y},
          {prefix + ".wz", w_z},
          {prefix + ".wc", w_c},
          {prefix + ".bc", b_c}};
}

Tensor alpha_weights(const Tensor& y, const InterventionHead& head,
                     const ConfounderDictionary& dict, std::optional<int> exclude_class) {
  dict.validate();
  const int m = dict.size();
  Tensor y_row = (y.dim() == 1) ? reshape(y, {1, y.numel()}) : y;
  if (y_row.dim() != 2 || y_row.size(0) != 1) {
    throw DimensionError("alpha_weights expects a single y row");
  }

  int excluded_idx = -1;
  if (head.exclusion_enabled && exclude_class.has_value()) {
    excluded_idx = dict.find(*exclude_class);
  }
  const int live = m - (excluded_idx >= 0 ? 1 : 0);
  if (live == 0) {
    throw ValidationError("alpha_weights: exclusion removed every dictionary entry");
  }

  Tensor projected_y = matmul(y_row, head.w_y);          // [1 x ds]
  Tensor projected_z = matmul(dict.features, head.w_z);  // [m x ds]
  Tensor dots = matmul(projected_z, transpose(projected_y));  // [m x 1]

  std::vector<double> mask_data(static_cast<size_t>(m), 1.0);
  if (excluded_idx >= 0) mask_data[static_cast<size_t>(excluded_idx)] = 0.0;

  if (head.softmax_alpha) {
    // softmax over the non-excluded dots, scattered back with a 0 at ς
    std::vector<int> live_rows;
    for (int i = 0; i < m; ++i) {
      if (i != excluded_idx) live_rows.push_back(i);
    }
    Tensor live_dots = gather_rows(dots, live_rows);             // [live x 1]
    Tensor sm = softmax(transpose(live_dots), 1);                // [1 x live]
    std::vector<double> scatter(static_cast<size_t>(m) * live, 0.0);
    for (int r = 0; r < live; ++r) {
      scatter[static_cast<size_t>(live_rows[static_cast<size_t>(r)]) * live + r] = 1.0;
    }
    return matmul(Tensor({m, live}, std::move(scatter)), transpose(sm));  // [m x 1]
  }

  Tensor mask({m, 1}, std::move(mask_data));
  Tensor masked_dots = mul(dots, mask);
  Tensor den = sum(masked_dots);
  if (std::abs(den.value()) < kAlphaDenominatorGuard) {
    // degenerate normalizer: constant uniform weights over the live entries
    std::vector<double> uniform(static_cast<size_t>(m), 0.0);
    for (int i = 0; i < m; ++i) {
      if (i != excluded_idx) uniform[static_cast<size_t>(i)] = 1.0 / live;
    }
    return Tensor({m, 1}, std::move(uniform));
  }
  return div_scalar(masked_dots, den);
}

Tensor intervention_logits(const std::optional<Tensor>& x, const Tensor& y_or_r,
                           const ConfounderDictionary& dict, const InterventionHead& head,
                           std::optional<int> exclude_class) {
  if (head.design == Design::D && x.has_value()) {
    throw ValidationError("design D pools the confounders alone; no x is accepted");
  }
  if (head.design != Design::D && !x.has_value()) {
    throw ValidationError("designs A/B/C require the x representation");
  }

  Tensor alpha = alpha_weights(y_or_r, head, dict, exclude_class);  // [m x 1]
  Tensor priors({dict.size(), 1}, std::vector<double>(dict.priors));
  Tensor weighted = mul(alpha, priors);
  Tensor pooled = matmul(transpose(weighted), dict.features);  // [1 x d_z]

  Tensor input = pooled;
  if (x.has_value()) {
    Tensor x_row = (x->dim() == 1) ? reshape(*x, {1, x->numel()}) : *x;
    input = concat(x_row, pooled, 1);
  }
  if (input.size(1) != head.w_c.size(0)) {
    throw DimensionError("intervention classifier width mismatch: input " +
                         std::to_string(input.size(1)) + " vs W_c rows " +
                         std::to_string(head.w_c.size(0)));
  }
  head.count_invocation();
  return add_rowwise(matmul(input, head.w_c), head.b_c);
}

namespace {

Tensor take_row(const Tensor& mat, int row) { return slice_rows(mat, row, row + 1); }

Tensor maybe_stop(const Tensor& t, bool stop) { return stop ? stop_gradient(t) : t; }

}  // namespace

std::vector<XYPair> select_xy_design_A(const Tensor& masked_final, const Tensor& clean_final,
                                       const std::vector<int>& masked_positions,
                                       bool stop_grad_y) {
  std::vector<XYPair> out;
  out.reserve(masked_positions.size());
  for (int t : masked_positions) {
    out.push_back({take_row(masked_final, t), maybe_stop(take_row(clean_final, t), stop_grad_y), t});
  }
  return out;
}

std::vector<XYPair> select_xy_design_B(const Tensor& masked_final,
                                       const std::vector<int>& masked_positions,
                                       const std::vector<int>& unmasked_positions) {
  std::vector<XYPair> out;
  out.reserve(masked_positions.size() * unmasked_positions.size());
  for (int t : masked_positions) {
    Tensor y = take_row(masked_final, t);
    for (int k : unmasked_positions) {
      out.push_back({take_row(masked_final, k), y, t});
    }
  }
  return out;
}

std::vector<XYPair> select_xy_design_C(const Tensor& masked_final, const Tensor& clean_final,
                                       const std::vector<int>& masked_positions,
                                       const std::vector<int>& unmasked_positions,
                                       bool stop_grad_y) {
  std::vector<XYPair> out;
  out.reserve(masked_positions.size() * unmasked_positions.size());
  for (int t : masked_positions) {
    Tensor y = maybe_stop(take_row(clean_final, t), stop_grad_y);
    for (int k : unmasked_positions) {
      out.push_back({take_row(masked_final, k), y, t});
    }
  }
  return out;
}

std::vector<XYPair> select_r_design_D(const Tensor& masked_final,
                                      const std::vector<int>& unmasked_positions) {
  std::vector<XYPair> out;
  out.reserve(unmasked_positions.size());
  for (int k : unmasked_positions) {
    out.push_back({Tensor(), take_row(masked_final, k), k});
  }
  return out;
}

namespace {

std::vector<int> masked_noun_positions(const TokenSequence& seq) {
  std::vector<int> out;
  for (int t : masked_token_positions(seq)) {
    if (seq.is_noun[static_cast<size_t>(t)]) out.push_back(t);
  }
  return out;
}

std::vector<int> unmasked_noun_positions(const TokenSequence& seq) {
  std::vector<int> out;
  for (int t : unmasked_token_positions(seq)) {
    if (seq.is_noun[static_cast<size_t>(t)]) out.push_back(t);
  }
  return out;
}

// target rows per modality, optionally embedded in the (vocab + classes) space
Tensor language_target(int word_id, int vocab, int extra_classes) {
  return one_hot({word_id}, vocab + extra_classes);
}

Tensor vision_target(const RegionSequence& regions, int row, int vocab_prefix) {
  Tensor soft = slice_rows(regions.soft_labels, row, row + 1);
  if (vocab_prefix == 0) return soft;
  Tensor zeros({1, vocab_prefix}, 0.0);
  return concat(zeros, soft, 1);
}

struct SideSelection {
  const Tensor* masked_final;
  const Tensor* clean_final;  // may be null when the design has no clean pass
  std::vector<int> masked;
  std::vector<int> unmasked;
  bool is_language;
};

void emit_items(Design design, const SideSelection& y_side, const std::vector<int>& x_positions,
                const Tensor* x_final, const TokenSequence& tokens,
                const RegionSequence& regions, const ModelConfig& config, bool stop_grad_y,
                int vocab_prefix, int extra_classes, std::vector<InterventionItem>& out) {
  auto make_target = [&](int pos) {
    return y_side.is_language
               ? language_target(tokens.original_ids[static_cast<size_t>(pos)],
                                 config.vocab_size, extra_classes)
               : vision_target(regions, pos, vocab_prefix);
  };
  auto exclusion_for = [&](int pos) -> int {
    if (y_side.is_language) return tokens.original_ids[static_cast<size_t>(pos)];
    int cls = hard_labels(regions)[static_cast<size_t>(pos)];
    return vocab_prefix > 0 ? vocab_prefix + cls : cls;
  };

  switch (design) {
    case Design::A: {
      auto pairs = select_xy_design_A(*y_side.masked_final, *y_side.clean_final, y_side.masked,
                                      stop_grad_y);
      for (auto& p : pairs) {
        out.push_back({p.x, p.y, exclusion_for(p.y_position), make_target(p.y_position)});
      }
      break;
    }
    case Design::B: {
      // x_final/x_positions allow the cross-modal variant; intra passes the
      // same stream for both sides
      for (int t : y_side.masked) {
        Tensor y = take_row(*y_side.masked_final, t);
        for (int k : x_positions) {
          out.push_back({take_row(*x_final, k), y, exclusion_for(t), make_target(t)});
        }
      }
      break;
    }
    case Design::C: {
      for (int t : y_side.masked) {
        Tensor y = maybe_stop(take_row(*y_side.clean_final, t), stop_grad_y);
        for (int k : x_positions) {
          out.push_back({take_row(*x_final, k), y, exclusion_for(t), make_target(t)});
        }
      }
      break;
    }
    case Design::D: {
      auto rs = select_r_design_D(*y_side.masked_final, y_side.unmasked);
      for (auto& r : rs) {
        out.push_back({std::nullopt, r.y, std::nullopt, make_target(r.y_position)});
      }
      break;
    }
  }
}

}  // namespace

std::vector<InterventionItem> build_intervention_items(
    Design design, Scope scope, const StreamOutput& masked_pass, const StreamOutput* clean_pass,
    const TokenSequence& tokens, const RegionSequence& regions, const ModelConfig& config,
    bool stop_grad_y) {
  if ((design == Design::A || design == Design::C) && clean_pass == nullptr) {
    throw ValidationError("designs A and C need the clean-pass outputs");
  }
  if (design == Design::A && scope == Scope::inter_modal) {
    throw ValidationError(
        "design A pairs x and y at the same position; it cannot cross modalities");
  }

  SideSelection lang_side;
  lang_side.masked_final = &masked_pass.lang_final;
  lang_side.clean_final = clean_pass ? &clean_pass->lang_final : nullptr;
  lang_side.masked = masked_noun_positions(tokens);
  lang_side.unmasked = unmasked_noun_positions(tokens);
  lang_side.is_language = true;

  SideSelection vis_side;
  vis_side.masked_final = &masked_pass.vis_final;
  vis_side.clean_final = clean_pass ? &clean_pass->vis_final : nullptr;
  vis_side.masked = masked_region_rows(regions);
  vis_side.unmasked = unmasked_region_rows(regions);
  vis_side.is_language = false;

  std::vector<InterventionItem> items;
  switch (scope) {
    case Scope::vision_intra:
      emit_items(design, vis_side, vis_side.unmasked, vis_side.masked_final, tokens, regions,
                 config, stop_grad_y, /*vocab_prefix=*/0, /*extra_classes=*/0, items);
      break;
    case Scope::language_intra:
      emit_items(design, lang_side, lang_side.unmasked, lang_side.masked_final, tokens, regions,
                 config, stop_grad_y, /*vocab_prefix=*/0, /*extra_classes=*/0, items);
      break;
    case Scope::inter_modal:
      // y from one modality, x drawn from the other; targets live in the
      // concatenated (vocab + classes) space
      emit_items(design, lang_side, vis_side.unmasked, vis_side.masked_final, tokens, regions,
                 config, stop_grad_y, config.vocab_size, config.n_classes, items);
      emit_items(design, vis_side, lang_side.unmasked, lang_side.masked_final, tokens, regions,
                 config, stop_grad_y, config.vocab_size, config.n_classes, items);
      break;
  }
  return items;
}

std::optional<Tensor> intervention_loss(const std::vector<InterventionItem>& items,
                                        const ConfounderDictionary& dict,
                                        const InterventionHead& head) {
  if (items.empty()) return std::nullopt;
  Tensor logits, targets;
  bool first = true;
  for (const auto& item : items) {
    Tensor row = intervention_logits(item.x, item.y, dict, head, item.exclusion_class);
    logits = first ? row : concat(logits, row, 0);
    targets = first ? item.target : concat(targets, item.target, 0);
    first = false;
  }
  return cross_entropy_soft(logits, targets);
}

bool design_replaces_mtm(Design d) { return d == Design::A || d == Design::B; }

}  // namespace devlbert
