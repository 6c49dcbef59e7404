#include "devlbert/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "devlbert/checkpoint.hpp"
#include "devlbert/error.hpp"
#include "devlbert/ops.hpp"

namespace devlbert {

namespace {

// fixed substream tags so each consumer of the run seed is independent
constexpr std::uint64_t kModelStream = 1;
constexpr std::uint64_t kHeadStream = 2;
constexpr std::uint64_t kUnitStream = 3;
constexpr std::uint64_t kLoopStream = 4;

std::string unit_key(const InterventionSpec& spec) {
  return to_string(spec.design) + "_" + to_string(spec.scope);
}

void objectives_to_json(nlohmann::json& j, const ObjectiveConfig& o) {
  j = nlohmann::json{{"mlm", o.mlm},
                     {"mom", o.mom},
                     {"align", o.align},
                     {"mlm_weight", o.mlm_weight},
                     {"mom_weight", o.mom_weight},
                     {"align_weight", o.align_weight},
                     {"intervention_weight", o.intervention_weight},
                     {"aligned_only_mtm", o.aligned_only_mtm}};
}

void objectives_from_json(const nlohmann::json& j, ObjectiveConfig& o) {
  ObjectiveConfig d;
  o.mlm = j.value("mlm", d.mlm);
  o.mom = j.value("mom", d.mom);
  o.align = j.value("align", d.align);
  o.mlm_weight = j.value("mlm_weight", d.mlm_weight);
  o.mom_weight = j.value("mom_weight", d.mom_weight);
  o.align_weight = j.value("align_weight", d.align_weight);
  o.intervention_weight = j.value("intervention_weight", d.intervention_weight);
  o.aligned_only_mtm = j.value("aligned_only_mtm", d.aligned_only_mtm);
}

nlohmann::json optimizer_to_json(const OptimizerConfig& o) {
  return nlohmann::json{{"type", o.type},       {"lr", o.lr},
                        {"beta1", o.beta1},     {"beta2", o.beta2},
                        {"eps", o.eps},         {"weight_decay", o.weight_decay}};
}

OptimizerConfig optimizer_from_json(const nlohmann::json& j) {
  OptimizerConfig o;
  o.type = j.value("type", o.type);
  o.lr = j.value("lr", o.lr);
  o.beta1 = j.value("beta1", o.beta1);
  o.beta2 = j.value("beta2", o.beta2);
  o.eps = j.value("eps", o.eps);
  o.weight_decay = j.value("weight_decay", o.weight_decay);
  return o;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  masking.validate();
  if (training.steps < 0) throw ValidationError("training.steps must be nonnegative");
  if (training.batch_size < 1) throw ValidationError("training.batch_size must be positive");
  if (!(training.negative_rate >= 0.0 && training.negative_rate <= 1.0)) {
    throw ValidationError("training.negative_rate must lie in [0,1]");
  }
  if (dictionaries.min_count < 1) throw ValidationError("dictionaries.min_count must be >= 1");
  if (dictionaries.refresh_every < 0) {
    throw ValidationError("dictionaries.refresh_every must be nonnegative");
  }
  if (dictionaries.d_shared < 1) throw ValidationError("dictionaries.d_shared must be positive");
  for (double w : {objectives.mlm_weight, objectives.mom_weight, objectives.align_weight,
                   objectives.intervention_weight}) {
    if (w < 0) throw ValidationError("objective weights must be nonnegative");
  }
  std::set<std::string> seen;
  for (const auto& spec : designs) {
    if (spec.design == Design::A && spec.scope == Scope::inter_modal) {
      throw ValidationError("design A cannot run inter_modal (positional pairing)");
    }
    if (spec.scope == Scope::inter_modal && model.d_lang != model.d_vis) {
      throw ValidationError("inter_modal designs need d_lang == d_vis");
    }
    if (!seen.insert(unit_key(spec)).second) {
      throw ValidationError("duplicate design/scope combination: " + unit_key(spec));
    }
  }
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json jmodel, jmask, jobj;
  devlbert::to_json(jmodel, model);
  devlbert::to_json(jmask, masking);
  objectives_to_json(jobj, objectives);
  nlohmann::json jdesigns = nlohmann::json::array();
  for (const auto& spec : designs) {
    jdesigns.push_back(
        {{"design", to_string(spec.design)}, {"scope", to_string(spec.scope)}});
  }
  return nlohmann::json{
      {"model", jmodel},
      {"masking", jmask},
      {"objectives", jobj},
      {"designs", jdesigns},
      {"dictionaries",
       {{"min_count", dictionaries.min_count},
        {"refresh_every", dictionaries.refresh_every},
        {"d_shared", dictionaries.d_shared}}},
      {"training",
       {{"steps", training.steps},
        {"batch_size", training.batch_size},
        {"negative_rate", training.negative_rate},
        {"seed", training.seed},
        {"optimizer", optimizer_to_json(training.optimizer)}}},
      {"stop_grad_y", stop_grad_y},
      {"softmax_alpha", softmax_alpha},
      {"paths",
       {{"spec", spec_path},
        {"corpus", corpus_path},
        {"checkpoint", checkpoint_path},
        {"metrics", metrics_path}}}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  if (j.contains("model")) devlbert::from_json(j.at("model"), c.model);
  if (j.contains("masking")) devlbert::from_json(j.at("masking"), c.masking);
  if (j.contains("objectives")) objectives_from_json(j.at("objectives"), c.objectives);
  for (const auto& d : j.value("designs", nlohmann::json::array())) {
    c.designs.push_back({design_from_string(d.at("design").get<std::string>()),
                         scope_from_string(d.at("scope").get<std::string>())});
  }
  if (j.contains("dictionaries")) {
    const auto& jd = j.at("dictionaries");
    c.dictionaries.min_count = jd.value("min_count", c.dictionaries.min_count);
    c.dictionaries.refresh_every = jd.value("refresh_every", c.dictionaries.refresh_every);
    c.dictionaries.d_shared = jd.value("d_shared", c.dictionaries.d_shared);
  }
  if (j.contains("training")) {
    const auto& jt = j.at("training");
    c.training.steps = jt.value("steps", c.training.steps);
    c.training.batch_size = jt.value("batch_size", c.training.batch_size);
    c.training.negative_rate = jt.value("negative_rate", c.training.negative_rate);
    c.training.seed = jt.value("seed", c.training.seed);
    if (jt.contains("optimizer")) c.training.optimizer = optimizer_from_json(jt.at("optimizer"));
  }
  c.stop_grad_y = j.value("stop_grad_y", c.stop_grad_y);
  c.softmax_alpha = j.value("softmax_alpha", c.softmax_alpha);
  if (j.contains("paths")) {
    const auto& jp = j.at("paths");
    c.spec_path = jp.value("spec", c.spec_path);
    c.corpus_path = jp.value("corpus", c.corpus_path);
    c.checkpoint_path = jp.value("checkpoint", c.checkpoint_path);
    c.metrics_path = jp.value("metrics", c.metrics_path);
  }
  c.validate();
  return c;
}

void RunConfig::apply_preset(const std::string& name) {
  designs.clear();
  if (name == "baseline") return;
  auto dash = name.find('-');
  if (dash != 1 || name.size() < 3) {
    throw ValidationError("unknown preset: " + name);
  }
  Design d = design_from_string(name.substr(0, 1));
  std::string scopes = name.substr(2);
  if (scopes != "V" && scopes != "VL" && scopes != "VLC") {
    throw ValidationError("unknown preset: " + name);
  }
  designs.push_back({d, Scope::vision_intra});
  if (scopes == "VL" || scopes == "VLC") designs.push_back({d, Scope::language_intra});
  if (scopes == "VLC") designs.push_back({d, Scope::inter_modal});
  validate();
}

nlohmann::json LossReport::to_json() const {
  nlohmann::json j{{"step", step}, {"mlm", mlm}, {"mom", mom}, {"align", align}};
  for (const auto& [key, value] : interventions) j["intervention_" + key] = value;
  j["total"] = total;
  return j;
}

std::vector<Parameter> TrainState::all_parameters() {
  std::vector<Parameter> params = model.parameters();
  for (auto& p : heads.parameters()) params.push_back(p);
  for (auto& unit : units) {
    for (auto& p : unit.head.parameters("intervene." + unit_key(unit.spec))) {
      params.push_back(p);
    }
  }
  return params;
}

namespace {

ConfounderDictionary dictionary_for_scope(Scope scope, const RunConfig& config,
                                          const std::vector<PairSample>& corpus,
                                          const TwoStreamModel& model) {
  switch (scope) {
    case Scope::vision_intra:
      return build_vision_dictionary(corpus, config.dictionaries.min_count);
    case Scope::language_intra:
      return build_language_dictionary(corpus, model, config.dictionaries.min_count);
    case Scope::inter_modal:
      return build_joint_dictionary(
          build_vision_dictionary(corpus, config.dictionaries.min_count),
          build_language_dictionary(corpus, model, config.dictionaries.min_count),
          config.model.vocab_size);
  }
  throw ValidationError("unknown scope");
}

TrainState::Unit make_unit(const InterventionSpec& spec, const RunConfig& config,
                           ConfounderDictionary dict, Rng& rng) {
  const ModelConfig& m = config.model;
  int d_y = 0, n_targets = 0;
  switch (spec.scope) {
    case Scope::vision_intra:
      d_y = m.d_vis;
      n_targets = m.n_classes;
      break;
    case Scope::language_intra:
      d_y = m.d_lang;
      n_targets = m.vocab_size;
      break;
    case Scope::inter_modal:
      d_y = m.d_lang;  // == d_vis, validated
      n_targets = m.vocab_size + m.n_classes;
      break;
  }
  const int d_x = spec.design == Design::D ? 0 : d_y;
  InterventionHead head = InterventionHead::init(spec.design, d_y, d_x, dict.dim(),
                                                 config.dictionaries.d_shared, n_targets, rng);
  head.softmax_alpha = config.softmax_alpha;
  head.stop_grad_y = config.stop_grad_y;
  return {spec, std::move(dict), std::move(head)};
}

}  // namespace

TrainState init_state(const RunConfig& config, const std::vector<PairSample>& corpus) {
  config.validate();
  Rng root(config.training.seed);
  Rng model_rng = root.substream(kModelStream);
  Rng head_rng = root.substream(kHeadStream);
  TrainState state{TwoStreamModel::init(config.model, model_rng),
                   PretrainHeads::init(config.model, head_rng),
                   {},
                   nullptr};

  Rng unit_rng = root.substream(kUnitStream);
  for (const auto& spec : config.designs) {
    state.units.push_back(
        make_unit(spec, config, dictionary_for_scope(spec.scope, config, corpus, state.model),
                  unit_rng));
  }

  state.optimizer =
      std::make_unique<Optimizer>(state.all_parameters(), config.training.optimizer);
  return state;
}

void refresh_dictionaries(TrainState& state, const RunConfig& config,
                          const std::vector<PairSample>& corpus) {
  for (auto& unit : state.units) {
    unit.dict = dictionary_for_scope(unit.spec.scope, config, corpus, state.model);
  }
}

Batch assemble_batch(const std::vector<PairSample>& corpus, const RunConfig& config, Rng& rng) {
  if (corpus.empty()) throw ValidationError("cannot assemble a batch from an empty corpus");
  Batch batch;
  const int n = static_cast<int>(corpus.size());
  for (int i = 0; i < config.training.batch_size; ++i) {
    const int idx = rng.uniform_int(n);
    BatchItem item;
    item.regions = corpus[static_cast<size_t>(idx)].regions;
    item.aligned = true;
    if (n > 1 && rng.uniform() < config.training.negative_rate) {
      item.aligned = false;
      int other = idx;
      while (other == idx) other = rng.uniform_int(n);
      item.tokens = corpus[static_cast<size_t>(other)].tokens;
    } else {
      item.tokens = corpus[static_cast<size_t>(idx)].tokens;
    }
    batch.items.push_back(std::move(item));
  }
  return batch;
}

namespace {

std::optional<Tensor> mean_of(const std::vector<Tensor>& terms) {
  if (terms.empty()) return std::nullopt;
  Tensor s = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) s = add(s, terms[i]);
  return scale(s, 1.0 / static_cast<double>(terms.size()));
}

std::vector<int> without(const std::vector<int>& positions, const std::set<int>& claimed) {
  std::vector<int> out;
  for (int p : positions) {
    if (claimed.find(p) == claimed.end()) out.push_back(p);
  }
  return out;
}

}  // namespace

LossReport training_step(const Batch& batch, TrainState& state, const RunConfig& config,
                         int step, Rng& rng) {
  std::vector<Tensor> mlm_terms, mom_terms, align_terms;
  std::vector<std::vector<Tensor>> unit_terms(state.units.size());

  const bool need_clean = std::any_of(
      state.units.begin(), state.units.end(), [](const TrainState::Unit& u) {
        return u.spec.design == Design::A || u.spec.design == Design::C;
      });

  for (const BatchItem& item : batch.items) {
    auto [mtok, mreg] =
        apply_masking(item.tokens, item.regions, config.masking, config.model.vocab_size, rng);
    StreamOutput out = state.model.forward(mtok, mreg);

    if (config.objectives.align) {
      align_terms.push_back(alignment_loss(out, item.aligned, state.heads));
    }
    if (!item.aligned && config.objectives.aligned_only_mtm) continue;

    std::optional<StreamOutput> clean;
    if (need_clean) clean = state.model.forward(item.tokens, item.regions);

    // positions whose masked-token loss a design A/B unit takes over
    std::set<int> claimed_lang, claimed_vis;
    for (size_t u = 0; u < state.units.size(); ++u) {
      const auto& unit = state.units[u];
      auto items =
          build_intervention_items(unit.spec.design, unit.spec.scope, out,
                                   clean ? &*clean : nullptr, mtok, mreg, config.model,
                                   config.stop_grad_y);
      if (auto loss = intervention_loss(items, unit.dict, unit.head)) {
        unit_terms[u].push_back(*loss);
      }
      if (design_replaces_mtm(unit.spec.design)) {
        if (unit.spec.scope != Scope::vision_intra) {
          for (int t : masked_token_positions(mtok)) {
            if (mtok.is_noun[static_cast<size_t>(t)]) claimed_lang.insert(t);
          }
        }
        if (unit.spec.scope != Scope::language_intra) {
          for (int r : masked_region_rows(mreg)) claimed_vis.insert(r);
        }
      }
    }

    if (config.objectives.mlm) {
      auto positions = without(masked_token_positions(mtok), claimed_lang);
      if (auto loss =
              mlm_loss(out, mtok, state.model.word_table, state.heads.mlm_bias, &positions)) {
        mlm_terms.push_back(*loss);
      }
    }
    if (config.objectives.mom) {
      auto rows = without(masked_region_rows(mreg), claimed_vis);
      if (auto loss = mom_loss(out, mreg, state.heads.mom_w, state.heads.mom_b, &rows)) {
        mom_terms.push_back(*loss);
      }
    }
  }

  LossReport report;
  report.step = step;
  Tensor total;
  bool any = false;
  auto accumulate = [&](const std::vector<Tensor>& terms, double weight, double& out_value) {
    auto m = mean_of(terms);
    if (!m) return;
    out_value = m->value();
    Tensor weighted = scale(*m, weight);
    total = any ? add(total, weighted) : weighted;
    any = true;
  };
  accumulate(mlm_terms, config.objectives.mlm_weight, report.mlm);
  accumulate(mom_terms, config.objectives.mom_weight, report.mom);
  accumulate(align_terms, config.objectives.align_weight, report.align);
  for (size_t u = 0; u < state.units.size(); ++u) {
    double value = 0;
    accumulate(unit_terms[u], config.objectives.intervention_weight, value);
    report.interventions.emplace_back(unit_key(state.units[u].spec), value);
  }
  if (!any) return report;  // nothing to optimize this step

  report.total = total.value();
  if (!std::isfinite(report.total)) {
    throw NumericError("non-finite total loss at step " + std::to_string(step));
  }
  state.optimizer->zero_grad();
  total.backward();
  state.optimizer->step();
  return report;
}

std::vector<LossReport> run_pretraining(const RunConfig& config,
                                        const std::vector<PairSample>& corpus) {
  TrainState state = init_state(config, corpus);

  std::ofstream metrics;
  if (!config.metrics_path.empty()) {
    metrics.open(config.metrics_path, std::ios::trunc);
    if (!metrics) throw ValidationError("cannot open metrics file: " + config.metrics_path);
  }
  auto save = [&]() {
    if (config.checkpoint_path.empty()) return;
    auto params = state.all_parameters();
    save_checkpoint(config.checkpoint_path, params, config.to_json());
  };

  std::vector<LossReport> reports;
  Rng loop_rng = Rng(config.training.seed).substream(kLoopStream);
  for (int step = 0; step < config.training.steps; ++step) {
    if (config.dictionaries.refresh_every > 0 && step > 0 &&
        step % config.dictionaries.refresh_every == 0) {
      refresh_dictionaries(state, config, corpus);
    }
    Batch batch = assemble_batch(corpus, config, loop_rng);
    LossReport report;
    try {
      report = training_step(batch, state, config, step, loop_rng);
    } catch (const NumericError&) {
      save();  // parameters still hold the last good step
      throw;
    }
    if (metrics.is_open()) {
      metrics << report.to_json().dump() << "\n";
      metrics.flush();
    }
    reports.push_back(std::move(report));
  }
  save();
  return reports;
}

}  // namespace devlbert
