#include "core/oracles.hpp"

#include <algorithm>
#include <cmath>

#include "core/craft.hpp"

namespace mtd::oracles {

using classifiers::Model;
using nlohmann::json;

std::string oracle_kind_name(OracleKind k) {
  switch (k) {
    case OracleKind::kDeepMtd: return "deepmtd";
    case OracleKind::kMorphence: return "morphence";
    case OracleKind::kMtDeep: return "mtdeep";
    case OracleKind::kStratDef: return "stratdef";
    case OracleKind::kVoteMajority: return "vote_majority";
    case OracleKind::kVoteVeto: return "vote_veto";
    case OracleKind::kSingle: return "single";
  }
  return "stratdef";
}

OracleKind oracle_kind_from_name(const std::string& s) {
  for (auto k : {OracleKind::kDeepMtd, OracleKind::kMorphence, OracleKind::kMtDeep, OracleKind::kStratDef,
                 OracleKind::kVoteMajority, OracleKind::kVoteVeto, OracleKind::kSingle}) {
    if (oracle_kind_name(k) == s) return k;
  }
  throw InvalidArgument("unknown oracle kind '" + s + "'");
}

std::string optimizer_name(Optimizer o) {
  switch (o) {
    case Optimizer::kMaximin: return "maximin";
    case Optimizer::kUniform: return "urs";
    case Optimizer::kBestResponse: return "best_response";
  }
  return "maximin";
}

Optimizer optimizer_from_name(const std::string& s) {
  for (auto o : {Optimizer::kMaximin, Optimizer::kUniform, Optimizer::kBestResponse}) {
    if (optimizer_name(o) == s) return o;
  }
  throw InvalidArgument("unknown optimizer '" + s + "'");
}

void OracleConfig::validate() const {
  if (!(game.alpha >= 0.0 && game.alpha <= 1.0)) throw InvalidArgument("alpha must lie in [0,1]");
  if (morphence.query_budget < 1) throw InvalidArgument("query budget must be at least 1");
  if (morphence.students < 1 || morphence.adversarial < 0 || morphence.adversarial > morphence.students) {
    throw InvalidArgument("morphence requires students >= 1 and 0 <= adversarial <= students");
  }
  if (deepmtd.students < 1) throw InvalidArgument("deepmtd requires at least one student");
  if (!(deepmtd.threshold >= 0.0 && deepmtd.threshold <= 1.0)) throw InvalidArgument("threshold must lie in [0,1]");
  if (!(adversarial_fraction > 0.0 && adversarial_fraction <= 1.0)) {
    throw InvalidArgument("adversarial fraction must lie in (0,1]");
  }
  if (game.strategy) StrategyVector{*game.strategy}.validate();
}

json OracleConfig::to_json() const {
  json specs = json::array();
  for (const auto& s : constituents) specs.push_back(s.to_json());
  json g{{"alpha", game.alpha}, {"optimizer", optimizer_name(game.optimizer)}};
  if (game.strategy) g["strategy"] = *game.strategy;
  return {{"kind", oracle_kind_name(kind)},
          {"deepmtd",
           {{"n", deepmtd.students},
            {"w", deepmtd.w},
            {"T", deepmtd.threshold},
            {"idle_regen_ms", deepmtd.idle_regen_ms}}},
          {"morphence",
           {{"n", morphence.students},
            {"p", morphence.adversarial},
            {"Q_max", morphence.query_budget},
            {"finetune_epochs", morphence.finetune_epochs}}},
          {"game", g},
          {"constituents", specs},
          {"adversarial_fraction", adversarial_fraction},
          {"seed", seed}};
}

OracleConfig OracleConfig::from_json(const json& j) {
  OracleConfig c;
  c.kind = oracle_kind_from_name(j.value("kind", oracle_kind_name(c.kind)));
  if (auto it = j.find("deepmtd"); it != j.end()) {
    c.deepmtd.students = it->value("n", c.deepmtd.students);
    c.deepmtd.w = it->value("w", c.deepmtd.w);
    c.deepmtd.threshold = it->value("T", c.deepmtd.threshold);
    c.deepmtd.idle_regen_ms = it->value("idle_regen_ms", c.deepmtd.idle_regen_ms);
  }
  if (auto it = j.find("morphence"); it != j.end()) {
    c.morphence.students = it->value("n", c.morphence.students);
    c.morphence.adversarial = it->value("p", c.morphence.adversarial);
    c.morphence.query_budget = it->value("Q_max", c.morphence.query_budget);
    c.morphence.finetune_epochs = it->value("finetune_epochs", c.morphence.finetune_epochs);
  }
  if (auto it = j.find("game"); it != j.end()) {
    c.game.alpha = it->value("alpha", c.game.alpha);
    c.game.optimizer = optimizer_from_name(it->value("optimizer", optimizer_name(c.game.optimizer)));
    if (auto s = it->find("strategy"); s != it->end() && !s->is_null()) {
      c.game.strategy = s->get<std::vector<double>>();
    }
  }
  if (auto it = j.find("constituents"); it != j.end()) {
    for (const auto& s : *it) c.constituents.push_back(ModelSpec::from_json(s));
  }
  c.adversarial_fraction = j.value("adversarial_fraction", c.adversarial_fraction);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Construction

namespace {

bool is_game(OracleKind k) { return k == OracleKind::kMtDeep || k == OracleKind::kStratDef; }

std::vector<ModelPtr> train_all(const std::vector<ModelSpec>& specs, const Dataset& train, const Dataset& validation) {
  std::vector<ModelPtr> out;
  for (const auto& s : specs) out.push_back(classifiers::train(s, train, validation));
  return out;
}

Dataset concat(const Dataset& a, const Dataset& b) {
  Dataset out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

ModelSpec adversarial_network_spec(std::uint64_t seed) {
  return ModelSpec::neural_network(seed, {128, 64, 32});
}

Dataset adversarial_set(const OracleConfig& c, const Dataset& train, const Dataset& validation,
                        const FeatureCatalog& catalog) {
  auto vanilla = train_all(classifiers::vanilla_specs(derive_seed(c.seed, 100)), train, validation);
  return classifiers::build_adv_training_set(vanilla, train, catalog, c.adversarial_fraction,
                                             derive_seed(c.seed, 101));
}

// Clean column: validation accuracy. Attack column j: each constituent's
// detection rate on adversarial examples crafted against constituent j.
void build_payoff(const std::vector<ModelPtr>& pool, const Dataset& validation, const FeatureCatalog& catalog,
                  std::uint64_t seed, std::vector<std::vector<double>>& attack, std::vector<double>& clean) {
  constexpr std::size_t kMaxSources = 60;
  const auto methods = craft::default_methods();
  clean.clear();
  for (const auto& m : pool) clean.push_back(classifiers::accuracy(*m, validation));

  attack.assign(pool.size(), {});
  for (std::size_t j = 0; j < pool.size(); ++j) {
    std::vector<FeatureVector> adv;
    std::size_t used = 0;
    for (const auto& s : validation) {
      if (s.label != Label::kMalware) continue;
      if (used++ >= kMaxSources) break;
      std::span<const ModelPtr> one(&pool[j], 1);
      for (auto& c : craft::craft_suite(one, s.features, methods, catalog, derive_seed(seed, j * 100000 + s.id))) {
        adv.push_back(std::move(c.vector));
      }
    }
    if (adv.empty()) continue;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      std::size_t detected = 0;
      for (const auto& x : adv) detected += pool[i]->predict(x) == Label::kMalware;
      attack[i].push_back(static_cast<double>(detected) / static_cast<double>(adv.size()));
    }
  }
}

}  // namespace

Oracle Oracle::build(const OracleConfig& config, const Dataset& train, const Dataset& validation,
                     const FeatureCatalog& catalog) {
  config.validate();
  if (train.empty()) throw InvalidArgument("oracle training data is empty");
  Oracle o;
  o.config_ = config;
  o.feature_count_ = train.front().features.size();
  o.rng_ = Rng(config.seed);
  const auto& specs = config.constituents;

  switch (config.kind) {
    case OracleKind::kDeepMtd: {
      auto spec = specs.empty() ? ModelSpec::neural_network(derive_seed(config.seed, 1)) : specs.front();
      if (spec.kind != classifiers::ModelKind::kMlp) throw InvalidArgument("deepmtd base model must be an MLP");
      o.base_ = classifiers::train(spec, train, validation);
      o.regenerate();
      break;
    }
    case OracleKind::kMorphence: {
      auto spec = specs.empty() ? ModelSpec::neural_network(derive_seed(config.seed, 1)) : specs.front();
      if (spec.kind != classifiers::ModelKind::kMlp) throw InvalidArgument("morphence base model must be an MLP");
      o.base_ = classifiers::train(spec, train, validation);
      o.train_ = train;
      o.validation_ = validation;
      if (config.morphence.adversarial > 0) o.adversarial_ = adversarial_set(config, train, validation, catalog);
      o.regenerate();
      break;
    }
    case OracleKind::kMtDeep:
    case OracleKind::kStratDef:
    case OracleKind::kVoteMajority:
    case OracleKind::kVoteVeto: {
      if (!specs.empty()) {
        o.pool_ = train_all(specs, train, validation);
      } else if (config.kind == OracleKind::kMtDeep) {
        const std::vector<std::vector<int>> widths{{100, 50}, {128, 64}, {64, 32}, {100}, {50, 25}};
        for (std::size_t i = 0; i < widths.size(); ++i) {
          o.pool_.push_back(
              classifiers::train(ModelSpec::neural_network(derive_seed(config.seed, 10 + i), widths[i]), train,
                                 validation));
        }
      } else {
        o.pool_ = train_all(classifiers::vanilla_specs(derive_seed(config.seed, 2)), train, validation);
        auto adv = adversarial_set(config, train, validation, catalog);
        o.pool_.push_back(classifiers::train(adversarial_network_spec(derive_seed(config.seed, 3)),
                                             concat(train, adv), validation));
      }
      if (is_game(config.kind)) {
        if (config.game.strategy) {
          StrategyVector s{*config.game.strategy};
          if (s.probs.size() != o.pool_.size()) throw InvalidArgument("strategy length must match the pool size");
          o.strategy_ = s;
        } else {
          build_payoff(o.pool_, validation, catalog, derive_seed(config.seed, 4), o.payoff_, o.clean_payoff_);
          const bool has_attack = !o.payoff_.empty() && !o.payoff_.front().empty();
          o.strategy_ = solve_strategy(has_attack ? o.payoff_ : std::vector<std::vector<double>>{}, config.game.alpha,
                                       config.game.optimizer, o.clean_payoff_)
                            .strategy;
        }
      }
      break;
    }
    case OracleKind::kSingle: {
      auto spec = specs.empty() ? adversarial_network_spec(derive_seed(config.seed, 3)) : specs.front();
      auto adv = adversarial_set(config, train, validation, catalog);
      o.pool_.push_back(classifiers::train(spec, concat(train, adv), validation));
      break;
    }
  }
  return o;
}

Oracle Oracle::assemble(const OracleConfig& config, std::vector<ModelPtr> pool,
                        std::optional<StrategyVector> strategy) {
  if (pool.empty()) throw InvalidArgument("oracle pool is empty");
  Oracle o;
  o.config_ = config;
  o.feature_count_ = pool.front()->feature_count();
  o.pool_ = std::move(pool);
  o.rng_ = Rng(config.seed);
  if (is_game(config.kind)) {
    if (!strategy && config.game.strategy) strategy = StrategyVector{*config.game.strategy};
    if (!strategy) strategy = StrategyVector{std::vector<double>(o.pool_.size(), 1.0 / static_cast<double>(o.pool_.size()))};
    strategy->validate();
    if (strategy->probs.size() != o.pool_.size()) throw InvalidArgument("strategy length must match the pool size");
    o.strategy_ = std::move(strategy);
  }
  return o;
}

void Oracle::regenerate() {
  const std::uint64_t gen_seed = rng_();
  ++generation_;
  since_regen_ = 0;
  pool_.clear();
  if (config_.kind == OracleKind::kDeepMtd) {
    for (int j = 0; j < config_.deepmtd.students; ++j) {
      pool_.push_back(classifiers::perturb_weights(*base_, config_.deepmtd.w, derive_seed(gen_seed, j)));
    }
  } else if (config_.kind == OracleKind::kMorphence) {
    classifiers::MlpParams tune;
    tune.max_epochs = config_.morphence.finetune_epochs;
    tune.patience = 3;
    const Dataset boosted = adversarial_.empty() ? train_ : concat(train_, adversarial_);
    for (int j = 0; j < config_.morphence.students; ++j) {
      auto student = classifiers::shuffle_weights(*base_, derive_seed(gen_seed, 2 * j));
      const bool adv = j < config_.morphence.adversarial && !adversarial_.empty();
      pool_.push_back(classifiers::fine_tune(*student, tune, adv ? boosted : train_, validation_,
                                             derive_seed(gen_seed, 2 * j + 1)));
    }
  }
}

// ---------------------------------------------------------------------------
// Prediction

Label Oracle::vote(const FeatureVector& x, bool veto) const {
  std::size_t malware = 0;
  for (const auto& m : pool_) malware += m->predict(x) == Label::kMalware;
  if (veto) return malware > 0 ? Label::kMalware : Label::kBenign;
  return 2 * malware >= pool_.size() ? Label::kMalware : Label::kBenign;
}

Label Oracle::query(const FeatureVector& x) {
  if (x.size() != feature_count_) {
    throw InvalidArgument("query width " + std::to_string(x.size()) + " does not match oracle width " +
                          std::to_string(feature_count_));
  }
  ++query_count_;
  flagged_ = false;
  switch (config_.kind) {
    case OracleKind::kDeepMtd: {
      std::size_t malware = 0;
      for (const auto& m : pool_) malware += m->predict(x) == Label::kMalware;
      const std::size_t benign = pool_.size() - malware;
      const Label majority = malware >= benign ? Label::kMalware : Label::kBenign;
      const auto agree = static_cast<double>(std::max(malware, benign));
      if (agree > config_.deepmtd.threshold * static_cast<double>(pool_.size()) + 1e-9) return majority;
      flagged_ = true;
      return Label::kMalware;
    }
    case OracleKind::kMorphence: {
      if (base_ && since_regen_ >= config_.morphence.query_budget) regenerate();
      ++since_regen_;
      // Most confident student; strict comparison keeps the lowest index on ties.
      classifiers::Proba best = pool_[0]->predict_proba(x);
      for (std::size_t i = 1; i < pool_.size(); ++i) {
        auto p = pool_[i]->predict_proba(x);
        if (p.max() > best.max()) best = p;
      }
      return best.label();
    }
    case OracleKind::kMtDeep:
    case OracleKind::kStratDef: {
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      const double u = unit(rng_);
      const auto& p = strategy_->probs;
      double acc = 0.0;
      std::size_t pick = p.size() - 1;
      for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) {
          pick = i;
          break;
        }
      }
      while (p[pick] == 0.0 && pick > 0) --pick;
      return pool_[pick]->predict(x);
    }
    case OracleKind::kVoteMajority: return vote(x, false);
    case OracleKind::kVoteVeto: return vote(x, true);
    case OracleKind::kSingle: return pool_.front()->predict(x);
  }
  return Label::kMalware;
}

double Oracle::confidence(const FeatureVector& x) const {
  if (strategy_) {
    double c = 0.0;
    for (std::size_t i = 0; i < pool_.size(); ++i) c += strategy_->probs[i] * pool_[i]->predict_proba(x).malware;
    return c;
  }
  double c = 0.0;
  for (const auto& m : pool_) c += m->predict_proba(x).malware;
  return c / static_cast<double>(pool_.size());
}

void Oracle::tick_idle(std::int64_t elapsed_ms) {
  if (config_.kind != OracleKind::kDeepMtd || !base_) return;
  if (elapsed_ms >= config_.deepmtd.idle_regen_ms) regenerate();
}

// ---------------------------------------------------------------------------
// Snapshots

namespace {

json dataset_json(const Dataset& d) {
  json arr = json::array();
  for (const auto& s : d) arr.push_back(featurespace::sample_to_json(s));
  return arr;
}

Dataset dataset_from(const json& j, std::size_t m) {
  Dataset d;
  for (const auto& e : j) d.push_back(featurespace::sample_from_json(e, m));
  return d;
}

}  // namespace

json Oracle::snapshot() const {
  json pool = json::array();
  for (const auto& m : pool_) pool.push_back(m->to_json());
  json j{{"format", "mtdsim-oracle"},
         {"version", 1},
         {"config", config_.to_json()},
         {"features", feature_count_},
         {"pool", pool},
         {"base", base_ ? base_->to_json() : json(nullptr)},
         {"strategy", strategy_ ? json(strategy_->probs) : json(nullptr)},
         {"payoff", payoff_},
         {"clean_payoff", clean_payoff_},
         {"query_count", query_count_},
         {"since_regen", since_regen_},
         {"generation", generation_},
         {"rng", rng_state(rng_)},
         {"train", dataset_json(train_)},
         {"validation", dataset_json(validation_)},
         {"adversarial", dataset_json(adversarial_)}};
  return j;
}

Oracle Oracle::restore(const json& j) {
  if (j.value("format", std::string{}) != "mtdsim-oracle") throw ParseError("not an oracle snapshot", 0, 0);
  if (j.value("version", 0) != 1) throw ParseError("unsupported oracle snapshot version", 0, 0);
  Oracle o;
  o.config_ = OracleConfig::from_json(j.at("config"));
  o.feature_count_ = j.at("features").get<std::size_t>();
  for (const auto& m : j.at("pool")) o.pool_.push_back(std::make_shared<const Model>(Model::from_json(m)));
  if (!j.at("base").is_null()) o.base_ = std::make_shared<const Model>(Model::from_json(j.at("base")));
  if (!j.at("strategy").is_null()) o.strategy_ = StrategyVector{j.at("strategy").get<std::vector<double>>()};
  o.payoff_ = j.at("payoff").get<std::vector<std::vector<double>>>();
  o.clean_payoff_ = j.at("clean_payoff").get<std::vector<double>>();
  o.query_count_ = j.at("query_count").get<std::uint64_t>();
  o.since_regen_ = j.at("since_regen").get<std::uint64_t>();
  o.generation_ = j.at("generation").get<std::uint64_t>();
  o.rng_ = rng_from_state(j.at("rng").get<std::string>());
  o.train_ = dataset_from(j.at("train"), o.feature_count_);
  o.validation_ = dataset_from(j.at("validation"), o.feature_count_);
  o.adversarial_ = dataset_from(j.at("adversarial"), o.feature_count_);
  if (o.pool_.empty()) throw ParseError("oracle snapshot has an empty pool", 0, 0);
  return o;
}

}  // namespace mtd::oracles
