#include "core/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

namespace mtd::strategies {

using nlohmann::json;

std::string threat_name(ThreatModel t) { return t == ThreatModel::kBlackBox ? "blackbox" : "graybox"; }

ThreatModel threat_from_name(const std::string& s) {
  if (s == "blackbox") return ThreatModel::kBlackBox;
  if (s == "graybox") return ThreatModel::kGrayBox;
  throw InvalidArgument("unknown threat model '" + s + "'");
}

std::vector<ModelSpec> default_substitute_specs(std::uint64_t seed) { return classifiers::vanilla_specs(seed); }

namespace {

void require_both_classes(const Dataset& d) {
  bool benign = false, malware = false;
  for (const auto& s : d) (s.label == Label::kMalware ? malware : benign) = true;
  if (!benign || !malware) throw DegenerateDataset("degenerate synthetic dataset: all oracle answers identical");
}

}  // namespace

SubstituteEnsemble build_substitutes_blackbox(QueryTarget& oracle, const Dataset& b_train, std::size_t delta_budget,
                                              std::span<const ModelSpec> specs) {
  if (specs.empty()) throw InvalidArgument("substitute ensemble needs at least one spec");
  if (b_train.empty() || delta_budget == 0) throw InvalidArgument("black-box substitutes need B_train and a budget");
  const std::size_t n = std::min(b_train.size(), delta_budget);
  Dataset relations;
  relations.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s = b_train[i];
    s.label = oracle.query(s.features);
    relations.push_back(std::move(s));
  }
  require_both_classes(relations);
  SubstituteEnsemble e;
  e.provenance = ThreatModel::kBlackBox;
  e.data_fingerprint = featurespace::fingerprint(relations);
  e.relations = relations.size();
  for (const auto& spec : specs) e.members.push_back(classifiers::train(spec, relations, relations));
  return e;
}

SubstituteEnsemble build_substitutes_graybox(const Dataset& train, std::span<const ModelSpec> specs) {
  if (specs.empty()) throw InvalidArgument("substitute ensemble needs at least one spec");
  require_both_classes(train);
  SubstituteEnsemble e;
  e.provenance = ThreatModel::kGrayBox;
  e.data_fingerprint = featurespace::fingerprint(train);
  e.relations = train.size();
  for (const auto& spec : specs) e.members.push_back(classifiers::train(spec, train, train));
  return e;
}

// ---------------------------------------------------------------------------
// Outcomes

json AttackOutcome::to_json() const {
  json j{{"id", original.id},
         {"label", to_int(original.label)},
         {"success", success},
         {"queries", queries_used},
         {"evaded_substitutes", evaded_substitutes},
         {"substitute_evaders", substitute_evaders},
         {"flips", trace.to_json()},
         {"original", original.features.set_indices()}};
  j["adversarial"] = adversarial ? json(adversarial->set_indices()) : json(nullptr);
  return j;
}

AttackOutcome AttackOutcome::from_json(const json& j, std::size_t m) {
  AttackOutcome o;
  o.original.id = j.at("id").get<std::uint32_t>();
  o.original.label = label_from_int(j.at("label").get<int>());
  o.original.features = FeatureVector::from_indices(m, j.at("original").get<std::vector<std::uint32_t>>());
  o.success = j.at("success").get<bool>();
  o.queries_used = j.at("queries").get<std::uint64_t>();
  o.evaded_substitutes = j.at("evaded_substitutes").get<int>();
  o.substitute_evaders = j.at("substitute_evaders").get<std::uint64_t>();
  o.trace = PerturbationTrace::from_json(j.at("flips"));
  if (!j.at("adversarial").is_null()) {
    o.adversarial = FeatureVector::from_indices(m, j.at("adversarial").get<std::vector<std::uint32_t>>());
  }
  return o;
}

// ---------------------------------------------------------------------------
// Transferability attack

void TransferConfig::validate() const {
  if (!(theta_t >= 0.0 && theta_t <= 1.0)) throw InvalidArgument("theta_t must lie in [0,1]");
  if (methods.empty()) throw InvalidArgument("transfer attack needs at least one craft method");
}

std::size_t required_evasions(double theta_t, std::size_t members) {
  return static_cast<std::size_t>(std::ceil(theta_t * static_cast<double>(members) - 1e-9));
}

std::vector<AttackOutcome> transfer_attack(const SubstituteEnsemble& ensemble, QueryTarget& oracle,
                                           const Dataset& malware, const TransferConfig& config,
                                           const FeatureCatalog& catalog, std::uint64_t seed) {
  config.validate();
  if (ensemble.members.empty()) throw InvalidArgument("substitute ensemble is empty");
  const std::size_t need = required_evasions(config.theta_t, ensemble.members.size());

  std::vector<AttackOutcome> out;
  for (const auto& x : malware) {
    if (x.label != Label::kMalware) throw InvalidArgument("transfer attack inputs must be malware");
    AttackOutcome o;
    o.original = x;

    struct Scored {
      craft::Candidate cand;
      int evaded;
    };
    std::vector<Scored> survivors;
    for (auto& c : craft::craft_suite(ensemble.members, x.features, config.methods, catalog, derive_seed(seed, x.id))) {
      int evaded = 0;
      for (const auto& m : ensemble.members) evaded += m->predict(c.vector) == Label::kBenign;
      o.evaded_substitutes = std::max(o.evaded_substitutes, evaded);
      if (static_cast<std::size_t>(evaded) >= need) survivors.push_back({std::move(c), evaded});
    }
    std::stable_sort(survivors.begin(), survivors.end(), [](const Scored& a, const Scored& b) {
      const auto fa = a.cand.trace.applied(), fb = b.cand.trace.applied();
      if (fa != fb) return fa < fb;
      if (a.cand.method != b.cand.method) return a.cand.method < b.cand.method;
      return a.cand.source_model < b.cand.source_model;
    });

    for (const auto& s : survivors) {
      ++o.queries_used;
      o.adversarial = s.cand.vector;
      o.trace = s.cand.trace;
      o.evaded_substitutes = s.evaded;
      if (oracle.query(s.cand.vector) == Label::kBenign) {
        o.success = true;
        break;
      }
    }
    o.substitute_evaders = o.queries_used;
    out.push_back(std::move(o));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Query attacks

QueryAttackConfig QueryAttackConfig::black_box(std::uint64_t n_max, std::uint64_t seed) {
  QueryAttackConfig c;
  c.mode = ThreatModel::kBlackBox;
  c.donor_policy = DonorPolicy::kRandomBenign;
  c.n_max = n_max;
  c.seed = seed;
  return c;
}

QueryAttackConfig QueryAttackConfig::gray_box(std::uint64_t n_max, std::uint64_t seed) {
  QueryAttackConfig c;
  c.mode = ThreatModel::kGrayBox;
  c.donor_policy = DonorPolicy::kFrequencyOrdered;
  c.n_max = n_max;
  c.seed = seed;
  return c;
}

void QueryAttackConfig::validate() const {
  if (n_max == 0) throw InvalidArgument("n_max must be a positive integer");
  if (mode == ThreatModel::kBlackBox && donor_policy != DonorPolicy::kRandomBenign) {
    throw InvalidArgument("black-box query attacks draw random benign donors");
  }
  if (mode == ThreatModel::kGrayBox && donor_policy != DonorPolicy::kFrequencyOrdered) {
    throw InvalidArgument("gray-box query attacks follow benign feature frequency");
  }
}

namespace {

struct Step {
  std::uint32_t index;
  Direction direction;
};

// Applies one flip, queries, and reports whether the oracle was evaded.
bool apply_and_query(QueryTarget& oracle, FeatureVector& current, const Step& step, AttackOutcome& o) {
  current.set(step.index, step.direction == Direction::kAdd);
  o.trace.flips.push_back({step.index, step.direction, false});
  ++o.queries_used;
  return oracle.query(current) == Label::kBenign;
}

}  // namespace

AttackOutcome query_attack(QueryTarget& oracle, const Sample& x, const QueryAttackConfig& config,
                           const FeatureCatalog& catalog, const AttackerKnowledge& knowledge) {
  config.validate();
  if (x.features.size() != catalog.size()) throw InvalidArgument("sample width does not match catalog");
  AttackOutcome o;
  o.original = x;
  o.substitute_evaders = 1;
  FeatureVector current = x.features;
  const std::size_t m = current.size();

  auto finish = [&](bool success) {
    o.success = success;
    if (!o.trace.flips.empty()) o.adversarial = current;
    return o;
  };

  if (config.mode == ThreatModel::kGrayBox) {
    if (!knowledge.frequencies) throw InvalidArgument("gray-box query attack needs benign frequencies");
    const auto& freq = knowledge.frequencies->freq;
    if (freq.size() != m) throw InvalidArgument("frequency vector width mismatch");
    struct Planned {
      Step step;
      double priority;
    };
    std::vector<Planned> plan;
    for (auto i : knowledge.frequencies->ordered()) {
      if (!current[i] && catalog.allows(i, Direction::kAdd)) plan.push_back({{i, Direction::kAdd}, freq[i]});
      if (config.rare_removal && current[i] && freq[i] < config.removal_threshold &&
          catalog.allows(i, Direction::kRemove)) {
        plan.push_back({{i, Direction::kRemove}, 1.0 - freq[i]});
      }
    }
    std::stable_sort(plan.begin(), plan.end(), [](const Planned& a, const Planned& b) { return a.priority > b.priority; });
    for (const auto& p : plan) {
      if (o.queries_used >= config.n_max) break;
      if (apply_and_query(oracle, current, p.step, o)) return finish(true);
    }
    return finish(false);
  }

  if (knowledge.donors.empty()) throw InvalidArgument("black-box query attack needs benign donors");
  Rng rng(derive_seed(config.seed, x.id));
  std::vector<std::size_t> order(knowledge.donors.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<bool> touched(m, false);
  std::vector<Step> options;
  for (std::size_t cycle = 0; cycle < std::max<std::size_t>(1, config.donor_cycles); ++cycle) {
    std::shuffle(order.begin(), order.end(), rng);
    for (auto d : order) {
      const auto& donor = knowledge.donors[d].features;
      while (true) {
        if (o.queries_used >= config.n_max) return finish(false);
        options.clear();
        for (std::uint32_t i = 0; i < m; ++i) {
          if (touched[i]) continue;
          if (donor[i] && !current[i] && catalog.allows(i, Direction::kAdd)) options.push_back({i, Direction::kAdd});
          if (!donor[i] && current[i] && catalog.allows(i, Direction::kRemove)) {
            options.push_back({i, Direction::kRemove});
          }
        }
        if (options.empty()) break;
        std::uniform_int_distribution<std::size_t> pick(0, options.size() - 1);
        const Step step = options[pick(rng)];
        touched[step.index] = true;
        if (apply_and_query(oracle, current, step, o)) return finish(true);
      }
    }
  }
  return finish(false);
}

// ---------------------------------------------------------------------------
// Universal adversarial perturbations

json Uap::to_json() const {
  json arr = json::array();
  for (const auto& [i, d] : flips) arr.push_back({{"index", i}, {"dir", featurespace::direction_name(d)}});
  return {{"flips", arr}, {"support", support}};
}

std::vector<Uap> extract_uaps(std::span<const AttackOutcome> outcomes) {
  std::map<std::vector<std::pair<std::uint32_t, Direction>>, std::set<std::uint32_t>> groups;
  for (const auto& o : outcomes) {
    if (!o.success) continue;
    std::vector<std::pair<std::uint32_t, Direction>> flips;
    for (const auto& f : o.trace.flips) {
      if (!f.reverted) flips.emplace_back(f.index, f.direction);
    }
    if (flips.empty()) continue;
    std::sort(flips.begin(), flips.end());
    groups[flips].insert(o.original.id);
  }
  std::vector<Uap> out;
  for (auto& [flips, ids] : groups) out.push_back({flips, ids.size()});
  std::stable_sort(out.begin(), out.end(), [](const Uap& a, const Uap& b) {
    if (a.support != b.support) return a.support > b.support;
    return a.flips.size() < b.flips.size();
  });
  return out;
}

UapReplayStats replay_uaps(QueryTarget& oracle, std::span<const Sample> malware, std::span<const Uap> uaps,
                           const FeatureCatalog& catalog) {
  UapReplayStats stats;
  stats.samples = malware.size();
  for (const auto& x : malware) {
    AttackOutcome o;
    o.original = x;
    o.substitute_evaders = 1;
    for (const auto& uap : uaps) {
      FeatureVector candidate = x.features;
      for (const auto& [i, d] : uap.flips) {
        if (i >= candidate.size()) continue;
        if (d == Direction::kAdd && !candidate[i]) candidate.set(i, true);
        if (d == Direction::kRemove && candidate[i]) candidate.set(i, false);
      }
      auto enforced = craft::enforce_functionality(x.features, candidate, catalog);
      ++o.queries_used;
      o.adversarial = enforced.vector;
      o.trace = enforced.trace;
      if (oracle.query(enforced.vector) == Label::kBenign) {
        o.success = true;
        break;
      }
    }
    stats.queries += o.queries_used;
    stats.evaded += o.success;
    stats.outcomes.push_back(std::move(o));
  }
  stats.evasion_rate =
      stats.samples == 0 ? 0.0 : static_cast<double>(stats.evaded) / static_cast<double>(stats.samples);
  return stats;
}

}  // namespace mtd::strategies
