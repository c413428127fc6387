#include "core/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>
#include <thread>

namespace mtd::experiment {

using nlohmann::json;
using featurespace::Dataset;
using oracles::Oracle;

json Workspace::to_json() const {
  return {{"format", "mtdsim-workspace"},
          {"version", 1},
          {"catalog", catalog.to_json()},
          {"splits", splits.to_json()},
          {"oracle", oracle}};
}

Workspace Workspace::from_json(const json& j) {
  if (j.value("format", std::string{}) != "mtdsim-workspace") throw ParseError("not a workspace file", 0, 0);
  if (j.value("version", 0) != 1) throw ParseError("unsupported workspace version", 0, 0);
  Workspace w;
  w.catalog = FeatureCatalog::from_json(j.at("catalog"));
  w.splits = DatasetSplits::from_json(j.at("splits"), w.catalog.size());
  w.oracle = j.at("oracle");
  return w;
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void Workspace::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  const json j = to_json();
  if (ends_with(path, ".bin")) {
    const auto bytes = json::to_cbor(j);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  } else {
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write to '" + path + "' failed");
}

Workspace Workspace::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto first = bytes.find_first_not_of(" \t\r\n");
  try {
    if (first != std::string::npos && bytes[first] == '{') return from_json(json::parse(bytes));
    return from_json(json::from_cbor(bytes));
  } catch (const json::exception& e) {
    throw ParseError(std::string("workspace '") + path + "': " + e.what(), 0, 0);
  }
}

Workspace build_workspace(const Dataset& samples, const FeatureCatalog& catalog, const OracleConfig& config,
                          std::uint64_t split_seed) {
  Workspace w;
  w.catalog = catalog;
  w.splits = featurespace::split_dataset(samples, split_seed);
  w.oracle = Oracle::build(config, w.splits.train, w.splits.validation, catalog).snapshot();
  return w;
}

std::string attack_type_name(AttackType t) {
  switch (t) {
    case AttackType::kTransfer: return "transfer";
    case AttackType::kQuery: return "query";
    case AttackType::kUap: return "uap";
  }
  return "?";
}

AttackType attack_type_from_name(const std::string& s) {
  if (s == "transfer") return AttackType::kTransfer;
  if (s == "query") return AttackType::kQuery;
  if (s == "uap") return AttackType::kUap;
  throw InvalidArgument("unknown attack type '" + s + "'");
}

json AttackSpec::to_json() const {
  json methods_j = json::array(), subs = json::array();
  for (const auto& m : methods) methods_j.push_back(m.to_json());
  for (const auto& s : substitutes) subs.push_back(s.to_json());
  return {{"type", attack_type_name(type)},
          {"threat", strategies::threat_name(threat)},
          {"samples", samples},
          {"methods", methods_j},
          {"substitutes", subs},
          {"rer_attempts", rer_attempts},
          {"traffic_total", traffic_total}};
}

AttackSpec AttackSpec::from_json(const json& j) {
  AttackSpec a;
  if (j.contains("type")) a.type = attack_type_from_name(j.at("type").get<std::string>());
  if (j.contains("threat")) a.threat = strategies::threat_from_name(j.at("threat").get<std::string>());
  a.samples = j.value("samples", a.samples);
  if (j.contains("methods")) {
    a.methods.clear();
    for (const auto& m : j.at("methods")) {
      a.methods.push_back(m.is_string() ? craft::CraftMethod::defaults(craft::method_from_name(m.get<std::string>()))
                                        : craft::CraftMethod::from_json(m));
    }
  }
  if (j.contains("substitutes")) {
    for (const auto& s : j.at("substitutes")) a.substitutes.push_back(classifiers::ModelSpec::from_json(s));
  }
  a.rer_attempts = j.value("rer_attempts", a.rer_attempts);
  a.traffic_total = j.value("traffic_total", a.traffic_total);
  return a;
}

json CellParams::to_json() const {
  json j{{"n_max", n_max}, {"theta_t", theta_t}, {"train_fraction", train_fraction}};
  j["delta_budget"] = delta_budget == std::numeric_limits<std::size_t>::max() ? json(nullptr) : json(delta_budget);
  j["q"] = q ? json(*q) : json(nullptr);
  return j;
}

std::string CellParams::label() const {
  std::ostringstream s;
  s << "delta_budget=";
  if (delta_budget == std::numeric_limits<std::size_t>::max()) s << "all";
  else s << delta_budget;
  s << ";n_max=" << n_max << ";theta_t=" << theta_t << ";train_fraction=" << train_fraction;
  if (q) s << ";q=" << *q;
  return s.str();
}

// ---------------------------------------------------------------------------
// Campaigns

namespace {

Dataset head(const Dataset& d, std::size_t n) { return Dataset(d.begin(), d.begin() + std::min(n, d.size())); }

Dataset fraction_of(const Dataset& d, double f) {
  const auto n = static_cast<std::size_t>(std::llround(f * static_cast<double>(d.size())));
  return head(d, std::max<std::size_t>(n, 1));
}

Dataset targets(const Dataset& from, std::size_t limit) {
  auto m = featurespace::filter_label(from, Label::kMalware);
  return limit == 0 ? m : head(m, limit);
}

strategies::AttackerKnowledge knowledge_for(const Workspace& ws, ThreatModel threat) {
  strategies::AttackerKnowledge k;
  if (threat == ThreatModel::kBlackBox) {
    k.donors = featurespace::filter_label(ws.splits.attack_train, Label::kBenign);
  } else {
    k.frequencies = featurespace::benign_frequencies(ws.splits.train);
  }
  return k;
}

strategies::QueryAttackConfig query_config(ThreatModel threat, std::uint64_t n_max, std::uint64_t seed) {
  return threat == ThreatModel::kBlackBox ? strategies::QueryAttackConfig::black_box(n_max, seed)
                                          : strategies::QueryAttackConfig::gray_box(n_max, seed);
}

}  // namespace

CampaignResult run_campaign(const Workspace& ws, QueryTarget& oracle, const AttackSpec& attack,
                            const CellParams& cell, std::uint64_t seed) {
  CampaignResult r;
  const Dataset malware = targets(ws.splits.attack_final, attack.samples);
  switch (attack.type) {
    case AttackType::kTransfer: {
      const auto specs =
          attack.substitutes.empty() ? strategies::default_substitute_specs(derive_seed(seed, 1)) : attack.substitutes;
      strategies::SubstituteEnsemble ensemble;
      try {
        if (attack.threat == ThreatModel::kBlackBox) {
          const auto before = oracle.query_count();
          ensemble = strategies::build_substitutes_blackbox(
              oracle, fraction_of(ws.splits.attack_train, cell.train_fraction), cell.delta_budget, specs);
          r.substitute_queries = oracle.query_count() - before;
        } else {
          ensemble = strategies::build_substitutes_graybox(fraction_of(ws.splits.train, cell.train_fraction), specs);
        }
      } catch (const oracles::BudgetExceeded& e) {
        r.note = e.what();
        return r;
      } catch (const strategies::DegenerateDataset& e) {
        r.note = e.what();
        return r;
      }
      strategies::TransferConfig tc;
      tc.theta_t = cell.theta_t;
      tc.methods = attack.methods;
      tc.delta_budget = cell.delta_budget;
      try {
        r.outcomes = strategies::transfer_attack(ensemble, oracle, malware, tc, ws.catalog, derive_seed(seed, 2));
      } catch (const oracles::BudgetExceeded& e) {
        r.note = e.what();
      }
      break;
    }
    case AttackType::kQuery: {
      const auto know = knowledge_for(ws, attack.threat);
      const auto qc = query_config(attack.threat, cell.n_max, derive_seed(seed, 3));
      try {
        for (const auto& x : malware) r.outcomes.push_back(strategies::query_attack(oracle, x, qc, ws.catalog, know));
      } catch (const oracles::BudgetExceeded& e) {
        r.note = e.what();
      }
      break;
    }
    case AttackType::kUap: {
      const auto know = knowledge_for(ws, attack.threat);
      const auto qc = query_config(attack.threat, cell.n_max, derive_seed(seed, 4));
      std::vector<AttackOutcome> harvest;
      try {
        for (const auto& x : targets(ws.splits.attack_validation, attack.samples)) {
          harvest.push_back(strategies::query_attack(oracle, x, qc, ws.catalog, know));
        }
        r.uaps = strategies::extract_uaps(harvest);
        auto stats = strategies::replay_uaps(oracle, malware, r.uaps, ws.catalog);
        r.outcomes = std::move(stats.outcomes);
      } catch (const oracles::BudgetExceeded& e) {
        r.note = e.what();
        break;
      }
      if (r.uaps.empty()) r.note = "no universal perturbations harvested";
      break;
    }
  }
  return r;
}

MetricsReport summarize(const Workspace& ws, const CampaignResult& result, const AttackSpec& attack,
                        const CellParams& cell, std::uint64_t seed) {
  MetricsReport rep;
  rep.seed = seed;
  rep.note = result.note;
  rep.evasion_rate = bench::evasion_rate(result.outcomes);
  std::vector<featurespace::FeatureVector> evaders;
  double rer_sum = 0.0, query_sum = 0.0;
  for (const auto& o : result.outcomes) {
    rep.counts.substitute_evaders += o.substitute_evaders;
    if (!(o.success && o.adversarial)) continue;
    ++rep.counts.oracle_evaders;
    evaders.push_back(*o.adversarial);
    rer_sum += bench::repeat_evasion_rate(ws.oracle, *o.adversarial, attack.rer_attempts);
    query_sum += static_cast<double>(o.queries_used);
  }
  if (!evaders.empty()) {
    rep.rer_mean = rer_sum / static_cast<double>(evaders.size());
    rep.mean_queries = query_sum / static_cast<double>(evaders.size());
  }

  auto fresh = Oracle::restore(ws.oracle);
  MetricsReport m;
  if (cell.q && !evaders.empty()) {
    bench::TrafficPools pools;
    pools.adversarial = evaders;
    pools.benign = featurespace::filter_label(ws.splits.attack_final, Label::kBenign);
    pools.malware = featurespace::filter_label(ws.splits.attack_final, Label::kMalware);
    m = bench::mixed_traffic(fresh, *cell.q, pools, attack.traffic_total, derive_seed(seed, 5),
                             [&](const featurespace::FeatureVector& x) { return fresh.confidence(x); });
  } else {
    m = bench::classification_metrics(fresh, ws.splits.attack_final);
    if (cell.q) m.note = "no adversarial examples for mixed traffic; clean metrics reported";
  }
  rep.accuracy = m.accuracy;
  rep.f1 = m.f1;
  rep.auc = m.auc;
  rep.fpr = m.fpr;
  rep.counts.tp = m.counts.tp;
  rep.counts.fp = m.counts.fp;
  rep.counts.tn = m.counts.tn;
  rep.counts.fn = m.counts.fn;
  if (!m.note.empty()) rep.note = rep.note.empty() ? m.note : rep.note + "; " + m.note;
  rep.config = {{"cell", cell.to_json()}, {"attack", attack.to_json()}, {"substitute_queries", result.substitute_queries}};
  if (!m.config.empty()) rep.config["traffic"] = m.config;
  return rep;
}

// ---------------------------------------------------------------------------
// Sweeps

void ExperimentSpec::validate() const {
  if (workspace.empty() && !synth && csv.empty()) throw InvalidArgument("experiment needs synth data, a CSV, or a workspace");
  if (!csv.empty() && catalog.empty()) throw InvalidArgument("CSV data needs a catalog");
  if (repetitions < 1) throw InvalidArgument("repetitions must be positive");
  if (!seeds.empty() && seeds.size() != static_cast<std::size_t>(repetitions)) {
    throw InvalidArgument("seeds must list one seed per repetition");
  }
  for (auto n : axes.n_max) {
    if (n == 0) throw InvalidArgument("n_max must be positive");
  }
  for (auto t : axes.theta_t) {
    if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("theta_t must lie in [0,1]");
  }
  for (auto f : axes.train_fraction) {
    if (!(f > 0.0 && f <= 1.0)) throw InvalidArgument("train_fraction must lie in (0,1]");
  }
  for (auto q : axes.q) bench::traffic_composition(q, 1000);
  for (auto d : axes.delta_budget) {
    if (d == 0) throw InvalidArgument("delta_budget must be positive");
  }
  oracle.validate();
}

std::vector<CellParams> ExperimentSpec::grid() const {
  std::vector<CellParams> cells{defaults};
  auto expand = [&](const auto& values, auto setter) {
    if (values.empty()) return;
    std::vector<CellParams> next;
    for (const auto& c : cells) {
      for (const auto& v : values) {
        CellParams n = c;
        setter(n, v);
        next.push_back(n);
      }
    }
    cells = std::move(next);
  };
  expand(axes.delta_budget, [](CellParams& c, std::size_t v) { c.delta_budget = v; });
  expand(axes.n_max, [](CellParams& c, std::uint64_t v) { c.n_max = v; });
  expand(axes.theta_t, [](CellParams& c, double v) { c.theta_t = v; });
  expand(axes.train_fraction, [](CellParams& c, double v) { c.train_fraction = v; });
  expand(axes.q, [](CellParams& c, double v) { c.q = v; });
  return cells;
}

std::uint64_t ExperimentSpec::repetition_seed(int r) const {
  return seeds.empty() ? derive_seed(seed, static_cast<std::uint64_t>(r)) : seeds.at(static_cast<std::size_t>(r));
}

json ExperimentSpec::to_json() const {
  json data = json::object();
  if (synth) data["synth"] = synth->to_json();
  if (!csv.empty()) data["csv"] = csv;
  if (!catalog.empty()) data["catalog"] = catalog;
  json ax{{"delta_budget", axes.delta_budget},
          {"n_max", axes.n_max},
          {"theta_t", axes.theta_t},
          {"train_fraction", axes.train_fraction},
          {"q", axes.q}};
  json j{{"data", data},
         {"split_seed", split_seed},
         {"oracle", oracle.to_json()},
         {"attack", attack.to_json()},
         {"defaults", defaults.to_json()},
         {"axes", ax},
         {"repetitions", repetitions},
         {"seeds", seeds},
         {"seed", seed}};
  if (!workspace.empty()) j["workspace"] = workspace;
  return j;
}

ExperimentSpec ExperimentSpec::from_json(const json& j) {
  ExperimentSpec s;
  try {
    if (j.contains("data")) {
      const auto& d = j.at("data");
      if (d.contains("synth")) s.synth = featurespace::SynthSpec::from_json(d.at("synth"));
      s.csv = d.value("csv", std::string{});
      s.catalog = d.value("catalog", std::string{});
    }
    s.workspace = j.value("workspace", std::string{});
    s.split_seed = j.value("split_seed", s.split_seed);
    if (j.contains("oracle")) s.oracle = OracleConfig::from_json(j.at("oracle"));
    if (j.contains("attack")) s.attack = AttackSpec::from_json(j.at("attack"));
    if (j.contains("defaults")) {
      const auto& d = j.at("defaults");
      if (d.contains("delta_budget") && !d.at("delta_budget").is_null()) {
        s.defaults.delta_budget = d.at("delta_budget").get<std::size_t>();
      }
      s.defaults.n_max = d.value("n_max", s.defaults.n_max);
      s.defaults.theta_t = d.value("theta_t", s.defaults.theta_t);
      s.defaults.train_fraction = d.value("train_fraction", s.defaults.train_fraction);
      if (d.contains("q") && !d.at("q").is_null()) s.defaults.q = d.at("q").get<double>();
    }
    if (j.contains("axes")) {
      const auto& a = j.at("axes");
      s.axes.delta_budget = a.value("delta_budget", s.axes.delta_budget);
      s.axes.n_max = a.value("n_max", s.axes.n_max);
      s.axes.theta_t = a.value("theta_t", s.axes.theta_t);
      s.axes.train_fraction = a.value("train_fraction", s.axes.train_fraction);
      s.axes.q = a.value("q", s.axes.q);
    }
    s.repetitions = j.value("repetitions", s.repetitions);
    s.seeds = j.value("seeds", s.seeds);
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("experiment spec: ") + e.what());
  }
  s.validate();
  return s;
}

Workspace prepare_workspace(const ExperimentSpec& spec) {
  if (!spec.workspace.empty()) return Workspace::load(spec.workspace);
  if (spec.synth) {
    auto data = featurespace::synth_generate(*spec.synth);
    return build_workspace(data.samples, data.catalog, spec.oracle, spec.split_seed);
  }
  auto loaded = featurespace::load_dataset(spec.csv, spec.catalog);
  return build_workspace(loaded.samples, loaded.catalog, spec.oracle, spec.split_seed);
}

std::vector<MetricsReport> run_experiment(const ExperimentSpec& spec, const Workspace& ws, std::size_t jobs) {
  spec.validate();
  const auto cells = spec.grid();
  const std::size_t reps = static_cast<std::size_t>(spec.repetitions);
  const std::size_t total = cells.size() * reps;
  std::vector<MetricsReport> out(total);
  std::vector<std::exception_ptr> errors(total);
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t t = next++; t < total; t = next++) {
      try {
        const auto& cell = cells[t / reps];
        const int r = static_cast<int>(t % reps);
        const auto seed = spec.repetition_seed(r);
        auto oracle = Oracle::restore(ws.oracle);
        auto result = run_campaign(ws, oracle, spec.attack, cell, seed);
        auto rep = summarize(ws, result, spec.attack, cell, seed);
        rep.cell = cell.label();
        rep.repetition = r;
        rep.config["oracle"] = oracles::oracle_kind_name(spec.oracle.kind);
        out[t] = std::move(rep);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, total));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::vector<MetricsReport> run_experiment(const ExperimentSpec& spec, std::size_t jobs) {
  return run_experiment(spec, prepare_workspace(spec), jobs);
}

}  // namespace mtd::experiment
