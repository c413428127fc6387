// Acceptance run: one PASS/FAIL line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "core/bench.hpp"
#include "core/craft.hpp"
#include "core/netserve.hpp"
#include "core/oracles.hpp"
#include "core/recon.hpp"
#include "core/strategies.hpp"

using namespace mtd;
using classifiers::ModelPtr;
using classifiers::ModelSpec;
using featurespace::Dataset;
using featurespace::DatasetSplits;
using featurespace::FamilyLayout;
using featurespace::FeatureCatalog;
using featurespace::FeatureVector;
using featurespace::Sample;
using oracles::Oracle;
using oracles::OracleConfig;
using oracles::OracleKind;
using strategies::AttackOutcome;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct World {
  featurespace::SynthData data;
  DatasetSplits splits;
};

World make_world(std::size_t m, std::size_t n, double delta, std::uint64_t seed,
                 FamilyLayout layout = FamilyLayout::kRoundRobin) {
  featurespace::SynthSpec spec;
  spec.m = m;
  spec.n_per_class = n;
  spec.delta = delta;
  spec.seed = seed;
  spec.layout = layout;
  World w;
  w.data = featurespace::synth_generate(spec);
  w.splits = featurespace::split_dataset(w.data.samples, seed);
  return w;
}

Oracle build(OracleKind kind, const World& w, std::uint64_t seed, const FeatureCatalog* catalog = nullptr) {
  OracleConfig c;
  c.kind = kind;
  c.seed = seed;
  return Oracle::build(c, w.splits.train, w.splits.validation, catalog ? *catalog : w.data.catalog);
}

Dataset first_malware(const Dataset& d, std::size_t limit) {
  auto m = featurespace::filter_label(d, Label::kMalware);
  if (m.size() > limit) m.resize(limit);
  return m;
}

Dataset held_out(const DatasetSplits& s) {
  Dataset d = s.attack_train;
  d.insert(d.end(), s.attack_validation.begin(), s.attack_validation.end());
  d.insert(d.end(), s.attack_final.begin(), s.attack_final.end());
  return d;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string fmt(double v, int digits = 3) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

// Audit tally shared by criteria 3, 4 and 6.
struct Audit {
  std::size_t examples = 0;
  std::size_t violations = 0;

  void check(const std::vector<AttackOutcome>& outs, const FeatureCatalog& catalog) {
    for (const auto& o : outs) {
      if (!o.adversarial) continue;
      ++examples;
      violations += !craft::permission_audit(o.original.features, *o.adversarial, catalog);
    }
  }
};

Audit g_audit;

// ---------------------------------------------------------------------------

Verdict static_rer() {
  auto w = make_world(100, 300, 0.2, 11);
  struct Case {
    std::string name;
    OracleConfig config;
  };
  std::vector<Case> cases;
  for (auto [name, kind] : {std::pair{"vote_majority", OracleKind::kVoteMajority},
                            std::pair{"vote_veto", OracleKind::kVoteVeto}, std::pair{"nn_at", OracleKind::kSingle}}) {
    OracleConfig c;
    c.kind = kind;
    c.seed = 3;
    cases.push_back({name, c});
  }
  OracleConfig pure;
  pure.kind = OracleKind::kStratDef;
  pure.seed = 3;
  pure.game.strategy = std::vector<double>{0.0, 1.0, 0.0, 0.0, 0.0};
  cases.push_back({"pure_game", pure});

  auto malware = first_malware(w.splits.attack_final, 40);
  strategies::AttackerKnowledge k;
  k.frequencies = featurespace::benign_frequencies(w.splits.train);
  std::ostringstream detail;
  bool ok = true;
  for (const auto& c : cases) {
    auto oracle = Oracle::build(c.config, w.splits.train, w.splits.validation, w.data.catalog);
    const auto snap = oracle.snapshot();
    std::size_t evaders = 0, exact = 0;
    for (const auto& x : malware) {
      auto o = strategies::query_attack(oracle, x, strategies::QueryAttackConfig::gray_box(500, 1), w.data.catalog, k);
      if (!o.success) continue;
      ++evaders;
      exact += bench::repeat_evasion_rate(snap, *o.adversarial, 100) == 100.0;
    }
    ok = ok && evaders > 0 && exact == evaders;
    detail << c.name << " " << exact << "/" << evaders << " at 100%; ";
  }
  return {ok, detail.str()};
}

Verdict dynamic_rer() {
  auto w = make_world(100, 300, 0.6, 12);
  auto tree = classifiers::train(ModelSpec::decision_tree(1), w.splits.train, w.splits.validation);
  auto mlp = classifiers::train(ModelSpec::neural_network(2), w.splits.train, w.splits.validation);
  // X' evades the tree but not the network.
  struct TreeTarget : oracles::QueryTarget {
    ModelPtr m;
    std::uint64_t n = 0;
    Label query(const FeatureVector& x) override {
      ++n;
      return m->predict(x);
    }
    std::uint64_t query_count() const override { return n; }
  } target;
  target.m = tree;
  strategies::AttackerKnowledge k;
  k.frequencies = featurespace::benign_frequencies(w.splits.train);
  std::optional<FeatureVector> xp;
  for (const auto& x : featurespace::filter_label(w.splits.attack_final, Label::kMalware)) {
    auto o = strategies::query_attack(target, x, strategies::QueryAttackConfig::gray_box(500, 1), w.data.catalog, k);
    if (o.success && mlp->predict(*o.adversarial) == Label::kMalware) {
      xp = *o.adversarial;
      break;
    }
  }
  if (!xp) return {false, "no example separating the two constituents"};
  OracleConfig c;
  c.kind = OracleKind::kStratDef;
  c.seed = 5;
  const double p_tree = 0.4;
  auto oracle = Oracle::assemble(c, {tree, mlp}, oracles::StrategyVector{{p_tree, 1.0 - p_tree}});
  const double rer = bench::repeat_evasion_rate(oracle.snapshot(), *xp, 100);
  const double expect = 100.0 * p_tree, sigma = 100.0 * std::sqrt(p_tree * (1 - p_tree) / 100.0);
  const bool ok = rer > 0.0 && rer < 100.0 && std::abs(rer - expect) <= 3 * sigma;
  return {ok, "RER " + fmt(rer, 1) + "% vs expected " + fmt(expect, 1) + " +/- " + fmt(3 * sigma, 1)};
}

Verdict theta_ordering() {
  std::vector<double> high, low, single;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto w = make_world(100, 1000, 0.5, seed);
    auto oracle = build(OracleKind::kStratDef, w, seed);
    const auto snap = oracle.snapshot();
    auto malware = first_malware(w.splits.attack_final, 100);

    auto fresh = Oracle::restore(snap);
    auto diverse = strategies::build_substitutes_blackbox(fresh, w.splits.attack_train, w.splits.attack_train.size(),
                                                          strategies::default_substitute_specs(seed));
    const std::vector<ModelSpec> mlp_only{ModelSpec::neural_network(seed)};
    auto lone = strategies::build_substitutes_blackbox(fresh, w.splits.attack_train, w.splits.attack_train.size(),
                                                       mlp_only);
    auto run = [&](const strategies::SubstituteEnsemble& e, double theta) {
      strategies::TransferConfig cfg;
      cfg.theta_t = theta;
      auto target = Oracle::restore(snap);
      auto outs = strategies::transfer_attack(e, target, malware, cfg, w.data.catalog, seed);
      g_audit.check(outs, w.data.catalog);
      return bench::evasion_rate(outs).value_or(0.0);
    };
    high.push_back(run(diverse, 0.75));
    low.push_back(run(diverse, 0.25));
    single.push_back(run(lone, 1.0));
  }
  const double h = mean(high), l = mean(low), s = mean(single);
  return {h >= l && l >= s,
          "mean evasion theta 0.75 " + fmt(h) + ", theta 0.25 " + fmt(l) + ", single MLP " + fmt(s)};
}

double sign_test_p(std::size_t wins, std::size_t n) {
  // P(Bin(n, 1/2) >= wins)
  double p = 0.0;
  for (std::size_t k = wins; k <= n; ++k) {
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
  }
  return p;
}

Verdict query_efficiency() {
  const std::uint64_t n_max = 500;
  std::vector<double> gray_q, black_q;
  std::size_t wins = 0, losses = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto w = make_world(100, 1000, 0.5, seed);
    auto oracle = build(OracleKind::kStratDef, w, seed);
    const auto snap = oracle.snapshot();
    auto malware = first_malware(w.splits.attack_final, 60);
    strategies::AttackerKnowledge gray;
    gray.frequencies = featurespace::benign_frequencies(w.splits.train);
    strategies::AttackerKnowledge black;
    black.donors = featurespace::filter_label(w.splits.attack_train, Label::kBenign);
    auto g_target = Oracle::restore(snap);
    auto b_target = Oracle::restore(snap);
    std::vector<AttackOutcome> g_outs, b_outs;
    for (const auto& x : malware) {
      auto g = strategies::query_attack(g_target, x, strategies::QueryAttackConfig::gray_box(n_max, seed),
                                        w.data.catalog, gray);
      auto b = strategies::query_attack(b_target, x, strategies::QueryAttackConfig::black_box(n_max, seed),
                                        w.data.catalog, black);
      if (g.success) gray_q.push_back(static_cast<double>(g.queries_used));
      if (b.success) black_q.push_back(static_cast<double>(b.queries_used));
      // Failures count as n_max + 1.
      const auto gq = g.success ? g.queries_used : n_max + 1, bq = b.success ? b.queries_used : n_max + 1;
      wins += gq < bq;
      losses += gq > bq;
      g_outs.push_back(std::move(g));
      b_outs.push_back(std::move(b));
    }
    g_audit.check(g_outs, w.data.catalog);
    g_audit.check(b_outs, w.data.catalog);
  }
  const double p = sign_test_p(wins, wins + losses);
  const double gm = mean(gray_q), bm = mean(black_q);
  return {!gray_q.empty() && !black_q.empty() && gm <= bm && p < 0.05,
          "mean queries gray-box " + fmt(gm, 1) + " vs black-box " + fmt(bm, 1) + "; sign test " +
              std::to_string(wins) + " wins / " + std::to_string(losses) + " losses, p=" + fmt(p, 6)};
}

Verdict budget_recovery() {
  auto w = make_world(100, 500, 0.6, 21);
  OracleConfig c;
  c.kind = OracleKind::kMorphence;
  c.seed = 21;
  c.morphence.query_budget = 100;
  auto oracle = Oracle::build(c, w.splits.train, w.splits.validation, w.data.catalog);
  // Probe with an example the attacker pushed onto the decision boundary.
  strategies::AttackerKnowledge k;
  k.frequencies = featurespace::benign_frequencies(w.splits.train);
  auto attacker = Oracle::restore(oracle.snapshot());
  std::optional<FeatureVector> probe;
  for (const auto& x : first_malware(w.splits.attack_final, 50)) {
    auto o = strategies::query_attack(attacker, x, strategies::QueryAttackConfig::gray_box(500, 1), w.data.catalog, k);
    if (o.success) {
      probe = *o.adversarial;
      break;
    }
  }
  if (!probe) return {false, "no boundary probe found"};
  auto r = recon::estimate_query_budget(oracle, *probe, 1000, 100);
  const bool ok = r.hybrid && r.budget_upper_bound && *r.budget_upper_bound >= 100 && *r.budget_upper_bound <= 200;
  std::string flips;
  for (auto f : r.flip_indices) flips += std::to_string(f) + " ";
  return {ok, "hybrid=" + std::string(r.hybrid ? "true" : "false") + " bound=" +
                  (r.budget_upper_bound ? std::to_string(*r.budget_upper_bound) : "none") + " flips at " + flips};
}

Verdict functionality_audit() {
  return {g_audit.examples > 0 && g_audit.violations == 0,
          std::to_string(g_audit.violations) + " violations over " + std::to_string(g_audit.examples) +
              " adversarial examples"};
}

Verdict attack_surface() {
  std::vector<double> both, add_only;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto full = make_world(100, 1000, 0.5, seed, FamilyLayout::kGeneric);
    auto restricted = make_world(100, 1000, 0.5, seed, FamilyLayout::kAdditionOnly);
    if (featurespace::fingerprint(full.data.samples) != featurespace::fingerprint(restricted.data.samples)) {
      return {false, "layouts produced different samples"};
    }
    auto oracle = build(OracleKind::kStratDef, full, seed);
    const auto snap = oracle.snapshot();
    auto malware = first_malware(full.splits.attack_final, 100);
    strategies::AttackerKnowledge k;
    k.donors = featurespace::filter_label(full.splits.attack_train, Label::kBenign);
    auto rate = [&](const FeatureCatalog& catalog) {
      auto target = Oracle::restore(snap);
      std::vector<AttackOutcome> outs;
      for (const auto& x : malware) {
        outs.push_back(strategies::query_attack(target, x, strategies::QueryAttackConfig::black_box(100, seed),
                                                catalog, k));
      }
      return bench::evasion_rate(outs).value_or(0.0);
    };
    both.push_back(rate(full.data.catalog));
    add_only.push_back(rate(restricted.data.catalog));
  }
  const double a = mean(both), b = mean(add_only);
  return {a >= b, "mean evasion add+remove " + fmt(a) + " vs addition-only " + fmt(b)};
}

Verdict clean_performance() {
  auto w = make_world(100, 1000, 0.6, 31);
  const auto test = held_out(w.splits);
  std::ostringstream detail;
  bool ok = true;
  for (auto kind : {OracleKind::kDeepMtd, OracleKind::kMorphence, OracleKind::kMtDeep, OracleKind::kStratDef,
                    OracleKind::kVoteMajority, OracleKind::kVoteVeto, OracleKind::kSingle}) {
    auto oracle = build(kind, w, 31);
    std::size_t correct = 0;
    for (const auto& s : test) correct += oracle.query(s.features) == s.label;
    const double acc = static_cast<double>(correct) / static_cast<double>(test.size());
    ok = ok && acc >= 0.90;
    detail << oracles::oracle_kind_name(kind) << " " << fmt(acc) << "; ";
  }
  return {ok, detail.str()};
}

Verdict numerical_core() {
  auto w = make_world(100, 300, 0.6, 41);
  auto mlp = classifiers::train(ModelSpec::neural_network(3), w.splits.train, w.splits.validation);
  const double h = 1e-4;
  std::size_t checked = 0, agree = 0;
  for (const auto& s : featurespace::filter_label(w.splits.attack_final, Label::kMalware)) {
    auto x = s.features.relaxed();
    auto r = craft::whitebox_attack(*mlp, s.features, craft::CraftMethod::defaults(craft::Method::kFgsm), 1);
    for (std::size_t i = 0; i < x.size(); ++i) {
      auto hi = x, lo = x;
      hi[i] += h;
      lo[i] -= h;
      const double fd = (mlp->score(hi, Label::kMalware) - mlp->score(lo, Label::kMalware)) / (2 * h);
      if (std::abs(fd) <= 1e-6) continue;
      const double expected = std::clamp(x[i] - (fd > 0 ? 1.0 : -1.0), 0.0, 1.0);
      ++checked;
      agree += r.candidate[i] == expected;
    }
  }
  const double agreement = checked ? static_cast<double>(agree) / static_cast<double>(checked) : 0.0;

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_norm = 0.0;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> x(100);
    for (auto& v : x) v = u(rng);
    auto p = mlp->predict_proba(x);
    worst_norm = std::max(worst_norm, std::abs(p.benign + p.malware - 1.0));
  }

  double worst_auc = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> s(50);
    std::vector<Label> t(50);
    for (std::size_t i = 0; i < 50; ++i) {
      s[i] = static_cast<double>(rng() % 10);
      t[i] = i < 2 ? label_from_int(static_cast<int>(i)) : label_from_int(static_cast<int>(rng() % 2));
    }
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < 50; ++i) {
      for (std::size_t j = 0; j < 50; ++j) {
        if (t[i] != Label::kMalware || t[j] != Label::kBenign) continue;
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
    }
    worst_auc = std::max(worst_auc, std::abs(bench::auc(s, t) - wins / pairs));
  }
  const bool ok = checked > 0 && agreement >= 0.99 && worst_norm <= 1e-6 && worst_auc <= 1e-9;
  return {ok, "FGSM sign agreement " + fmt(100 * agreement, 2) + "% of " + std::to_string(checked) +
                  "; softmax error " + fmt(worst_norm, 12) + "; AUC error " + fmt(worst_auc, 12)};
}

Verdict brute_force_equivalence() {
  std::size_t mismatches = 0, cases = 0;
  for (std::size_t k = 1; k <= 4; ++k) {
    for (std::uint32_t mask = 0; mask < (1U << k); ++mask) {
      std::vector<ModelPtr> pool;
      std::size_t ones = 0;
      for (std::size_t i = 0; i < k; ++i) {
        const bool mal = mask >> i & 1U;
        ones += mal;
        pool.push_back(std::make_shared<classifiers::Model>(classifiers::DecisionTree::constant(mal ? 1.0 : 0.0), 3));
      }
      OracleConfig maj, veto;
      maj.kind = OracleKind::kVoteMajority;
      veto.kind = OracleKind::kVoteVeto;
      auto a = Oracle::assemble(maj, pool);
      auto b = Oracle::assemble(veto, pool);
      const FeatureVector x(3);
      mismatches += to_int(a.query(x)) != (2 * ones >= k ? 1 : 0);
      mismatches += to_int(b.query(x)) != (ones > 0 ? 1 : 0);
      cases += 2;
    }
  }
  auto s = oracles::solve_strategy({{1.0, 0.0}, {0.0, 1.0}}, 1.0, oracles::Optimizer::kMaximin);
  // Enumeration oracle over a fine grid of row strategies.
  double best = -1.0, best_p = 0.0;
  for (int i = 0; i <= 100000; ++i) {
    const double p = i / 100000.0, v = std::min(p, 1.0 - p);
    if (v > best) {
      best = v;
      best_p = p;
    }
  }
  const bool game_ok = std::abs(s.strategy.probs[0] - 0.5) <= 1e-6 && std::abs(s.strategy.probs[1] - 0.5) <= 1e-6 &&
                       std::abs(s.value - best) <= 1e-6 && std::abs(best_p - 0.5) <= 1e-6;
  return {mismatches == 0 && game_ok, std::to_string(mismatches) + " truth-table mismatches over " +
                                          std::to_string(cases) + " cases; maximin (" + fmt(s.strategy.probs[0], 6) +
                                          ", " + fmt(s.strategy.probs[1], 6) + ") value " + fmt(s.value, 6) +
                                          ", enumeration value " + fmt(best, 6)};
}

Verdict wire_equivalence() {
  auto w = make_world(100, 300, 0.6, 51);
  auto oracle = build(OracleKind::kStratDef, w, 51);
  const auto snap = oracle.snapshot();
  auto local = Oracle::restore(snap);
  netserve::OracleServer server(Oracle::restore(snap));
  const int port = server.bind("127.0.0.1", 0);
  server.start();
  netserve::RemoteOracle remote({"127.0.0.1", port});
  std::mt19937_64 rng(3);
  std::size_t mismatches = 0;
  const auto& pool = w.data.samples;
  for (int i = 0; i < 1000; ++i) {
    const auto& x = pool[rng() % pool.size()].features;
    mismatches += remote.query(x) != local.query(x);
  }
  server.stop();
  return {mismatches == 0, std::to_string(mismatches) + " mismatches over 1000 queries"};
}

Verdict mixed_traffic() {
  auto c = bench::traffic_composition(0.5, 1000);
  const bool composition_ok = c.adversarial == 500 && c.benign == 250 && c.malware == 250;

  auto w = make_world(100, 1000, 0.6, 61);
  auto oracle = build(OracleKind::kVoteMajority, w, 61);
  const auto snap = oracle.snapshot();
  strategies::AttackerKnowledge k;
  k.frequencies = featurespace::benign_frequencies(w.splits.train);
  bench::TrafficPools pools;
  for (const auto& x : featurespace::filter_label(w.splits.attack_validation, Label::kMalware)) {
    auto o = strategies::query_attack(oracle, x, strategies::QueryAttackConfig::gray_box(500, 1), w.data.catalog, k);
    if (o.success) pools.adversarial.push_back(*o.adversarial);
  }
  pools.benign = featurespace::filter_label(w.splits.attack_final, Label::kBenign);
  pools.malware = featurespace::filter_label(w.splits.attack_final, Label::kMalware);
  if (pools.adversarial.empty()) return {false, "no evading examples for the traffic pool"};
  std::vector<double> acc;
  bool strictly = true;
  std::string trail;
  for (int i = 1; i <= 9; ++i) {
    auto target = Oracle::restore(snap);
    auto r = bench::mixed_traffic(target, i / 10.0, pools, 1000, 7);
    if (!acc.empty() && r.accuracy >= acc.back()) strictly = false;
    acc.push_back(r.accuracy);
    trail += fmt(r.accuracy) + " ";
  }
  return {composition_ok && strictly, "composition " + std::to_string(c.adversarial) + "/" +
                                          std::to_string(c.benign) + "/" + std::to_string(c.malware) +
                                          "; accuracy over q=0.1..0.9: " + trail};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"static RER exactness", static_rer},
      {"dynamic RER strictness", dynamic_rer},
      {"theta_t ordering", theta_ordering},
      {"gray-box query efficiency", query_efficiency},
      {"budget recovery", budget_recovery},
      {"functionality audit", functionality_audit},
      {"attack-surface monotonicity", attack_surface},
      {"clean performance", clean_performance},
      {"numerical core", numerical_core},
      {"brute-force oracle equivalence", brute_force_equivalence},
      {"wire equivalence", wire_equivalence},
      {"mixed-traffic arithmetic", mixed_traffic},
  };
  // ACCEPTANCE_ONLY=3,5 runs a subset.
  std::vector<bool> selected(criteria.size(), true);
  if (const char* only = std::getenv("ACCEPTANCE_ONLY"); only && *only) {
    selected.assign(criteria.size(), false);
    std::stringstream ss(only);
    for (std::string tok; std::getline(ss, tok, ',');) {
      const auto n = std::stoul(tok);
      if (n >= 1 && n <= criteria.size()) selected[n - 1] = true;
    }
  }
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected[i]) continue;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": " << v.detail << " ["
              << fmt(secs, 1) << "s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
