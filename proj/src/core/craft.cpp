#include "core/craft.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mtd::craft {

using classifiers::DecisionTree;
using classifiers::Forest;
using nlohmann::json;

std::string method_name(Method m) {
  switch (m) {
    case Method::kFgsm: return "fgsm";
    case Method::kBim: return "bim";
    case Method::kJsma: return "jsma";
    case Method::kDtAttack: return "dt_attack";
    case Method::kSvmAttack: return "svm_attack";
  }
  return "fgsm";
}

Method method_from_name(const std::string& s) {
  for (auto m : {Method::kFgsm, Method::kBim, Method::kJsma, Method::kDtAttack, Method::kSvmAttack}) {
    if (method_name(m) == s) return m;
  }
  throw InvalidArgument("unknown craft method '" + s + "'");
}

CraftMethod CraftMethod::defaults(Method m) {
  CraftMethod c;
  c.method = m;
  if (m == Method::kBim) c.epsilon = 0.1;
  return c;
}

json CraftMethod::to_json() const {
  return {{"method", method_name(method)},
          {"epsilon", epsilon},
          {"iterations", iterations},
          {"max_features_changed", max_features_changed}};
}

CraftMethod CraftMethod::from_json(const json& j) {
  CraftMethod c = defaults(method_from_name(j.at("method").get<std::string>()));
  c.epsilon = j.value("epsilon", c.epsilon);
  c.iterations = j.value("iterations", c.iterations);
  c.max_features_changed = j.value("max_features_changed", c.max_features_changed);
  return c;
}

std::vector<CraftMethod> default_methods() {
  return {CraftMethod::defaults(Method::kFgsm), CraftMethod::defaults(Method::kBim),
          CraftMethod::defaults(Method::kJsma), CraftMethod::defaults(Method::kDtAttack),
          CraftMethod::defaults(Method::kSvmAttack)};
}

bool compatible(ModelKind kind, Method method) {
  switch (method) {
    case Method::kFgsm:
    case Method::kBim:
    case Method::kSvmAttack:
      return kind == ModelKind::kMlp || kind == ModelKind::kLinearSvm;
    case Method::kJsma:
      return kind == ModelKind::kMlp;
    case Method::kDtAttack:
      return kind == ModelKind::kDecisionTree || kind == ModelKind::kRandomForest;
  }
  return false;
}

std::size_t PerturbationTrace::applied() const {
  return static_cast<std::size_t>(std::count_if(flips.begin(), flips.end(), [](const Flip& f) { return !f.reverted; }));
}

json PerturbationTrace::to_json() const {
  json arr = json::array();
  for (const auto& f : flips) {
    arr.push_back({{"index", f.index}, {"dir", featurespace::direction_name(f.direction)}, {"reverted", f.reverted}});
  }
  return arr;
}

PerturbationTrace PerturbationTrace::from_json(const json& j) {
  PerturbationTrace t;
  for (const auto& f : j) {
    t.flips.push_back({f.at("index").get<std::uint32_t>(),
                       featurespace::direction_from_name(f.at("dir").get<std::string>()),
                       f.value("reverted", false)});
  }
  return t;
}

// ---------------------------------------------------------------------------
// White-box attacks

namespace {

void clip(std::vector<double>& v) {
  for (auto& x : v) x = std::clamp(x, 0.0, 1.0);
}

bool all_zero(const std::vector<double>& g) {
  return std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; });
}

double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

WhiteboxResult gradient_step(const Model& model, const FeatureVector& x, double epsilon, int steps, bool use_sign) {
  WhiteboxResult r{x.relaxed(), false};
  for (int s = 0; s < steps; ++s) {
    auto g = model.gradient(r.candidate, Label::kMalware);
    if (all_zero(g)) {
      if (s == 0) {
        r.candidate = x.relaxed();
        r.stalled = true;
      }
      break;
    }
    double scale = 1.0;
    if (!use_sign) {
      double mx = 0.0;
      for (double v : g) mx = std::max(mx, std::abs(v));
      scale = 1.0 / mx;
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      r.candidate[i] -= epsilon * (use_sign ? sign(g[i]) : g[i] * scale);
    }
    clip(r.candidate);
  }
  return r;
}

// Saliency = d(benign score) - d(malware score); flip the feature whose change
// most reduces the malware score, one per iteration.
WhiteboxResult jsma(const Model& model, const FeatureVector& x, const CraftMethod& cfg) {
  WhiteboxResult r{x.relaxed(), false};
  std::vector<bool> used(x.size(), false);
  int changed = 0;
  while (changed < cfg.max_features_changed && model.predict(r.candidate) == Label::kMalware) {
    const auto gb = model.gradient(r.candidate, Label::kBenign);
    const auto gm = model.gradient(r.candidate, Label::kMalware);
    double best = 0.0;
    std::size_t pick = x.size();
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (used[i]) continue;
      const double saliency = gb[i] - gm[i];
      const double benefit = r.candidate[i] < 0.5 ? saliency : -saliency;
      if (benefit > best) {
        best = benefit;
        pick = i;
      }
    }
    if (pick == x.size()) break;
    used[pick] = true;
    r.candidate[pick] = r.candidate[pick] < 0.5 ? 1.0 : 0.0;
    ++changed;
  }
  r.stalled = changed == 0 && model.predict(r.candidate) == Label::kMalware;
  return r;
}

// Minimal set of flips that routes `x` into a benign leaf of `tree`.
// Ties: fewest flips, then lexicographically smallest index list.
bool reroute(const DecisionTree& tree, std::vector<double>& x) {
  if (tree.p_malware(x) < 0.5) return true;
  struct Frame {
    std::size_t node;
    std::vector<std::uint32_t> flips;
  };
  std::vector<std::uint32_t> best;
  bool found = false;
  std::vector<Frame> stack{{0, {}}};
  while (!stack.empty()) {
    Frame f = std::move(stack.back());
    stack.pop_back();
    if (found && f.flips.size() > best.size()) continue;
    const auto& node = tree.nodes[f.node];
    if (node.feature < 0) {
      if (node.p_malware >= 0.5) continue;
      auto sorted = f.flips;
      std::sort(sorted.begin(), sorted.end());
      if (!found || sorted.size() < best.size() || (sorted.size() == best.size() && sorted < best)) {
        best = std::move(sorted);
        found = true;
      }
      continue;
    }
    const auto feat = static_cast<std::uint32_t>(node.feature);
    const bool on = x[feat] >= 0.5;
    Frame keep{static_cast<std::size_t>(on ? node.right : node.left), f.flips};
    Frame flip{static_cast<std::size_t>(on ? node.left : node.right), f.flips};
    // A feature already flipped on this path cannot be tested again with a
    // different value, so only append it once.
    if (std::find(flip.flips.begin(), flip.flips.end(), feat) == flip.flips.end()) flip.flips.push_back(feat);
    stack.push_back(std::move(flip));
    stack.push_back(std::move(keep));
  }
  if (!found) return false;
  for (auto i : best) x[i] = x[i] >= 0.5 ? 0.0 : 1.0;
  return true;
}

WhiteboxResult tree_attack(const Model& model, const FeatureVector& x) {
  WhiteboxResult r{x.relaxed(), false};
  if (const auto* tree = std::get_if<DecisionTree>(&model.params())) {
    r.stalled = !reroute(*tree, r.candidate);
    return r;
  }
  const auto& forest = std::get<Forest>(model.params());
  for (const auto& t : forest.trees) {
    if (model.predict(r.candidate) == Label::kBenign) break;
    reroute(t, r.candidate);
  }
  r.stalled = r.candidate == x.relaxed();
  return r;
}

}  // namespace

WhiteboxResult whitebox_attack(const Model& model, const FeatureVector& x, const CraftMethod& method,
                               std::uint64_t /*seed*/) {
  if (!compatible(model.kind(), method.method)) {
    throw InvalidArgument(method_name(method.method) + " is incompatible with " + classifiers::kind_name(model.kind()));
  }
  if (x.size() != model.feature_count()) throw InvalidArgument("input width does not match model");
  switch (method.method) {
    case Method::kFgsm: return gradient_step(model, x, method.epsilon, 1, true);
    case Method::kBim: return gradient_step(model, x, method.epsilon, std::max(1, method.iterations), true);
    case Method::kSvmAttack: return gradient_step(model, x, method.epsilon, 1, false);
    case Method::kJsma: return jsma(model, x, method);
    case Method::kDtAttack: return tree_attack(model, x);
  }
  return {x.relaxed(), true};
}

FeatureVector discretize(std::span<const double> candidate) {
  FeatureVector out(candidate.size());
  for (std::size_t i = 0; i < candidate.size(); ++i) out.set(i, std::clamp(candidate[i], 0.0, 1.0) >= 0.5);
  return out;
}

Enforced enforce_functionality(const FeatureVector& original, const FeatureVector& candidate,
                               const FeatureCatalog& catalog) {
  if (original.size() != candidate.size() || original.size() != catalog.size()) {
    throw InvalidArgument("width mismatch in functionality check");
  }
  Enforced out{candidate, {}};
  for (std::size_t i = 0; i < original.size(); ++i) {
    if (original[i] == candidate[i]) continue;
    const Direction d = original[i] ? Direction::kRemove : Direction::kAdd;
    const bool ok = catalog.allows(i, d);
    if (!ok) out.vector.set(i, original[i]);
    out.trace.flips.push_back({static_cast<std::uint32_t>(i), d, !ok});
  }
  return out;
}

bool permission_audit(const FeatureVector& original, const FeatureVector& adversarial, const FeatureCatalog& catalog) {
  if (original.size() != adversarial.size() || original.size() != catalog.size()) return false;
  for (std::size_t i = 0; i < original.size(); ++i) {
    if (original[i] == adversarial[i]) continue;
    if (!catalog.allows(i, original[i] ? Direction::kRemove : Direction::kAdd)) return false;
  }
  return true;
}

std::vector<Candidate> craft_suite(std::span<const ModelPtr> models, const FeatureVector& x,
                                   std::span<const CraftMethod> methods, const FeatureCatalog& catalog,
                                   std::uint64_t seed) {
  std::vector<Candidate> out;
  for (std::size_t mi = 0; mi < models.size(); ++mi) {
    const auto& model = *models[mi];
    for (const auto& method : methods) {
      if (!compatible(model.kind(), method.method)) continue;
      auto raw = whitebox_attack(model, x, method, derive_seed(seed, mi * 16 + static_cast<std::size_t>(method.method)));
      if (raw.stalled) continue;
      auto enforced = enforce_functionality(x, discretize(raw.candidate), catalog);
      if (enforced.vector == x) continue;
      if (model.predict(enforced.vector) != Label::kBenign) continue;
      out.push_back({std::move(enforced.vector), std::move(enforced.trace), mi, method.method});
    }
  }
  return out;
}

}  // namespace mtd::craft
