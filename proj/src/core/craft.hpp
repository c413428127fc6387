#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/classifiers.hpp"
#include "core/featurespace.hpp"

namespace mtd::craft {

using classifiers::Model;
using classifiers::ModelKind;
using classifiers::ModelPtr;
using featurespace::Direction;
using featurespace::FeatureCatalog;
using featurespace::FeatureVector;

enum class Method { kFgsm, kBim, kJsma, kDtAttack, kSvmAttack };

std::string method_name(Method m);
Method method_from_name(const std::string& s);

struct CraftMethod {
  Method method = Method::kFgsm;
  double epsilon = 1.0;
  int iterations = 10;
  int max_features_changed = 50;

  // FGSM eps=1; BIM 10 x eps=0.1; JSMA cap 50 flips; SVM attack eps=1.
  static CraftMethod defaults(Method m);

  nlohmann::json to_json() const;
  static CraftMethod from_json(const nlohmann::json& j);
};

std::vector<CraftMethod> default_methods();

bool compatible(ModelKind kind, Method method);

struct Flip {
  std::uint32_t index = 0;
  Direction direction = Direction::kAdd;
  bool reverted = false;

  friend bool operator==(const Flip&, const Flip&) = default;
};

struct PerturbationTrace {
  std::vector<Flip> flips;

  std::size_t applied() const;
  nlohmann::json to_json() const;
  static PerturbationTrace from_json(const nlohmann::json& j);
};

struct WhiteboxResult {
  std::vector<double> candidate;  // relaxed, within [0,1]
  bool stalled = false;
};

WhiteboxResult whitebox_attack(const Model& model, const FeatureVector& x, const CraftMethod& method,
                               std::uint64_t seed);

// value >= 0.5 -> 1, otherwise 0 (values are clipped to [0,1] first).
FeatureVector discretize(std::span<const double> candidate);

struct Enforced {
  FeatureVector vector;
  PerturbationTrace trace;
};

// Reverts every flip whose direction the catalog forbids.
Enforced enforce_functionality(const FeatureVector& original, const FeatureVector& candidate,
                               const FeatureCatalog& catalog);

// True when every difference between the two vectors is a permitted flip.
bool permission_audit(const FeatureVector& original, const FeatureVector& adversarial, const FeatureCatalog& catalog);

struct Candidate {
  FeatureVector vector;
  PerturbationTrace trace;
  std::size_t source_model = 0;
  Method method = Method::kFgsm;
};

// Every compatible (model, method) pair; discretized, enforced, and kept only
// if it still evades its own source model. Candidates identical to `x` are dropped.
std::vector<Candidate> craft_suite(std::span<const ModelPtr> models, const FeatureVector& x,
                                   std::span<const CraftMethod> methods, const FeatureCatalog& catalog,
                                   std::uint64_t seed);

}  // namespace mtd::craft
