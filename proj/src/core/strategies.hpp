#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "core/classifiers.hpp"
#include "core/craft.hpp"
#include "core/featurespace.hpp"
#include "core/oracles.hpp"

namespace mtd::strategies {

using classifiers::ModelPtr;
using classifiers::ModelSpec;
using craft::CraftMethod;
using craft::PerturbationTrace;
using featurespace::BenignFrequencyVector;
using featurespace::Dataset;
using featurespace::Direction;
using featurespace::FeatureCatalog;
using featurespace::FeatureVector;
using featurespace::Sample;
using oracles::QueryTarget;

enum class ThreatModel { kBlackBox, kGrayBox };

std::string threat_name(ThreatModel t);
ThreatModel threat_from_name(const std::string& s);

class DegenerateDataset : public Error {
 public:
  using Error::Error;
};

struct SubstituteEnsemble {
  std::vector<ModelPtr> members;
  ThreatModel provenance = ThreatModel::kBlackBox;
  std::uint64_t data_fingerprint = 0;
  std::size_t relations = 0;  // |Delta| for black-box, training size for gray-box
};

// Decision tree, MLP, random forest, linear SVM.
std::vector<ModelSpec> default_substitute_specs(std::uint64_t seed);

// Queries the oracle once per sample of `b_train` (up to `delta_budget`) and
// trains every spec on the recorded relations.
SubstituteEnsemble build_substitutes_blackbox(QueryTarget& oracle, const Dataset& b_train, std::size_t delta_budget,
                                              std::span<const ModelSpec> specs);

// Trains on the defender's data; no oracle queries.
SubstituteEnsemble build_substitutes_graybox(const Dataset& train, std::span<const ModelSpec> specs);

struct TransferConfig {
  double theta_t = 0.75;
  std::vector<CraftMethod> methods = craft::default_methods();
  std::size_t delta_budget = std::numeric_limits<std::size_t>::max();

  void validate() const;
};

struct AttackOutcome {
  Sample original;
  std::optional<FeatureVector> adversarial;
  PerturbationTrace trace;
  std::uint64_t queries_used = 0;
  int evaded_substitutes = 0;
  // Substitute-evading examples spent on the oracle: tested survivors for
  // transfer, 1 per attempted sample for query and UAP replay. Denominator of
  // the evasion rate.
  std::uint64_t substitute_evaders = 0;
  bool success = false;

  nlohmann::json to_json() const;
  static AttackOutcome from_json(const nlohmann::json& j, std::size_t m);
};

// Number of members an adversarial example must evade for a given theta_t.
std::size_t required_evasions(double theta_t, std::size_t members);

std::vector<AttackOutcome> transfer_attack(const SubstituteEnsemble& ensemble, QueryTarget& oracle,
                                           const Dataset& malware, const TransferConfig& config,
                                           const FeatureCatalog& catalog, std::uint64_t seed);

enum class DonorPolicy { kRandomBenign, kFrequencyOrdered };

struct QueryAttackConfig {
  ThreatModel mode = ThreatModel::kGrayBox;
  std::uint64_t n_max = 500;
  DonorPolicy donor_policy = DonorPolicy::kFrequencyOrdered;
  bool rare_removal = true;          // gray-box: remove permitted features rare in benign samples
  double removal_threshold = 0.05;
  std::size_t donor_cycles = 1;      // black-box: passes over the donor pool
  std::uint64_t seed = 0;

  static QueryAttackConfig black_box(std::uint64_t n_max, std::uint64_t seed);
  static QueryAttackConfig gray_box(std::uint64_t n_max, std::uint64_t seed);
  void validate() const;
};

struct AttackerKnowledge {
  Dataset donors;                                  // benign donor samples
  std::optional<BenignFrequencyVector> frequencies;
};

AttackOutcome query_attack(QueryTarget& oracle, const Sample& x, const QueryAttackConfig& config,
                           const FeatureCatalog& catalog, const AttackerKnowledge& knowledge);

struct Uap {
  std::vector<std::pair<std::uint32_t, Direction>> flips;  // sorted by index
  std::size_t support = 0;                                 // distinct originals converted

  nlohmann::json to_json() const;
};

std::vector<Uap> extract_uaps(std::span<const AttackOutcome> outcomes);

struct UapReplayStats {
  std::size_t samples = 0;
  std::size_t evaded = 0;
  std::uint64_t queries = 0;
  double evasion_rate = 0.0;
  std::vector<AttackOutcome> outcomes;
};

UapReplayStats replay_uaps(QueryTarget& oracle, std::span<const Sample> malware, std::span<const Uap> uaps,
                           const FeatureCatalog& catalog);

}  // namespace mtd::strategies
