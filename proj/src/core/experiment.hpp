#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/bench.hpp"
#include "core/featurespace.hpp"
#include "core/oracles.hpp"
#include "core/strategies.hpp"

namespace mtd::experiment {

using bench::MetricsReport;
using featurespace::DatasetSplits;
using featurespace::FeatureCatalog;
using oracles::OracleConfig;
using oracles::QueryTarget;
using strategies::AttackOutcome;
using strategies::ThreatModel;

// Catalog, splits, and a trained oracle: everything a campaign needs.
struct Workspace {
  FeatureCatalog catalog;
  DatasetSplits splits;
  nlohmann::json oracle;  // Oracle::snapshot()

  nlohmann::json to_json() const;
  static Workspace from_json(const nlohmann::json& j);
  // CBOR when the path ends in ".bin", JSON text otherwise. Loading sniffs the first byte.
  void save(const std::string& path) const;
  static Workspace load(const std::string& path);
};

Workspace build_workspace(const featurespace::Dataset& samples, const FeatureCatalog& catalog,
                          const OracleConfig& config, std::uint64_t split_seed);

enum class AttackType { kTransfer, kQuery, kUap };

std::string attack_type_name(AttackType t);
AttackType attack_type_from_name(const std::string& s);

struct AttackSpec {
  AttackType type = AttackType::kQuery;
  ThreatModel threat = ThreatModel::kGrayBox;
  std::size_t samples = 0;  // malware targets from attack_final; 0 = all
  std::vector<craft::CraftMethod> methods = craft::default_methods();
  std::vector<classifiers::ModelSpec> substitutes;  // empty = tree, MLP, forest, SVM
  std::size_t rer_attempts = 100;
  std::size_t traffic_total = 1000;

  nlohmann::json to_json() const;
  static AttackSpec from_json(const nlohmann::json& j);
};

// One point of the sweep grid.
struct CellParams {
  std::size_t delta_budget = std::numeric_limits<std::size_t>::max();
  std::uint64_t n_max = 500;
  double theta_t = 0.75;
  double train_fraction = 1.0;
  std::optional<double> q;

  nlohmann::json to_json() const;
  std::string label() const;
};

struct CampaignResult {
  std::vector<AttackOutcome> outcomes;
  std::vector<strategies::Uap> uaps;
  std::size_t substitute_queries = 0;  // spent building black-box substitutes
  std::string note;
};

CampaignResult run_campaign(const Workspace& ws, QueryTarget& oracle, const AttackSpec& attack,
                            const CellParams& cell, std::uint64_t seed);

// Evasion rate, RER, mean queries, and clean or mixed-traffic metrics for one cell.
MetricsReport summarize(const Workspace& ws, const CampaignResult& result, const AttackSpec& attack,
                        const CellParams& cell, std::uint64_t seed);

struct SweepAxes {
  std::vector<std::size_t> delta_budget;
  std::vector<std::uint64_t> n_max;
  std::vector<double> theta_t;
  std::vector<double> train_fraction;
  std::vector<double> q;
};

struct ExperimentSpec {
  std::optional<featurespace::SynthSpec> synth;
  std::string csv;
  std::string catalog;
  std::string workspace;  // prebuilt workspace file; overrides data + oracle
  std::uint64_t split_seed = 1;
  OracleConfig oracle;
  AttackSpec attack;
  CellParams defaults;
  SweepAxes axes;
  int repetitions = 1;
  std::vector<std::uint64_t> seeds;  // per repetition; derived from `seed` when absent
  std::uint64_t seed = 0;

  void validate() const;
  std::vector<CellParams> grid() const;
  std::uint64_t repetition_seed(int r) const;

  nlohmann::json to_json() const;
  static ExperimentSpec from_json(const nlohmann::json& j);
};

Workspace prepare_workspace(const ExperimentSpec& spec);

// Cells x repetitions, in grid-major order regardless of `jobs`.
std::vector<MetricsReport> run_experiment(const ExperimentSpec& spec, const Workspace& ws, std::size_t jobs = 1);
std::vector<MetricsReport> run_experiment(const ExperimentSpec& spec, std::size_t jobs = 1);

}  // namespace mtd::experiment
