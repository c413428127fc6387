#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/classifiers.hpp"
#include "core/featurespace.hpp"

namespace mtd::oracles {

using classifiers::ModelPtr;
using classifiers::ModelSpec;
using featurespace::Dataset;
using featurespace::FeatureCatalog;
using featurespace::FeatureVector;

// Raised by targets that enforce a query budget; attacks stop on it.
class BudgetExceeded : public Error {
 public:
  using Error::Error;
};

// Anything that answers scoreless label queries: in-process oracles, remote
// endpoints, and test stubs.
class QueryTarget {
 public:
  virtual ~QueryTarget() = default;
  virtual Label query(const FeatureVector& x) = 0;
  virtual std::uint64_t query_count() const = 0;
};

enum class OracleKind { kDeepMtd, kMorphence, kMtDeep, kStratDef, kVoteMajority, kVoteVeto, kSingle };
enum class Optimizer { kMaximin, kUniform, kBestResponse };

std::string oracle_kind_name(OracleKind k);
OracleKind oracle_kind_from_name(const std::string& s);
std::string optimizer_name(Optimizer o);
Optimizer optimizer_from_name(const std::string& s);

struct DeepMtdConfig {
  int students = 20;
  double w = 0.3;
  double threshold = 0.6;
  std::int64_t idle_regen_ms = 60000;
};

struct MorphenceConfig {
  int students = 4;
  int adversarial = 3;
  std::uint64_t query_budget = 1000;
  int finetune_epochs = 10;
};

struct GameConfig {
  double alpha = 1.0;
  Optimizer optimizer = Optimizer::kMaximin;
  std::optional<std::vector<double>> strategy;  // bypasses the optimizer when set
};

struct OracleConfig {
  OracleKind kind = OracleKind::kStratDef;
  DeepMtdConfig deepmtd;
  MorphenceConfig morphence;
  GameConfig game;
  std::vector<ModelSpec> constituents;  // empty selects per-kind defaults
  double adversarial_fraction = 0.25;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static OracleConfig from_json(const nlohmann::json& j);
};

struct StrategyVector {
  std::vector<double> probs;

  bool pure() const;
  void validate() const;
};

struct StrategySolution {
  StrategyVector strategy;
  double value = 0.0;
};

// Defender strategy over constituents (rows) against attack scenarios
// (columns). With `clean` supplied, each scenario column becomes
// (1-alpha)*clean + alpha*column.
StrategySolution solve_strategy(const std::vector<std::vector<double>>& payoff, double alpha, Optimizer optimizer,
                                std::span<const double> clean = {});

// Exact maximin by linear programming. Returns the row mixed strategy and value.
StrategySolution solve_maximin(const std::vector<std::vector<double>>& payoff);

class Oracle : public QueryTarget {
 public:
  static Oracle build(const OracleConfig& config, const Dataset& train, const Dataset& validation,
                      const FeatureCatalog& catalog);
  // Wraps a ready-made pool. Game kinds take `strategy` or uniform.
  static Oracle assemble(const OracleConfig& config, std::vector<ModelPtr> pool,
                         std::optional<StrategyVector> strategy = std::nullopt);

  Label query(const FeatureVector& x) override;
  std::uint64_t query_count() const override { return query_count_; }
  void reset_query_count() { query_count_ = 0; }

  // Evaluation-only malware confidence; does not count as a query.
  double confidence(const FeatureVector& x) const;

  void tick_idle(std::int64_t elapsed_ms);

  const OracleConfig& config() const { return config_; }
  std::size_t feature_count() const { return feature_count_; }
  const std::vector<ModelPtr>& pool() const { return pool_; }
  const std::optional<StrategyVector>& strategy() const { return strategy_; }
  // DeepMTD: whether the last query was judged adversarial.
  bool last_flagged_adversarial() const { return flagged_; }
  std::uint64_t generation() const { return generation_; }

  nlohmann::json snapshot() const;
  static Oracle restore(const nlohmann::json& j);

 private:
  Oracle() = default;
  void regenerate();
  Label vote(const FeatureVector& x, bool veto) const;

  OracleConfig config_;
  std::size_t feature_count_ = 0;
  std::vector<ModelPtr> pool_;
  ModelPtr base_;
  std::optional<StrategyVector> strategy_;
  std::vector<std::vector<double>> payoff_;
  std::vector<double> clean_payoff_;
  std::uint64_t query_count_ = 0;
  std::uint64_t since_regen_ = 0;
  std::uint64_t generation_ = 0;
  bool flagged_ = false;
  Rng rng_;
  Dataset train_;
  Dataset validation_;
  Dataset adversarial_;
};

}  // namespace mtd::oracles
