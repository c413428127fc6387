#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/featurespace.hpp"
#include "core/oracles.hpp"
#include "core/strategies.hpp"

namespace mtd::bench {

using featurespace::Dataset;
using featurespace::FeatureVector;
using oracles::Oracle;
using oracles::QueryTarget;
using strategies::AttackOutcome;

struct Counts {
  std::uint64_t substitute_evaders = 0;
  std::uint64_t oracle_evaders = 0;
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  friend bool operator==(const Counts&, const Counts&) = default;
};

struct MetricsReport {
  std::string cell;
  int repetition = 0;
  std::uint64_t seed = 0;
  std::optional<double> evasion_rate;  // null when nothing evaded the substitutes
  std::optional<double> rer_mean;      // over successful adversarial examples, percent
  std::optional<double> mean_queries;  // oracle queries per successful example
  double accuracy = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  double fpr = 0.0;
  Counts counts;
  nlohmann::json config = nlohmann::json::object();
  std::string note;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

// oracle_evaders / substitute_evaders; nullopt when the denominator is zero.
std::optional<double> evasion_rate(std::span<const AttackOutcome> outcomes);

// Percentage of `attempts` queries on `x` that come back benign. The snapshot
// overload restores a fresh oracle first.
double repeat_evasion_rate(QueryTarget& oracle, const FeatureVector& x, std::size_t attempts = 100);
double repeat_evasion_rate(const nlohmann::json& snapshot, const FeatureVector& x, std::size_t attempts = 100);

// Mann-Whitney AUC with average ranks for ties; malware is the positive class.
double auc(std::span<const double> scores, std::span<const Label> truth);

// Fills accuracy/f1/fpr/counts from predictions against ground truth.
void fill_confusion(MetricsReport& r, std::span<const Label> truth, std::span<const Label> predicted);

MetricsReport classification_metrics(Oracle& oracle, const Dataset& samples);

struct TrafficPools {
  std::vector<FeatureVector> adversarial;
  Dataset benign;
  Dataset malware;
};

struct TrafficComposition {
  std::size_t adversarial = 0;
  std::size_t benign = 0;
  std::size_t malware = 0;
  bool with_replacement = false;
};

TrafficComposition traffic_composition(double q, std::size_t total);

// Without `confidence`, AUC is computed from the hard labels.
MetricsReport mixed_traffic(QueryTarget& oracle, double q, const TrafficPools& pools, std::size_t total,
                            std::uint64_t seed, const std::function<double(const FeatureVector&)>& confidence = {},
                            TrafficComposition* composition = nullptr);

enum class ReportFormat { kCsv, kJsonl };

ReportFormat report_format_from_name(const std::string& s);

// Stable CSV column order.
const std::vector<std::string>& csv_columns();

void emit_report(std::ostream& out, std::span<const MetricsReport> reports, ReportFormat format);
void emit_report(const std::string& path, std::span<const MetricsReport> reports, ReportFormat format);
std::vector<MetricsReport> parse_report(std::istream& in, ReportFormat format);
std::vector<MetricsReport> load_report(const std::string& path, ReportFormat format);

}  // namespace mtd::bench
