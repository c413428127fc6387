#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "core/featurespace.hpp"
#include "core/oracles.hpp"

namespace mtd::recon {

using featurespace::FeatureVector;
using oracles::QueryTarget;

enum class Verdict { kStatic, kDynamic };

std::string verdict_name(Verdict v);

struct SampleProbe {
  std::size_t malware_answers = 0;
  std::size_t changes = 0;  // consecutive answers that differ
  bool fluctuated() const { return changes > 0; }
};

struct NatureReport {
  Verdict verdict = Verdict::kStatic;
  double flip_fraction = 0.0;  // samples with at least one fluctuation
  std::size_t n = 0;
  std::vector<SampleProbe> samples;

  nlohmann::json to_json() const;
};

NatureReport probe_predictive_nature(QueryTarget& oracle, std::span<const FeatureVector> probes, std::size_t n = 100);

struct BudgetReport {
  bool hybrid = false;
  std::optional<std::uint64_t> budget_upper_bound;
  std::vector<std::uint64_t> flip_indices;  // 0-based call indices whose answer differs from the previous one
  std::size_t n_large = 0;
  std::size_t resolution = 1;

  nlohmann::json to_json() const;
};

BudgetReport estimate_query_budget(QueryTarget& oracle, const FeatureVector& sample, std::size_t n_large,
                                   std::size_t resolution);

}  // namespace mtd::recon
