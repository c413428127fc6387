#include "core/recon.hpp"

#include <algorithm>
#include <limits>

namespace mtd::recon {

using nlohmann::json;

std::string verdict_name(Verdict v) { return v == Verdict::kStatic ? "static" : "dynamic"; }

json NatureReport::to_json() const {
  json per = json::array();
  for (const auto& s : samples) {
    per.push_back({{"malware_answers", s.malware_answers},
                   {"changes", s.changes},
                   {"change_rate", n > 1 ? static_cast<double>(s.changes) / static_cast<double>(n - 1) : 0.0}});
  }
  return {{"verdict", verdict_name(verdict)}, {"flip_fraction", flip_fraction}, {"n", n}, {"samples", per}};
}

NatureReport probe_predictive_nature(QueryTarget& oracle, std::span<const FeatureVector> probes, std::size_t n) {
  if (n < 2) throw InvalidArgument("nature probe needs n >= 2");
  if (probes.empty()) throw InvalidArgument("nature probe needs at least one sample");
  NatureReport r;
  r.n = n;
  std::size_t fluctuating = 0;
  for (const auto& x : probes) {
    SampleProbe p;
    Label prev = Label::kBenign;
    for (std::size_t i = 0; i < n; ++i) {
      const Label y = oracle.query(x);
      p.malware_answers += y == Label::kMalware;
      if (i > 0 && y != prev) ++p.changes;
      prev = y;
    }
    fluctuating += p.fluctuated();
    r.samples.push_back(p);
  }
  r.flip_fraction = static_cast<double>(fluctuating) / static_cast<double>(probes.size());
  r.verdict = fluctuating > 0 ? Verdict::kDynamic : Verdict::kStatic;
  return r;
}

json BudgetReport::to_json() const {
  return {{"hybrid", hybrid},
          {"budget_upper_bound", budget_upper_bound ? json(*budget_upper_bound) : json(nullptr)},
          {"flip_indices", flip_indices},
          {"n_large", n_large},
          {"resolution", resolution}};
}

BudgetReport estimate_query_budget(QueryTarget& oracle, const FeatureVector& sample, std::size_t n_large,
                                   std::size_t resolution) {
  if (resolution == 0) throw InvalidArgument("resolution must be positive");
  if (n_large < 2 * resolution) throw InvalidArgument("n_large must be at least twice the resolution");
  BudgetReport r;
  r.n_large = n_large;
  r.resolution = resolution;
  Label prev = Label::kBenign;
  for (std::size_t i = 0; i < n_large; ++i) {
    const Label y = oracle.query(sample);
    if (i > 0 && y != prev) r.flip_indices.push_back(i);
    prev = y;
  }
  if (r.flip_indices.empty()) return r;
  r.hybrid = true;
  std::uint64_t gap = r.flip_indices.front();
  for (std::size_t i = 1; i < r.flip_indices.size(); ++i) {
    gap = std::min(gap, r.flip_indices[i] - r.flip_indices[i - 1]);
  }
  r.budget_upper_bound = (gap + resolution - 1) / resolution * resolution;
  return r;
}

}  // namespace mtd::recon
