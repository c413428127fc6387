#include <cmath>
#include <numeric>

#include "core/classifiers.hpp"
#include "core/craft.hpp"

namespace mtd::classifiers {

Dataset build_adv_training_set(std::span<const ModelPtr> vanilla, const Dataset& train,
                               const featurespace::FeatureCatalog& catalog, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("adversarial fraction must lie in (0,1]");
  if (vanilla.empty()) throw InvalidArgument("adversarial training needs at least one vanilla model");
  const auto target = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(train.size())));

  std::vector<std::size_t> malware;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].label == Label::kMalware) malware.push_back(i);
  }
  if (malware.empty()) throw InvalidArgument("training set has no malware to perturb");

  Rng rng(seed);
  std::shuffle(malware.begin(), malware.end(), rng);
  const auto methods = craft::default_methods();

  Dataset pool;
  for (auto i : malware) {
    if (pool.size() >= target) break;
    const auto& s = train[i];
    auto candidates = craft::craft_suite(vanilla, s.features, methods, catalog, derive_seed(seed, i));
    for (auto& c : candidates) {
      if (pool.size() >= target) break;
      pool.push_back({s.id, std::move(c.vector), Label::kMalware});
    }
  }
  if (pool.empty() && target > 0) throw Error("no adversarial examples could be crafted against the vanilla models");

  // Too few distinct examples: repeat them in seeded order to reach the size.
  Dataset out = pool;
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  while (out.size() < target) {
    std::shuffle(order.begin(), order.end(), rng);
    for (auto k : order) {
      if (out.size() >= target) break;
      out.push_back(pool[k]);
    }
  }
  return out;
}

}  // namespace mtd::classifiers
