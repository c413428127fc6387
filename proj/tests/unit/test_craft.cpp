#include <doctest.h>

#include <algorithm>
#include <bit>
#include <cmath>

#include "core/craft.hpp"
#include "helpers.hpp"

using namespace mtd;
using namespace mtd::craft;
using featurespace::Direction;
using featurespace::Family;
using featurespace::FeatureCatalog;
using featurespace::FeatureVector;
using testing_support::SynthFixture;

namespace {

const SynthFixture& fixture() {
  static SynthFixture fx(0.6, 600);
  return fx;
}

FeatureVector bits(std::vector<std::uint8_t> b) { return FeatureVector(std::move(b)); }

FeatureVector random_bits(std::size_t m, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  FeatureVector x(m);
  for (std::size_t i = 0; i < m; ++i) x.set(i, coin(rng));
  return x;
}

}  // namespace

TEST_CASE("fgsm on a two-feature linear model") {
  auto m = testing_support::linear({2.0, -1.0}, 0.0);
  auto r = whitebox_attack(*m, bits({1, 0}), CraftMethod::defaults(Method::kFgsm), 1);
  CHECK(r.candidate == std::vector<double>{0.0, 1.0});
  CHECK_FALSE(r.stalled);
  // Finite-difference sign of the malware score agrees with the step.
  const double h = 1e-4;
  for (std::size_t i = 0; i < 2; ++i) {
    std::vector<double> hi{1.0, 0.0}, lo{1.0, 0.0};
    hi[i] += h;
    lo[i] -= h;
    const double fd = (m->score(hi, Label::kMalware) - m->score(lo, Label::kMalware)) / (2 * h);
    CHECK((fd > 0) == (i == 0));
  }
}

TEST_CASE("zero epsilon leaves the input unchanged") {
  auto m = testing_support::linear({2.0, -1.0, 0.5}, 0.0);
  auto method = CraftMethod::defaults(Method::kFgsm);
  method.epsilon = 0.0;
  auto x = bits({1, 0, 1});
  CHECK(whitebox_attack(*m, x, method, 1).candidate == x.relaxed());
}

TEST_CASE("zero gradient stalls instead of throwing") {
  auto m = testing_support::linear({0.0, 0.0}, 1.0);
  auto r = whitebox_attack(*m, bits({1, 1}), CraftMethod::defaults(Method::kFgsm), 1);
  CHECK(r.stalled);
  CHECK(r.candidate == std::vector<double>{1.0, 1.0});
}

TEST_CASE("incompatible model and method are rejected") {
  auto tree = testing_support::stump(4, 3);
  CHECK_THROWS_AS(whitebox_attack(*tree, bits({0, 0, 0, 1}), CraftMethod::defaults(Method::kFgsm), 1),
                  InvalidArgument);
  auto lin = testing_support::linear({1, 1, 1, 1}, 0.0);
  CHECK_THROWS_AS(whitebox_attack(*lin, bits({0, 0, 0, 1}), CraftMethod::defaults(Method::kDtAttack), 1),
                  InvalidArgument);
  CHECK(compatible(classifiers::ModelKind::kMlp, Method::kJsma));
  CHECK_FALSE(compatible(classifiers::ModelKind::kLinearSvm, Method::kJsma));
  CHECK(compatible(classifiers::ModelKind::kRandomForest, Method::kDtAttack));
}

TEST_CASE("tree attack on a stump flips the split feature, and nothing shorter exists") {
  auto tree = testing_support::stump(6, 3);
  auto x = bits({1, 0, 1, 1, 0, 0});
  auto r = whitebox_attack(*tree, x, CraftMethod::defaults(Method::kDtAttack), 1);
  auto out = discretize(r.candidate);
  CHECK(tree->predict(out) == Label::kBenign);
  std::size_t flips = 0;
  for (std::size_t i = 0; i < 6; ++i) flips += out[i] != x[i];
  CHECK(flips == 1);
  CHECK_FALSE(out[3]);
  // Brute force: the minimum single-bit reroute is exactly feature 3.
  for (std::size_t i = 0; i < 6; ++i) {
    auto y = x;
    y.flip(i);
    CHECK((tree->predict(y) == Label::kBenign) == (i == 3));
  }
}

TEST_CASE("tree attack minimality against brute force on trained trees") {
  const auto& fx = fixture();
  featurespace::Dataset small(fx.splits.train.begin(), fx.splits.train.begin() + 200);
  auto spec = classifiers::ModelSpec::decision_tree(1);
  spec.tree.max_depth = 3;
  // Restrict to 10 features so exhaustive search over 2^10 vectors is cheap.
  for (auto& s : small) {
    std::vector<std::uint8_t> b(s.features.bits().begin(), s.features.bits().begin() + 10);
    s.features = FeatureVector(b);
  }
  auto tree = classifiers::train(spec, small, small);
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_bits(10, rng);
    if (tree->predict(x) != Label::kMalware) continue;
    auto out = discretize(whitebox_attack(*tree, x, CraftMethod::defaults(Method::kDtAttack), 1).candidate);
    std::size_t got = 0;
    for (std::size_t i = 0; i < 10; ++i) got += out[i] != x[i];
    std::size_t best = 11;
    for (std::uint32_t mask = 0; mask < 1024; ++mask) {
      auto y = x;
      for (std::size_t i = 0; i < 10; ++i) {
        if (mask >> i & 1U) y.flip(i);
      }
      if (tree->predict(y) == Label::kBenign) best = std::min<std::size_t>(best, std::popcount(mask));
    }
    if (best == 11) continue;
    CHECK(tree->predict(out) == Label::kBenign);
    CHECK(got == best);
  }
}

TEST_CASE("discretize boundaries") {
  CHECK(discretize(std::vector<double>{0.7, 0.3, 0.5, 0.4999}) == bits({1, 0, 1, 0}));
  CHECK(discretize(std::vector<double>{0.0, 0.0, 0.0}) == bits({0, 0, 0}));
  CHECK(discretize(std::vector<double>{-1.0, 2.0}) == bits({0, 1}));
  Rng rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> v(8);
    for (auto& x : v) x = u(rng);
    auto once = discretize(v);
    auto twice = discretize(once.relaxed());
    CHECK(once == twice);
  }
}

TEST_CASE("functionality enforcement") {
  std::vector<featurespace::CatalogEntry> entries{
      {0, Family::kS2, true, false}, {1, Family::kS7, true, true}, {2, Family::kS6, false, false}};
  auto cat = FeatureCatalog::from_entries(entries);

  auto removal = enforce_functionality(bits({1, 0, 0}), bits({0, 0, 0}), cat);
  CHECK(removal.vector == bits({1, 0, 0}));
  REQUIRE(removal.trace.flips.size() == 1);
  CHECK(removal.trace.flips[0].reverted);
  CHECK(removal.trace.applied() == 0);

  auto add = enforce_functionality(bits({0, 0, 0}), bits({0, 1, 0}), cat);
  CHECK(add.vector == bits({0, 1, 0}));
  REQUIRE(add.trace.flips.size() == 1);
  CHECK_FALSE(add.trace.flips[0].reverted);
  CHECK(add.trace.flips[0].direction == Direction::kAdd);

  CHECK(enforce_functionality(bits({1, 1, 0}), bits({1, 1, 0}), cat).trace.flips.empty());
  CHECK_THROWS_AS(enforce_functionality(bits({1, 1, 0}), bits({1, 1}), cat), InvalidArgument);
}

TEST_CASE("functionality enforcement is idempotent and never invents flips") {
  const auto& cat = fixture().data.catalog;
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    auto x = random_bits(cat.size(), rng);
    auto cand = random_bits(cat.size(), rng);
    auto first = enforce_functionality(x, cand, cat);
    CHECK(permission_audit(x, first.vector, cat));
    for (std::size_t i = 0; i < cat.size(); ++i) {
      if (first.vector[i] != x[i]) CHECK(cand[i] == first.vector[i]);
    }
    auto second = enforce_functionality(x, first.vector, cat);
    CHECK(second.vector == first.vector);
    for (const auto& f : second.trace.flips) CHECK_FALSE(f.reverted);
  }
}

TEST_CASE("suite output evades its source and passes the audit") {
  const auto& fx = fixture();
  auto mlp = classifiers::train(classifiers::ModelSpec::neural_network(1), fx.splits.train, fx.splits.validation);
  auto tree = classifiers::train(classifiers::ModelSpec::decision_tree(1), fx.splits.train, fx.splits.validation);
  std::vector<classifiers::ModelPtr> models{mlp, tree};
  std::vector<CraftMethod> methods{CraftMethod::defaults(Method::kFgsm), CraftMethod::defaults(Method::kDtAttack)};
  std::size_t with_candidate = 0, total = 0;
  for (const auto& s : featurespace::filter_label(fx.splits.attack_final, Label::kMalware)) {
    ++total;
    auto cands = craft_suite(models, s.features, methods, fx.data.catalog, 3);
    CHECK(cands.size() <= 2);
    with_candidate += !cands.empty();
    for (const auto& c : cands) {
      CHECK(models[c.source_model]->predict(c.vector) == Label::kBenign);
      CHECK(permission_audit(s.features, c.vector, fx.data.catalog));
      CHECK(c.vector != s.features);
    }
  }
  MESSAGE("malware with at least one candidate: " << with_candidate << "/" << total);
  CHECK(with_candidate * 2 >= total);
}

TEST_CASE("suite is empty when every flip is forbidden") {
  const auto& fx = fixture();
  auto tree = classifiers::train(classifiers::ModelSpec::decision_tree(1), fx.splits.train, fx.splits.validation);
  auto locked = FeatureCatalog::uniform(fx.data.catalog.size(), Family::kS6);
  std::vector<classifiers::ModelPtr> models{tree};
  for (const auto& s : featurespace::filter_label(fx.splits.attack_final, Label::kMalware)) {
    CHECK(craft_suite(models, s.features, default_methods(), locked, 1).empty());
  }
}

TEST_CASE("fgsm step signs agree with finite differences on a trained network") {
  const auto& fx = fixture();
  auto mlp = classifiers::train(classifiers::ModelSpec::neural_network(3), fx.splits.train, fx.splits.validation);
  const double h = 1e-4;
  std::size_t checked = 0, agree = 0;
  for (const auto& s : featurespace::filter_label(fx.splits.attack_final, Label::kMalware)) {
    auto x = s.features.relaxed();
    auto g = mlp->gradient(x, Label::kMalware);
    auto r = whitebox_attack(*mlp, s.features, CraftMethod::defaults(Method::kFgsm), 1);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (std::abs(g[i]) <= 1e-6) continue;
      auto hi = x, lo = x;
      hi[i] += h;
      lo[i] -= h;
      const double fd = (mlp->score(hi, Label::kMalware) - mlp->score(lo, Label::kMalware)) / (2 * h);
      const double expected = std::clamp(x[i] - (fd > 0 ? 1.0 : -1.0), 0.0, 1.0);
      ++checked;
      agree += r.candidate[i] == expected;
    }
  }
  MESSAGE("sign agreement " << agree << "/" << checked);
  REQUIRE(checked > 0);
  CHECK(static_cast<double>(agree) >= 0.99 * static_cast<double>(checked));
}

TEST_CASE("trace json round-trip") {
  PerturbationTrace t;
  t.flips = {{3, Direction::kAdd, false}, {7, Direction::kRemove, true}};
  auto back = PerturbationTrace::from_json(t.to_json());
  CHECK(back.flips == t.flips);
  CHECK(t.applied() == 1);
}
