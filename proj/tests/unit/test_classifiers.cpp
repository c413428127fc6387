#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "core/classifiers.hpp"
#include "core/craft.hpp"
#include "helpers.hpp"

using namespace mtd;
using namespace mtd::classifiers;
using featurespace::Dataset;
using featurespace::FeatureVector;
using testing_support::SynthFixture;

namespace {

const SynthFixture& fixture() {
  static SynthFixture fx(0.6, 1000);
  return fx;
}

std::vector<double> random_point(std::size_t m, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::vector<double> x(m);
  for (auto& v : x) v = u(rng);
  return x;
}

std::vector<FeatureVector> probes(std::size_t n, std::size_t m, std::uint64_t seed) {
  Rng rng(seed);
  std::bernoulli_distribution b(0.4);
  std::vector<FeatureVector> out;
  for (std::size_t i = 0; i < n; ++i) {
    FeatureVector x(m);
    for (std::size_t j = 0; j < m; ++j) x.set(j, b(rng));
    out.push_back(x);
  }
  return out;
}

std::vector<std::vector<double>> sorted_layer_weights(const Model& m) {
  std::vector<std::vector<double>> out;
  for (const auto& l : std::get<Mlp>(m.params()).layers) {
    std::vector<double> w(l.weights.data(), l.weights.data() + l.weights.size());
    std::sort(w.begin(), w.end());
    out.push_back(w);
  }
  return out;
}

}  // namespace

TEST_CASE("default decision tree reaches the 90 percent regime on held-out synthetic data") {
  const auto& fx = fixture();
  auto tree = train(ModelSpec::decision_tree(1), fx.splits.train, fx.splits.validation);
  Dataset held = fx.splits.attack_train;
  held.insert(held.end(), fx.splits.attack_final.begin(), fx.splits.attack_final.end());
  const double acc = accuracy(*tree, held);
  MESSAGE("tree held-out accuracy " << acc);
  CHECK(acc >= 0.90);
  CHECK(tree->info().validation_accuracy > 0.85);
}

TEST_CASE("every model family trains deterministically with normalized probabilities") {
  const auto& fx = fixture();
  Dataset small(fx.splits.train.begin(), fx.splits.train.begin() + 300);
  for (const auto& spec : vanilla_specs(5)) {
    CAPTURE(kind_name(spec.kind));
    auto a = train(spec, small, fx.splits.validation);
    auto b = train(spec, small, fx.splits.validation);
    CHECK(a->parameter_hash() == b->parameter_hash());
    for (const auto& s : fx.splits.attack_final) {
      const auto p = a->predict_proba(s.features);
      CHECK(p.benign >= 0.0);
      CHECK(p.malware >= 0.0);
      CHECK(std::abs(p.benign + p.malware - 1.0) <= 1e-6);
      CHECK(a->predict(s.features) == p.label());
      CHECK(a->predict(s.features) == b->predict(s.features));
    }
    auto back = Model::from_json(a->to_json());
    CHECK(back.parameter_hash() == a->parameter_hash());
    for (const auto& s : fx.splits.attack_final) {
      CHECK(back.predict_proba(s.features).malware == a->predict_proba(s.features).malware);
    }
  }
}

TEST_CASE("single-class training set and width mismatch are rejected") {
  const auto& fx = fixture();
  auto benign = featurespace::filter_label(fx.splits.train, Label::kBenign);
  CHECK_THROWS_AS(train(ModelSpec::decision_tree(1), benign, benign), InvalidArgument);
  auto tree = train(ModelSpec::decision_tree(1), fx.splits.train, fx.splits.validation);
  CHECK_THROWS_AS(tree->predict(FeatureVector(3)), InvalidArgument);
}

TEST_CASE("ties in probability go to malware") {
  CHECK(Proba{0.5, 0.5}.label() == Label::kMalware);
  CHECK(Proba{0.6, 0.4}.label() == Label::kBenign);
}

TEST_CASE("linear svm learns a malware-indicative feature") {
  Dataset d;
  Rng rng(3);
  std::bernoulli_distribution coin(0.5);
  for (std::uint32_t i = 0; i < 200; ++i) {
    FeatureVector x(5);
    const bool mal = i % 2 == 0;
    x.set(0, mal);
    for (std::size_t j = 1; j < 5; ++j) x.set(j, coin(rng));
    d.push_back({i, x, mal ? Label::kMalware : Label::kBenign});
  }
  auto svm = train(ModelSpec::linear_svm(1), d, d);
  FeatureVector probe(5);
  probe.set(0, true);
  CHECK(svm->predict(probe) == Label::kMalware);
  CHECK(svm->predict(FeatureVector(5)) == Label::kBenign);
}

TEST_CASE("linear svm gradient is its weight vector") {
  auto m = testing_support::linear({2.0, -1.0, 0.5}, 0.1);
  const std::vector<double> x{0.3, 0.7, 0.2};
  CHECK(m->gradient(x, Label::kMalware) == std::vector<double>{2.0, -1.0, 0.5});
  CHECK(m->gradient(x, Label::kBenign) == std::vector<double>{-2.0, 1.0, -0.5});
}

TEST_CASE("mlp gradient matches central finite differences") {
  const auto& fx = fixture();
  auto mlp = train(ModelSpec::neural_network(2), fx.splits.train, fx.splits.validation);
  const double h = 1e-4;
  std::size_t checked = 0, agree = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto x = random_point(fx.data.catalog.size(), seed);
    for (Label target : {Label::kMalware, Label::kBenign}) {
      auto g = mlp->gradient(x, target);
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::abs(g[i]) <= 1e-6) continue;
        auto hi = x, lo = x;
        hi[i] += h;
        lo[i] -= h;
        const double fd = (mlp->score(hi, target) - mlp->score(lo, target)) / (2 * h);
        ++checked;
        agree += std::abs(fd - g[i]) <= 1e-3 * std::abs(g[i]) + 1e-9;
      }
    }
  }
  MESSAGE("finite-difference agreement " << agree << "/" << checked);
  CHECK(checked > 0);
  CHECK(agree == checked);
}

TEST_CASE("trees are not differentiable") {
  auto t = testing_support::stump(4, 1);
  std::vector<double> x(4, 0.0);
  CHECK_FALSE(t->differentiable());
  CHECK_THROWS_AS(t->gradient(x, Label::kMalware), NotDifferentiable);
}

TEST_CASE("softmax output is normalized") {
  const auto& fx = fixture();
  auto mlp = train(ModelSpec::neural_network(4), fx.splits.train, fx.splits.validation);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto x = random_point(fx.data.catalog.size(), 100 + seed);
    auto p = mlp->predict_proba(x);
    CHECK(std::abs(p.benign + p.malware - 1.0) <= 1e-6);
  }
}

TEST_CASE("weight perturbation") {
  const auto& fx = fixture();
  auto base = train(ModelSpec::neural_network(6), fx.splits.train, fx.splits.validation);
  const auto probe = probes(1000, fx.data.catalog.size(), 9);

  auto same = perturb_weights(*base, 0.0, 1);
  for (const auto& x : probe) CHECK(same->predict(x) == base->predict(x));

  std::size_t disagreeing_students = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto student = perturb_weights(*base, 0.3, seed);
    for (const auto& x : probe) {
      if (student->predict(x) != base->predict(x)) {
        ++disagreeing_students;
        break;
      }
    }
  }
  CHECK(disagreeing_students >= 1);
  CHECK(perturb_weights(*base, 0.3, 1)->parameter_hash() != perturb_weights(*base, 0.3, 2)->parameter_hash());
  CHECK(perturb_weights(*base, 0.3, 1)->parameter_hash() == perturb_weights(*base, 0.3, 1)->parameter_hash());
  CHECK_THROWS_AS(perturb_weights(*testing_support::stump(4, 0), 0.3, 1), InvalidArgument);
}

TEST_CASE("weight shuffling preserves per-layer multisets") {
  const auto& fx = fixture();
  auto base = train(ModelSpec::neural_network(7), fx.splits.train, fx.splits.validation);
  auto shuffled = shuffle_weights(*base, 3);
  CHECK(sorted_layer_weights(*shuffled) == sorted_layer_weights(*base));
  CHECK(shuffled->parameter_hash() != base->parameter_hash());
  CHECK(shuffle_weights(*base, 3)->parameter_hash() == shuffled->parameter_hash());
  const auto& a = std::get<Mlp>(base->params());
  const auto& b = std::get<Mlp>(shuffled->params());
  for (std::size_t l = 0; l < a.layers.size(); ++l) CHECK(a.layers[l].bias == b.layers[l].bias);
  MESSAGE("shuffled accuracy " << accuracy(*shuffled, fx.splits.validation) << " vs base "
                               << accuracy(*base, fx.splits.validation));
  CHECK_THROWS_AS(shuffle_weights(*testing_support::stump(4, 0), 1), InvalidArgument);
}

TEST_CASE("adversarial training set") {
  const auto& fx = fixture();
  Dataset train_set(fx.splits.train.begin(), fx.splits.train.begin() + 400);
  std::vector<ModelPtr> vanilla;
  for (const auto& spec : vanilla_specs(1)) vanilla.push_back(train(spec, train_set, fx.splits.validation));
  auto adv = build_adv_training_set(vanilla, train_set, fx.data.catalog, 0.25, 4);
  CHECK(adv.size() == 100);
  std::map<std::uint32_t, const featurespace::Sample*> by_id;
  for (const auto& s : train_set) by_id[s.id] = &s;
  for (const auto& s : adv) {
    CHECK(s.label == Label::kMalware);
    REQUIRE(by_id.count(s.id) == 1);
    CHECK(craft::permission_audit(by_id[s.id]->features, s.features, fx.data.catalog));
  }
  CHECK_THROWS_AS(build_adv_training_set(vanilla, train_set, fx.data.catalog, 0.0, 4), InvalidArgument);
  CHECK_THROWS_AS(build_adv_training_set(vanilla, featurespace::filter_label(train_set, Label::kBenign),
                                         fx.data.catalog, 0.25, 4),
                  InvalidArgument);
}
