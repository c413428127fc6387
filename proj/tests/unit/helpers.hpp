#pragma once

#include <memory>
#include <vector>

#include "core/classifiers.hpp"
#include "core/featurespace.hpp"
#include "core/oracles.hpp"

namespace testing_support {

using namespace mtd;

// Constant-output model: a single-leaf tree.
inline classifiers::ModelPtr constant_model(std::size_t m, Label y) {
  return std::make_shared<classifiers::Model>(
      classifiers::DecisionTree::constant(y == Label::kMalware ? 1.0 : 0.0), m);
}

// Stump: malware iff feature f is set.
inline classifiers::ModelPtr stump(std::size_t m, std::int32_t f, bool set_means_malware = true) {
  classifiers::DecisionTree t;
  t.nodes.push_back({f, 1, 2, 0.5, 1.0});
  t.nodes.push_back({-1, -1, -1, set_means_malware ? 0.0 : 1.0, 0.5});
  t.nodes.push_back({-1, -1, -1, set_means_malware ? 1.0 : 0.0, 0.5});
  return std::make_shared<classifiers::Model>(t, m);
}

// Linear SVM with given weights and bias, identity calibration.
inline classifiers::ModelPtr linear(std::vector<double> w, double b) {
  classifiers::LinearSvm s;
  s.w = Eigen::Map<Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
  s.b = b;
  return std::make_shared<classifiers::Model>(s, w.size());
}

// Scripted target: returns answers from a list, cycling.
class ScriptedTarget : public oracles::QueryTarget {
 public:
  explicit ScriptedTarget(std::vector<Label> answers) : answers_(std::move(answers)) {}
  Label query(const featurespace::FeatureVector&) override { return answers_[count_++ % answers_.size()]; }
  std::uint64_t query_count() const override { return count_; }

 private:
  std::vector<Label> answers_;
  std::uint64_t count_ = 0;
};

// Wraps any model as a deterministic query target.
class ModelTarget : public oracles::QueryTarget {
 public:
  explicit ModelTarget(classifiers::ModelPtr m) : model_(std::move(m)) {}
  Label query(const featurespace::FeatureVector& x) override {
    ++count_;
    return model_->predict(x);
  }
  std::uint64_t query_count() const override { return count_; }

 private:
  classifiers::ModelPtr model_;
  std::uint64_t count_ = 0;
};

struct SynthFixture {
  featurespace::SynthData data;
  featurespace::DatasetSplits splits;

  explicit SynthFixture(double delta = 0.6, std::size_t n = 500, std::uint64_t seed = 7,
                        featurespace::FamilyLayout layout = featurespace::FamilyLayout::kRoundRobin) {
    featurespace::SynthSpec spec;
    spec.n_per_class = n;
    spec.delta = delta;
    spec.seed = seed;
    spec.layout = layout;
    data = featurespace::synth_generate(spec);
    splits = featurespace::split_dataset(data.samples, seed);
  }
};

}  // namespace testing_support
