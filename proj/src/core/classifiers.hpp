#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "core/common.hpp"
#include "core/featurespace.hpp"

namespace mtd::classifiers {

using featurespace::Dataset;
using featurespace::FeatureVector;

enum class ModelKind { kDecisionTree, kMlp, kRandomForest, kLinearSvm };

std::string kind_name(ModelKind k);
ModelKind kind_from_name(const std::string& s);

struct TreeParams {
  int max_depth = 5;
  int min_samples_leaf = 1;
};

struct ForestParams {
  int n_trees = 32;
  int max_depth = 100;
  int min_samples_leaf = 1;
  int max_features = 0;  // 0 selects floor(sqrt(M))
};

struct MlpParams {
  std::vector<int> hidden{100, 50};
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch_size = 32;
  int max_epochs = 60;
  int patience = 6;
};

struct SvmParams {
  double c = 1.0;
  int max_iter = 1000;
  double tol = 1e-3;
};

struct ModelSpec {
  ModelKind kind = ModelKind::kMlp;
  TreeParams tree;
  ForestParams forest;
  MlpParams mlp;
  SvmParams svm;
  std::uint64_t seed = 0;

  static ModelSpec decision_tree(std::uint64_t seed);
  static ModelSpec neural_network(std::uint64_t seed, std::vector<int> hidden = {100, 50});
  static ModelSpec random_forest(std::uint64_t seed);
  static ModelSpec linear_svm(std::uint64_t seed);

  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
};

struct Proba {
  double benign = 0.5;
  double malware = 0.5;

  // Ties resolve to malware.
  Label label() const { return malware >= benign ? Label::kMalware : Label::kBenign; }
  double max() const { return std::max(benign, malware); }
};

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  std::int32_t left = -1;     // feature value 0
  std::int32_t right = -1;    // feature value 1
  double p_malware = 0.5;
  double weight = 0.0;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  std::size_t leaf_for(std::span<const double> x) const;
  double p_malware(std::span<const double> x) const { return nodes[leaf_for(x)].p_malware; }
  // A single-leaf tree that always answers with the given malware probability.
  static DecisionTree constant(double p_malware);
};

struct Forest {
  std::vector<DecisionTree> trees;
};

struct DenseLayer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;
};

// ReLU hidden layers, two-unit softmax output.
struct Mlp {
  std::vector<DenseLayer> layers;

  Eigen::Vector2d logits(std::span<const double> x) const;
};

// Decision value f(x) = w.x + b; p_malware = sigmoid(platt_a * f + platt_b).
struct LinearSvm {
  Eigen::VectorXd w;
  double b = 0.0;
  double platt_a = 1.0;
  double platt_b = 0.0;

  double decision(std::span<const double> x) const;
};

struct TrainingInfo {
  std::uint64_t seed = 0;
  std::uint64_t data_fingerprint = 0;
  double validation_accuracy = 0.0;
  bool converged = true;  // false when the epoch cap was reached
  int epochs = 0;
};

class Model {
 public:
  using Params = std::variant<DecisionTree, Forest, Mlp, LinearSvm>;

  Model(Params params, std::size_t feature_count, TrainingInfo info = {});

  ModelKind kind() const;
  std::size_t feature_count() const { return feature_count_; }
  const Params& params() const { return params_; }
  const TrainingInfo& info() const { return info_; }

  Proba predict_proba(const FeatureVector& x) const;
  Proba predict_proba(std::span<const double> x) const;
  Label predict(const FeatureVector& x) const { return predict_proba(x).label(); }
  Label predict(std::span<const double> x) const { return predict_proba(x).label(); }

  bool differentiable() const;
  // Log-odds of `target` over the other class (MLP logit margin, SVM decision value).
  double score(std::span<const double> x, Label target) const;
  // d score / d x. Throws NotDifferentiable for tree models.
  std::vector<double> gradient(std::span<const double> x, Label target) const;

  nlohmann::json to_json() const;
  static Model from_json(const nlohmann::json& j);
  std::uint64_t parameter_hash() const;

 private:
  void check_width(std::size_t n) const;

  Params params_;
  std::size_t feature_count_;
  TrainingInfo info_;
};

using ModelPtr = std::shared_ptr<const Model>;

class NotDifferentiable : public Error {
 public:
  using Error::Error;
};

ModelPtr train(const ModelSpec& spec, const Dataset& train, const Dataset& validation);

// Continues training an existing MLP from its current parameters.
ModelPtr fine_tune(const Model& base, const MlpParams& params, const Dataset& train, const Dataset& validation,
                   std::uint64_t seed);

// theta <- theta * (1 + u), u ~ Uniform(-w, w), for every weight and bias.
ModelPtr perturb_weights(const Model& model, double w, std::uint64_t seed);

// Permutes the entries of each layer's weight matrix; biases untouched.
ModelPtr shuffle_weights(const Model& model, std::uint64_t seed);

double accuracy(const Model& model, const Dataset& samples);

// Adversarial examples crafted against `vanilla` from malware in `train`,
// functionality-enforced and labelled malware. Size is round(fraction*|train|).
Dataset build_adv_training_set(std::span<const ModelPtr> vanilla, const Dataset& train,
                               const featurespace::FeatureCatalog& catalog, double fraction, std::uint64_t seed);

// Vanilla set: tree, MLP, forest, linear SVM.
std::vector<ModelSpec> vanilla_specs(std::uint64_t seed);

namespace detail {
DecisionTree grow_tree(const Dataset& data, std::span<const std::uint32_t> rows, const TreeParams& params,
                       int max_features, Rng& rng);
Mlp init_mlp(std::size_t inputs, const std::vector<int>& hidden, Rng& rng);
// Returns epochs run; `converged` reports early stop before the cap.
int fit_mlp(Mlp& net, const MlpParams& params, const Dataset& train, const Dataset& validation, Rng& rng,
            bool& converged);
LinearSvm fit_linear_svm(const Dataset& train, const Dataset& validation, const SvmParams& params, Rng& rng);
}  // namespace detail

}  // namespace mtd::classifiers
