#include "core/classifiers.hpp"

#include <cmath>
#include <numeric>

namespace mtd::classifiers {

using nlohmann::json;

std::string kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::kDecisionTree: return "decision_tree";
    case ModelKind::kMlp: return "mlp";
    case ModelKind::kRandomForest: return "random_forest";
    case ModelKind::kLinearSvm: return "linear_svm";
  }
  return "mlp";
}

ModelKind kind_from_name(const std::string& s) {
  if (s == "decision_tree") return ModelKind::kDecisionTree;
  if (s == "mlp") return ModelKind::kMlp;
  if (s == "random_forest") return ModelKind::kRandomForest;
  if (s == "linear_svm") return ModelKind::kLinearSvm;
  throw InvalidArgument("unknown model kind '" + s + "'");
}

ModelSpec ModelSpec::decision_tree(std::uint64_t seed) {
  ModelSpec s;
  s.kind = ModelKind::kDecisionTree;
  s.seed = seed;
  return s;
}

ModelSpec ModelSpec::neural_network(std::uint64_t seed, std::vector<int> hidden) {
  ModelSpec s;
  s.kind = ModelKind::kMlp;
  s.mlp.hidden = std::move(hidden);
  s.seed = seed;
  return s;
}

ModelSpec ModelSpec::random_forest(std::uint64_t seed) {
  ModelSpec s;
  s.kind = ModelKind::kRandomForest;
  s.seed = seed;
  return s;
}

ModelSpec ModelSpec::linear_svm(std::uint64_t seed) {
  ModelSpec s;
  s.kind = ModelKind::kLinearSvm;
  s.seed = seed;
  return s;
}

json ModelSpec::to_json() const {
  json j{{"kind", kind_name(kind)}, {"seed", seed}};
  switch (kind) {
    case ModelKind::kDecisionTree:
      j["max_depth"] = tree.max_depth;
      j["min_samples_leaf"] = tree.min_samples_leaf;
      break;
    case ModelKind::kRandomForest:
      j["n_trees"] = forest.n_trees;
      j["max_depth"] = forest.max_depth;
      j["min_samples_leaf"] = forest.min_samples_leaf;
      j["max_features"] = forest.max_features;
      break;
    case ModelKind::kMlp:
      j["hidden"] = mlp.hidden;
      j["learning_rate"] = mlp.learning_rate;
      j["momentum"] = mlp.momentum;
      j["batch_size"] = mlp.batch_size;
      j["max_epochs"] = mlp.max_epochs;
      j["patience"] = mlp.patience;
      break;
    case ModelKind::kLinearSvm:
      j["c"] = svm.c;
      j["max_iter"] = svm.max_iter;
      j["tol"] = svm.tol;
      break;
  }
  return j;
}

ModelSpec ModelSpec::from_json(const json& j) {
  ModelSpec s;
  s.kind = kind_from_name(j.at("kind").get<std::string>());
  s.seed = j.value("seed", std::uint64_t{0});
  switch (s.kind) {
    case ModelKind::kDecisionTree:
      s.tree.max_depth = j.value("max_depth", s.tree.max_depth);
      s.tree.min_samples_leaf = j.value("min_samples_leaf", s.tree.min_samples_leaf);
      break;
    case ModelKind::kRandomForest:
      s.forest.n_trees = j.value("n_trees", s.forest.n_trees);
      s.forest.max_depth = j.value("max_depth", s.forest.max_depth);
      s.forest.min_samples_leaf = j.value("min_samples_leaf", s.forest.min_samples_leaf);
      s.forest.max_features = j.value("max_features", s.forest.max_features);
      break;
    case ModelKind::kMlp:
      s.mlp.hidden = j.value("hidden", s.mlp.hidden);
      s.mlp.learning_rate = j.value("learning_rate", s.mlp.learning_rate);
      s.mlp.momentum = j.value("momentum", s.mlp.momentum);
      s.mlp.batch_size = j.value("batch_size", s.mlp.batch_size);
      s.mlp.max_epochs = j.value("max_epochs", s.mlp.max_epochs);
      s.mlp.patience = j.value("patience", s.mlp.patience);
      break;
    case ModelKind::kLinearSvm:
      s.svm.c = j.value("c", s.svm.c);
      s.svm.max_iter = j.value("max_iter", s.svm.max_iter);
      s.svm.tol = j.value("tol", s.svm.tol);
      break;
  }
  return s;
}

std::vector<ModelSpec> vanilla_specs(std::uint64_t seed) {
  return {ModelSpec::decision_tree(derive_seed(seed, 11)), ModelSpec::neural_network(derive_seed(seed, 12)),
          ModelSpec::random_forest(derive_seed(seed, 13)), ModelSpec::linear_svm(derive_seed(seed, 14))};
}

// ---------------------------------------------------------------------------
// Evaluation primitives

std::size_t DecisionTree::leaf_for(std::span<const double> x) const {
  std::size_t n = 0;
  while (nodes[n].feature >= 0) {
    n = static_cast<std::size_t>(x[static_cast<std::size_t>(nodes[n].feature)] >= 0.5 ? nodes[n].right
                                                                                        : nodes[n].left);
  }
  return n;
}

DecisionTree DecisionTree::constant(double p_malware) {
  DecisionTree t;
  TreeNode leaf;
  leaf.p_malware = p_malware;
  leaf.weight = 1.0;
  t.nodes.push_back(leaf);
  return t;
}

Eigen::Vector2d Mlp::logits(std::span<const double> x) const {
  Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Eigen::VectorXd z = layers[l].weights * a + layers[l].bias;
    if (l + 1 < layers.size()) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

double LinearSvm::decision(std::span<const double> x) const {
  return w.dot(Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()))) + b;
}

namespace {

Proba softmax2(const Eigen::Vector2d& z) {
  const double mx = std::max(z[0], z[1]);
  const double e0 = std::exp(z[0] - mx);
  const double e1 = std::exp(z[1] - mx);
  return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

Proba from_malware(double p) {
  p = std::clamp(p, 0.0, 1.0);
  return {1.0 - p, p};
}

double sigmoid(double t) {
  return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

}  // namespace

Model::Model(Params params, std::size_t feature_count, TrainingInfo info)
    : params_(std::move(params)), feature_count_(feature_count), info_(info) {}

ModelKind Model::kind() const {
  switch (params_.index()) {
    case 0: return ModelKind::kDecisionTree;
    case 1: return ModelKind::kRandomForest;
    case 2: return ModelKind::kMlp;
    default: return ModelKind::kLinearSvm;
  }
}

void Model::check_width(std::size_t n) const {
  if (n != feature_count_) {
    throw InvalidArgument("input width " + std::to_string(n) + " does not match model width " +
                          std::to_string(feature_count_));
  }
}

Proba Model::predict_proba(const FeatureVector& x) const { return predict_proba(std::span<const double>(x.relaxed())); }

Proba Model::predict_proba(std::span<const double> x) const {
  check_width(x.size());
  return std::visit(
      [&](const auto& p) -> Proba {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, DecisionTree>) {
          return from_malware(p.p_malware(x));
        } else if constexpr (std::is_same_v<T, Forest>) {
          double s = 0.0;
          for (const auto& t : p.trees) s += t.p_malware(x);
          return from_malware(p.trees.empty() ? 0.5 : s / static_cast<double>(p.trees.size()));
        } else if constexpr (std::is_same_v<T, Mlp>) {
          return softmax2(p.logits(x));
        } else {
          return from_malware(sigmoid(p.platt_a * p.decision(x) + p.platt_b));
        }
      },
      params_);
}

bool Model::differentiable() const { return kind() == ModelKind::kMlp || kind() == ModelKind::kLinearSvm; }

double Model::score(std::span<const double> x, Label target) const {
  check_width(x.size());
  const double sign = target == Label::kMalware ? 1.0 : -1.0;
  if (const auto* mlp = std::get_if<Mlp>(&params_)) {
    auto z = mlp->logits(x);
    return sign * (z[1] - z[0]);
  }
  if (const auto* svm = std::get_if<LinearSvm>(&params_)) return sign * svm->decision(x);
  throw NotDifferentiable("non-differentiable model: " + kind_name(kind()));
}

std::vector<double> Model::gradient(std::span<const double> x, Label target) const {
  check_width(x.size());
  const double sign = target == Label::kMalware ? 1.0 : -1.0;
  if (const auto* svm = std::get_if<LinearSvm>(&params_)) {
    std::vector<double> g(feature_count_);
    for (std::size_t i = 0; i < feature_count_; ++i) g[i] = sign * svm->w[static_cast<Eigen::Index>(i)];
    return g;
  }
  const auto* mlp = std::get_if<Mlp>(&params_);
  if (!mlp) throw NotDifferentiable("non-differentiable model: " + kind_name(kind()));

  // Forward, keeping pre-activations for the ReLU masks.
  std::vector<Eigen::VectorXd> pre;
  Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  for (std::size_t l = 0; l < mlp->layers.size(); ++l) {
    Eigen::VectorXd z = mlp->layers[l].weights * a + mlp->layers[l].bias;
    pre.push_back(z);
    a = l + 1 < mlp->layers.size() ? Eigen::VectorXd(z.cwiseMax(0.0)) : z;
  }
  Eigen::VectorXd delta(2);
  delta << -sign, sign;
  for (std::size_t l = mlp->layers.size(); l-- > 0;) {
    if (l + 1 < mlp->layers.size()) {
      delta = delta.cwiseProduct((pre[l].array() > 0.0).cast<double>().matrix());
    }
    delta = mlp->layers[l].weights.transpose() * delta;
  }
  return {delta.data(), delta.data() + delta.size()};
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}};
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  auto flat = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(flat.size()) != rows * cols) throw ParseError("matrix size mismatch", 0, 0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
  return m;
}

json tree_to_json(const DecisionTree& t) {
  std::vector<int> feature, left, right;
  std::vector<double> p, w;
  for (const auto& n : t.nodes) {
    feature.push_back(n.feature);
    left.push_back(n.left);
    right.push_back(n.right);
    p.push_back(n.p_malware);
    w.push_back(n.weight);
  }
  return {{"feature", feature}, {"left", left}, {"right", right}, {"p_malware", p}, {"weight", w}};
}

DecisionTree tree_from_json(const json& j) {
  auto feature = j.at("feature").get<std::vector<int>>();
  auto left = j.at("left").get<std::vector<int>>();
  auto right = j.at("right").get<std::vector<int>>();
  auto p = j.at("p_malware").get<std::vector<double>>();
  auto w = j.at("weight").get<std::vector<double>>();
  DecisionTree t;
  for (std::size_t i = 0; i < feature.size(); ++i) t.nodes.push_back({feature[i], left[i], right[i], p[i], w[i]});
  if (t.nodes.empty()) throw ParseError("empty tree", 0, 0);
  return t;
}

}  // namespace

json Model::to_json() const {
  json params = std::visit(
      [](const auto& p) -> json {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, DecisionTree>) {
          return tree_to_json(p);
        } else if constexpr (std::is_same_v<T, Forest>) {
          json trees = json::array();
          for (const auto& t : p.trees) trees.push_back(tree_to_json(t));
          return {{"trees", trees}};
        } else if constexpr (std::is_same_v<T, Mlp>) {
          json layers = json::array();
          for (const auto& l : p.layers) {
            layers.push_back({{"weights", matrix_to_json(l.weights)}, {"bias", matrix_to_json(l.bias)}});
          }
          return {{"layers", layers}};
        } else {
          return {{"w", matrix_to_json(p.w)}, {"b", p.b}, {"platt_a", p.platt_a}, {"platt_b", p.platt_b}};
        }
      },
      params_);
  return {{"format", "mtdsim-model"},
          {"version", 1},
          {"kind", kind_name(kind())},
          {"features", feature_count_},
          {"params", params},
          {"meta",
           {{"seed", info_.seed},
            {"data_fingerprint", info_.data_fingerprint},
            {"validation_accuracy", info_.validation_accuracy},
            {"converged", info_.converged},
            {"epochs", info_.epochs}}}};
}

Model Model::from_json(const json& j) {
  if (j.value("format", std::string{}) != "mtdsim-model") throw ParseError("not a model blob", 0, 0);
  if (j.value("version", 0) != 1) throw ParseError("unsupported model version", 0, 0);
  const auto kind = kind_from_name(j.at("kind").get<std::string>());
  const auto m = j.at("features").get<std::size_t>();
  const auto& p = j.at("params");
  TrainingInfo info;
  const auto& meta = j.at("meta");
  info.seed = meta.at("seed").get<std::uint64_t>();
  info.data_fingerprint = meta.at("data_fingerprint").get<std::uint64_t>();
  info.validation_accuracy = meta.at("validation_accuracy").get<double>();
  info.converged = meta.at("converged").get<bool>();
  info.epochs = meta.at("epochs").get<int>();
  switch (kind) {
    case ModelKind::kDecisionTree:
      return Model(tree_from_json(p), m, info);
    case ModelKind::kRandomForest: {
      Forest f;
      for (const auto& t : p.at("trees")) f.trees.push_back(tree_from_json(t));
      return Model(std::move(f), m, info);
    }
    case ModelKind::kMlp: {
      Mlp net;
      for (const auto& l : p.at("layers")) {
        net.layers.push_back({matrix_from_json(l.at("weights")), matrix_from_json(l.at("bias"))});
      }
      return Model(std::move(net), m, info);
    }
    case ModelKind::kLinearSvm: {
      LinearSvm s;
      s.w = matrix_from_json(p.at("w"));
      s.b = p.at("b").get<double>();
      s.platt_a = p.at("platt_a").get<double>();
      s.platt_b = p.at("platt_b").get<double>();
      return Model(std::move(s), m, info);
    }
  }
  throw ParseError("unknown model kind", 0, 0);
}

std::uint64_t Model::parameter_hash() const { return fnv1a(to_json().at("params").dump()); }

// ---------------------------------------------------------------------------
// Training entry points

double accuracy(const Model& model, const Dataset& samples) {
  if (samples.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& s : samples) ok += model.predict(s.features) == s.label;
  return static_cast<double>(ok) / static_cast<double>(samples.size());
}

namespace {

void check_trainable(const Dataset& train) {
  if (train.empty()) throw InvalidArgument("training set is empty");
  bool benign = false, malware = false;
  for (const auto& s : train) (s.label == Label::kMalware ? malware : benign) = true;
  if (!benign || !malware) throw InvalidArgument("training set must contain both classes");
}

}  // namespace

ModelPtr train(const ModelSpec& spec, const Dataset& train_set, const Dataset& validation) {
  check_trainable(train_set);
  const std::size_t m = train_set.front().features.size();
  Rng rng(spec.seed);
  TrainingInfo info;
  info.seed = spec.seed;
  info.data_fingerprint = featurespace::fingerprint(train_set);

  Model::Params params;
  switch (spec.kind) {
    case ModelKind::kDecisionTree: {
      std::vector<std::uint32_t> rows(train_set.size());
      std::iota(rows.begin(), rows.end(), 0u);
      params = detail::grow_tree(train_set, rows, spec.tree, static_cast<int>(m), rng);
      break;
    }
    case ModelKind::kRandomForest: {
      Forest f;
      const int max_features = spec.forest.max_features > 0
                                   ? spec.forest.max_features
                                   : std::max(1, static_cast<int>(std::sqrt(static_cast<double>(m))));
      TreeParams tp{spec.forest.max_depth, spec.forest.min_samples_leaf};
      std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(train_set.size() - 1));
      for (int t = 0; t < spec.forest.n_trees; ++t) {
        std::vector<std::uint32_t> rows(train_set.size());
        for (auto& r : rows) r = pick(rng);
        f.trees.push_back(detail::grow_tree(train_set, rows, tp, max_features, rng));
      }
      params = std::move(f);
      break;
    }
    case ModelKind::kMlp: {
      Mlp net = detail::init_mlp(m, spec.mlp.hidden, rng);
      bool converged = true;
      info.epochs = detail::fit_mlp(net, spec.mlp, train_set, validation, rng, converged);
      info.converged = converged;
      params = std::move(net);
      break;
    }
    case ModelKind::kLinearSvm:
      params = detail::fit_linear_svm(train_set, validation, spec.svm, rng);
      break;
  }
  Model model(std::move(params), m, info);
  const Dataset& eval = validation.empty() ? train_set : validation;
  info.validation_accuracy = accuracy(model, eval);
  return std::make_shared<const Model>(Model(model.params(), m, info));
}

ModelPtr fine_tune(const Model& base, const MlpParams& params, const Dataset& train_set, const Dataset& validation,
                   std::uint64_t seed) {
  const auto* mlp = std::get_if<Mlp>(&base.params());
  if (!mlp) throw InvalidArgument("fine_tune requires an MLP");
  check_trainable(train_set);
  Rng rng(seed);
  Mlp net = *mlp;
  bool converged = true;
  TrainingInfo info;
  info.seed = seed;
  info.data_fingerprint = featurespace::fingerprint(train_set);
  info.epochs = detail::fit_mlp(net, params, train_set, validation, rng, converged);
  info.converged = converged;
  Model model(std::move(net), base.feature_count(), info);
  info.validation_accuracy = accuracy(model, validation.empty() ? train_set : validation);
  return std::make_shared<const Model>(Model(model.params(), base.feature_count(), info));
}

ModelPtr perturb_weights(const Model& model, double w, std::uint64_t seed) {
  const auto* mlp = std::get_if<Mlp>(&model.params());
  if (!mlp) throw InvalidArgument("perturb_weights requires an MLP");
  if (!(w >= 0.0)) throw InvalidArgument("perturbation amount must be nonnegative");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Mlp net = *mlp;
  auto jitter = [&](double& theta) { theta *= 1.0 + w * (2.0 * unit(rng) - 1.0); };
  for (auto& layer : net.layers) {
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) jitter(layer.weights.data()[i]);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) jitter(layer.bias.data()[i]);
  }
  TrainingInfo info = model.info();
  info.seed = seed;
  return std::make_shared<const Model>(Model(std::move(net), model.feature_count(), info));
}

ModelPtr shuffle_weights(const Model& model, std::uint64_t seed) {
  const auto* mlp = std::get_if<Mlp>(&model.params());
  if (!mlp) throw InvalidArgument("shuffle_weights requires an MLP");
  Rng rng(seed);
  Mlp net = *mlp;
  for (auto& layer : net.layers) {
    const auto n = static_cast<std::size_t>(layer.weights.size());
    if (n < 2) continue;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    do {
      std::shuffle(perm.begin(), perm.end(), rng);
    } while (std::is_sorted(perm.begin(), perm.end()));
    Eigen::MatrixXd shuffled(layer.weights.rows(), layer.weights.cols());
    for (std::size_t i = 0; i < n; ++i) shuffled.data()[i] = layer.weights.data()[perm[i]];
    layer.weights = std::move(shuffled);
  }
  TrainingInfo info = model.info();
  info.seed = seed;
  return std::make_shared<const Model>(Model(std::move(net), model.feature_count(), info));
}

}  // namespace mtd::classifiers
