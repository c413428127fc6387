#include <algorithm>
#include <numeric>

#include "core/classifiers.hpp"

namespace mtd::classifiers::detail {

namespace {

// n * gini impurity
double weighted_gini(double benign, double malware) {
  const double n = benign + malware;
  if (n <= 0.0) return 0.0;
  return n - (benign * benign + malware * malware) / n;
}

struct PendingNode {
  std::size_t node;
  std::vector<std::uint32_t> rows;
  int depth;
};

}  // namespace

DecisionTree grow_tree(const Dataset& data, std::span<const std::uint32_t> rows, const TreeParams& params,
                       int max_features, Rng& rng) {
  const std::size_t m = data.front().features.size();
  const bool all_features = max_features <= 0 || static_cast<std::size_t>(max_features) >= m;
  const auto min_leaf = static_cast<double>(std::max(1, params.min_samples_leaf));

  DecisionTree tree;
  tree.nodes.emplace_back();
  std::vector<PendingNode> stack;
  stack.push_back({0, {rows.begin(), rows.end()}, 0});
  std::vector<std::size_t> features(m);

  while (!stack.empty()) {
    PendingNode cur = std::move(stack.back());
    stack.pop_back();

    double benign = 0.0, malware = 0.0;
    for (auto r : cur.rows) (data[r].label == Label::kMalware ? malware : benign) += 1.0;
    const double n = benign + malware;
    tree.nodes[cur.node].p_malware = n > 0 ? malware / n : 0.5;
    tree.nodes[cur.node].weight = n;

    if (cur.depth >= params.max_depth || benign == 0.0 || malware == 0.0 || n < 2.0 * min_leaf) continue;

    std::iota(features.begin(), features.end(), std::size_t{0});
    if (!all_features) std::shuffle(features.begin(), features.end(), rng);

    const double parent = weighted_gini(benign, malware);
    double best_gain = 1e-12;
    std::int32_t best_feature = -1;
    int examined = 0;
    for (auto f : features) {
      if (!all_features && examined >= max_features) break;
      double one_b = 0.0, one_m = 0.0;
      for (auto r : cur.rows) {
        if (data[r].features[f]) (data[r].label == Label::kMalware ? one_m : one_b) += 1.0;
      }
      const double ones = one_b + one_m;
      if (ones == 0.0 || ones == n) continue;  // constant within node
      ++examined;
      if (ones < min_leaf || n - ones < min_leaf) continue;
      const double gain = parent - weighted_gini(one_b, one_m) - weighted_gini(benign - one_b, malware - one_m);
      if (gain > best_gain) {
        best_gain = gain;
        best_feature = static_cast<std::int32_t>(f);
      }
    }
    if (best_feature < 0) continue;

    std::vector<std::uint32_t> left_rows, right_rows;
    for (auto r : cur.rows) {
      (data[r].features[static_cast<std::size_t>(best_feature)] ? right_rows : left_rows).push_back(r);
    }
    const auto left = tree.nodes.size();
    tree.nodes.emplace_back();
    const auto right = tree.nodes.size();
    tree.nodes.emplace_back();
    tree.nodes[cur.node].feature = best_feature;
    tree.nodes[cur.node].left = static_cast<std::int32_t>(left);
    tree.nodes[cur.node].right = static_cast<std::int32_t>(right);
    stack.push_back({right, std::move(right_rows), cur.depth + 1});
    stack.push_back({left, std::move(left_rows), cur.depth + 1});
  }
  return tree;
}

}  // namespace mtd::classifiers::detail
