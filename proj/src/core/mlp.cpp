#include <cmath>
#include <limits>
#include <numeric>

#include "core/classifiers.hpp"

namespace mtd::classifiers::detail {

namespace {

struct Batch {
  Eigen::MatrixXd x;  // features x samples
  Eigen::MatrixXd y;  // 2 x samples, one-hot
};

Batch to_matrix(const Dataset& data) {
  const auto m = static_cast<Eigen::Index>(data.empty() ? 0 : data.front().features.size());
  const auto n = static_cast<Eigen::Index>(data.size());
  Batch b{Eigen::MatrixXd::Zero(m, n), Eigen::MatrixXd::Zero(2, n)};
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& s = data[static_cast<std::size_t>(j)];
    for (auto i : s.features.set_indices()) b.x(static_cast<Eigen::Index>(i), j) = 1.0;
    b.y(s.label == Label::kMalware ? 1 : 0, j) = 1.0;
  }
  return b;
}

Eigen::MatrixXd forward(const Mlp& net, const Eigen::MatrixXd& x, std::vector<Eigen::MatrixXd>* acts) {
  Eigen::MatrixXd a = x;
  if (acts) acts->assign(1, a);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    Eigen::MatrixXd z = net.layers[l].weights * a;
    z.colwise() += net.layers[l].bias;
    if (l + 1 < net.layers.size()) z = z.cwiseMax(0.0);
    a = std::move(z);
    if (acts) acts->push_back(a);
  }
  return a;
}

// Column-wise softmax of 2-row logits.
Eigen::MatrixXd softmax(const Eigen::MatrixXd& z) {
  Eigen::MatrixXd p(z.rows(), z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const double mx = z.col(j).maxCoeff();
    const Eigen::VectorXd e = (z.col(j).array() - mx).exp();
    p.col(j) = e / e.sum();
  }
  return p;
}

double cross_entropy(const Mlp& net, const Batch& b) {
  if (b.x.cols() == 0) return 0.0;
  const Eigen::MatrixXd p = softmax(forward(net, b.x, nullptr));
  double loss = 0.0;
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    const double pt = b.y(1, j) > 0.5 ? p(1, j) : p(0, j);
    loss -= std::log(std::max(pt, 1e-15));
  }
  return loss / static_cast<double>(p.cols());
}

}  // namespace

Mlp init_mlp(std::size_t inputs, const std::vector<int>& hidden, Rng& rng) {
  Mlp net;
  std::vector<int> sizes{static_cast<int>(inputs)};
  for (int h : hidden) {
    if (h <= 0) throw InvalidArgument("hidden layer sizes must be positive");
    sizes.push_back(h);
  }
  sizes.push_back(2);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const double limit = std::sqrt(6.0 / static_cast<double>(sizes[l]));
    DenseLayer layer{Eigen::MatrixXd(sizes[l + 1], sizes[l]), Eigen::VectorXd::Zero(sizes[l + 1])};
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = limit * unit(rng);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

int fit_mlp(Mlp& net, const MlpParams& params, const Dataset& train, const Dataset& validation, Rng& rng,
            bool& converged) {
  const Batch data = to_matrix(train);
  const Batch val = to_matrix(validation.empty() ? train : validation);
  const auto n = static_cast<std::size_t>(data.x.cols());
  const auto batch = static_cast<std::size_t>(std::max(1, params.batch_size));
  const std::size_t layers = net.layers.size();

  std::vector<Eigen::MatrixXd> vel_w(layers);
  std::vector<Eigen::VectorXd> vel_b(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    vel_w[l] = Eigen::MatrixXd::Zero(net.layers[l].weights.rows(), net.layers[l].weights.cols());
    vel_b[l] = Eigen::VectorXd::Zero(net.layers[l].bias.size());
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Mlp best = net;
  double best_loss = cross_entropy(net, val);
  int since_best = 0;
  int epoch = 0;
  converged = false;
  std::vector<Eigen::MatrixXd> acts;

  for (epoch = 1; epoch <= params.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      const auto bs = static_cast<Eigen::Index>(end - start);
      Eigen::MatrixXd xb(data.x.rows(), bs), yb(2, bs);
      for (Eigen::Index k = 0; k < bs; ++k) {
        const auto col = static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(k)]);
        xb.col(k) = data.x.col(col);
        yb.col(k) = data.y.col(col);
      }
      const Eigen::MatrixXd out = forward(net, xb, &acts);
      Eigen::MatrixXd delta = (softmax(out) - yb) / static_cast<double>(bs);
      for (std::size_t l = layers; l-- > 0;) {
        const Eigen::MatrixXd grad_w = delta * acts[l].transpose();
        const Eigen::VectorXd grad_b = delta.rowwise().sum();
        if (l > 0) {
          Eigen::MatrixXd back = net.layers[l].weights.transpose() * delta;
          delta = back.cwiseProduct((acts[l].array() > 0.0).cast<double>().matrix());
        }
        vel_w[l] = params.momentum * vel_w[l] - params.learning_rate * grad_w;
        vel_b[l] = params.momentum * vel_b[l] - params.learning_rate * grad_b;
        net.layers[l].weights += vel_w[l];
        net.layers[l].bias += vel_b[l];
      }
    }
    const double loss = cross_entropy(net, val);
    if (loss < best_loss - 1e-7) {
      best_loss = loss;
      best = net;
      since_best = 0;
    } else if (++since_best >= params.patience) {
      converged = true;
      break;
    }
  }
  net = std::move(best);
  return std::min(epoch, params.max_epochs);
}

}  // namespace mtd::classifiers::detail
