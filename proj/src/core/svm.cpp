#include <cmath>
#include <limits>
#include <numeric>

#include "core/classifiers.hpp"

namespace mtd::classifiers::detail {

namespace {

// Platt scaling with the Newton/backtracking procedure of Lin, Lin & Weng.
// Returns (A, B) for p = 1 / (1 + exp(A f + B)).
std::pair<double, double> platt(const std::vector<double>& f, const std::vector<int>& y) {
  double prior1 = 0, prior0 = 0;
  for (int v : y) (v > 0 ? prior1 : prior0) += 1;
  const double hi = (prior1 + 1.0) / (prior1 + 2.0);
  const double lo = 1.0 / (prior0 + 2.0);
  std::vector<double> t(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) t[i] = y[i] > 0 ? hi : lo;

  double a = 0.0, b = std::log((prior0 + 1.0) / (prior1 + 1.0));
  auto objective = [&](double aa, double bb) {
    double fval = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double fa = f[i] * aa + bb;
      fval += fa >= 0 ? t[i] * fa + std::log1p(std::exp(-fa)) : (t[i] - 1) * fa + std::log1p(std::exp(fa));
    }
    return fval;
  };
  double fval = objective(a, b);
  constexpr double sigma = 1e-12, eps = 1e-5, min_step = 1e-10;
  for (int iter = 0; iter < 100; ++iter) {
    double h11 = sigma, h22 = sigma, h21 = 0, g1 = 0, g2 = 0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double fa = f[i] * a + b;
      double p, q;
      if (fa >= 0) {
        p = std::exp(-fa) / (1.0 + std::exp(-fa));
        q = 1.0 / (1.0 + std::exp(-fa));
      } else {
        p = 1.0 / (1.0 + std::exp(fa));
        q = std::exp(fa) / (1.0 + std::exp(fa));
      }
      const double d2 = p * q;
      h11 += f[i] * f[i] * d2;
      h22 += d2;
      h21 += f[i] * d2;
      const double d1 = t[i] - p;
      g1 += f[i] * d1;
      g2 += d1;
    }
    if (std::abs(g1) < eps && std::abs(g2) < eps) break;
    const double det = h11 * h22 - h21 * h21;
    const double da = -(h22 * g1 - h21 * g2) / det;
    const double db = -(-h21 * g1 + h11 * g2) / det;
    const double gd = g1 * da + g2 * db;
    double step = 1.0;
    while (step >= min_step) {
      const double na = a + step * da, nb = b + step * db;
      const double nf = objective(na, nb);
      if (nf < fval + 1e-4 * step * gd) {
        a = na;
        b = nb;
        fval = nf;
        break;
      }
      step /= 2.0;
    }
    if (step < min_step) break;
  }
  return {a, b};
}

}  // namespace

// Dual coordinate descent for the L2-regularized squared-hinge SVM with a
// regularized bias term (the LinearSVC formulation).
LinearSvm fit_linear_svm(const Dataset& train, const Dataset& validation, const SvmParams& params, Rng& rng) {
  const std::size_t m = train.front().features.size();
  const std::size_t n = train.size();
  std::vector<std::vector<std::uint32_t>> rows(n);
  std::vector<double> y(n), qd(n);
  const double diag = 0.5 / params.c;
  for (std::size_t i = 0; i < n; ++i) {
    rows[i] = train[i].features.set_indices();
    y[i] = train[i].label == Label::kMalware ? 1.0 : -1.0;
    qd[i] = static_cast<double>(rows[i].size()) + 1.0 + diag;
  }

  Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
  double bias = 0.0;
  std::vector<double> alpha(n, 0.0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int iter = 0; iter < params.max_iter; ++iter) {
    std::shuffle(order.begin(), order.end(), rng);
    double pg_max = -std::numeric_limits<double>::infinity();
    double pg_min = std::numeric_limits<double>::infinity();
    for (auto i : order) {
      double wx = bias;
      for (auto f : rows[i]) wx += w[f];
      const double g = y[i] * wx - 1.0 + diag * alpha[i];
      const double pg = alpha[i] == 0.0 ? std::min(g, 0.0) : g;
      pg_max = std::max(pg_max, pg);
      pg_min = std::min(pg_min, pg);
      if (std::abs(pg) > 1e-12) {
        const double old = alpha[i];
        alpha[i] = std::max(alpha[i] - g / qd[i], 0.0);
        const double d = (alpha[i] - old) * y[i];
        for (auto f : rows[i]) w[f] += d;
        bias += d;
      }
    }
    if (pg_max - pg_min <= params.tol) break;
  }

  LinearSvm svm;
  svm.w = std::move(w);
  svm.b = bias;

  const Dataset& calib = validation.empty() ? train : validation;
  std::vector<double> f;
  std::vector<int> labels;
  for (const auto& s : calib) {
    auto x = s.features.relaxed();
    f.push_back(svm.decision(x));
    labels.push_back(s.label == Label::kMalware ? 1 : -1);
  }
  auto [a, b] = platt(f, labels);
  svm.platt_a = -a;
  svm.platt_b = -b;
  return svm;
}

}  // namespace mtd::classifiers::detail
