#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "core/oracles.hpp"

namespace mtd::oracles {

bool StrategyVector::pure() const {
  return std::any_of(probs.begin(), probs.end(), [](double p) { return std::abs(p - 1.0) <= 1e-9; });
}

void StrategyVector::validate() const {
  if (probs.empty()) throw InvalidArgument("strategy vector is empty");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw InvalidArgument("strategy probabilities must be nonnegative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw InvalidArgument("strategy probabilities must sum to 1");
}

namespace {

StrategyVector normalized(std::vector<double> p) {
  double sum = 0.0;
  for (auto& v : p) {
    if (v < 1e-12) v = 0.0;
    sum += v;
  }
  for (auto& v : p) v /= sum;
  return {std::move(p)};
}

double guaranteed(const std::vector<std::vector<double>>& g, const std::vector<double>& p) {
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < g.front().size(); ++j) {
    double v = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) v += p[i] * g[i][j];
    worst = std::min(worst, v);
  }
  return worst;
}

}  // namespace

// Rescales the payoff into [1,2] and solves max sum(y) s.t. G y <= 1, y >= 0
// with Bland's rule. The row player's strategy is read from the slack duals.
StrategySolution solve_maximin(const std::vector<std::vector<double>>& payoff) {
  if (payoff.empty() || payoff.front().empty()) throw InvalidArgument("payoff matrix is empty");
  const std::size_t m = payoff.size();
  const std::size_t n = payoff.front().size();
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& row : payoff) {
    if (row.size() != n) throw InvalidArgument("payoff matrix rows differ in length");
    for (double v : row) {
      if (!std::isfinite(v)) throw InvalidArgument("payoff entries must be finite");
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi - lo <= 0.0) return {StrategyVector{std::vector<double>(m, 1.0 / static_cast<double>(m))}, lo};
  const double range = hi - lo;

  // Tableau: m constraint rows + objective row; columns y (n), slack (m), rhs.
  const std::size_t cols = n + m + 1;
  std::vector<std::vector<double>> t(m + 1, std::vector<double>(cols, 0.0));
  std::vector<std::size_t> basis(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) t[i][j] = (payoff[i][j] - lo) / range + 1.0;
    t[i][n + i] = 1.0;
    t[i][cols - 1] = 1.0;
    basis[i] = n + i;
  }
  for (std::size_t j = 0; j < n; ++j) t[m][j] = -1.0;

  constexpr double eps = 1e-12;
  for (int iter = 0; iter < 10000; ++iter) {
    std::size_t enter = cols;
    for (std::size_t j = 0; j + 1 < cols; ++j) {
      if (t[m][j] < -eps) {
        enter = j;
        break;
      }
    }
    if (enter == cols) break;
    std::size_t leave = m;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
      if (t[i][enter] <= eps) continue;
      const double ratio = t[i][cols - 1] / t[i][enter];
      if (ratio < best - eps || (std::abs(ratio - best) <= eps && leave < m && basis[i] < basis[leave])) {
        best = ratio;
        leave = i;
      }
    }
    if (leave == m) throw Error("maximin program is unbounded");
    const double piv = t[leave][enter];
    for (auto& v : t[leave]) v /= piv;
    for (std::size_t i = 0; i <= m; ++i) {
      if (i == leave || t[i][enter] == 0.0) continue;
      const double f = t[i][enter];
      for (std::size_t j = 0; j < cols; ++j) t[i][j] -= f * t[leave][j];
    }
    basis[leave] = enter;
  }

  std::vector<double> x(m);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    x[i] = std::max(0.0, t[m][n + i]);
    total += x[i];
  }
  if (total <= 0.0) throw Error("maximin program failed to converge");
  auto strategy = normalized(x);
  return {strategy, guaranteed(payoff, strategy.probs)};
}

StrategySolution solve_strategy(const std::vector<std::vector<double>>& payoff, double alpha, Optimizer optimizer,
                                std::span<const double> clean) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must lie in [0,1]");
  const std::size_t m = !payoff.empty() ? payoff.size() : clean.size();
  if (m == 0) throw InvalidArgument("payoff matrix is empty");
  if (!clean.empty() && clean.size() != m) throw InvalidArgument("clean payoff length mismatch");

  std::vector<std::vector<double>> eff(m);
  const std::size_t n = payoff.empty() ? 0 : payoff.front().size();
  for (std::size_t i = 0; i < m; ++i) {
    if (!payoff.empty()) {
      if (payoff[i].size() != n) throw InvalidArgument("payoff matrix rows differ in length");
      for (std::size_t j = 0; j < n; ++j) {
        eff[i].push_back(clean.empty() ? payoff[i][j] : (1.0 - alpha) * clean[i] + alpha * payoff[i][j]);
      }
    }
    if (n == 0) eff[i].push_back(clean[i]);
  }
  if (eff.front().empty()) throw InvalidArgument("payoff matrix is empty");

  switch (optimizer) {
    case Optimizer::kMaximin:
      return solve_maximin(eff);
    case Optimizer::kUniform: {
      StrategyVector s{std::vector<double>(m, 1.0 / static_cast<double>(m))};
      return {s, guaranteed(eff, s.probs)};
    }
    case Optimizer::kBestResponse: {
      std::size_t worst_col = 0;
      double worst = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < eff.front().size(); ++j) {
        double best_in_col = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < m; ++i) best_in_col = std::max(best_in_col, eff[i][j]);
        if (best_in_col < worst) {
          worst = best_in_col;
          worst_col = j;
        }
      }
      std::size_t row = 0;
      for (std::size_t i = 1; i < m; ++i) {
        if (eff[i][worst_col] > eff[row][worst_col]) row = i;
      }
      StrategyVector s{std::vector<double>(m, 0.0)};
      s.probs[row] = 1.0;
      return {s, guaranteed(eff, s.probs)};
    }
  }
  throw InvalidArgument("unknown optimizer");
}

}  // namespace mtd::oracles
