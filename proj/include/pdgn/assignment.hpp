#pragma once

// Minimum-cost perfect matching on dense square cost matrices.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace pdgn::assignment {

using Index = Eigen::Index;

/// Exact solver: shortest augmenting paths with row/column potentials
/// (Hungarian method, O(n^3)). Returns assign[row] = column.
template <typename Derived>
std::vector<Index> solve_exact(const Eigen::MatrixBase<Derived>& cost) {
  using Scalar = typename Derived::Scalar;
  const Index n = cost.rows();
  if (cost.cols() != n) throw std::invalid_argument("assignment: cost matrix must be square");
  if (n == 0) return {};
  const Scalar inf = std::numeric_limits<Scalar>::infinity();
  // 1-based arrays; column 0 is the virtual source.
  std::vector<Scalar> u(n + 1, 0), v(n + 1, 0), minv(n + 1);
  std::vector<Index> match(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (Index i = 1; i <= n; ++i) {
    match[0] = i;
    Index j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const Index i0 = match[j0];
      Scalar delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const Scalar cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const Index j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Index> assign(static_cast<std::size_t>(n));
  for (Index j = 1; j <= n; ++j) assign[static_cast<std::size_t>(match[j] - 1)] = j - 1;
  return assign;
}

/// Forward auction with epsilon scaling. The final assignment costs at most
/// n * epsilon more than the optimum.
template <typename Derived>
std::vector<Index> solve_auction(const Eigen::MatrixBase<Derived>& cost,
                                 typename Derived::Scalar epsilon) {
  using Scalar = typename Derived::Scalar;
  const Index n = cost.rows();
  if (cost.cols() != n) throw std::invalid_argument("assignment: cost matrix must be square");
  if (!(epsilon > 0)) throw std::invalid_argument("assignment: epsilon must be positive");
  if (n == 0) return {};
  const Scalar spread = cost.maxCoeff() - cost.minCoeff();
  std::vector<Scalar> price(static_cast<std::size_t>(n), 0);
  std::vector<Index> owner(static_cast<std::size_t>(n));
  std::vector<Index> assign(static_cast<std::size_t>(n));
  Scalar eps = std::max(spread / 4, epsilon);
  while (true) {
    std::fill(owner.begin(), owner.end(), -1);
    std::fill(assign.begin(), assign.end(), -1);
    std::vector<Index> queue(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) queue[static_cast<std::size_t>(i)] = n - 1 - i;
    while (!queue.empty()) {
      const Index i = queue.back();
      queue.pop_back();
      // Best and second-best value (negated cost minus price).
      Scalar best = -std::numeric_limits<Scalar>::infinity();
      Scalar second = best;
      Index best_j = 0;
      for (Index j = 0; j < n; ++j) {
        const Scalar val = -cost(i, j) - price[static_cast<std::size_t>(j)];
        if (val > best) {
          second = best;
          best = val;
          best_j = j;
        } else if (val > second) {
          second = val;
        }
      }
      const Scalar gap = n > 1 ? best - second : Scalar(0);
      price[static_cast<std::size_t>(best_j)] += gap + eps;
      const Index prev = owner[static_cast<std::size_t>(best_j)];
      if (prev >= 0) {
        assign[static_cast<std::size_t>(prev)] = -1;
        queue.push_back(prev);
      }
      owner[static_cast<std::size_t>(best_j)] = i;
      assign[static_cast<std::size_t>(i)] = best_j;
    }
    if (eps <= epsilon) break;
    eps = std::max(eps / 5, epsilon);
  }
  return assign;
}

}  // namespace pdgn::assignment
