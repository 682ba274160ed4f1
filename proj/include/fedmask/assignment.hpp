#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "fedmask/error.hpp"

namespace fedmask {

struct Assignment {
  /// For each row, the matched column; nullopt for rows left unmatched
  /// (only possible when there are more rows than columns).
  std::vector<std::optional<std::size_t>> row_to_col;
  double cost = 0.0;
};

namespace detail {

// Shortest augmenting path Hungarian method, O(n^2 m) for n <= m.
inline std::vector<std::size_t> hungarian_rows_le_cols(const Eigen::MatrixXd& a) {
  const auto n = static_cast<std::size_t>(a.rows());
  const auto m = static_cast<std::size_t>(a.cols());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n, 0);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

}  // namespace detail

/// Minimum-cost assignment on a rectangular cost matrix. Every row is
/// matched when rows <= cols, every column otherwise. Costs must be finite.
inline Assignment solve_assignment(const Eigen::MatrixXd& cost) {
  require(cost.allFinite(), "solve_assignment: non-finite cost");
  Assignment out;
  const auto rows = static_cast<std::size_t>(cost.rows());
  out.row_to_col.assign(rows, std::nullopt);
  if (cost.rows() == 0 || cost.cols() == 0) return out;
  if (cost.rows() <= cost.cols()) {
    const auto r2c = detail::hungarian_rows_le_cols(cost);
    for (std::size_t i = 0; i < rows; ++i) out.row_to_col[i] = r2c[i];
  } else {
    const Eigen::MatrixXd t = cost.transpose();
    const auto c2r = detail::hungarian_rows_le_cols(t);
    for (std::size_t j = 0; j < c2r.size(); ++j) out.row_to_col[c2r[j]] = j;
  }
  for (std::size_t i = 0; i < rows; ++i)
    if (out.row_to_col[i])
      out.cost += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(*out.row_to_col[i]));
  return out;
}

/// Maximum-gain assignment (e.g. best label bijection on a confusion matrix).
inline Assignment solve_max_assignment(const Eigen::MatrixXd& gain) {
  auto a = solve_assignment(-gain);
  a.cost = -a.cost;
  return a;
}

/// Exact minimum-cost transportation between integer supplies and demands of
/// equal total, by successive shortest paths with node potentials. Returns the
/// total cost Σ flow·cost. Dense; intended for a few hundred nodes per side.
inline double solve_transport(const Eigen::MatrixXd& cost, std::span<const long long> supply,
                              std::span<const long long> demand) {
  const auto na = static_cast<std::size_t>(cost.rows());
  const auto nb = static_cast<std::size_t>(cost.cols());
  require(supply.size() == na && demand.size() == nb, "solve_transport: size mismatch");
  require(cost.allFinite() && (cost.array() >= 0.0).all(), "solve_transport: costs must be finite and nonnegative");
  long long total_s = 0, total_d = 0;
  for (auto s : supply) total_s += s;
  for (auto d : demand) total_d += d;
  require(total_s == total_d, "solve_transport: unbalanced problem");

  // Nodes: source S, A-side 0..na-1, B-side 0..nb-1, sink T.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<long long> sup(supply.begin(), supply.end()), dem(demand.begin(), demand.end());
  std::vector<long long> flow(na * nb, 0);
  std::vector<double> pa(na, 0.0), pb(nb, 0.0);
  double ps = 0.0, pt = 0.0;
  double total_cost = 0.0;
  long long remaining = total_s;

  std::vector<double> da(na), db(nb);
  std::vector<char> done_a(na), done_b(nb);
  std::vector<std::ptrdiff_t> prev_a(na), prev_b(nb);  // prev_a: B node (-1 = source); prev_b: A node

  while (remaining > 0) {
    std::fill(da.begin(), da.end(), inf);
    std::fill(db.begin(), db.end(), inf);
    std::fill(done_a.begin(), done_a.end(), 0);
    std::fill(done_b.begin(), done_b.end(), 0);
    double dt = inf;
    std::ptrdiff_t prev_t = -1;
    for (std::size_t i = 0; i < na; ++i)
      if (sup[i] > 0) {
        da[i] = ps - pa[i];
        prev_a[i] = -1;
      }
    for (;;) {
      // Pick the closest unsettled node (A or B).
      double best = inf;
      std::ptrdiff_t bi = -1;
      bool is_a = true;
      for (std::size_t i = 0; i < na; ++i)
        if (!done_a[i] && da[i] < best) {
          best = da[i];
          bi = static_cast<std::ptrdiff_t>(i);
          is_a = true;
        }
      for (std::size_t j = 0; j < nb; ++j)
        if (!done_b[j] && db[j] < best) {
          best = db[j];
          bi = static_cast<std::ptrdiff_t>(j);
          is_a = false;
        }
      if (bi < 0 || best >= dt) break;
      if (is_a) {
        const auto i = static_cast<std::size_t>(bi);
        done_a[i] = 1;
        for (std::size_t j = 0; j < nb; ++j) {
          if (done_b[j]) continue;
          const double nd = da[i] + cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) + pa[i] - pb[j];
          if (nd < db[j]) {
            db[j] = nd;
            prev_b[j] = static_cast<std::ptrdiff_t>(i);
          }
        }
      } else {
        const auto j = static_cast<std::size_t>(bi);
        done_b[j] = 1;
        if (dem[j] > 0) {
          const double nd = db[j] + pb[j] - pt;
          if (nd < dt) {
            dt = nd;
            prev_t = static_cast<std::ptrdiff_t>(j);
          }
        }
        for (std::size_t i = 0; i < na; ++i) {
          if (done_a[i] || flow[i * nb + j] == 0) continue;
          const double nd = db[j] - cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) + pb[j] - pa[i];
          if (nd < da[i]) {
            da[i] = nd;
            prev_a[i] = static_cast<std::ptrdiff_t>(j);
          }
        }
      }
    }
    require(prev_t >= 0, "solve_transport: no augmenting path");
    // Potential update; unsettled nodes get the sink distance.
    for (std::size_t i = 0; i < na; ++i) pa[i] += std::min(da[i], dt);
    for (std::size_t j = 0; j < nb; ++j) pb[j] += std::min(db[j], dt);
    pt += dt;

    // Bottleneck along the path T <- B <- A <- B ... <- A <- S.
    long long amount = dem[static_cast<std::size_t>(prev_t)];
    {
      auto j = static_cast<std::size_t>(prev_t);
      for (;;) {
        const auto i = static_cast<std::size_t>(prev_b[j]);
        if (prev_a[i] < 0) {
          amount = std::min(amount, sup[i]);
          break;
        }
        const auto jb = static_cast<std::size_t>(prev_a[i]);
        amount = std::min(amount, flow[i * nb + jb]);
        j = jb;
      }
    }
    {
      auto j = static_cast<std::size_t>(prev_t);
      dem[j] -= amount;
      for (;;) {
        const auto i = static_cast<std::size_t>(prev_b[j]);
        flow[i * nb + j] += amount;
        total_cost += static_cast<double>(amount) * cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        if (prev_a[i] < 0) {
          sup[i] -= amount;
          break;
        }
        const auto jb = static_cast<std::size_t>(prev_a[i]);
        flow[i * nb + jb] -= amount;
        total_cost -= static_cast<double>(amount) * cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(jb));
        j = jb;
      }
    }
    remaining -= amount;
  }
  return total_cost;
}

}  // namespace fedmask
