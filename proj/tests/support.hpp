#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "fedmask/core.hpp"
#include "fedmask/random.hpp"

namespace testing_support {

using namespace fedmask;

inline Dataset blobs(const std::vector<std::vector<double>>& means, std::size_t per, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  Dataset d;
  d.dim = means.front().size();
  for (std::size_t a = 0; a < means.size(); ++a)
    for (std::size_t p = 0; p < per; ++p) {
      std::vector<double> x(d.dim);
      for (std::size_t m = 0; m < d.dim; ++m) x[m] = means[a][m] + n(rng);
      d.points.push_back(std::move(x));
      d.labels.push_back(a);
    }
  return d;
}

inline MaskedDataset masked(const std::vector<std::vector<double>>& rows, const FeatureMask& mask, std::size_t owner = 0) {
  MaskedDataset x{owner, mask, {}};
  for (const auto& r : rows) x.rows.push_back(MaskedPoint::from_full(r, mask).coords);
  return x;
}

inline FeatureMask random_mask(std::size_t dim, Rng& rng, double keep = 0.5) {
  std::bernoulli_distribution coin(keep);
  std::vector<std::size_t> idx;
  for (std::size_t m = 0; m < dim; ++m)
    if (coin(rng)) idx.push_back(m);
  if (idx.empty()) idx.push_back(std::uniform_int_distribution<std::size_t>(0, dim - 1)(rng));
  return FeatureMask(dim, idx);
}

inline std::vector<double> random_vector(std::size_t dim, Rng& rng, double lo = -5.0, double hi = 5.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(dim);
  for (auto& x : v) x = u(rng);
  return v;
}

/// Calls f on every injection of {0..rows-1} into {0..cols-1} (rows <= cols).
inline void for_each_injection(std::size_t rows, std::size_t cols,
                               const std::function<void(const std::vector<std::size_t>&)>& f) {
  std::vector<std::size_t> cur;
  std::vector<char> used(cols, 0);
  std::function<void()> rec = [&]() {
    if (cur.size() == rows) {
      f(cur);
      return;
    }
    for (std::size_t c = 0; c < cols; ++c) {
      if (used[c]) continue;
      used[c] = 1;
      cur.push_back(c);
      rec();
      cur.pop_back();
      used[c] = 0;
    }
  };
  rec();
}

/// Exhaustive minimum over injections of the smaller side into the larger.
inline double brute_min_assignment(const Eigen::MatrixXd& cost) {
  const Eigen::MatrixXd c = cost.rows() <= cost.cols() ? cost : Eigen::MatrixXd(cost.transpose());
  double best = std::numeric_limits<double>::infinity();
  for_each_injection(static_cast<std::size_t>(c.rows()), static_cast<std::size_t>(c.cols()),
                     [&](const std::vector<std::size_t>& inj) {
                       double s = 0.0;
                       for (std::size_t r = 0; r < inj.size(); ++r)
                         s += c(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(inj[r]));
                       best = std::min(best, s);
                     });
  return best;
}

inline double euclid(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t m = 0; m < a.size(); ++m) s += (a[m] - b[m]) * (a[m] - b[m]);
  return std::sqrt(s);
}

}  // namespace testing_support
