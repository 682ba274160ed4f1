#pragma once

// Everything a participant computes on its own data: K-means, model-order
// selection, Gaussian fitting and proxy sampling. All computation happens on
// the participant's observed coordinates only.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <variant>
#include <vector>

#include "fedmask/core.hpp"
#include "fedmask/random.hpp"

namespace fedmask {

/// Observed coordinates of a dataset as an N x |mask| matrix.
inline Eigen::MatrixXd compact(const MaskedDataset& x) {
  const auto& idx = x.mask.indices();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(x.size()), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t p = 0; p < x.size(); ++p)
    for (std::size_t c = 0; c < idx.size(); ++c)
      out(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c)) = x.rows[p][idx[c]];
  return out;
}

/// Full-length vector from compact coordinates, absent() elsewhere.
inline std::vector<double> expand(const Eigen::Ref<const Eigen::VectorXd>& v, const FeatureMask& mask) {
  std::vector<double> out(mask.dim(), absent());
  const auto& idx = mask.indices();
  for (std::size_t c = 0; c < idx.size(); ++c) out[idx[c]] = v(static_cast<Eigen::Index>(c));
  return out;
}

/// Compact coordinates of a full-length vector; every mask coordinate must
/// be present.
inline Eigen::VectorXd restrict_to(std::span<const double> full, const FeatureMask& mask) {
  const auto& idx = mask.indices();
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c) {
    require(!is_absent(full[idx[c]]), "vector is absent on an observed coordinate");
    out(static_cast<Eigen::Index>(c)) = full[idx[c]];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Silhouette

/// s(i) from the mean intra-cluster distance a and the smallest mean distance
/// to another cluster b.
inline double point_silhouette(double a, double b) {
  const double denom = std::max(a, b);
  return denom > 0.0 ? (b - a) / denom : 0.0;
}

/// Mean silhouette from a precomputed symmetric distance matrix. Points in
/// singleton clusters score 0.
inline double silhouette_from_distances(const Eigen::MatrixXd& dist, std::span<const std::size_t> labels,
                                        std::size_t k) {
  const auto n = labels.size();
  if (n == 0 || k < 2) return 0.0;
  std::vector<std::size_t> size(k, 0);
  for (auto l : labels) ++size[l];
  double total = 0.0;
  std::vector<double> sums(k);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j)
      sums[labels[j]] += dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    const auto own = labels[i];
    if (size[own] <= 1) continue;
    const double a = sums[own] / static_cast<double>(size[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c)
      if (c != own && size[c] > 0) b = std::min(b, sums[c] / static_cast<double>(size[c]));
    if (std::isfinite(b)) total += point_silhouette(a, b);
  }
  return total / static_cast<double>(n);
}

inline Eigen::MatrixXd pairwise_euclidean(const Eigen::MatrixXd& pts) {
  const auto n = pts.rows();
  Eigen::MatrixXd d(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) d(i, j) = d(j, i) = (pts.row(i) - pts.row(j)).norm();
  }
  return d;
}

inline double silhouette_score(const Eigen::MatrixXd& pts, std::span<const std::size_t> labels, std::size_t k) {
  return silhouette_from_distances(pairwise_euclidean(pts), labels, k);
}

// ---------------------------------------------------------------------------
// K-means

struct LocalSolution {
  std::vector<std::size_t> labels;
  std::vector<LabeledCentroid> centroids;
  std::size_t k = 0;
  double inertia = 0.0;
  std::size_t iterations = 0;
  std::vector<double> inertia_history;  // within-cluster SS after each update step
};

struct KMeansOptions {
  std::size_t max_iter = 300;
  double tol = 1e-6;  // relative to the largest centroid norm (at least 1)
};

enum class InitStrategy { kmeanspp, random };

/// Either a seeding strategy or explicit seeds (full-length vectors on the
/// owner mask).
using KMeansInit = std::variant<InitStrategy, std::vector<std::vector<double>>>;

/// D^2 sampling; returns the indices of the chosen seed points.
inline std::vector<std::size_t> kmeanspp_init(const MaskedDataset& x, std::size_t k, std::uint64_t seed) {
  require(k >= 1 && k <= x.size(), "kmeanspp_init: k out of range");
  const Eigen::MatrixXd pts = compact(x);
  const auto n = static_cast<std::size_t>(pts.rows());
  Rng rng(seed);
  std::vector<std::size_t> chosen;
  chosen.push_back(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  std::vector<double> d2(n);
  for (std::size_t p = 0; p < n; ++p)
    d2[p] = (pts.row(static_cast<Eigen::Index>(p)) - pts.row(static_cast<Eigen::Index>(chosen[0]))).squaredNorm();
  while (chosen.size() < k) {
    double total = 0.0;
    for (double v : d2) total += v;
    require(total > 0.0, "kmeanspp_init: fewer distinct points than k");
    const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
    double acc = 0.0;
    std::size_t pick = n;
    for (std::size_t p = 0; p < n; ++p) {
      if (d2[p] <= 0.0) continue;
      acc += d2[p];
      pick = p;
      if (acc > u) break;
    }
    chosen.push_back(pick);
    for (std::size_t p = 0; p < n; ++p)
      d2[p] = std::min(d2[p], (pts.row(static_cast<Eigen::Index>(p)) - pts.row(static_cast<Eigen::Index>(pick))).squaredNorm());
  }
  return chosen;
}

namespace detail {

inline std::size_t nearest_row(const Eigen::MatrixXd& centers, const Eigen::Ref<const Eigen::RowVectorXd>& p,
                               double* best_d2 = nullptr) {
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centers.rows(); ++c) {
    const double d = (centers.row(c) - p).squaredNorm();
    if (d < bd) {
      bd = d;
      best = static_cast<std::size_t>(c);
    }
  }
  if (best_d2) *best_d2 = bd;
  return best;
}

// Lloyd iterations on compact coordinates.
inline LocalSolution lloyd(const MaskedDataset& x, const Eigen::MatrixXd& pts, Eigen::MatrixXd centers,
                           const KMeansOptions& opt) {
  const auto n = static_cast<std::size_t>(pts.rows());
  const auto k = static_cast<std::size_t>(centers.rows());
  LocalSolution sol;
  sol.k = k;
  sol.labels.assign(n, 0);
  std::vector<double> d2(n);
  for (std::size_t it = 0; it < std::max<std::size_t>(1, opt.max_iter); ++it) {
    ++sol.iterations;
    std::vector<std::size_t> size(k, 0);
    for (std::size_t p = 0; p < n; ++p) {
      sol.labels[p] = nearest_row(centers, pts.row(static_cast<Eigen::Index>(p)), &d2[p]);
      ++size[sol.labels[p]];
    }
    // Empty cluster repair: the point farthest from its centroid becomes a
    // singleton.
    for (std::size_t c = 0; c < k; ++c) {
      if (size[c] > 0) continue;
      std::size_t far = n;
      double fd = -1.0;
      for (std::size_t p = 0; p < n; ++p)
        if (size[sol.labels[p]] > 1 && d2[p] > fd) {
          fd = d2[p];
          far = p;
        }
      if (far == n) break;
      --size[sol.labels[far]];
      sol.labels[far] = c;
      d2[far] = 0.0;
      size[c] = 1;
    }
    Eigen::MatrixXd updated = Eigen::MatrixXd::Zero(centers.rows(), centers.cols());
    for (std::size_t p = 0; p < n; ++p) updated.row(static_cast<Eigen::Index>(sol.labels[p])) += pts.row(static_cast<Eigen::Index>(p));
    for (std::size_t c = 0; c < k; ++c) {
      if (size[c] > 0)
        updated.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(size[c]);
      else
        updated.row(static_cast<Eigen::Index>(c)) = centers.row(static_cast<Eigen::Index>(c));
    }
    double move = 0.0, scale = 1.0;
    for (std::size_t c = 0; c < k; ++c) {
      move = std::max(move, (updated.row(static_cast<Eigen::Index>(c)) - centers.row(static_cast<Eigen::Index>(c))).norm());
      scale = std::max(scale, centers.row(static_cast<Eigen::Index>(c)).norm());
    }
    centers = std::move(updated);
    double inertia = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      inertia += (pts.row(static_cast<Eigen::Index>(p)) - centers.row(static_cast<Eigen::Index>(sol.labels[p]))).squaredNorm();
    sol.inertia_history.push_back(inertia);
    sol.inertia = inertia;
    if (move <= opt.tol * scale) break;
  }
  std::vector<std::size_t> size(k, 0);
  for (auto l : sol.labels) ++size[l];
  for (std::size_t c = 0; c < k; ++c) {
    LabeledCentroid lc;
    lc.values = expand(centers.row(static_cast<Eigen::Index>(c)).transpose(), x.mask);
    lc.mask = x.mask;
    lc.count = std::max<std::size_t>(1, size[c]);
    lc.owner = x.owner;
    lc.local_index = c;
    sol.centroids.push_back(std::move(lc));
  }
  return sol;
}

}  // namespace detail

/// Lloyd's algorithm on the owner mask. With explicit seeds, k is the number
/// of seeds.
inline LocalSolution kmeans(const MaskedDataset& x, std::size_t k, const KMeansInit& init,
                            const KMeansOptions& opt = {}, std::uint64_t seed = 0) {
  const Eigen::MatrixXd pts = compact(x);
  Eigen::MatrixXd centers;
  if (const auto* seeds = std::get_if<std::vector<std::vector<double>>>(&init)) {
    k = seeds->size();
    require(k >= 1, "kmeans: k must be positive");
    centers.resize(static_cast<Eigen::Index>(k), pts.cols());
    for (std::size_t c = 0; c < k; ++c) {
      require((*seeds)[c].size() == x.dim(), "kmeans: seed dimension mismatch");
      centers.row(static_cast<Eigen::Index>(c)) = restrict_to((*seeds)[c], x.mask).transpose();
    }
  } else {
    require(k >= 1, "kmeans: k must be positive");
    require(k <= x.size(), "kmeans: k exceeds the number of points");
    std::vector<std::size_t> picks;
    if (std::get<InitStrategy>(init) == InitStrategy::kmeanspp) {
      picks = kmeanspp_init(x, k, seed);
    } else {
      picks.resize(x.size());
      std::iota(picks.begin(), picks.end(), std::size_t{0});
      Rng rng(seed);
      std::shuffle(picks.begin(), picks.end(), rng);
      picks.resize(k);
    }
    centers.resize(static_cast<Eigen::Index>(k), pts.cols());
    for (std::size_t c = 0; c < k; ++c) centers.row(static_cast<Eigen::Index>(c)) = pts.row(static_cast<Eigen::Index>(picks[c]));
  }
  return detail::lloyd(x, pts, std::move(centers), opt);
}

/// Lowest-inertia solution over `restarts` K-means++ runs.
inline LocalSolution kmeans_best_of(const MaskedDataset& x, std::size_t k, std::size_t restarts,
                                    const KMeansOptions& opt, std::uint64_t seed) {
  std::optional<LocalSolution> best;
  for (std::size_t r = 0; r < std::max<std::size_t>(1, restarts); ++r) {
    auto sol = kmeans(x, k, InitStrategy::kmeanspp, opt, derive_seed(seed, {r}));
    if (!best || sol.inertia < best->inertia) best = std::move(sol);
  }
  return std::move(*best);
}

// ---------------------------------------------------------------------------
// Pluggable local clustering

/// A participant-side clustering algorithm. It must support explicit
/// initial centroids so it can be warm-started from global centroids.
class LocalClusterer {
 public:
  virtual ~LocalClusterer() = default;
  virtual LocalSolution cluster(const MaskedDataset& x, std::size_t k, std::uint64_t seed) const = 0;
  virtual LocalSolution refine(const MaskedDataset& x, const std::vector<std::vector<double>>& init,
                               std::size_t max_iter) const = 0;
};

class KMeansClusterer final : public LocalClusterer {
 public:
  explicit KMeansClusterer(std::size_t restarts = 10, KMeansOptions options = {})
      : restarts_(restarts), options_(options) {}

  LocalSolution cluster(const MaskedDataset& x, std::size_t k, std::uint64_t seed) const override {
    return kmeans_best_of(x, k, restarts_, options_, seed);
  }

  LocalSolution refine(const MaskedDataset& x, const std::vector<std::vector<double>>& init,
                       std::size_t max_iter) const override {
    KMeansOptions opt = options_;
    opt.max_iter = max_iter;
    return kmeans(x, init.size(), init, opt);
  }

 private:
  std::size_t restarts_;
  KMeansOptions options_;
};

struct KSelection {
  std::size_t k = 0;
  std::vector<double> scores;  // silhouette for k_min..k_max
  LocalSolution solution;
};

/// Model-order selection by maximum mean silhouette; ties go to the smaller k.
inline KSelection select_k_silhouette(const MaskedDataset& x, std::size_t k_min, std::size_t k_max, std::uint64_t seed,
                                      const LocalClusterer& clusterer = KMeansClusterer{}) {
  require(2 <= k_min && k_min <= k_max && k_max + 1 <= x.size(), "select_k_silhouette: need 2 <= k_min <= k_max <= |x|-1");
  const Eigen::MatrixXd dist = pairwise_euclidean(compact(x));
  KSelection out;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t k = k_min; k <= k_max; ++k) {
    auto sol = clusterer.cluster(x, k, derive_seed(seed, {k}));
    const double s = silhouette_from_distances(dist, sol.labels, k);
    out.scores.push_back(s);
    if (s > best) {
      best = s;
      out.k = k;
      out.solution = std::move(sol);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian models and proxies

struct GaussianModel {
  FeatureMask mask;
  Eigen::VectorXd mean;        // compact, on mask
  Eigen::MatrixXd covariance;  // compact, on mask
  std::size_t count = 0;
  ParticipantId owner = 0;
  std::size_t local_index = 0;
};

/// Axis-aligned box on the compact coordinates.
struct BoundingBox {
  Eigen::VectorXd lo, hi;
};

inline BoundingBox bounding_box(const Eigen::MatrixXd& pts) {
  return BoundingBox{pts.colwise().minCoeff().transpose(), pts.colwise().maxCoeff().transpose()};
}

/// Ridge used when none is given: 1e-6 times the mean variance, floored.
inline double default_ridge(const Eigen::MatrixXd& cov) {
  const double r = cov.rows() > 0 ? 1e-6 * cov.trace() / static_cast<double>(cov.rows()) : 0.0;
  return std::max(r, 1e-9);
}

/// Maximum-likelihood mean and covariance of compact points, plus ridge*I.
inline GaussianModel fit_gaussian(const Eigen::MatrixXd& pts, const FeatureMask& mask,
                                  std::optional<double> ridge = std::nullopt) {
  require(pts.rows() >= 1, "fit_gaussian: need at least one point");
  require(static_cast<std::size_t>(pts.cols()) == mask.size(), "fit_gaussian: column count does not match mask");
  GaussianModel g;
  g.mask = mask;
  g.count = static_cast<std::size_t>(pts.rows());
  g.mean = pts.colwise().mean().transpose();
  const Eigen::MatrixXd centered = pts.rowwise() - g.mean.transpose();
  g.covariance = (centered.transpose() * centered) / static_cast<double>(pts.rows());
  g.covariance = 0.5 * (g.covariance + g.covariance.transpose());
  const double r = ridge ? *ridge : default_ridge(g.covariance);
  require(r > 0.0, "fit_gaussian: ridge must be positive");
  g.covariance.diagonal().array() += r;
  return g;
}

struct ProxyCluster {
  ParticipantId owner = 0;
  std::size_t local_index = 0;
  FeatureMask mask;
  std::vector<std::vector<double>> points;  // full length, absent() off mask
  std::optional<BoundingBox> box;

  std::size_t size() const noexcept { return points.size(); }
};

/// m draws from the model via a symmetric square-root factor of the
/// covariance, optionally clamped to a box.
inline ProxyCluster sample_proxy(const GaussianModel& model, std::size_t m, const std::optional<BoundingBox>& box,
                                 std::uint64_t seed) {
  require(m >= 1, "sample_proxy: m must be positive");
  const auto d = model.mean.size();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(model.covariance);
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd factor = eig.eigenvectors() * root.asDiagonal();
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ProxyCluster out;
  out.owner = model.owner;
  out.local_index = model.local_index;
  out.mask = model.mask;
  out.box = box;
  Eigen::VectorXd z(d);
  for (std::size_t s = 0; s < m; ++s) {
    for (Eigen::Index c = 0; c < d; ++c) z(c) = normal(rng);
    Eigen::VectorXd v = model.mean + factor * z;
    if (box) v = v.cwiseMax(box->lo).cwiseMin(box->hi);
    out.points.push_back(expand(v, model.mask));
  }
  return out;
}

}  // namespace fedmask
