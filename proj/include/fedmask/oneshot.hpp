#pragma once

// One-shot aggregation: participants share Gaussian models of their local
// clusters, the server samples proxy clusters and merges them by attractive
// force.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedmask/core.hpp"
#include "fedmask/fedkc.hpp"
#include "fedmask/localclust.hpp"
#include "fedmask/partition.hpp"
#include "fedmask/random.hpp"

namespace fedmask {

inline constexpr double kDistanceFloor = 1e-9;

struct PairForce {
  double unnormalized = 0.0;
  double normalized = 0.0;
};

inline RescaleContext proxy_context(std::span<const ProxyCluster> proxies, Metric metric = Metric::euclidean) {
  require(!proxies.empty(), "proxy_context: no proxies");
  RescaleContext ctx(proxies.front().mask.dim(), metric);
  for (const auto& p : proxies)
    for (const auto& x : p.points) ctx.add(x, p.mask);
  return ctx;
}

namespace detail {

inline double inverse_power(double d, double w) {
  d = std::max(d, kDistanceFloor);
  if (w == 2.0) return 1.0 / (d * d);
  return std::pow(d, -w);
}

}  // namespace detail

/// f' = sum of 1/d^w over cross pairs and f = f'/(|p||q|), with d rescaled
/// over the proxy set. nullopt when the masks are disjoint or the reference
/// set is constant on their intersection.
inline std::optional<PairForce> pair_force(const ProxyCluster& p, const ProxyCluster& q, double w,
                                           const RescaleContext& ctx) {
  require(w > 1.0, "pair_force: exponent must exceed 1");
  const auto idx = shared_indices(p.mask, q.mask);
  if (idx.empty()) return std::nullopt;
  double dmax = 0.0;
  try {
    dmax = ctx.max_distance_over(idx);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::degenerate_rescale) return std::nullopt;
    throw;
  }
  double sum = 0.0;
  for (const auto& x : p.points)
    for (const auto& y : q.points) sum += detail::inverse_power(distance_over(x, y, idx, ctx.metric()) / dmax, w);
  return PairForce{sum, sum / (static_cast<double>(p.size()) * static_cast<double>(q.size()))};
}

struct ForceTable {
  Eigen::MatrixXd unnormalized;                             // f' per proxy pair
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> present;
  std::vector<double> sizes;
  double w = 2.0;

  std::size_t size() const noexcept { return sizes.size(); }
};

inline ForceTable build_force_table(std::span<const ProxyCluster> proxies, double w, const RescaleContext& ctx) {
  const auto n = static_cast<Eigen::Index>(proxies.size());
  ForceTable t;
  t.w = w;
  t.unnormalized = Eigen::MatrixXd::Zero(n, n);
  t.present = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, n, false);
  for (const auto& p : proxies) t.sizes.push_back(static_cast<double>(p.size()));
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = a + 1; b < n; ++b) {
      const auto f = pair_force(proxies[static_cast<std::size_t>(a)], proxies[static_cast<std::size_t>(b)], w, ctx);
      if (!f) continue;
      t.unnormalized(a, b) = t.unnormalized(b, a) = f->unnormalized;
      t.present(a, b) = t.present(b, a) = true;
    }
  return t;
}

/// Force between two disjoint groups of proxies from the cached pair forces.
/// Incomparable member pairs add nothing to the numerator. nullopt when no
/// member pair is comparable.
inline std::optional<double> set_force(std::span<const std::size_t> r, std::span<const std::size_t> s,
                                       const ForceTable& t) {
  double num = 0.0, sr = 0.0, ss = 0.0;
  bool any = false;
  for (auto a : r) sr += t.sizes[a];
  for (auto b : s) ss += t.sizes[b];
  for (auto a : r)
    for (auto b : s) {
      require(a != b, "set_force: groups overlap");
      if (!t.present(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b))) continue;
      any = true;
      num += t.unnormalized(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
    }
  if (!any) return std::nullopt;
  return num / (sr * ss);
}

using Grouping = std::vector<std::vector<std::size_t>>;  // groups of proxy indices

struct MergeStep {
  std::size_t step = 0;
  std::vector<std::size_t> left, right;
  double force = 0.0;
};

struct MergeForest {
  std::vector<ClusterRef> ids;        // proxy index -> (participant, local index)
  Grouping groups;                    // current grouping
  std::vector<Grouping> snapshots;    // snapshots[k] = Q_k, empty when not reached
  std::vector<MergeStep> steps;

  bool has(std::size_t k) const { return k < snapshots.size() && !snapshots[k].empty(); }
  const Grouping& at(std::size_t k) const {
    require(has(k), "merge forest has no grouping with " + std::to_string(k) + " groups");
    return snapshots[k];
  }
  std::size_t smallest_k() const { return groups.size(); }

  std::vector<std::vector<ClusterRef>> membership(std::size_t k) const {
    std::vector<std::vector<ClusterRef>> out;
    for (const auto& g : at(k)) {
      std::vector<ClusterRef> refs;
      for (auto z : g) refs.push_back(ids[z]);
      out.push_back(std::move(refs));
    }
    return out;
  }
};

/// Merges the pair of groups with the strongest attraction until stop_k
/// groups remain (default 1), recording every intermediate grouping.
inline MergeForest agglomerate(const ForceTable& t, std::vector<ClusterRef> ids, std::optional<std::size_t> stop_k = {}) {
  const std::size_t n = t.size();
  require(n >= 2, "agglomerate: need at least two proxy clusters");
  require(ids.size() == n, "agglomerate: id count mismatch");
  const std::size_t stop = stop_k.value_or(1);
  require(stop >= 1 && stop <= n, "agglomerate: stop_k out of range");

  MergeForest f;
  f.ids = std::move(ids);
  f.snapshots.resize(n + 1);
  for (std::size_t z = 0; z < n; ++z) f.groups.push_back({z});
  f.snapshots[n] = f.groups;

  Eigen::MatrixXd num = t.unnormalized;
  auto present = t.present;
  std::vector<double> size = t.sizes;
  std::vector<std::size_t> live(n);
  for (std::size_t z = 0; z < n; ++z) live[z] = z;  // group position -> matrix slot

  while (f.groups.size() > stop) {
    const std::size_t g_count = f.groups.size();
    double best = -1.0;
    std::size_t bg = g_count, bh = g_count;
    for (std::size_t g = 0; g < g_count; ++g)
      for (std::size_t h = g + 1; h < g_count; ++h) {
        const auto a = static_cast<Eigen::Index>(live[g]), b = static_cast<Eigen::Index>(live[h]);
        if (!present(a, b)) continue;
        const double force = num(a, b) / (size[live[g]] * size[live[h]]);
        if (force > best) {
          best = force;
          bg = g;
          bh = h;
        }
      }
    if (bg == g_count)
      throw Error(ErrorKind::aggregation_stuck,
                  "agglomerate: no comparable pair among " + std::to_string(g_count) + " remaining groups");

    const auto a = static_cast<Eigen::Index>(live[bg]), b = static_cast<Eigen::Index>(live[bh]);
    num.row(a) += num.row(b);
    num.col(a) += num.col(b);
    present.row(a) = present.row(a).array() || present.row(b).array();
    present.col(a) = present.col(a).array() || present.col(b).array();
    num(a, a) = 0.0;
    present(a, a) = false;
    size[live[bg]] += size[live[bh]];

    f.steps.push_back(MergeStep{f.steps.size(), f.groups[bg], f.groups[bh], best});
    f.groups[bg].insert(f.groups[bg].end(), f.groups[bh].begin(), f.groups[bh].end());
    f.groups.erase(f.groups.begin() + static_cast<std::ptrdiff_t>(bh));
    live.erase(live.begin() + static_cast<std::ptrdiff_t>(bh));
    f.snapshots[f.groups.size()] = f.groups;
  }
  return f;
}

inline MergeForest agglomerate(std::span<const ProxyCluster> proxies, double w, std::optional<std::size_t> stop_k = {},
                               Metric metric = Metric::euclidean) {
  const auto ctx = proxy_context(proxies, metric);
  std::vector<ClusterRef> ids;
  for (const auto& p : proxies) ids.push_back({p.owner, p.local_index});
  return agglomerate(build_force_table(proxies, w, ctx), std::move(ids), stop_k);
}

/// Per-point sums of rescaled distances to every proxy, and how many of them
/// were comparable. Self distances are excluded.
struct ProxyDistanceSums {
  std::vector<std::size_t> owner_proxy;  // point -> proxy index
  Eigen::MatrixXd sum;                   // point x proxy
  Eigen::MatrixXd count;
};

inline ProxyDistanceSums proxy_distance_sums(std::span<const ProxyCluster> proxies, const RescaleContext& ctx) {
  ProxyDistanceSums out;
  std::vector<const std::vector<double>*> pts;
  for (std::size_t p = 0; p < proxies.size(); ++p)
    for (const auto& x : proxies[p].points) {
      out.owner_proxy.push_back(p);
      pts.push_back(&x);
    }
  const auto np = static_cast<Eigen::Index>(pts.size());
  const auto nq = static_cast<Eigen::Index>(proxies.size());
  out.sum = Eigen::MatrixXd::Zero(np, nq);
  out.count = Eigen::MatrixXd::Zero(np, nq);
  std::vector<Eigen::Index> start(proxies.size() + 1, 0);
  for (std::size_t p = 0; p < proxies.size(); ++p)
    start[p + 1] = start[p] + static_cast<Eigen::Index>(proxies[p].size());
  for (std::size_t p = 0; p < proxies.size(); ++p)
    for (std::size_t q = 0; q < proxies.size(); ++q) {
      const auto idx = shared_indices(proxies[p].mask, proxies[q].mask);
      if (idx.empty()) continue;
      double dmax = 0.0;
      try {
        dmax = ctx.max_distance_over(idx);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::degenerate_rescale) continue;
        throw;
      }
      for (Eigen::Index i = start[p]; i < start[p + 1]; ++i) {
        double s = 0.0;
        for (const auto& y : proxies[q].points) s += distance_over(*pts[static_cast<std::size_t>(i)], y, idx, ctx.metric());
        out.sum(i, static_cast<Eigen::Index>(q)) = s / dmax;
        out.count(i, static_cast<Eigen::Index>(q)) = static_cast<double>(proxies[q].size()) - (p == q ? 1.0 : 0.0);
      }
    }
  return out;
}

/// Mean silhouette of the pooled proxy points labeled by a grouping, using
/// rescaled masked distances. Incomparable pairs are left out of a point's
/// averages; a point with no comparable same-group or other-group
/// neighbour scores 0.
inline double grouping_silhouette(const ProxyDistanceSums& d, const Grouping& grouping, std::size_t n_proxies) {
  std::vector<std::size_t> label(n_proxies, 0);
  for (std::size_t g = 0; g < grouping.size(); ++g)
    for (auto z : grouping[g]) label[z] = g;
  const auto np = d.sum.rows();
  const std::size_t k = grouping.size();
  double total = 0.0;
  std::vector<double> gs(k), gc(k);
  for (Eigen::Index i = 0; i < np; ++i) {
    std::fill(gs.begin(), gs.end(), 0.0);
    std::fill(gc.begin(), gc.end(), 0.0);
    for (Eigen::Index q = 0; q < d.sum.cols(); ++q) {
      gs[label[static_cast<std::size_t>(q)]] += d.sum(i, q);
      gc[label[static_cast<std::size_t>(q)]] += d.count(i, q);
    }
    const std::size_t own = label[d.owner_proxy[static_cast<std::size_t>(i)]];
    if (gc[own] <= 0.0) continue;
    const double a = gs[own] / gc[own];
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < k; ++g)
      if (g != own && gc[g] > 0.0) b = std::min(b, gs[g] / gc[g]);
    if (!std::isfinite(b)) continue;
    total += point_silhouette(a, b);
  }
  return np > 0 ? total / static_cast<double>(np) : 0.0;
}

struct KEstimate {
  std::size_t k = 0;
  std::vector<double> scores;  // silhouette for k_min..k_max
};

/// Picks the snapshot with the highest silhouette over [k_min, k_max]; ties
/// go to the smaller k.
inline KEstimate estimate_k(const MergeForest& forest, std::span<const ProxyCluster> proxies, std::size_t k_min,
                            std::size_t k_max, Metric metric = Metric::euclidean) {
  require(k_min >= 1 && k_min <= k_max, "estimate_k: need 1 <= k_min <= k_max");
  for (std::size_t k = k_min; k <= k_max; ++k) require(forest.has(k), "estimate_k: snapshot Q_" + std::to_string(k) + " missing");
  KEstimate out;
  if (k_min == k_max) {
    out.k = k_min;
    return out;
  }
  const auto ctx = proxy_context(proxies, metric);
  const auto sums = proxy_distance_sums(proxies, ctx);
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t k = k_min; k <= k_max; ++k) {
    const double s = grouping_silhouette(sums, forest.at(k), proxies.size());
    out.scores.push_back(s);
    if (s > best) {
      best = s;
      out.k = k;
    }
  }
  return out;
}

struct OneShotConfig {
  double w = 2.0;
  std::size_t m = 50;
  std::optional<std::size_t> k;  // estimated when absent
  std::size_t k_min = 2;
  std::size_t k_max = 32;
  std::optional<std::size_t> local_k;    // fixed K_i; otherwise silhouette over [2, local_k_max]
  std::optional<std::size_t> local_k_max;  // default: k when known, else k_max
  bool bounding_boxes = false;
  std::optional<double> ridge;
  Metric metric = Metric::euclidean;

  void validate() const {
    if (!(w > 1.0)) throw Error(ErrorKind::configuration, "w must exceed 1");
    if (m == 0) throw Error(ErrorKind::configuration, "M must be positive");
    if (k && *k == 0) throw Error(ErrorKind::configuration, "K must be positive");
    if (!k && (k_min < 2 || k_min > k_max)) throw Error(ErrorKind::configuration, "need 2 <= k_min <= k_max");
  }
};

struct Algorithm2Result {
  std::size_t k_hat = 0;
  std::vector<double> k_scores;
  std::vector<std::vector<ClusterRef>> grouping;  // Q_k_hat
  GlobalCentroidSet centroids;
  MergeForest forest;
  std::vector<ProxyCluster> proxies;
  std::vector<GaussianModel> models;
  std::vector<LocalSolution> local;
};

/// Count-weighted merge of the model means behind each group.
inline GlobalCentroidSet centroids_from_models(std::span<const GaussianModel> models, const Grouping& grouping) {
  GlobalCentroidSet out;
  for (const auto& g : grouping) {
    std::vector<LabeledCentroid> members;
    std::vector<ClusterRef> refs;
    for (auto z : g) {
      const auto& m = models[z];
      members.push_back(LabeledCentroid{expand(m.mean, m.mask), m.mask, m.count, m.owner, m.local_index});
      refs.push_back({m.owner, m.local_index});
    }
    out.entries.push_back(merge_centroids(members));
    out.membership.push_back(std::move(refs));
  }
  return out;
}

inline Algorithm2Result run_algorithm2(const Scenario& s, const OneShotConfig& cfg, std::uint64_t seed,
                                       const LocalClusterer& clusterer = KMeansClusterer{}) {
  cfg.validate();
  Algorithm2Result r;
  const std::size_t local_max = cfg.local_k_max ? *cfg.local_k_max : cfg.k.value_or(cfg.k_max);
  for (std::size_t i = 0; i < s.num_participants(); ++i) {
    const auto& x = s.participants[i];
    r.local.push_back(local_phase(x, local_max, cfg.local_k, clusterer, derive_seed(seed, {phase::local_clustering, i})));
    const auto& sol = r.local.back();
    const Eigen::MatrixXd pts = compact(x);
    for (std::size_t a = 0; a < sol.k; ++a) {
      std::vector<Eigen::Index> rows;
      for (std::size_t p = 0; p < x.size(); ++p)
        if (sol.labels[p] == a) rows.push_back(static_cast<Eigen::Index>(p));
      const Eigen::MatrixXd member = pts(rows, Eigen::all);
      auto model = fit_gaussian(member, x.mask, cfg.ridge);
      model.owner = x.owner;
      model.local_index = a;
      std::optional<BoundingBox> box;
      if (cfg.bounding_boxes) box = bounding_box(member);
      r.proxies.push_back(sample_proxy(model, cfg.m, box, derive_seed(seed, {phase::proxy, i, a})));
      r.models.push_back(std::move(model));
    }
  }
  const std::size_t total = r.proxies.size();
  if (cfg.k && *cfg.k > total)
    throw Error(ErrorKind::configuration, "fewer proxy clusters (" + std::to_string(total) + ") than K");
  const std::size_t stop = cfg.k ? *cfg.k : std::min(cfg.k_min, total);
  r.forest = agglomerate(r.proxies, cfg.w, stop, cfg.metric);
  if (cfg.k) {
    r.k_hat = *cfg.k;
  } else {
    const auto est = estimate_k(r.forest, r.proxies, stop, std::min(cfg.k_max, total), cfg.metric);
    r.k_hat = est.k;
    r.k_scores = est.scores;
  }
  r.grouping = r.forest.membership(r.k_hat);
  r.centroids = centroids_from_models(r.models, r.forest.at(r.k_hat));
  return r;
}

}  // namespace fedmask
