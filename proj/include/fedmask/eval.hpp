#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedmask/assignment.hpp"
#include "fedmask/core.hpp"
#include "fedmask/fedkc.hpp"
#include "fedmask/localclust.hpp"
#include "fedmask/partition.hpp"

namespace fedmask {

using ClusterTruth = std::map<ClusterRef, std::size_t>;

/// Majority true label of every local cluster.
inline ClusterTruth local_cluster_truth(const Scenario& s, std::span<const LocalSolution> local) {
  require(s.has_truth(), "local_cluster_truth: ground-truth labels required");
  require(local.size() == s.num_participants(), "local_cluster_truth: one solution per participant expected");
  ClusterTruth out;
  for (std::size_t i = 0; i < local.size(); ++i) {
    std::vector<std::vector<std::size_t>> votes(local[i].k, std::vector<std::size_t>(s.num_clusters, 0));
    for (std::size_t p = 0; p < local[i].labels.size(); ++p) ++votes[local[i].labels[p]][s.truth[i][p]];
    for (std::size_t a = 0; a < local[i].k; ++a) {
      const auto it = std::max_element(votes[a].begin(), votes[a].end());
      out[{i, a}] = static_cast<std::size_t>(it - votes[a].begin());
    }
  }
  return out;
}

/// Fraction of items whose group maps to their true label under the best
/// one-to-one matching of groups to labels.
inline double matched_fraction(std::span<const std::size_t> group, std::span<const std::size_t> label,
                               std::span<const double> weight, std::size_t n_groups, std::size_t n_labels) {
  require(group.size() == label.size() && label.size() == weight.size(), "matched_fraction: size mismatch");
  if (group.empty()) return 0.0;
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_groups), static_cast<Eigen::Index>(n_labels));
  double total = 0.0;
  for (std::size_t z = 0; z < group.size(); ++z) {
    c(static_cast<Eigen::Index>(group[z]), static_cast<Eigen::Index>(label[z])) += weight[z];
    total += weight[z];
  }
  return solve_max_assignment(c).cost / total;
}

/// Correct aggregation of local clusters (or proxy clusters): the share of
/// them placed in the group matched to their true cluster.
inline double e1_aggregation(const std::vector<std::vector<ClusterRef>>& membership, const ClusterTruth& truth,
                             std::size_t k_true) {
  std::vector<std::size_t> group, label;
  for (std::size_t g = 0; g < membership.size(); ++g)
    for (const auto& ref : membership[g]) {
      const auto it = truth.find(ref);
      require(it != truth.end(), "e1_aggregation: local cluster without truth");
      group.push_back(g);
      label.push_back(it->second);
    }
  const std::vector<double> ones(group.size(), 1.0);
  return matched_fraction(group, label, ones, membership.size(), k_true);
}

inline double e4_aggregation(const std::vector<std::vector<ClusterRef>>& grouping, const ClusterTruth& truth,
                             std::size_t k_true) {
  return e1_aggregation(grouping, truth, k_true);
}

inline double labeling_accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth,
                                std::size_t k_pred, std::size_t k_true) {
  const std::vector<double> ones(predicted.size(), 1.0);
  return 100.0 * matched_fraction(predicted, truth, ones, k_pred, k_true);
}

/// Nearest global centroid for each full-space point. Coordinates a centroid
/// does not cover are skipped; `partial` reports whether that happened.
inline std::vector<std::size_t> assign_to_centroids(const Dataset& central, std::span<const Centroid> g,
                                                    bool* partial = nullptr) {
  require(!g.empty(), "assign_to_centroids: no centroids");
  bool any_partial = false;
  for (const auto& c : g) any_partial = any_partial || !c.mask.is_full();
  if (partial) *partial = any_partial;
  std::vector<std::size_t> out(central.size(), 0);
  for (std::size_t p = 0; p < central.size(); ++p) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < g.size(); ++a) {
      const double d = distance_over(central.points[p], g[a].values, g[a].mask.indices());
      if (d < best) {
        best = d;
        out[p] = a;
      }
    }
  }
  return out;
}

/// Accuracy (percent) of nearest-centroid labels on the central data.
inline double e2_accuracy(const GlobalCentroidSet& g, const Dataset& central, std::vector<std::string>* warnings = nullptr) {
  require(central.has_labels(), "e2_accuracy: labels required");
  bool partial = false;
  const auto pred = assign_to_centroids(central, g.entries, &partial);
  if (partial && warnings) warnings->push_back("global centroids do not cover every feature; assigned on observed coordinates");
  return labeling_accuracy(pred, central.labels, g.size(), central.num_clusters());
}

struct CentroidQuality {
  double cosine = 0.0;
  double relative_distance = 0.0;
  bool zero_norm_flag = false;  // some optimal centroid had zero norm; its absolute distance was used
};

/// Matches estimated to optimal centroids by Euclidean distance, then averages
/// cosine similarity and relative distance over matched pairs.
inline CentroidQuality e3_centroid_quality(std::span<const Centroid> g, std::span<const Centroid> optimal) {
  require(g.size() == optimal.size() && !g.empty(), "e3_centroid_quality: need equally many centroids");
  const auto k = static_cast<Eigen::Index>(g.size());
  Eigen::MatrixXd cost(k, k);
  for (Eigen::Index a = 0; a < k; ++a)
    for (Eigen::Index b = 0; b < k; ++b) {
      const auto idx = shared_indices(g[static_cast<std::size_t>(a)].mask, optimal[static_cast<std::size_t>(b)].mask);
      cost(a, b) = distance_over(g[static_cast<std::size_t>(a)].values, optimal[static_cast<std::size_t>(b)].values, idx);
    }
  const auto match = solve_assignment(cost);
  CentroidQuality q;
  for (std::size_t a = 0; a < g.size(); ++a) {
    const auto& x = g[a];
    const auto& o = optimal[*match.row_to_col[a]];
    const auto idx = shared_indices(x.mask, o.mask);
    double dot = 0.0, nx = 0.0, no = 0.0, diff = 0.0;
    for (auto m : idx) {
      dot += x.values[m] * o.values[m];
      nx += x.values[m] * x.values[m];
      no += o.values[m] * o.values[m];
      diff += (x.values[m] - o.values[m]) * (x.values[m] - o.values[m]);
    }
    nx = std::sqrt(nx);
    no = std::sqrt(no);
    diff = std::sqrt(diff);
    q.cosine += (nx > 0.0 && no > 0.0) ? dot / (nx * no) : (nx == no ? 1.0 : 0.0);
    if (no > 0.0) {
      q.relative_distance += diff / no;
    } else {
      q.relative_distance += diff;
      q.zero_norm_flag = true;
    }
  }
  q.cosine /= static_cast<double>(g.size());
  q.relative_distance /= static_cast<double>(g.size());
  return q;
}

/// Accuracy (percent) of the labels every distributed point inherits from
/// the group of its local cluster.
inline double e5_accuracy(const std::vector<std::vector<ClusterRef>>& grouping, const Scenario& s,
                          std::span<const LocalSolution> local) {
  require(s.has_truth(), "e5_accuracy: ground-truth labels required");
  std::map<ClusterRef, std::size_t> group_of;
  for (std::size_t g = 0; g < grouping.size(); ++g)
    for (const auto& ref : grouping[g]) group_of[ref] = g;
  std::vector<std::size_t> pred, truth;
  for (std::size_t i = 0; i < s.num_participants(); ++i)
    for (std::size_t p = 0; p < local[i].labels.size(); ++p) {
      const auto it = group_of.find({i, local[i].labels[p]});
      require(it != group_of.end(), "e5_accuracy: local cluster missing from grouping");
      pred.push_back(it->second);
      truth.push_back(s.truth[i][p]);
    }
  return labeling_accuracy(pred, truth, grouping.size(), s.num_clusters);
}

inline MaskedDataset as_masked(const Dataset& d, ParticipantId owner = 0) {
  return MaskedDataset{owner, FeatureMask::full(d.dim), d.points};
}

/// Best-of-restarts K-means on the unmasked data, scored like E2.
inline double centralized_baseline(const Dataset& central, std::size_t k, std::size_t restarts, std::uint64_t seed) {
  require(central.has_labels(), "centralized_baseline: labels required");
  const auto sol = kmeans_best_of(as_masked(central), k, restarts, KMeansOptions{}, derive_seed(seed, {phase::baseline}));
  return labeling_accuracy(sol.labels, central.labels, k, central.num_clusters());
}

// ---------------------------------------------------------------------------
// Empirical statistical distances

inline constexpr std::size_t kMaxTransportProduct = 250000;

/// Exact 1-Wasserstein distance between two uniform empirical measures with
/// Euclidean ground cost.
inline double empirical_w1(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  require(!a.empty() && !b.empty(), "empirical_w1: empty point set");
  const std::size_t dim = a.front().size();
  for (const auto& p : a) require(p.size() == dim, "empirical_w1: dimension mismatch");
  for (const auto& p : b) require(p.size() == dim, "empirical_w1: dimension mismatch");
  if (a.size() * b.size() > kMaxTransportProduct)
    throw Error(ErrorKind::configuration, "empirical_w1: |a|*|b| = " + std::to_string(a.size() * b.size()) +
                                              " exceeds " + std::to_string(kMaxTransportProduct) +
                                              "; subsample both sets first");
  const auto na = static_cast<Eigen::Index>(a.size()), nb = static_cast<Eigen::Index>(b.size());
  Eigen::MatrixXd cost(na, nb);
  for (Eigen::Index i = 0; i < na; ++i)
    for (Eigen::Index j = 0; j < nb; ++j) {
      double s = 0.0;
      for (std::size_t m = 0; m < dim; ++m) {
        const double t = a[static_cast<std::size_t>(i)][m] - b[static_cast<std::size_t>(j)][m];
        s += t * t;
      }
      cost(i, j) = std::sqrt(s);
    }
  if (na == nb) return solve_assignment(cost).cost / static_cast<double>(na);
  const std::vector<long long> supply(a.size(), static_cast<long long>(b.size()));
  const std::vector<long long> demand(b.size(), static_cast<long long>(a.size()));
  return solve_transport(cost, supply, demand) / (static_cast<double>(na) * static_cast<double>(nb));
}

/// Shared per-coordinate grid: `bins` equal-width bins spanning both sets.
inline std::vector<std::vector<double>> uniform_edges(const std::vector<std::vector<double>>& a,
                                                      const std::vector<std::vector<double>>& b, std::size_t bins) {
  require(!a.empty() && bins >= 1, "uniform_edges: need points and at least one bin");
  const std::size_t dim = a.front().size();
  std::vector<std::vector<double>> edges(dim);
  for (std::size_t m = 0; m < dim; ++m) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto* set : {&a, &b})
      for (const auto& p : *set) {
        lo = std::min(lo, p[m]);
        hi = std::max(hi, p[m]);
      }
    if (hi <= lo) hi = lo + 1.0;
    for (std::size_t e = 0; e <= bins; ++e)
      edges[m].push_back(lo + (hi - lo) * static_cast<double>(e) / static_cast<double>(bins));
  }
  return edges;
}

/// Total variation between the histograms of two sets on a shared grid.
/// Points outside the grid share one overflow cell.
inline double empirical_tv(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b,
                           const std::vector<std::vector<double>>& edges) {
  require(!a.empty() && !b.empty(), "empirical_tv: empty point set");
  auto cell = [&edges](const std::vector<double>& p) {
    require(p.size() == edges.size(), "empirical_tv: dimension mismatch");
    std::vector<long> key;
    for (std::size_t m = 0; m < p.size(); ++m) {
      const auto& e = edges[m];
      require(e.size() >= 2, "empirical_tv: each coordinate needs at least two edges");
      if (p[m] < e.front() || p[m] > e.back()) return std::vector<long>{-1};
      auto it = std::upper_bound(e.begin(), e.end(), p[m]);
      auto bin = static_cast<long>(it - e.begin()) - 1;
      bin = std::min<long>(bin, static_cast<long>(e.size()) - 2);
      key.push_back(bin);
    }
    return key;
  };
  std::map<std::vector<long>, std::pair<double, double>> h;
  for (const auto& p : a) h[cell(p)].first += 1.0 / static_cast<double>(a.size());
  for (const auto& p : b) h[cell(p)].second += 1.0 / static_cast<double>(b.size());
  double tv = 0.0;
  for (const auto& [key, pq] : h) tv += std::abs(pq.first - pq.second);
  return std::min(1.0, 0.5 * tv);
}

// ---------------------------------------------------------------------------

struct MetricsReport {
  std::optional<double> e1, e2, e4, e5, baseline_accuracy;
  std::optional<CentroidQuality> e3;

  std::string to_text() const {
    std::string out;
    auto line = [&out](const char* key, double v) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%s=%.6f\n", key, v);
      out += buf;
    };
    if (e1) line("e1", *e1);
    if (e2) line("e2", *e2);
    if (e3) {
      line("e3_cosine", e3->cosine);
      line("e3_relative_distance", e3->relative_distance);
    }
    if (e4) line("e4", *e4);
    if (e5) line("e5", *e5);
    if (baseline_accuracy) line("baseline_accuracy", *baseline_accuracy);
    return out;
  }
};

}  // namespace fedmask
