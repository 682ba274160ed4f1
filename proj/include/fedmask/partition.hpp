#pragma once

// Manufacturing participant datasets from a central dataset, and checking
// the structural properties of the resulting overlap graphs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "fedmask/core.hpp"
#include "fedmask/random.hpp"

namespace fedmask {

struct Scenario {
  std::size_t dim = 0;
  std::size_t num_clusters = 0;  // 0 when the central dataset has no labels
  std::vector<MaskedDataset> participants;
  std::vector<std::vector<std::size_t>> truth;       // [participant][local point] -> true label
  std::vector<std::vector<std::size_t>> provenance;  // [participant][local point] -> central index

  std::size_t num_participants() const noexcept { return participants.size(); }
  bool has_truth() const noexcept { return num_clusters > 0; }

  std::vector<FeatureMask> masks() const {
    std::vector<FeatureMask> out;
    out.reserve(participants.size());
    for (const auto& p : participants) out.push_back(p.mask);
    return out;
  }

  /// Participant holding each central point (points not distributed map to
  /// num_participants()).
  std::vector<std::size_t> owner_of(std::size_t central_size) const {
    std::vector<std::size_t> out(central_size, participants.size());
    for (std::size_t i = 0; i < participants.size(); ++i)
      for (auto c : provenance[i]) out[c] = i;
    return out;
  }
};

// ---------------------------------------------------------------------------
// Mask recipes

namespace detail {

inline std::vector<std::size_t> feature_permutation(std::size_t dim, Rng& rng) {
  std::vector<std::size_t> perm(dim);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

}  // namespace detail

/// n windows over a random feature order, consecutive windows overlapping in
/// floor or ceil of overlap·window features, jointly covering all features.
inline std::vector<FeatureMask> chain_masks(std::size_t dim, std::size_t n, double overlap, std::uint64_t seed) {
  if (n == 0) throw Error(ErrorKind::configuration, "chain: need at least one participant");
  if (!(overlap > 0.0 && overlap < 1.0)) throw Error(ErrorKind::configuration, "chain: overlap fraction must be in (0,1)");
  Rng rng(seed);
  const auto perm = detail::feature_permutation(dim, rng);
  if (n == 1) return {FeatureMask::full(dim)};

  // Smallest window w for which the overlaps can be split between floor and
  // ceil of overlap*w and still tile exactly dim features.
  const std::size_t pairs = n - 1;
  for (std::size_t w = 1; w <= dim; ++w) {
    const double target = overlap * static_cast<double>(w);
    const auto lo = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(target)));
    const auto hi = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(target)));
    if (hi >= w) continue;
    const long long excess = static_cast<long long>(n * w) - static_cast<long long>(dim);
    if (excess < static_cast<long long>(pairs * lo) || excess > static_cast<long long>(pairs * hi)) continue;
    const auto n_hi = static_cast<std::size_t>(excess) - pairs * lo;  // pairs taking the ceil
    std::vector<FeatureMask> masks;
    std::size_t start = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::size_t> obs(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                   perm.begin() + static_cast<std::ptrdiff_t>(start + w));
      masks.emplace_back(dim, std::move(obs));
      if (i + 1 < n) {
        const bool take_hi = (hi != lo) && ((i + 1) * n_hi / pairs > i * n_hi / pairs);
        start += w - (take_hi ? hi : lo);
      }
    }
    return masks;
  }
  throw Error(ErrorKind::configuration, "chain: no window size tiles " + std::to_string(dim) + " features with " +
                                            std::to_string(n) + " participants at overlap " + std::to_string(overlap));
}

/// A shared core of round(shared·dim) features in every mask, the remaining
/// features split into n disjoint blocks.
inline std::vector<FeatureMask> hub_masks(std::size_t dim, std::size_t n, double shared, std::uint64_t seed) {
  if (n == 0) throw Error(ErrorKind::configuration, "hub: need at least one participant");
  if (!(shared * static_cast<double>(dim) >= 1.0) || shared > 1.0)
    throw Error(ErrorKind::configuration, "hub: shared fraction must cover at least one feature");
  Rng rng(seed);
  const auto perm = detail::feature_permutation(dim, rng);
  const auto core = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(shared * static_cast<double>(dim))));
  const std::size_t rest = dim - core;
  std::vector<FeatureMask> masks;
  std::size_t start = core;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t block = rest / n + (i < rest % n ? 1 : 0);
    std::vector<std::size_t> obs(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(core));
    obs.insert(obs.end(), perm.begin() + static_cast<std::ptrdiff_t>(start),
               perm.begin() + static_cast<std::ptrdiff_t>(start + block));
    start += block;
    masks.emplace_back(dim, std::move(obs));
  }
  return masks;
}

// ---------------------------------------------------------------------------
// Point distribution

namespace detail {

inline std::vector<std::vector<std::size_t>> members_by_cluster(const Dataset& central) {
  if (!central.has_labels()) {
    std::vector<std::size_t> all(central.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return {all};
  }
  std::vector<std::vector<std::size_t>> out(central.num_clusters());
  for (std::size_t p = 0; p < central.size(); ++p) out[central.labels[p]].push_back(p);
  return out;
}

// Each cluster shuffled and dealt round-robin; the dealing position carries
// over between clusters so participant totals stay balanced.
inline std::vector<std::size_t> deal_evenly(const Dataset& central, std::size_t n, Rng& rng) {
  std::vector<std::size_t> owner(central.size(), 0);
  std::size_t next = 0;
  for (auto members : members_by_cluster(central)) {
    std::shuffle(members.begin(), members.end(), rng);
    for (auto p : members) {
      owner[p] = next;
      next = (next + 1) % n;
    }
  }
  return owner;
}

// Each cluster sorted by its first coordinate and cut into n contiguous runs.
inline std::vector<std::size_t> deal_biased(const Dataset& central, std::size_t n) {
  std::vector<std::size_t> owner(central.size(), 0);
  for (auto members : members_by_cluster(central)) {
    std::stable_sort(members.begin(), members.end(),
                     [&](std::size_t a, std::size_t b) { return central.points[a][0] < central.points[b][0]; });
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t run = members.size() / n + (i < members.size() % n ? 1 : 0);
      for (std::size_t r = 0; r < run; ++r) owner[members[pos++]] = i;
    }
  }
  return owner;
}

}  // namespace detail

/// Builds participant datasets from an owner per central point and the masks.
inline Scenario assemble_scenario(const Dataset& central, std::span<const std::size_t> owner,
                                  std::span<const FeatureMask> masks) {
  require(owner.size() == central.size(), "assemble_scenario: owner size mismatch");
  Scenario s;
  s.dim = central.dim;
  s.num_clusters = central.has_labels() ? central.num_clusters() : 0;
  const std::size_t n = masks.size();
  s.participants.resize(n);
  s.truth.resize(n);
  s.provenance.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    require(masks[i].dim() == central.dim, "assemble_scenario: mask dim mismatch");
    s.participants[i].owner = i;
    s.participants[i].mask = masks[i];
  }
  for (std::size_t p = 0; p < central.size(); ++p) {
    const auto i = owner[p];
    require(i < n, "assemble_scenario: owner out of range");
    s.participants[i].rows.push_back(MaskedPoint::from_full(central.points[p], masks[i]).coords);
    s.truth[i].push_back(central.has_labels() ? central.labels[p] : 0);
    s.provenance[i].push_back(p);
  }
  for (std::size_t i = 0; i < n; ++i)
    if (s.participants[i].rows.empty())
      throw Error(ErrorKind::configuration, "participant " + std::to_string(i) + " received no points");
  return s;
}

/// Chain-overlap masks with every cluster spread randomly and evenly.
inline Scenario chain_scenario(const Dataset& central, std::size_t n, double overlap, std::uint64_t seed) {
  const auto masks = chain_masks(central.dim, n, overlap, derive_seed(seed, {phase::partition, 0}));
  Rng rng(derive_seed(seed, {phase::partition, 1}));
  const auto owner = detail::deal_evenly(central, n, rng);
  return assemble_scenario(central, owner, masks);
}

/// Shared-core masks; `biased` deals each cluster in runs sorted by the first
/// coordinate instead of evenly.
inline Scenario hub_scenario(const Dataset& central, std::size_t n, double shared, bool biased, std::uint64_t seed) {
  const auto masks = hub_masks(central.dim, n, shared, derive_seed(seed, {phase::partition, 0}));
  Rng rng(derive_seed(seed, {phase::partition, 1}));
  const auto owner = biased ? detail::deal_biased(central, n) : detail::deal_evenly(central, n, rng);
  return assemble_scenario(central, owner, masks);
}

inline OptimalCentroids optimal_centroids(const Scenario& s, const Dataset& central) {
  const auto owner = s.owner_of(central.size());
  for (auto o : owner) require(o < s.num_participants(), "optimal_centroids: central point not distributed");
  const auto masks = s.masks();
  return optimal_centroids(central, owner, masks);
}

// ---------------------------------------------------------------------------
// Overlap graphs

struct OverlapGraph {
  std::vector<std::vector<std::size_t>> vertices;                          // per true cluster
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> edges;     // per true cluster, i < j
};

inline OverlapGraph overlap_graph(const Scenario& s) {
  require(s.has_truth(), "overlap_graph: scenario has no ground truth");
  OverlapGraph g;
  g.vertices.resize(s.num_clusters);
  g.edges.resize(s.num_clusters);
  for (std::size_t i = 0; i < s.num_participants(); ++i) {
    std::vector<char> has(s.num_clusters, 0);
    for (auto a : s.truth[i]) has[a] = 1;
    for (std::size_t a = 0; a < s.num_clusters; ++a)
      if (has[a]) g.vertices[a].push_back(i);
  }
  for (std::size_t a = 0; a < s.num_clusters; ++a) {
    const auto& v = g.vertices[a];
    for (std::size_t x = 0; x < v.size(); ++x)
      for (std::size_t y = x + 1; y < v.size(); ++y)
        if (s.participants[v[x]].mask.overlaps(s.participants[v[y]].mask)) g.edges[a].emplace_back(v[x], v[y]);
  }
  return g;
}

/// Two-sample Kolmogorov-Smirnov statistic.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::erase_if(a, [](double v) { return std::isnan(v); });
  std::erase_if(b, [](double v) { return std::isnan(v); });
  if (a.empty() || b.empty()) return 0.0;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

struct Assumption1Report {
  std::vector<bool> connected;
  std::vector<bool> union_identity;
  std::vector<double> distribution_ks;  // max KS over participants and coordinates; reported only

  bool satisfied() const {
    return std::all_of(connected.begin(), connected.end(), [](bool b) { return b; }) &&
           std::all_of(union_identity.begin(), union_identity.end(), [](bool b) { return b; });
  }
};

struct Assumption2Report {
  std::vector<bool> fully_connected;
  std::vector<bool> union_identity;

  bool satisfied() const {
    return std::all_of(fully_connected.begin(), fully_connected.end(), [](bool b) { return b; }) &&
           std::all_of(union_identity.begin(), union_identity.end(), [](bool b) { return b; });
  }
};

namespace detail {

inline bool union_is_identity(const Scenario& s, const std::vector<std::size_t>& vertices) {
  FeatureMask u(s.dim, {});
  for (auto i : vertices) u = u | s.participants[i].mask;
  return u.is_full();
}

}  // namespace detail

inline Assumption1Report verify_assumption1(const Scenario& s) {
  const auto g = overlap_graph(s);
  Assumption1Report r;
  for (std::size_t a = 0; a < s.num_clusters; ++a) {
    const auto& v = g.vertices[a];
    // Breadth-first traversal over the cluster's overlap edges.
    bool connected = true;
    if (!v.empty()) {
      std::vector<std::vector<std::size_t>> adj(s.num_participants());
      for (auto [x, y] : g.edges[a]) {
        adj[x].push_back(y);
        adj[y].push_back(x);
      }
      std::vector<char> seen(s.num_participants(), 0);
      std::queue<std::size_t> q;
      q.push(v.front());
      seen[v.front()] = 1;
      std::size_t reached = 1;
      while (!q.empty()) {
        const auto x = q.front();
        q.pop();
        for (auto y : adj[x])
          if (!seen[y]) {
            seen[y] = 1;
            ++reached;
            q.push(y);
          }
      }
      connected = reached == v.size();
    }
    r.connected.push_back(connected);
    r.union_identity.push_back(detail::union_is_identity(s, v));

    double ks = 0.0;
    for (std::size_t m = 0; m < s.dim; ++m) {
      std::vector<double> pooled;
      std::vector<std::vector<double>> per(s.num_participants());
      for (auto i : v) {
        if (!s.participants[i].mask.contains(m)) continue;
        for (std::size_t p = 0; p < s.participants[i].size(); ++p)
          if (s.truth[i][p] == a) per[i].push_back(s.participants[i].rows[p][m]);
        pooled.insert(pooled.end(), per[i].begin(), per[i].end());
      }
      for (auto i : v)
        if (!per[i].empty()) ks = std::max(ks, ks_statistic(per[i], pooled));
    }
    r.distribution_ks.push_back(ks);
  }
  return r;
}

inline Assumption2Report verify_assumption2(const Scenario& s) {
  const auto g = overlap_graph(s);
  Assumption2Report r;
  for (std::size_t a = 0; a < s.num_clusters; ++a) {
    const std::size_t nv = g.vertices[a].size();
    r.fully_connected.push_back(g.edges[a].size() == nv * (nv - (nv > 0 ? 1 : 0)) / 2);
    r.union_identity.push_back(detail::union_is_identity(s, g.vertices[a]));
  }
  return r;
}

}  // namespace fedmask
