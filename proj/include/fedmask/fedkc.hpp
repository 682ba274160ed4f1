#pragma once

// Federated K-clustering of masked data: meta-clustering of local centroids
// (Method A / Method B) followed by federated refinement rounds.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedmask/assignment.hpp"
#include "fedmask/core.hpp"
#include "fedmask/localclust.hpp"
#include "fedmask/partition.hpp"
#include "fedmask/random.hpp"

namespace fedmask {

struct GlobalCentroidSet {
  std::vector<Centroid> entries;
  std::vector<std::vector<ClusterRef>> membership;  // G: local clusters behind each entry

  std::size_t size() const noexcept { return entries.size(); }
};

struct FederatedConfig {
  std::size_t k = 0;
  double alpha = 0.8;
  std::size_t rounds = 3;
  std::size_t local_iters = 10;
  std::optional<std::size_t> compat_floor;  // default max(2, ceil(N_i / (5K)))
  bool early_stop = false;
  double tol = 1e-6;
  std::optional<std::size_t> local_k;  // fixed K_i; otherwise silhouette over [2, K]
  Metric metric = Metric::euclidean;

  void validate() const {
    if (k == 0) throw Error(ErrorKind::configuration, "K must be positive");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(ErrorKind::configuration, "alpha must be in (0,1]");
  }
};

enum class MetaMethod { automatic, method_a, method_b };

namespace detail {

inline RescaleContext centroid_context(std::span<const LabeledCentroid> cs, Metric metric) {
  require(!cs.empty(), "no local centroids");
  RescaleContext ctx(cs.front().mask.dim(), metric);
  for (const auto& c : cs) ctx.add(c.values, c.mask);
  return ctx;
}

inline Centroid merge_members(std::span<const LabeledCentroid> cs, const std::vector<std::size_t>& members) {
  std::vector<LabeledCentroid> set;
  set.reserve(members.size());
  for (auto z : members) set.push_back(cs[z]);
  return merge_centroids(set);
}

// Rescaled distance matrix over the local centroids; incomparable pairs are
// left at zero so seeding never selects them.
inline Eigen::MatrixXd seeding_distances(std::span<const LabeledCentroid> cs, const RescaleContext& ctx) {
  const auto n = static_cast<Eigen::Index>(cs.size());
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = a + 1; b < n; ++b) {
      const auto v = ctx.comparable_distance(cs[static_cast<std::size_t>(a)].values, cs[static_cast<std::size_t>(a)].mask,
                                             cs[static_cast<std::size_t>(b)].values, cs[static_cast<std::size_t>(b)].mask);
      d(a, b) = d(b, a) = v.value_or(0.0);
    }
  return d;
}

// Greedy max-min diversity: the farthest pair, then repeatedly the centroid
// whose nearest selected centroid is farthest. With distinct_owners, centroids
// from participants not yet represented are preferred while any remain.
inline std::vector<std::size_t> maxmin_seeds(std::span<const LabeledCentroid> cs, const Eigen::MatrixXd& d,
                                             std::size_t k, bool distinct_owners) {
  const std::size_t n = cs.size();
  std::vector<std::size_t> z;
  if (k == 0) return z;
  if (k == 1 || n == 1) return {0};
  std::size_t z1 = 0, z2 = 1;
  double best = -1.0;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) {
      if (distinct_owners && cs[a].owner == cs[b].owner) continue;
      if (d(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) > best) {
        best = d(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
        z1 = a;
        z2 = b;
      }
    }
  z = {z1, z2};
  std::vector<char> in(n, 0);
  in[z1] = in[z2] = 1;
  while (z.size() < k) {
    std::vector<char> owner_used(n, 0);
    std::size_t max_owner = 0;
    for (const auto& c : cs) max_owner = std::max(max_owner, c.owner);
    owner_used.assign(max_owner + 1, 0);
    for (auto s : z) owner_used[cs[s].owner] = 1;
    bool fresh_available = false;
    if (distinct_owners)
      for (std::size_t c = 0; c < n; ++c)
        if (!in[c] && !owner_used[cs[c].owner]) fresh_available = true;
    std::size_t pick = n;
    double pd = -1.0;
    for (std::size_t c = 0; c < n; ++c) {
      if (in[c]) continue;
      if (fresh_available && owner_used[cs[c].owner]) continue;
      double md = std::numeric_limits<double>::infinity();
      for (auto s : z) md = std::min(md, d(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(s)));
      if (md > pd) {
        pd = md;
        pick = c;
      }
    }
    z.push_back(pick);
    in[pick] = 1;
  }
  return z;
}

inline GlobalCentroidSet to_global_set(std::span<const LabeledCentroid> cs,
                                       const std::vector<std::vector<std::size_t>>& groups,
                                       const std::vector<Centroid>& entries) {
  GlobalCentroidSet out;
  out.entries = entries;
  for (const auto& g : groups) {
    std::vector<ClusterRef> refs;
    for (auto z : g) refs.push_back({cs[z].owner, cs[z].local_index});
    out.membership.push_back(std::move(refs));
  }
  return out;
}

}  // namespace detail

/// Meta-clustering objective: squared rescaled distance of each local
/// centroid to the merge of its group, summed over groups. Rescaling is over
/// the local centroids themselves.
inline double meta_objective(std::span<const LabeledCentroid> cs, const std::vector<std::vector<std::size_t>>& groups,
                             Metric metric = Metric::euclidean) {
  const auto ctx = detail::centroid_context(cs, metric);
  double total = 0.0;
  for (const auto& g : groups) {
    if (g.empty()) continue;
    const auto merged = detail::merge_members(cs, g);
    for (auto z : g) {
      const auto d = ctx.comparable_distance(cs[z].values, cs[z].mask, merged.values, merged.mask);
      if (d) total += *d * *d;
    }
  }
  return total;
}

/// Greedy constrained agglomeration: start from one participant with exactly
/// k centroids and repeatedly attach the closest (local centroid, group) pair,
/// never placing two centroids of one participant in the same group.
inline GlobalCentroidSet method_a(std::span<const LabeledCentroid> cs, std::size_t k,
                                  Metric metric = Metric::euclidean) {
  require(k >= 1 && k <= cs.size(), "method_a: need 1 <= K <= number of local centroids");
  const auto ctx = detail::centroid_context(cs, metric);

  std::optional<ParticipantId> anchor;
  {
    std::vector<std::size_t> count;
    for (const auto& c : cs) {
      if (count.size() <= c.owner) count.resize(c.owner + 1, 0);
      ++count[c.owner];
    }
    for (std::size_t i = 0; i < count.size() && !anchor; ++i)
      if (count[i] == k) anchor = i;
  }
  std::vector<std::size_t> seeds;
  if (anchor) {
    for (std::size_t z = 0; z < cs.size(); ++z)
      if (cs[z].owner == *anchor) seeds.push_back(z);
  } else {
    seeds = detail::maxmin_seeds(cs, detail::seeding_distances(cs, ctx), k, true);
  }

  std::vector<std::vector<std::size_t>> groups;
  std::vector<Centroid> entries;
  std::vector<char> placed(cs.size(), 0);
  for (auto z : seeds) {
    groups.push_back({z});
    entries.push_back(Centroid{cs[z].values, cs[z].mask});
    placed[z] = 1;
  }
  std::vector<std::size_t> pending;
  for (std::size_t z = 0; z < cs.size(); ++z)
    if (!placed[z]) pending.push_back(z);

  while (!pending.empty()) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bl = pending.size(), bg = groups.size();
    for (std::size_t l = 0; l < pending.size(); ++l) {
      const auto& c = cs[pending[l]];
      for (std::size_t g = 0; g < groups.size(); ++g) {
        const bool same_owner = std::any_of(groups[g].begin(), groups[g].end(),
                                            [&](std::size_t z) { return cs[z].owner == c.owner; });
        if (same_owner) continue;
        const auto d = ctx.comparable_distance(entries[g].values, entries[g].mask, c.values, c.mask);
        if (d && *d < best) {
          best = *d;
          bl = l;
          bg = g;
        }
      }
    }
    if (bl == pending.size()) {
      const auto& orphan = cs[pending.front()];
      throw Error(ErrorKind::aggregation_stuck, "method A: local centroid (" + std::to_string(orphan.owner) + "," +
                                                    std::to_string(orphan.local_index) +
                                                    ") has no comparable group without its participant");
    }
    groups[bg].push_back(pending[bl]);
    pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(bl));
    entries[bg] = detail::merge_members(cs, groups[bg]);
  }
  return detail::to_global_set(cs, groups, entries);
}

struct MethodBTrace {
  GlobalCentroidSet result;
  std::vector<std::size_t> seeds;       // indices into the local centroid list
  std::vector<double> objective;        // meta objective after each assignment/update pass
  std::size_t iterations = 0;
};

/// Max-min seeding followed by mask-aware K-means over the local centroids.
inline MethodBTrace method_b_traced(std::span<const LabeledCentroid> cs, std::size_t k,
                                    Metric metric = Metric::euclidean, std::size_t max_iter = 100) {
  require(k >= 1 && k <= cs.size(), "method_b: need 1 <= K <= number of local centroids");
  const auto ctx = detail::centroid_context(cs, metric);
  MethodBTrace trace;
  trace.seeds = detail::maxmin_seeds(cs, detail::seeding_distances(cs, ctx), k, false);

  std::vector<Centroid> entries;
  for (auto z : trace.seeds) entries.push_back(Centroid{cs[z].values, cs[z].mask});
  std::vector<std::size_t> assign(cs.size(), k), previous;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t it = 0; it < max_iter; ++it) {
    ++trace.iterations;
    for (std::size_t z = 0; z < cs.size(); ++z) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t bg = k;
      for (std::size_t g = 0; g < k; ++g) {
        const auto d = ctx.comparable_distance(entries[g].values, entries[g].mask, cs[z].values, cs[z].mask);
        if (d && *d < best) {
          best = *d;
          bg = g;
        }
      }
      if (bg == k)
        throw Error(ErrorKind::aggregation_stuck, "method B: local centroid (" + std::to_string(cs[z].owner) + "," +
                                                      std::to_string(cs[z].local_index) +
                                                      ") is not comparable with any global centroid");
      assign[z] = bg;
    }
    groups.assign(k, {});
    for (std::size_t z = 0; z < cs.size(); ++z) groups[assign[z]].push_back(z);
    for (std::size_t g = 0; g < k; ++g)
      if (!groups[g].empty()) entries[g] = detail::merge_members(cs, groups[g]);
    trace.objective.push_back(meta_objective(cs, groups, metric));
    if (assign == previous) break;
    previous = assign;
  }
  trace.result = detail::to_global_set(cs, groups, entries);
  return trace;
}

inline GlobalCentroidSet method_b(std::span<const LabeledCentroid> cs, std::size_t k,
                                  Metric metric = Metric::euclidean) {
  return method_b_traced(cs, k, metric).result;
}

// ---------------------------------------------------------------------------
// Federated phase

inline std::size_t default_compat_floor(std::size_t n_points, std::size_t k) {
  const std::size_t q = (n_points + 5 * k - 1) / (5 * k);
  return std::max<std::size_t>(2, q);
}

/// Global centroids that attract at least `floor` local points when every
/// point goes to its nearest global centroid on the owner's coordinates.
inline std::vector<std::size_t> compatible_centroids(const MaskedDataset& x, const GlobalCentroidSet& g,
                                                     std::size_t floor, Metric metric = Metric::euclidean) {
  std::vector<std::vector<std::size_t>> idx(g.size());
  for (std::size_t a = 0; a < g.size(); ++a) idx[a] = shared_indices(x.mask, g.entries[a].mask);
  std::vector<std::size_t> count(g.size(), 0);
  for (const auto& row : x.rows) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t ba = g.size();
    for (std::size_t a = 0; a < g.size(); ++a) {
      if (idx[a].empty()) continue;
      const double d = distance_over(row, g.entries[a].values, idx[a], metric);
      if (d < best) {
        best = d;
        ba = a;
      }
    }
    if (ba < g.size()) ++count[ba];
  }
  std::vector<std::size_t> out;
  for (std::size_t a = 0; a < g.size(); ++a)
    if (count[a] >= floor) out.push_back(a);
  return out;
}

/// Minimum-cost matching of local centroids to the projections of the global
/// centroids on the owner mask. Entry a is the local index matched with
/// global a, or nullopt.
inline std::vector<std::optional<std::size_t>> align_hungarian(std::span<const Centroid> globals,
                                                               std::span<const LabeledCentroid> locals,
                                                               const FeatureMask& owner_mask,
                                                               Metric metric = Metric::euclidean) {
  std::vector<std::optional<std::size_t>> out(globals.size());
  if (globals.empty() || locals.empty()) return out;
  const auto rows = static_cast<Eigen::Index>(locals.size());
  const auto cols = static_cast<Eigen::Index>(globals.size());
  Eigen::MatrixXd cost(rows, cols);
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> valid(rows, cols);
  double worst = 0.0;
  for (Eigen::Index l = 0; l < rows; ++l)
    for (Eigen::Index a = 0; a < cols; ++a) {
      const auto& lc = locals[static_cast<std::size_t>(l)];
      const auto idx = shared_indices(owner_mask & lc.mask, globals[static_cast<std::size_t>(a)].mask);
      valid(l, a) = !idx.empty();
      cost(l, a) = valid(l, a) ? distance_over(lc.values, globals[static_cast<std::size_t>(a)].values, idx, metric) : 0.0;
      if (valid(l, a)) worst = std::max(worst, cost(l, a));
    }
  // Incomparable pairs cost more than any complete valid matching.
  const double penalty = (worst + 1.0) * static_cast<double>(rows + cols + 1);
  for (Eigen::Index l = 0; l < rows; ++l)
    for (Eigen::Index a = 0; a < cols; ++a)
      if (!valid(l, a)) cost(l, a) = penalty;
  const auto match = solve_assignment(cost);
  for (std::size_t l = 0; l < locals.size(); ++l) {
    const auto a = match.row_to_col[l];
    if (a && valid(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(*a))) out[*a] = l;
  }
  return out;
}

struct RoundLog {
  std::vector<std::size_t> skipped_participants;  // no compatible global centroid
  std::vector<std::size_t> empty_slots;           // kept their previous value
  double max_movement = 0.0;
};

namespace detail {

// Ω_i G_c[a], filling coordinates the global centroid does not cover with the
// participant's own mean so the local algorithm can be seeded.
inline std::vector<double> projected_seed(const Centroid& g, const MaskedDataset& x) {
  std::vector<double> out(x.dim(), absent());
  for (auto m : x.mask.indices()) {
    if (g.mask.contains(m)) {
      out[m] = g.values[m];
    } else {
      double s = 0.0;
      for (const auto& r : x.rows) s += r[m];
      out[m] = s / static_cast<double>(x.size());
    }
  }
  return out;
}

inline double centroid_movement(const Centroid& a, const Centroid& b) {
  const auto idx = shared_indices(a.mask, b.mask);
  return distance_over(a.values, b.values, idx);
}

}  // namespace detail

/// One federated round: participants warm-start local clustering from the
/// compatible global centroids, align their result to the global slots, and
/// the server moves each slot toward the merge of its aligned centroids.
inline GlobalCentroidSet federated_round(std::span<const MaskedDataset> participants, const GlobalCentroidSet& g,
                                         const FederatedConfig& cfg, const LocalClusterer& clusterer,
                                         RoundLog* log = nullptr) {
  cfg.validate();
  const std::size_t k = g.size();
  RoundLog local_log;
  std::vector<std::vector<LabeledCentroid>> aligned(k);
  for (const auto& x : participants) {
    const std::size_t floor = cfg.compat_floor ? *cfg.compat_floor : default_compat_floor(x.size(), k);
    const auto compat = compatible_centroids(x, g, floor, cfg.metric);
    if (compat.empty()) {
      local_log.skipped_participants.push_back(x.owner);
      continue;
    }
    std::vector<std::vector<double>> seeds;
    for (auto a : compat) seeds.push_back(detail::projected_seed(g.entries[a], x));
    const auto sol = clusterer.refine(x, seeds, cfg.local_iters);
    const auto map = align_hungarian(g.entries, sol.centroids, x.mask, cfg.metric);
    for (std::size_t a = 0; a < k; ++a)
      if (map[a]) aligned[a].push_back(sol.centroids[*map[a]]);
  }

  GlobalCentroidSet out;
  out.membership.resize(k);
  for (std::size_t a = 0; a < k; ++a) {
    const auto& old = g.entries[a];
    if (aligned[a].empty()) {
      local_log.empty_slots.push_back(a);
      out.entries.push_back(old);
      continue;
    }
    const auto fresh = merge_centroids(aligned[a]);
    Centroid next{std::vector<double>(old.values.size(), absent()), old.mask | fresh.mask};
    for (auto m : next.mask.indices()) {
      const bool has_old = old.mask.contains(m), has_new = fresh.mask.contains(m);
      if (has_old && has_new)
        next.values[m] = (1.0 - cfg.alpha) * old.values[m] + cfg.alpha * fresh.values[m];
      else
        next.values[m] = has_new ? fresh.values[m] : old.values[m];
    }
    local_log.max_movement = std::max(local_log.max_movement, detail::centroid_movement(old, next));
    for (const auto& c : aligned[a]) out.membership[a].push_back({c.owner, c.local_index});
    out.entries.push_back(std::move(next));
  }
  if (log) *log = std::move(local_log);
  return out;
}

/// Local phase shared by both algorithms: K_i fixed, or chosen by silhouette
/// over [2, min(k_max, N_i - 1)].
inline LocalSolution local_phase(const MaskedDataset& x, std::size_t k_max, std::optional<std::size_t> fixed_k,
                                 const LocalClusterer& clusterer, std::uint64_t seed) {
  if (fixed_k) return clusterer.cluster(x, std::min(*fixed_k, x.size()), seed);
  const std::size_t hi = std::min(k_max, x.size() > 0 ? x.size() - 1 : 0);
  if (hi < 2) return clusterer.cluster(x, 1, seed);
  return select_k_silhouette(x, 2, hi, seed, clusterer).solution;
}

struct Algorithm1Result {
  GlobalCentroidSet final;
  GlobalCentroidSet initial;
  std::vector<GlobalCentroidSet> history;  // after each federated round
  std::vector<RoundLog> round_logs;
  std::vector<LocalSolution> local;        // initialization local solutions
  MetaMethod method_used = MetaMethod::method_b;
  std::vector<std::string> warnings;

  const std::vector<std::vector<ClusterRef>>& init_membership() const { return initial.membership; }
};

/// Picks Method B when every cluster's overlap graph is fully connected and
/// covers all features, Method A when it is merely connected, and Method B
/// with a warning otherwise. Without ground truth all participants form one
/// graph.
inline MetaMethod choose_method(const Scenario& s, std::vector<std::string>* warnings = nullptr) {
  Scenario probe = s;
  if (!probe.has_truth()) {
    probe.num_clusters = 1;
    for (auto& t : probe.truth) std::fill(t.begin(), t.end(), 0);
  }
  if (verify_assumption2(probe).satisfied()) return MetaMethod::method_b;
  if (verify_assumption1(probe).satisfied()) return MetaMethod::method_a;
  if (warnings) warnings->push_back("case not supported, defaulting to method B");
  return MetaMethod::method_b;
}

inline Algorithm1Result run_algorithm1(const Scenario& s, const FederatedConfig& cfg, MetaMethod method,
                                       std::uint64_t seed, const LocalClusterer& clusterer = KMeansClusterer{}) {
  cfg.validate();
  Algorithm1Result r;
  std::vector<LabeledCentroid> all;
  for (std::size_t i = 0; i < s.num_participants(); ++i) {
    r.local.push_back(local_phase(s.participants[i], cfg.k, cfg.local_k, clusterer,
                                  derive_seed(seed, {phase::local_clustering, i})));
    all.insert(all.end(), r.local.back().centroids.begin(), r.local.back().centroids.end());
  }
  if (all.size() < cfg.k)
    throw Error(ErrorKind::configuration, "fewer local centroids (" + std::to_string(all.size()) + ") than K");

  r.method_used = method == MetaMethod::automatic ? choose_method(s, &r.warnings) : method;
  r.initial = r.method_used == MetaMethod::method_a ? method_a(all, cfg.k, cfg.metric) : method_b(all, cfg.k, cfg.metric);

  GlobalCentroidSet g = r.initial;
  for (std::size_t round = 0; round < cfg.rounds; ++round) {
    RoundLog log;
    g = federated_round(s.participants, g, cfg, clusterer, &log);
    for (auto p : log.skipped_participants)
      r.warnings.push_back("round " + std::to_string(round) + ": participant " + std::to_string(p) + " skipped");
    for (auto a : log.empty_slots)
      r.warnings.push_back("round " + std::to_string(round) + ": slot " + std::to_string(a) + " kept its value");
    r.history.push_back(g);
    const bool settled = cfg.early_stop && log.max_movement < cfg.tol;
    r.round_logs.push_back(std::move(log));
    if (settled) break;
  }
  r.final = std::move(g);
  return r;
}

}  // namespace fedmask
