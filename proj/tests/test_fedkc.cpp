#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <vector>

#include "fedmask/fedkc.hpp"
#include "support.hpp"

using namespace fedmask;
using namespace testing_support;

namespace {

LabeledCentroid lc(std::vector<double> v, FeatureMask m, ParticipantId owner, std::size_t idx, std::size_t count = 1) {
  for (std::size_t d = 0; d < v.size(); ++d)
    if (!m.contains(d)) v[d] = absent();
  return LabeledCentroid{std::move(v), std::move(m), count, owner, idx};
}

std::set<std::set<ClusterRef>> as_sets(const std::vector<std::vector<ClusterRef>>& membership) {
  std::set<std::set<ClusterRef>> out;
  for (const auto& g : membership) out.insert(std::set<ClusterRef>(g.begin(), g.end()));
  return out;
}

// Every constrained grouping of n participants x k centroids into k groups is
// one permutation per participant after the first. Returns the groups of the
// minimum within-group sum of squares (all masks full, unit counts).
std::set<std::set<ClusterRef>> exhaustive_grouping(const std::vector<LabeledCentroid>& cs, std::size_t n, std::size_t k) {
  std::vector<std::vector<std::size_t>> perms(n);
  for (auto& p : perms) {
    p.resize(k);
    std::iota(p.begin(), p.end(), std::size_t{0});
  }
  double best = std::numeric_limits<double>::infinity();
  std::set<std::set<ClusterRef>> arg;
  const std::size_t dim = cs.front().values.size();
  std::function<void(std::size_t)> rec = [&](std::size_t i) {
    if (i == n) {
      double sse = 0.0;
      std::vector<std::set<ClusterRef>> groups(k);
      for (std::size_t g = 0; g < k; ++g) {
        std::vector<double> mean(dim, 0.0);
        for (std::size_t p = 0; p < n; ++p)
          for (std::size_t m = 0; m < dim; ++m) mean[m] += cs[p * k + perms[p][g]].values[m] / static_cast<double>(n);
        for (std::size_t p = 0; p < n; ++p) {
          const auto& c = cs[p * k + perms[p][g]];
          sse += euclid(c.values, mean) * euclid(c.values, mean);
          groups[g].insert({c.owner, c.local_index});
        }
      }
      if (sse < best) {
        best = sse;
        arg = std::set<std::set<ClusterRef>>(groups.begin(), groups.end());
      }
      return;
    }
    do {
      rec(i + 1);
    } while (std::next_permutation(perms[i].begin(), perms[i].end()));
    std::sort(perms[i].begin(), perms[i].end());
  };
  rec(1);
  return arg;
}

Dataset separated_blobs(std::size_t k, std::size_t dim, std::size_t per, std::uint64_t seed, double spread = 60.0) {
  Rng rng(seed);
  std::vector<std::vector<double>> means;
  for (std::size_t a = 0; a < k; ++a) means.push_back(random_vector(dim, rng, -spread, spread));
  return blobs(means, per, 1.0, seed + 1);
}

}  // namespace

TEST(MethodA, AnchorGroupsNearestPartners) {
  const auto f = FeatureMask::full(1);
  const std::vector<LabeledCentroid> cs{lc({0}, f, 0, 0), lc({10}, f, 0, 1), lc({11}, f, 1, 0, 3), lc({1}, f, 1, 1)};
  const auto g = method_a(cs, 2);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g.membership[0], (std::vector<ClusterRef>{{0, 0}, {1, 1}}));
  EXPECT_EQ(g.membership[1], (std::vector<ClusterRef>{{0, 1}, {1, 0}}));
  EXPECT_DOUBLE_EQ(g.entries[0].values[0], 0.5);
  EXPECT_DOUBLE_EQ(g.entries[1].values[0], (10.0 + 3 * 11.0) / 4.0);
}

TEST(MethodA, MatchesExhaustiveSearchOnSeparatedInstances) {
  Rng rng(21);
  std::normal_distribution<double> noise(0.0, 0.5);
  for (int t = 0; t < 30; ++t) {
    const std::size_t n = 2 + static_cast<std::size_t>(t % 2), k = n == 2 ? 5 : 4;
    std::vector<std::vector<double>> centers;
    for (std::size_t a = 0; a < k; ++a) centers.push_back(random_vector(3, rng, -50, 50));
    std::vector<LabeledCentroid> cs;
    for (std::size_t p = 0; p < n; ++p) {
      std::vector<std::size_t> order(k);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t j = 0; j < k; ++j) {
        auto v = centers[order[j]];
        for (auto& x : v) x += noise(rng);
        cs.push_back(lc(v, FeatureMask::full(3), p, j));
      }
    }
    EXPECT_EQ(as_sets(method_a(cs, k).membership), exhaustive_grouping(cs, n, k));
  }
}

TEST(MethodA, RespectsOwnershipConstraintAndMergeCount) {
  Rng rng(22);
  int checked = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 3 + static_cast<std::size_t>(t % 3), dim = 5;
    std::vector<FeatureMask> masks;
    for (std::size_t p = 0; p < n; ++p) masks.push_back(random_mask(dim, rng, 0.8));
    std::vector<LabeledCentroid> cs;
    for (std::size_t p = 0; p < n; ++p) {
      const std::size_t kp = 1 + std::uniform_int_distribution<std::size_t>(0, 3)(rng);
      for (std::size_t j = 0; j < kp; ++j) cs.push_back(lc(random_vector(dim, rng), masks[p], p, j));
    }
    const std::size_t k = std::min<std::size_t>(3, cs.size());
    GlobalCentroidSet g;
    try {
      g = method_a(cs, k);
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::aggregation_stuck);
      continue;
    }
    ++checked;
    ASSERT_EQ(g.size(), k);
    std::size_t merges = 0, placed = 0;
    for (const auto& group : g.membership) {
      std::set<ParticipantId> owners;
      for (const auto& r : group) owners.insert(r.participant);
      EXPECT_EQ(owners.size(), group.size());
      merges += group.size() - 1;
      placed += group.size();
    }
    EXPECT_EQ(placed, cs.size());
    EXPECT_EQ(merges, cs.size() - k);
  }
  EXPECT_GT(checked, 50);
}

TEST(MethodA, StuckWhenNoComparableGroup) {
  const std::vector<LabeledCentroid> cs{lc({1, 0}, FeatureMask(2, {0}), 0, 0), lc({0, 2}, FeatureMask(2, {1}), 1, 0)};
  try {
    method_a(cs, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::aggregation_stuck);
  }
}

TEST(MethodB, SeedsStartFromFarthestRescaledPair) {
  Rng rng(23);
  for (int t = 0; t < 20; ++t) {
    std::vector<LabeledCentroid> cs;
    for (std::size_t p = 0; p < 8; ++p) cs.push_back(lc(random_vector(3, rng), FeatureMask::full(3), p / 2, p % 2));
    std::size_t a0 = 0, b0 = 1;
    double best = -1;
    for (std::size_t a = 0; a < cs.size(); ++a)
      for (std::size_t b = a + 1; b < cs.size(); ++b)
        if (euclid(cs[a].values, cs[b].values) > best) {
          best = euclid(cs[a].values, cs[b].values);
          a0 = a;
          b0 = b;
        }
    const auto tr = method_b_traced(cs, 3);
    ASSERT_EQ(tr.seeds.size(), 3u);
    EXPECT_EQ(std::min(tr.seeds[0], tr.seeds[1]), a0);
    EXPECT_EQ(std::max(tr.seeds[0], tr.seeds[1]), b0);
    for (std::size_t i = 1; i < tr.objective.size(); ++i) EXPECT_LE(tr.objective[i], tr.objective[i - 1] + 1e-12);
  }
}

TEST(MethodB, KEqualToCountKeepsEveryCentroid) {
  Rng rng(24);
  std::vector<LabeledCentroid> cs;
  for (std::size_t p = 0; p < 5; ++p) cs.push_back(lc(random_vector(2, rng), FeatureMask::full(2), p, 0));
  const auto g = method_b(cs, 5);
  std::set<std::vector<double>> expected, got;
  for (const auto& c : cs) expected.insert(c.values);
  for (const auto& e : g.entries) got.insert(e.values);
  EXPECT_EQ(got, expected);
  for (const auto& m : g.membership) EXPECT_EQ(m.size(), 1u);
}

TEST(MetaClustering, PartialMasksInTwoDimensions) {
  const FeatureMask both(2, {0, 1}), x0(2, {0}), x1(2, {1});
  const std::vector<LabeledCentroid> cs{lc({0, 0}, both, 0, 0),    lc({10, 10}, both, 0, 1), lc({0.2, 0}, x0, 1, 0),
                                        lc({9.8, 0}, x0, 1, 1),    lc({0, 0.1}, x1, 2, 0),   lc({0, 10.1}, x1, 2, 1)};
  const std::set<std::set<ClusterRef>> expected{{{0, 0}, {1, 0}, {2, 0}}, {{0, 1}, {1, 1}, {2, 1}}};
  EXPECT_EQ(as_sets(method_a(cs, 2).membership), expected);
  const auto b = method_b(cs, 2);
  EXPECT_EQ(as_sets(b.membership), expected);
  for (const auto& e : b.entries) EXPECT_TRUE(e.mask.is_full());
}

TEST(Compatibility, CountsNearestAssignments) {
  const auto x = masked({{0}, {0.1}, {0.2}, {10}}, FeatureMask::full(1));
  GlobalCentroidSet g;
  for (double v : {0.0, 10.0, 50.0}) g.entries.push_back(Centroid{{v}, FeatureMask::full(1)});
  EXPECT_EQ(compatible_centroids(x, g, 2), (std::vector<std::size_t>{0}));
  EXPECT_EQ(compatible_centroids(x, g, 1), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(default_compat_floor(100, 16), 2u);
  EXPECT_EQ(default_compat_floor(1000, 4), 50u);
  EXPECT_EQ(default_compat_floor(3, 16), 2u);
}

TEST(Alignment, MatchesBruteForce) {
  Rng rng(25);
  for (int t = 0; t < 50; ++t) {
    std::vector<Centroid> globals;
    std::vector<LabeledCentroid> locals;
    for (int a = 0; a < 6; ++a) globals.push_back(Centroid{random_vector(3, rng), FeatureMask::full(3)});
    for (std::size_t l = 0; l < 4; ++l) locals.push_back(lc(random_vector(3, rng), FeatureMask::full(3), 0, l));
    Eigen::MatrixXd cost(4, 6);
    for (int l = 0; l < 4; ++l)
      for (int a = 0; a < 6; ++a) cost(l, a) = euclid(locals[static_cast<std::size_t>(l)].values, globals[static_cast<std::size_t>(a)].values);
    const auto map = align_hungarian(globals, locals, FeatureMask::full(3));
    double total = 0.0;
    std::size_t matched = 0;
    for (std::size_t a = 0; a < 6; ++a)
      if (map[a]) {
        total += cost(static_cast<Eigen::Index>(*map[a]), static_cast<Eigen::Index>(a));
        ++matched;
      }
    EXPECT_EQ(matched, 4u);
    EXPECT_NEAR(total, brute_min_assignment(cost), 1e-9);
  }
}

TEST(Alignment, IncomparableGlobalStaysUnmatched) {
  const std::vector<Centroid> globals{Centroid{{0, absent()}, FeatureMask(2, {0})}, Centroid{{absent(), 5}, FeatureMask(2, {1})}};
  const std::vector<LabeledCentroid> locals{lc({100, 0}, FeatureMask(2, {0}), 0, 0), lc({101, 0}, FeatureMask(2, {0}), 0, 1)};
  const auto map = align_hungarian(globals, locals, FeatureMask(2, {0}));
  ASSERT_TRUE(map[0].has_value());
  EXPECT_EQ(*map[0], 0u);
  EXPECT_FALSE(map[1].has_value());
}

namespace {

struct RoundFixture {
  std::vector<MaskedDataset> parts;
  std::vector<std::vector<double>> blob_mean;  // over every participant's points
  GlobalCentroidSet g;
};

RoundFixture round_fixture() {
  RoundFixture f;
  const auto d = blobs({{0, 0, 0}, {20, 20, 20}}, 30, 1.0, 31);
  f.blob_mean.assign(2, std::vector<double>(3, 0.0));
  std::vector<std::vector<double>> rows[2];
  for (std::size_t p = 0; p < d.size(); ++p) {
    rows[p % 2].push_back(d.points[p]);
    for (std::size_t m = 0; m < 3; ++m) f.blob_mean[d.labels[p]][m] += d.points[p][m] / 30.0;
  }
  f.parts.push_back(masked(rows[0], FeatureMask::full(3), 0));
  f.parts.push_back(masked(rows[1], FeatureMask::full(3), 1));
  f.g.entries = {Centroid{{1, 1, 1}, FeatureMask::full(3)}, Centroid{{18, 19, 21}, FeatureMask::full(3)}};
  f.g.membership.resize(2);
  return f;
}

}  // namespace

TEST(FederatedRound, FullStepLandsOnPooledMeans) {
  auto f = round_fixture();
  FederatedConfig cfg;
  cfg.k = 2;
  cfg.alpha = 1.0;
  RoundLog log;
  const auto next = federated_round(f.parts, f.g, cfg, KMeansClusterer{}, &log);
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t m = 0; m < 3; ++m) EXPECT_NEAR(next.entries[a].values[m], f.blob_mean[a][m], 1e-9);
  EXPECT_TRUE(log.skipped_participants.empty());
  EXPECT_TRUE(log.empty_slots.empty());
  EXPECT_EQ(next.membership[0].size(), 2u);
}

TEST(FederatedRound, PartialStepInterpolates) {
  auto f = round_fixture();
  FederatedConfig cfg;
  cfg.k = 2;
  cfg.alpha = 0.25;
  const auto next = federated_round(f.parts, f.g, cfg, KMeansClusterer{});
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t m = 0; m < 3; ++m)
      EXPECT_NEAR(next.entries[a].values[m], 0.75 * f.g.entries[a].values[m] + 0.25 * f.blob_mean[a][m], 1e-9);
  cfg.alpha = 0.0;
  EXPECT_THROW(federated_round(f.parts, f.g, cfg, KMeansClusterer{}), Error);
}

TEST(FederatedRound, DisjointParticipantSkippedAndSlotKept) {
  auto f = round_fixture();
  f.parts.push_back(masked({{0, 0, 0, 7}, {0, 0, 0, 8}}, FeatureMask(4, {3}), 2));
  for (auto& p : f.parts)
    if (p.owner != 2) {
      std::vector<std::vector<double>> rows;
      for (auto r : p.rows) {
        r.push_back(0.0);
        rows.push_back(r);
      }
      p = masked(rows, FeatureMask(4, {0, 1, 2}), p.owner);
    }
  for (auto& e : f.g.entries) {
    e.values.push_back(absent());
    e.mask = FeatureMask(4, {0, 1, 2});
  }
  f.g.entries.push_back(Centroid{{40, 40, 40, absent()}, FeatureMask(4, {0, 1, 2})});
  f.g.membership.resize(3);
  FederatedConfig cfg;
  cfg.k = 3;
  cfg.compat_floor = 2;
  RoundLog log;
  const auto next = federated_round(f.parts, f.g, cfg, KMeansClusterer{}, &log);
  EXPECT_EQ(log.skipped_participants, (std::vector<std::size_t>{2}));
  EXPECT_EQ(log.empty_slots, (std::vector<std::size_t>{2}));
  for (std::size_t m = 0; m < 3; ++m) EXPECT_EQ(next.entries[2].values[m], 40.0);
  EXPECT_TRUE(is_absent(next.entries[2].values[3]));
}

TEST(Dispatch, ChainUsesAHubUsesB) {
  const auto central = separated_blobs(4, 24, 30, 41);
  const auto chain = chain_scenario(central, 3, 0.3, 1);
  const auto hub = hub_scenario(central, 3, 0.2, false, 1);
  EXPECT_EQ(choose_method(chain), MetaMethod::method_a);
  EXPECT_EQ(choose_method(hub), MetaMethod::method_b);

  Scenario bad = chain;
  for (std::size_t i = 0; i < 3; ++i) {
    auto& x = bad.participants[i];
    x.mask = FeatureMask(24, {i});
    for (std::size_t p = 0; p < x.size(); ++p) x.rows[p] = MaskedPoint::from_full(central.points[bad.provenance[i][p]], x.mask).coords;
  }
  std::vector<std::string> warnings;
  EXPECT_EQ(choose_method(bad, &warnings), MetaMethod::method_b);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Algorithm1, OneFullRoundReachesOptimalCentroids) {
  const auto central = separated_blobs(4, 24, 30, 42);
  for (int recipe = 0; recipe < 2; ++recipe) {
    const auto s = recipe ? hub_scenario(central, 3, 0.2, false, 3) : chain_scenario(central, 3, 0.3, 3);
    FederatedConfig cfg;
    cfg.k = 4;
    cfg.alpha = 1.0;
    cfg.rounds = 1;
    cfg.local_k = 4;
    const auto r = run_algorithm1(s, cfg, MetaMethod::automatic, 7);
    EXPECT_EQ(r.method_used, recipe ? MetaMethod::method_b : MetaMethod::method_a);
    const auto opt = optimal_centroids(s, central);
    ASSERT_EQ(r.final.size(), 4u);
    for (const auto& o : opt.centroids) {
      double best = std::numeric_limits<double>::infinity();
      const Centroid* hit = nullptr;
      for (const auto& e : r.final.entries) {
        const double d = euclid(e.values, o.values);
        if (d < best) {
          best = d;
          hit = &e;
        }
      }
      EXPECT_TRUE(hit->mask.is_full());
      EXPECT_LT(best, 1e-9);
    }
    EXPECT_EQ(r.history.size(), 1u);
    EXPECT_EQ(r.init_membership().size(), 4u);
  }
}

TEST(Algorithm1, DeterministicForSeed) {
  const auto central = separated_blobs(4, 24, 30, 43);
  const auto s = chain_scenario(central, 3, 0.3, 5);
  FederatedConfig cfg;
  cfg.k = 4;
  const auto a = run_algorithm1(s, cfg, MetaMethod::automatic, 11);
  const auto b = run_algorithm1(s, cfg, MetaMethod::automatic, 11);
  ASSERT_EQ(a.final.size(), b.final.size());
  for (std::size_t i = 0; i < a.final.size(); ++i) {
    for (std::size_t m = 0; m < s.dim; ++m) EXPECT_EQ(a.final.entries[i].values[m], b.final.entries[i].values[m]);
    EXPECT_EQ(a.final.membership[i], b.final.membership[i]);
  }
  EXPECT_EQ(a.history.size(), 3u);
}

TEST(Algorithm1, EarlyStopAndConfiguration) {
  const auto central = separated_blobs(3, 24, 20, 44);
  const auto s = hub_scenario(central, 3, 0.2, false, 2);
  FederatedConfig cfg;
  cfg.k = 3;
  cfg.rounds = 20;
  cfg.early_stop = true;
  cfg.tol = 1e-3;
  const auto r = run_algorithm1(s, cfg, MetaMethod::automatic, 1);
  EXPECT_LT(r.history.size(), 20u);
  cfg.k = 0;
  EXPECT_THROW(run_algorithm1(s, cfg, MetaMethod::automatic, 1), Error);
  cfg.k = 50;
  cfg.local_k = 1;
  try {
    run_algorithm1(s, cfg, MetaMethod::automatic, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::configuration);
  }
}
