#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedmask/core.hpp"
#include "fedmask/partition.hpp"
#include "fedmask/random.hpp"

namespace fedmask {

struct TripletReport {
  std::size_t sampled = 0;     // draws from a valid (a, b, i, j, k) structure
  std::size_t applicable = 0;  // full-space ordering held
  std::size_t satisfied = 0;   // masked, rescaled ordering held as well

  double rate() const { return applicable ? static_cast<double>(satisfied) / static_cast<double>(applicable) : 0.0; }
};

/// Samples triplets x1 in X_i^a, x2 in X_j^a, x3 in X_k^b with j and k
/// neighbours of i and tests whether phi(x1,x2) < phi(x1,x3) in the full space
/// carries over to the rescaled masked distances. Draws continue until
/// n_samples applicable triplets are found or 100 * n_samples draws are spent.
inline TripletReport check_triplets(const Scenario& s, const Dataset& central, std::size_t n_samples,
                                    std::uint64_t seed, Metric metric = Metric::euclidean) {
  require(s.has_truth(), "check_triplets: ground-truth labels required");
  const std::size_t n = s.num_participants();
  const std::size_t k_true = s.num_clusters;

  // holders[a][i] = local indices of participant i on cluster a
  std::vector<std::vector<std::vector<std::size_t>>> holders(k_true, std::vector<std::vector<std::size_t>>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < s.truth[i].size(); ++p) holders[s.truth[i][p]][i].push_back(p);

  std::vector<std::vector<std::size_t>> neighbours(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (s.participants[i].mask.overlaps(s.participants[j].mask)) neighbours[i].push_back(j);

  struct Anchor {
    std::size_t a, b, i;
    std::vector<std::size_t> js, ks;
  };
  std::vector<Anchor> anchors;
  for (std::size_t a = 0; a < k_true; ++a)
    for (std::size_t b = 0; b < k_true; ++b) {
      if (a == b) continue;
      for (std::size_t i = 0; i < n; ++i) {
        if (holders[a][i].empty()) continue;
        Anchor an{a, b, i, {}, {}};
        for (auto j : neighbours[i]) {
          if (!holders[a][j].empty()) an.js.push_back(j);
          if (!holders[b][j].empty()) an.ks.push_back(j);
        }
        if (!an.js.empty() && !an.ks.empty()) anchors.push_back(std::move(an));
      }
    }
  if (anchors.empty())
    throw Error(ErrorKind::structural, "check_triplets: no cluster pair is held by overlapping participants");

  const auto ctx = RescaleContext::over_full(central.points, central.dim, metric);
  const auto full = FeatureMask::full(central.dim);
  Rng rng(derive_seed(seed, {phase::triplets}));
  auto pick = [&rng](std::size_t count) { return std::uniform_int_distribution<std::size_t>(0, count - 1)(rng); };

  TripletReport rep;
  const std::size_t budget = 100 * n_samples;
  while (rep.applicable < n_samples && rep.sampled < budget) {
    const auto& an = anchors[pick(anchors.size())];
    const std::size_t j = an.js[pick(an.js.size())];
    const std::size_t k = an.ks[pick(an.ks.size())];
    const auto& pool1 = holders[an.a][an.i];
    const auto& pool2 = holders[an.a][j];
    const auto& pool3 = holders[an.b][k];
    const std::size_t l1 = pool1[pick(pool1.size())];
    std::size_t l2 = pool2[pick(pool2.size())];
    if (j == an.i && pool2.size() > 1)
      while (l2 == l1) l2 = pool2[pick(pool2.size())];
    const std::size_t l3 = pool3[pick(pool3.size())];
    ++rep.sampled;

    const auto& x1 = central.points[s.provenance[an.i][l1]];
    const auto& x2 = central.points[s.provenance[j][l2]];
    const auto& x3 = central.points[s.provenance[k][l3]];
    if (!(distance_over(x1, x2, full.indices(), metric) < distance_over(x1, x3, full.indices(), metric))) continue;
    ++rep.applicable;

    const auto& mi = s.participants[an.i].mask;
    const auto d12 = ctx.comparable_distance(x1, mi, x2, s.participants[j].mask);
    const auto d13 = ctx.comparable_distance(x1, mi, x3, s.participants[k].mask);
    if (d12 && d13 && *d12 < *d13) ++rep.satisfied;
  }
  return rep;
}

}  // namespace fedmask
