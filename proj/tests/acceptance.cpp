#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fedmask/harness.hpp"
#include "support.hpp"

using namespace fedmask;
using namespace testing_support;

namespace {

int failures = 0;

void report(const std::string& id, bool ok, const std::string& detail) {
  std::printf("%s criterion %s: %s\n", ok ? "PASS" : "FAIL", id.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

nlohmann::json dim_config(const std::string& recipe, const std::string& algorithm) {
  nlohmann::json j = {
      {"dataset", {{"synthetic", {{"k", 16}, {"d", 128}, {"n_points", 1024}, {"separation", 100}, {"seed", 1}}}}},
      {"scenario", {{"recipe", recipe}, {"participants", 10}}},
      {"algorithm", algorithm},
      {"federated", {{"alpha", 0.8}, {"rounds", 3}}},
      {"oneshot", {{"w", 2.0}, {"m", 50}}},
      {"repetitions", 5},
      {"seed", 2024},
      {"triplets", 0}};
  if (recipe == "chain")
    j["scenario"]["overlap"] = 0.3;
  else {
    j["scenario"]["shared"] = 0.1;
    j["scenario"]["biased"] = true;
  }
  return j;
}

struct Extremes {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  std::size_t n = 0;
};

std::map<std::string, Extremes> extremes(const ExperimentReport& rep, std::size_t* failed) {
  std::map<std::string, Extremes> out;
  *failed = 0;
  for (const auto& r : rep.records) {
    for (const auto& n : r.notes)
      if (n.rfind("failed:", 0) == 0) {
        ++*failed;
        std::printf("  note: %s\n", n.c_str());
      }
    for (const auto& [k, v] : r.metrics) {
      auto& e = out[k];
      e.lo = std::min(e.lo, v);
      e.hi = std::max(e.hi, v);
      ++e.n;
    }
  }
  return out;
}

void algorithm1_criterion(const std::string& id, const std::string& recipe, double expect_method_b) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rep = run_experiment(parse_config(dim_config(recipe, "1")));
  const double secs = seconds_since(t0);
  std::size_t failed = 0;
  auto e = extremes(rep, &failed);
  const bool ok = failed == 0 && e["a1_e1"].n == 5 && e["a1_e1"].lo == 1.0 && e["a1_e2"].n == 5 && e["a1_e2"].lo == 100.0 &&
                  e["a1_e3_cosine"].n == 5 && e["a1_e3_cosine"].lo >= 1.0 - 1e-6 && e["a1_e3_relative_distance"].hi <= 1e-6 &&
                  e["a1_method_b"].lo == expect_method_b && e["a1_method_b"].hi == expect_method_b && secs <= 60.0;
  report(id, ok,
         recipe + ": min E1=" + fmt("%.6f", e["a1_e1"].lo) + " min E2=" + fmt("%.4f", e["a1_e2"].lo) + " min E3 cos=" +
             fmt("%.9f", e["a1_e3_cosine"].lo) + " max E3 rel=" + fmt("%.3g", e["a1_e3_relative_distance"].hi) +
             " method=" + (e["a1_method_b"].hi == 1.0 ? "B" : "A") + " failed=" + std::to_string(failed) +
             fmt(" time=%.1fs", secs));
}

void criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  std::string detail;
  bool ok = true;
  for (const std::string recipe : {"chain", "hub"}) {
    const auto rep = run_experiment(parse_config(dim_config(recipe, "2")));
    std::size_t failed = 0;
    auto e = extremes(rep, &failed);
    ok = ok && failed == 0 && e["a2_e4"].n == 5 && e["a2_e4"].lo == 1.0 && e["a2_e5"].n == 5 && e["a2_e5"].lo == 100.0;
    detail += recipe + ": min E4=" + fmt("%.6f", e["a2_e4"].lo) + " min E5=" + fmt("%.4f", e["a2_e5"].lo) +
              " k_hat=" + fmt("%.0f..%.0f", e["a2_k_hat"].lo, e["a2_k_hat"].hi) + " failed=" + std::to_string(failed) + "; ";
  }
  const double secs = seconds_since(t0);
  ok = ok && secs <= 120.0;
  report("3", ok, detail + fmt("time=%.1fs", secs));
}

void criterion4() {
  const auto central = generate_synthetic(SyntheticSpec{16, 128, 1024, 100, 1});
  const auto s = chain_scenario(central, 10, 0.3, 5);
  const auto good = check_triplets(s, central, 1000, 6);

  Rng rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  Dataset bad;
  bad.dim = 3;
  for (std::size_t a = 0; a < 2; ++a)
    for (int p = 0; p < 60; ++p) {
      bad.points.push_back({n(rng), n(rng), 50.0 * static_cast<double>(a) + n(rng)});
      bad.labels.push_back(a);
    }
  std::vector<std::size_t> owner(bad.size());
  for (std::size_t p = 0; p < owner.size(); ++p) owner[p] = p % 3;
  const std::vector<FeatureMask> masks(3, FeatureMask(3, {0, 1}));
  const auto sb = assemble_scenario(bad, owner, masks);
  const auto worse = check_triplets(sb, bad, 1000, 6);
  report("4", good.applicable == 1000 && good.rate() == 1.0 && worse.applicable == 1000 && worse.rate() < 0.9,
         fmt("chain 128-d rate=%.3f, hidden-coordinate instance rate=%.3f", good.rate(), worse.rate()));
}

void criterion5a() {
  Rng rng(501);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t dim = 2 + static_cast<std::size_t>(t % 6), n = 2 + static_cast<std::size_t>(t % 5);
    const std::size_t k = 1 + static_cast<std::size_t>(t % 3);
    Dataset d;
    d.dim = dim;
    std::vector<std::size_t> part;
    const std::size_t size = 20 + static_cast<std::size_t>(t % 17);
    for (std::size_t p = 0; p < size; ++p) {
      d.points.push_back(random_vector(dim, rng, -100, 100));
      d.labels.push_back(p % k);
      part.push_back(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
    }
    std::vector<FeatureMask> masks;
    for (std::size_t i = 0; i < n; ++i) masks.push_back(random_mask(dim, rng, 0.6));
    const auto opt = optimal_centroids(d, part, masks);
    for (std::size_t a = 0; a < k; ++a) {
      std::vector<LabeledCentroid> locals;
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> s(dim, 0.0);
        std::size_t c = 0;
        for (std::size_t p = 0; p < d.size(); ++p)
          if (part[p] == i && d.labels[p] == a) {
            for (std::size_t m = 0; m < dim; ++m) s[m] += d.points[p][m];
            ++c;
          }
        if (c == 0) continue;
        for (auto& v : s) v /= static_cast<double>(c);
        locals.push_back(LabeledCentroid{MaskedPoint::from_full(s, masks[i]).coords, masks[i], c, i, 0});
      }
      const auto merged = merge_centroids(locals);
      if (!(merged.mask == opt.centroids[a].mask)) worst = std::numeric_limits<double>::infinity();
      for (auto m : merged.mask.indices()) {
        const double o = opt.centroids[a].values[m];
        worst = std::max(worst, std::abs(merged.values[m] - o) / std::max(1.0, std::abs(o)));
      }
    }
  }
  report("5a", worst <= 1e-12, fmt("200 instances, max relative deviation %.3g", worst));
}

void criterion5b() {
  Rng rng(502);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto r = static_cast<Eigen::Index>(1 + t % 6), c = static_cast<Eigen::Index>(1 + (t / 6) % 6);
    Eigen::MatrixXd cost(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) cost(i, j) = u(rng);
    const auto a = solve_assignment(cost);
    worst = std::max(worst, std::abs(a.cost - brute_min_assignment(cost)));
  }
  report("5b", worst <= 1e-9, fmt("100 matrices up to 6x6, max deviation from brute force %.3g", worst));
}

std::vector<ProxyCluster> random_proxies(Rng& rng, std::size_t n, std::size_t dim, std::size_t m, double keep) {
  std::vector<ProxyCluster> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto mask = random_mask(dim, rng, keep);
    ProxyCluster p{i, 0, mask, {}, std::nullopt};
    for (std::size_t j = 0; j < m; ++j) p.points.push_back(MaskedPoint::from_full(random_vector(dim, rng), mask).coords);
    out.push_back(std::move(p));
  }
  return out;
}

void criterion5c() {
  Rng rng(503);
  double worst = 0.0;
  int compared = 0;
  for (int t = 0; t < 100; ++t) {
    const auto ps = random_proxies(rng, 8, 5, 2 + static_cast<std::size_t>(t % 4), 0.7);
    const auto ctx = proxy_context(ps);
    const auto table = build_force_table(ps, 2.0, ctx);
    std::vector<std::size_t> order(ps.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t cut = 1 + static_cast<std::size_t>(t % 6);
    const std::vector<std::size_t> r(order.begin(), order.begin() + static_cast<long>(cut)),
        s(order.begin() + static_cast<long>(cut), order.end());
    double num = 0.0, nr = 0.0, ns = 0.0;
    bool any = false;
    for (auto a : r) nr += static_cast<double>(ps[a].size());
    for (auto b : s) ns += static_cast<double>(ps[b].size());
    for (auto a : r)
      for (auto b : s) {
        const auto& p = ps[a];
        const auto& q = ps[b];
        const auto shared = shared_indices(p.mask, q.mask);
        if (shared.empty()) continue;
        double span2 = 0.0;
        for (auto m : shared) {
          double lo = 1e300, hi = -1e300;
          for (const auto& c : ps)
            if (c.mask.contains(m))
              for (const auto& x : c.points) {
                lo = std::min(lo, x[m]);
                hi = std::max(hi, x[m]);
              }
          span2 += (hi - lo) * (hi - lo);
        }
        for (const auto& x : p.points)
          for (const auto& y : q.points) {
            double d2 = 0.0;
            for (auto m : shared) d2 += (x[m] - y[m]) * (x[m] - y[m]);
            num += span2 / d2;
          }
        any = true;
      }
    const auto got = set_force(r, s, table);
    if (got.has_value() != any) {
      worst = std::numeric_limits<double>::infinity();
      continue;
    }
    if (!any) continue;
    const double direct = num / (nr * ns);
    worst = std::max(worst, std::abs(*got - direct) / direct);
    ++compared;
  }
  report("5c", worst <= 1e-9 && compared >= 90,
         fmt("%.0f groupings compared, max relative deviation %.3g", compared, worst));
}

std::set<std::set<ClusterRef>> exhaustive_grouping(const std::vector<LabeledCentroid>& cs, std::size_t n, std::size_t k) {
  std::vector<std::vector<std::size_t>> perms(n, std::vector<std::size_t>(k));
  for (auto& p : perms) std::iota(p.begin(), p.end(), std::size_t{0});
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
          sse += std::pow(euclid(c.values, mean), 2);
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

void criterion5d() {
  Rng rng(504);
  std::normal_distribution<double> noise(0.0, 0.5);
  const std::vector<std::pair<std::size_t, std::size_t>> shapes{{2, 6}, {3, 4}, {4, 3}, {2, 5}, {3, 3}};
  int agree = 0;
  for (int t = 0; t < 50; ++t) {
    const auto [n, k] = shapes[static_cast<std::size_t>(t) % shapes.size()];
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
        cs.push_back(LabeledCentroid{v, FeatureMask::full(3), 1, p, j});
      }
    }
    std::set<std::set<ClusterRef>> got;
    for (const auto& g : method_a(cs, k).membership) got.insert(std::set<ClusterRef>(g.begin(), g.end()));
    if (got == exhaustive_grouping(cs, n, k)) ++agree;
  }
  report("5d", agree == 50, fmt("%.0f of 50 instances (nK <= 12) match the exhaustive optimum", agree));
}

void criterion5e() {
  Rng rng(505);
  double worst = 0.0;
  for (std::size_t n = 1; n <= 7; ++n)
    for (int t = 0; t < 5; ++t) {
      std::vector<std::vector<double>> a, b;
      for (std::size_t i = 0; i < n; ++i) {
        a.push_back(random_vector(3, rng));
        b.push_back(random_vector(3, rng));
      }
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      double best = std::numeric_limits<double>::infinity();
      do {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += euclid(a[i], b[perm[i]]);
        best = std::min(best, s);
      } while (std::next_permutation(perm.begin(), perm.end()));
      worst = std::max(worst, std::abs(empirical_w1(a, b) - best / static_cast<double>(n)));
    }
  report("5e", worst <= 1e-12, fmt("35 instances of size 1..7, max deviation %.3g", worst));
}

void criterion5f() {
  const std::vector<std::size_t> sizes{30, 100, 300};
  std::vector<double> medians;
  for (auto n : sizes) {
    std::vector<double> w;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(derive_seed(seed, {n}));
      std::normal_distribution<double> g(0.0, 1.0);
      Eigen::MatrixXd src(static_cast<Eigen::Index>(n), 2);
      std::vector<std::vector<double>> source;
      for (std::size_t i = 0; i < n; ++i) {
        const double x = 3.0 + 2.0 * g(rng), y = -1.0 + 0.5 * g(rng) + 0.3 * x;
        src.row(static_cast<Eigen::Index>(i)) << x, y;
        source.push_back({x, y});
      }
      const auto proxy = sample_proxy(fit_gaussian(src, FeatureMask::full(2)), n, std::nullopt, seed + 1000);
      w.push_back(empirical_w1(proxy.points, source));
    }
    std::nth_element(w.begin(), w.begin() + 10, w.end());
    const double hi = w[10];
    std::nth_element(w.begin(), w.begin() + 9, w.end());
    medians.push_back(0.5 * (w[9] + hi));
  }
  report("5f", medians[0] >= medians[1] && medians[1] >= medians[2],
         fmt("median W1 at N=M=30,100,300: %.4f, %.4f, %.4f", medians[0], medians[1], medians[2]));
}

void criterion5g() {
  Rng rng(507);
  int identical = 0, total = 0;
  for (int t = 0; t < 20; ++t) {
    const auto ps = random_proxies(rng, 8, 5, 6, 0.8);
    std::vector<MergeForest> forests;
    bool stuck = false;
    for (double lambda : {0.1, 1.0, 10.0}) {
      auto scaled = ps;
      for (auto& p : scaled)
        for (auto& x : p.points)
          for (auto& v : x)
            if (!is_absent(v)) v *= lambda;
      try {
        forests.push_back(agglomerate(scaled, 2.0));
      } catch (const Error&) {
        stuck = true;
      }
    }
    if (stuck) {
      if (!forests.empty()) ++total;
      continue;
    }
    ++total;
    bool same = true;
    for (std::size_t f = 1; f < forests.size(); ++f) {
      same = same && forests[f].snapshots == forests[0].snapshots && forests[f].steps.size() == forests[0].steps.size();
      for (std::size_t s = 0; same && s < forests[0].steps.size(); ++s)
        same = forests[f].steps[s].left == forests[0].steps[s].left && forests[f].steps[s].right == forests[0].steps[s].right;
    }
    if (same) ++identical;
  }
  report("5g", identical == total && total > 0, fmt("%.0f of %.0f forests identical for lambda in {0.1, 1, 10}", identical, total));
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion5h() {
  const auto dir = std::filesystem::temp_directory_path() / "fedmask_acceptance_determinism";
  std::filesystem::remove_all(dir);
  auto j = dim_config("hub", "both");
  j["dataset"]["synthetic"] = {{"k", 6}, {"d", 40}, {"n_points", 300}, {"separation", 80}, {"seed", 11}};
  j["scenario"]["participants"] = 4;
  j["repetitions"] = 2;
  j["triplets"] = 200;
  bool same = true;
  for (const char* name : {"a", "b"}) {
    j["output"] = (dir / name).string();
    run_experiment(parse_config(j));
  }
  for (const char* file : {"records.tsv", "summary.tsv"})
    same = same && !slurp(dir / "a" / file).empty() && slurp(dir / "a" / file) == slurp(dir / "b" / file);
  std::filesystem::remove_all(dir);
  report("5h", same, "records.tsv and summary.tsv byte-identical across two runs");
}

void criterion6() {
  Rng rng(606);
  const std::size_t dim = 4;
  std::vector<double> dir = random_vector(dim, rng, -1, 1);
  const double norm = euclid(dir, std::vector<double>(dim, 0.0));
  std::vector<double> far(dim);
  for (std::size_t m = 0; m < dim; ++m) far[m] = 2.0 * dir[m] / norm;
  const auto central = blobs({std::vector<double>(dim, 0.0), far}, 300, 1.0, 607);
  const auto s = chain_scenario(central, 2, 0.5, 608);
  FederatedConfig fc;
  fc.k = 2;
  fc.alpha = 0.8;
  fc.rounds = 3;
  const auto r = run_algorithm1(s, fc, MetaMethod::automatic, 609);
  const double e2 = e2_accuracy(r.final, central);
  const double base = centralized_baseline(central, 2, 10, 610);
  report("6", std::abs(e2 - base) <= 5.0, fmt("means 2 sigma apart: E2=%.2f, centralized baseline=%.2f", e2, base));
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  auto guarded = [](const std::string& id, const std::function<void()>& f) {
    try {
      f();
    } catch (const std::exception& e) {
      report(id, false, std::string("threw: ") + e.what());
    }
  };
  guarded("1", [] { algorithm1_criterion("1", "chain", 0.0); });
  guarded("2", [] { algorithm1_criterion("2", "hub", 1.0); });
  guarded("3", criterion3);
  guarded("4", criterion4);
  guarded("5a", criterion5a);
  guarded("5b", criterion5b);
  guarded("5c", criterion5c);
  guarded("5d", criterion5d);
  guarded("5e", criterion5e);
  guarded("5f", criterion5f);
  guarded("5g", criterion5g);
  guarded("5h", criterion5h);
  guarded("6", criterion6);
  std::printf("%d criteria failed, total time %.1fs\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
