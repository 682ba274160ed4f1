#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedmask/assumptions.hpp"
#include "fedmask/core.hpp"
#include "fedmask/eval.hpp"
#include "fedmask/fedkc.hpp"
#include "fedmask/io.hpp"
#include "fedmask/localclust.hpp"
#include "fedmask/oneshot.hpp"
#include "fedmask/partition.hpp"
#include "fedmask/random.hpp"

namespace fedmask {

struct SyntheticSpec {
  std::size_t k = 16;
  std::size_t d = 128;
  std::size_t n_points = 1024;
  double separation = 100.0;
  std::uint64_t seed = 1;
};

/// Isotropic unit-variance Gaussian blobs whose means are pairwise at least
/// `separation` apart. Points are grouped by cluster.
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (!(spec.separation > 0.0)) throw Error(ErrorKind::configuration, "separation must be positive");
  if (spec.k == 0 || spec.d == 0 || spec.n_points < spec.k)
    throw Error(ErrorKind::configuration, "need k >= 1, d >= 1 and at least k points");
  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::vector<double>> means;
  double scale = 1.0;
  std::size_t failures = 0;
  const std::size_t budget = 10000;
  while (means.size() < spec.k) {
    std::vector<double> u(spec.d);
    double norm = 0.0;
    for (auto& v : u) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    for (auto& v : u) v = v / norm * spec.separation * scale;
    bool ok = true;
    for (const auto& m : means) {
      double s = 0.0;
      for (std::size_t c = 0; c < spec.d; ++c) s += (m[c] - u[c]) * (m[c] - u[c]);
      if (std::sqrt(s) < spec.separation) ok = false;
    }
    if (ok) {
      means.push_back(std::move(u));
      continue;
    }
    if (++failures >= budget)
      throw Error(ErrorKind::configuration, "could not place " + std::to_string(spec.k) + " means after " +
                                                std::to_string(budget) + " draws");
    if (failures % 100 == 0) scale *= 1.25;
  }

  Dataset d;
  d.dim = spec.d;
  for (std::size_t a = 0; a < spec.k; ++a) {
    const std::size_t count = spec.n_points / spec.k + (a < spec.n_points % spec.k ? 1 : 0);
    for (std::size_t p = 0; p < count; ++p) {
      std::vector<double> x(spec.d);
      for (std::size_t c = 0; c < spec.d; ++c) x[c] = means[a][c] + normal(rng);
      d.points.push_back(std::move(x));
      d.labels.push_back(a);
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Experiment configuration

enum class Recipe { chain, hub };
enum class AlgorithmChoice { one, two, both };

struct ExperimentConfig {
  // dataset: exactly one of synthetic / csv_path / scenario_dir
  std::optional<SyntheticSpec> synthetic;
  std::optional<std::string> csv_path;
  std::optional<std::string> label_column;
  std::optional<std::string> scenario_dir;

  Recipe recipe = Recipe::chain;
  std::size_t participants = 10;
  double overlap = 0.3;
  double shared = 0.1;
  bool biased = false;
  std::optional<double> silhouette_floor;
  std::size_t max_mask_retries = 10;

  AlgorithmChoice algorithm = AlgorithmChoice::one;
  std::optional<std::size_t> k;  // nullopt = number of true clusters (Algorithm 1) / estimated (Algorithm 2)
  FederatedConfig federated;
  MetaMethod method = MetaMethod::automatic;
  OneShotConfig oneshot;

  std::size_t repetitions = 5;
  std::uint64_t seed = 1;
  std::size_t triplets = 0;
  std::size_t baseline_restarts = 10;
  std::optional<std::string> output;

  void validate() const {
    const int sources = static_cast<int>(synthetic.has_value()) + static_cast<int>(csv_path.has_value()) +
                        static_cast<int>(scenario_dir.has_value());
    if (sources != 1) throw Error(ErrorKind::configuration, "exactly one dataset source is required");
    if (repetitions == 0) throw Error(ErrorKind::configuration, "repetitions must be positive");
    if (participants == 0) throw Error(ErrorKind::configuration, "participants must be positive");
  }
};

namespace detail {

template <class T>
void get_if_present(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

template <class T>
void get_if_present(const nlohmann::json& j, const char* key, std::optional<T>& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    const auto& ds = j.at("dataset");
    if (ds.contains("synthetic")) {
      SyntheticSpec s;
      const auto& sj = ds.at("synthetic");
      detail::get_if_present(sj, "k", s.k);
      detail::get_if_present(sj, "d", s.d);
      detail::get_if_present(sj, "n_points", s.n_points);
      detail::get_if_present(sj, "separation", s.separation);
      detail::get_if_present(sj, "seed", s.seed);
      c.synthetic = s;
    }
    if (ds.contains("csv")) {
      c.csv_path = ds.at("csv").at("path").get<std::string>();
      detail::get_if_present(ds.at("csv"), "label_column", c.label_column);
    }
    detail::get_if_present(ds, "scenario_dir", c.scenario_dir);

    if (j.contains("scenario")) {
      const auto& sc = j.at("scenario");
      std::string recipe = "chain";
      detail::get_if_present(sc, "recipe", recipe);
      if (recipe == "chain")
        c.recipe = Recipe::chain;
      else if (recipe == "hub")
        c.recipe = Recipe::hub;
      else
        throw Error(ErrorKind::configuration, "unknown recipe '" + recipe + "'");
      detail::get_if_present(sc, "participants", c.participants);
      detail::get_if_present(sc, "overlap", c.overlap);
      detail::get_if_present(sc, "shared", c.shared);
      detail::get_if_present(sc, "biased", c.biased);
      detail::get_if_present(sc, "silhouette_floor", c.silhouette_floor);
      detail::get_if_present(sc, "max_mask_retries", c.max_mask_retries);
    }

    std::string algo = "1";
    if (j.contains("algorithm")) algo = j.at("algorithm").is_string() ? j.at("algorithm").get<std::string>()
                                                                       : std::to_string(j.at("algorithm").get<int>());
    if (algo == "1")
      c.algorithm = AlgorithmChoice::one;
    else if (algo == "2")
      c.algorithm = AlgorithmChoice::two;
    else if (algo == "both")
      c.algorithm = AlgorithmChoice::both;
    else
      throw Error(ErrorKind::configuration, "algorithm must be 1, 2 or both");

    if (j.contains("k") && j.at("k").is_number_integer() && j.at("k").get<long long>() > 0)
      c.k = j.at("k").get<std::size_t>();
    else if (j.contains("k") && !(j.at("k").is_string() && j.at("k") == "auto") && !j.at("k").is_null())
      throw Error(ErrorKind::configuration, "k must be a positive integer or \"auto\"");

    if (j.contains("federated")) {
      const auto& f = j.at("federated");
      detail::get_if_present(f, "alpha", c.federated.alpha);
      detail::get_if_present(f, "rounds", c.federated.rounds);
      detail::get_if_present(f, "local_iters", c.federated.local_iters);
      detail::get_if_present(f, "compat_floor", c.federated.compat_floor);
      detail::get_if_present(f, "early_stop", c.federated.early_stop);
      detail::get_if_present(f, "tol", c.federated.tol);
      detail::get_if_present(f, "local_k", c.federated.local_k);
      std::string method = "auto";
      detail::get_if_present(f, "method", method);
      if (method == "auto")
        c.method = MetaMethod::automatic;
      else if (method == "A")
        c.method = MetaMethod::method_a;
      else if (method == "B")
        c.method = MetaMethod::method_b;
      else
        throw Error(ErrorKind::configuration, "method must be auto, A or B");
    }
    if (j.contains("oneshot")) {
      const auto& o = j.at("oneshot");
      detail::get_if_present(o, "w", c.oneshot.w);
      detail::get_if_present(o, "m", c.oneshot.m);
      detail::get_if_present(o, "k_min", c.oneshot.k_min);
      detail::get_if_present(o, "k_max", c.oneshot.k_max);
      detail::get_if_present(o, "local_k", c.oneshot.local_k);
      detail::get_if_present(o, "local_k_max", c.oneshot.local_k_max);
      detail::get_if_present(o, "bounding_boxes", c.oneshot.bounding_boxes);
      detail::get_if_present(o, "ridge", c.oneshot.ridge);
    }
    if (j.contains("metric")) {
      const auto m = parse_metric(j.at("metric").get<std::string>());
      c.federated.metric = m;
      c.oneshot.metric = m;
    }
    detail::get_if_present(j, "repetitions", c.repetitions);
    detail::get_if_present(j, "seed", c.seed);
    detail::get_if_present(j, "triplets", c.triplets);
    detail::get_if_present(j, "baseline_restarts", c.baseline_restarts);
    detail::get_if_present(j, "output", c.output);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::configuration, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, path.string() + ": " + e.what());
  }
  return parse_config(j);
}

// ---------------------------------------------------------------------------
// Running

struct RepetitionRecord {
  std::size_t repetition = 0;
  std::uint64_t seed = 0;
  std::map<std::string, double> metrics;
  std::vector<std::string> notes;  // warnings and failures
};

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;  // population
  std::size_t count = 0;
};

struct ExperimentReport {
  std::vector<RepetitionRecord> records;
  std::map<std::string, MetricSummary> summary;

  std::string records_text() const;
  std::string summary_text() const;
};

inline std::map<std::string, MetricSummary> summarize(const std::vector<RepetitionRecord>& records) {
  std::map<std::string, std::vector<double>> values;
  for (const auto& r : records)
    for (const auto& [k, v] : r.metrics) values[k].push_back(v);
  std::map<std::string, MetricSummary> out;
  for (const auto& [k, vs] : values) {
    MetricSummary s;
    s.count = vs.size();
    for (double v : vs) s.mean += v;
    s.mean /= static_cast<double>(vs.size());
    for (double v : vs) s.stddev += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(s.stddev / static_cast<double>(vs.size()));
    out[k] = s;
  }
  return out;
}

namespace detail {

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace detail

inline std::string ExperimentReport::records_text() const {
  std::string out = "repetition\tseed\tmetric\tvalue\n";
  for (const auto& r : records) {
    for (const auto& [k, v] : r.metrics)
      out += std::to_string(r.repetition) + "\t" + std::to_string(r.seed) + "\t" + k + "\t" + detail::format_double(v) + "\n";
    for (const auto& n : r.notes) out += std::to_string(r.repetition) + "\t" + std::to_string(r.seed) + "\tnote\t" + n + "\n";
  }
  return out;
}

inline std::string ExperimentReport::summary_text() const {
  std::string out = "metric\tmean\tstddev\tn\n";
  for (const auto& [k, s] : summary)
    out += k + "\t" + detail::fixed(s.mean, 6) + "\t" + detail::fixed(s.stddev, 6) + "\t" + std::to_string(s.count) + "\n";
  std::size_t failed = 0;
  for (const auto& r : records)
    for (const auto& n : r.notes)
      if (n.rfind("failed:", 0) == 0) ++failed;
  out += "failed_repetitions\t" + std::to_string(failed) + "\n";
  return out;
}

/// Builds the scenario for one repetition. With a silhouette floor, masks are
/// redrawn until every participant's local silhouette reaches it.
inline Scenario build_scenario(const ExperimentConfig& cfg, const Dataset& central, std::uint64_t seed,
                               std::vector<std::string>* notes = nullptr) {
  const std::size_t tries = cfg.silhouette_floor ? std::max<std::size_t>(1, cfg.max_mask_retries) : 1;
  for (std::size_t t = 0; t < tries; ++t) {
    const std::uint64_t s = t == 0 ? seed : derive_seed(seed, {phase::partition, t});
    Scenario sc = cfg.recipe == Recipe::chain ? chain_scenario(central, cfg.participants, cfg.overlap, s)
                                              : hub_scenario(central, cfg.participants, cfg.shared, cfg.biased, s);
    if (!cfg.silhouette_floor) return sc;
    const std::size_t k_max = cfg.k.value_or(std::max<std::size_t>(2, central.num_clusters()));
    bool ok = true;
    for (const auto& x : sc.participants) {
      const std::size_t hi = std::min(k_max, x.size() - 1);
      if (hi < 2) continue;
      const auto sel = select_k_silhouette(x, 2, hi, derive_seed(s, {phase::local_clustering, x.owner}));
      const double best = *std::max_element(sel.scores.begin(), sel.scores.end());
      if (best < *cfg.silhouette_floor) ok = false;
    }
    if (ok) return sc;
    if (notes) notes->push_back("masks redrawn: silhouette below floor (attempt " + std::to_string(t + 1) + ")");
  }
  throw Error(ErrorKind::configuration, "no mask draw met the silhouette floor");
}

inline Dataset load_central(const ExperimentConfig& cfg) {
  if (cfg.synthetic) return generate_synthetic(*cfg.synthetic);
  if (cfg.csv_path) return load_csv(*cfg.csv_path, CsvOptions{cfg.label_column, ','});
  return Dataset{};
}

/// Central dataset reassembled from a scenario with full provenance (all
/// participants' observations, absent markers where nobody observed).
inline Dataset central_from_scenario(const Scenario& s) {
  std::size_t n = 0;
  for (const auto& p : s.provenance)
    for (auto c : p) n = std::max(n, c + 1);
  Dataset d;
  d.dim = s.dim;
  d.points.assign(n, std::vector<double>(s.dim, absent()));
  if (s.has_truth()) d.labels.assign(n, 0);
  for (std::size_t i = 0; i < s.num_participants(); ++i)
    for (std::size_t p = 0; p < s.participants[i].size(); ++p) {
      auto& row = d.points[s.provenance[i][p]];
      for (auto m : s.participants[i].mask.indices()) row[m] = s.participants[i].rows[p][m];
      if (s.has_truth()) d.labels[s.provenance[i][p]] = s.truth[i][p];
    }
  return d;
}

inline void run_repetition(const ExperimentConfig& cfg, const Dataset& central_in, RepetitionRecord& rec) {
  Scenario sc;
  Dataset central = central_in;
  if (cfg.scenario_dir) {
    sc = import_scenario(*cfg.scenario_dir);
    central = central_from_scenario(sc);
  } else {
    sc = build_scenario(cfg, central, derive_seed(rec.seed, {phase::partition}), &rec.notes);
  }
  const bool full_central = std::all_of(central.points.begin(), central.points.end(), [](const auto& r) {
    return std::none_of(r.begin(), r.end(), [](double v) { return is_absent(v); });
  });
  const std::size_t k_true = sc.has_truth() ? sc.num_clusters : 0;

  if (cfg.algorithm != AlgorithmChoice::two) {
    FederatedConfig fc = cfg.federated;
    fc.k = cfg.k.value_or(k_true);
    if (fc.k == 0) throw Error(ErrorKind::configuration, "Algorithm 1 needs k or labelled data");
    const auto r = run_algorithm1(sc, fc, cfg.method, derive_seed(rec.seed, {phase::federated}));
    for (const auto& w : r.warnings) rec.notes.push_back("a1: " + w);
    rec.metrics["a1_method_b"] = r.method_used == MetaMethod::method_b ? 1.0 : 0.0;
    if (sc.has_truth()) {
      rec.metrics["a1_e1"] = e1_aggregation(r.init_membership(), local_cluster_truth(sc, r.local), k_true);
      if (full_central) {
        std::vector<std::string> warn;
        rec.metrics["a1_e2"] = e2_accuracy(r.final, central, &warn);
        for (const auto& w : warn) rec.notes.push_back("a1: " + w);
      }
      if (r.final.size() == k_true) {
        std::vector<std::size_t> owner = sc.owner_of(central.size());
        std::vector<FeatureMask> masks = sc.masks();
        const auto opt = optimal_centroids(central, owner, masks);
        for (const auto& w : opt.warnings) rec.notes.push_back("a1: " + w);
        if (opt.centroids.size() == r.final.size()) {
          const auto q = e3_centroid_quality(r.final.entries, opt.centroids);
          rec.metrics["a1_e3_cosine"] = q.cosine;
          rec.metrics["a1_e3_relative_distance"] = q.relative_distance;
        }
      }
    }
  }
  if (cfg.algorithm != AlgorithmChoice::one) {
    OneShotConfig oc = cfg.oneshot;
    oc.k = cfg.k;
    if (!oc.k && k_true > 0 && oc.k_min > k_true) oc.k_min = std::max<std::size_t>(2, k_true);
    const auto r = run_algorithm2(sc, oc, derive_seed(rec.seed, {phase::proxy}));
    rec.metrics["a2_k_hat"] = static_cast<double>(r.k_hat);
    if (sc.has_truth()) {
      const auto truth = local_cluster_truth(sc, r.local);
      if (r.forest.has(k_true)) rec.metrics["a2_e4"] = e4_aggregation(r.forest.membership(k_true), truth, k_true);
      rec.metrics["a2_e5"] = e5_accuracy(r.grouping, sc, r.local);
    }
  }
  if (sc.has_truth() && full_central && !cfg.scenario_dir) {
    rec.metrics["baseline_accuracy"] = centralized_baseline(central, k_true, cfg.baseline_restarts, rec.seed);
    if (cfg.triplets > 0)
      rec.metrics["triplet_rate"] = check_triplets(sc, central, cfg.triplets, derive_seed(rec.seed, {phase::triplets})).rate();
  }
}

/// Runs every repetition (failures are recorded, not fatal), summarizes, and
/// writes records.tsv and summary.tsv when an output directory is set.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const Dataset central = load_central(cfg);
  ExperimentReport rep;
  for (std::size_t r = 0; r < cfg.repetitions; ++r) {
    RepetitionRecord rec;
    rec.repetition = r;
    rec.seed = derive_seed(cfg.seed, {r});
    try {
      run_repetition(cfg, central, rec);
    } catch (const Error& e) {
      rec.notes.push_back(std::string("failed: ") + e.what());
    }
    rep.records.push_back(std::move(rec));
  }
  rep.summary = summarize(rep.records);
  if (cfg.output) {
    std::filesystem::create_directories(*cfg.output);
    detail::open_out(std::filesystem::path(*cfg.output) / "records.tsv") << rep.records_text();
    detail::open_out(std::filesystem::path(*cfg.output) / "summary.tsv") << rep.summary_text();
  }
  return rep;
}

}  // namespace fedmask
