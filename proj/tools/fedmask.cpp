#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "fedmask/assumptions.hpp"
#include "fedmask/eval.hpp"
#include "fedmask/harness.hpp"
#include "fedmask/io.hpp"
#include "fedmask/partition.hpp"

namespace fs = std::filesystem;
using namespace fedmask;

namespace {

struct GenerateArgs {
  SyntheticSpec spec;
  std::string out;
};

struct PartitionArgs {
  std::string data;
  std::optional<std::string> label_column;
  std::string recipe = "chain";
  std::size_t participants = 10;
  double overlap = 0.3;
  double shared = 0.1;
  bool biased = false;
  std::uint64_t seed = 1;
  std::string out;
};

struct RunArgs {
  std::string config;
  std::optional<std::string> out;
};

struct CheckArgs {
  std::string scenario;
  std::string central;
  std::optional<std::string> label_column;
  std::size_t samples = 1000;
  std::uint64_t seed = 1;
};

struct EvalArgs {
  std::string scenario;
  std::string central;
  std::optional<std::string> label_column;
  std::string centroids;
};

int cmd_generate(const GenerateArgs& a) {
  write_csv(a.out, generate_synthetic(a.spec));
  return 0;
}

int cmd_partition(const PartitionArgs& a) {
  const auto central = load_csv(a.data, CsvOptions{a.label_column, ','});
  Scenario s;
  if (a.recipe == "chain")
    s = chain_scenario(central, a.participants, a.overlap, a.seed);
  else if (a.recipe == "hub")
    s = hub_scenario(central, a.participants, a.shared, a.biased, a.seed);
  else
    throw Error(ErrorKind::configuration, "recipe must be chain or hub");
  export_scenario(a.out, s);
  return 0;
}

int cmd_run(const RunArgs& a) {
  auto cfg = load_config(a.config);
  if (a.out) cfg.output = *a.out;
  const auto rep = run_experiment(cfg);
  std::cout << rep.summary_text();
  return 0;
}

void print_flags(const char* name, const std::vector<bool>& flags) {
  std::cout << name;
  for (bool f : flags) std::cout << ' ' << (f ? 1 : 0);
  std::cout << '\n';
}

int cmd_check(const CheckArgs& a) {
  const auto s = import_scenario(a.scenario);
  const auto central = load_csv(a.central, CsvOptions{a.label_column, ','});
  const auto a1 = verify_assumption1(s);
  const auto a2 = verify_assumption2(s);
  print_flags("assumption1_connected", a1.connected);
  print_flags("assumption1_union_identity", a1.union_identity);
  std::cout << "assumption1_distribution_ks";
  for (double v : a1.distribution_ks) std::printf(" %.6f", v);
  std::cout << '\n';
  print_flags("assumption2_fully_connected", a2.fully_connected);
  print_flags("assumption2_union_identity", a2.union_identity);
  const auto t = check_triplets(s, central, a.samples, a.seed);
  std::printf("triplets_sampled %zu\ntriplets_applicable %zu\ntriplets_satisfied %zu\ntriplet_rate %.3f\n", t.sampled,
              t.applicable, t.satisfied, t.rate());
  return 0;
}

int cmd_eval(const EvalArgs& a) {
  const auto s = import_scenario(a.scenario);
  const auto central = load_csv(a.central, CsvOptions{a.label_column, ','});
  GlobalCentroidSet g;
  g.entries = read_centroids(a.centroids);
  MetricsReport m;
  std::vector<std::string> warnings;
  m.e2 = e2_accuracy(g, central, &warnings);
  const auto opt = optimal_centroids(central, s.owner_of(central.size()), s.masks());
  if (opt.centroids.size() == g.size()) m.e3 = e3_centroid_quality(g.entries, opt.centroids);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  std::cout << m.to_text();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Clustering of partially observed, feature-partitioned data"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic Gaussian-blob dataset as CSV");
  g->add_option("--k", gen.spec.k, "Number of blobs")->capture_default_str();
  g->add_option("--d", gen.spec.d, "Number of features")->capture_default_str();
  g->add_option("--n", gen.spec.n_points, "Number of points")->capture_default_str();
  g->add_option("--separation", gen.spec.separation, "Minimum distance between blob means")->capture_default_str();
  g->add_option("--seed", gen.spec.seed, "Random seed")->capture_default_str();
  g->add_option("--out", gen.out, "Output CSV path")->required();

  PartitionArgs part;
  auto* p = app.add_subcommand("partition", "Split a labelled CSV into a masked multi-participant scenario");
  p->add_option("--data", part.data, "Input CSV")->required();
  p->add_option("--label-column", part.label_column, "Label column (header name or 0-based index)");
  p->add_option("--recipe", part.recipe, "chain or hub")->capture_default_str();
  p->add_option("--participants", part.participants, "Number of participants")->capture_default_str();
  p->add_option("--overlap", part.overlap, "Chain: overlap fraction between consecutive masks")->capture_default_str();
  p->add_option("--shared", part.shared, "Hub: fraction of features shared by everyone")->capture_default_str();
  p->add_flag("--biased", part.biased, "Hub: deal each cluster in runs sorted by the first coordinate");
  p->add_option("--seed", part.seed, "Random seed")->capture_default_str();
  p->add_option("--out", part.out, "Output scenario directory")->required();

  RunArgs run;
  auto* r = app.add_subcommand("run", "Run an experiment described by a JSON config");
  r->add_option("--config", run.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  r->add_option("--out", run.out, "Output directory (overrides the config)");

  CheckArgs chk;
  auto* c = app.add_subcommand("check-assumptions", "Overlap-graph checks and the sampled triplet test");
  c->add_option("--scenario", chk.scenario, "Scenario directory")->required();
  c->add_option("--central", chk.central, "Unmasked central dataset CSV")->required();
  c->add_option("--label-column", chk.label_column, "Label column of the central CSV");
  c->add_option("--samples", chk.samples, "Applicable triplets to collect")->capture_default_str();
  c->add_option("--seed", chk.seed, "Random seed")->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score saved global centroids against a scenario");
  e->add_option("--scenario", ev.scenario, "Scenario directory")->required();
  e->add_option("--central", ev.central, "Unmasked central dataset CSV")->required();
  e->add_option("--label-column", ev.label_column, "Label column of the central CSV");
  e->add_option("--centroids", ev.centroids, "Centroid table (slot,values...; NA off mask)")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (g->parsed()) return cmd_generate(gen);
    if (p->parsed()) return cmd_partition(part);
    if (r->parsed()) return cmd_run(run);
    if (c->parsed()) return cmd_check(chk);
    if (e->parsed()) return cmd_eval(ev);
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return exit_code(err.kind());
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
