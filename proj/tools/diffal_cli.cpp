// Command-line front end: dataset generation, graph inspection, experiments
// and the numerical self-check.

#include "diffal/data.hpp"
#include "diffal/errors.hpp"
#include "diffal/harness.hpp"
#include "diffal/knn_graph.hpp"
#include "diffal/selfcheck.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace diffal;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::string criteria;
  std::string seeds;
  std::vector<std::string> overrides;
};

nlohmann::json build_document(const Options& o) {
  nlohmann::json doc = o.config.empty() ? nlohmann::json::object() : load_config_document(o.config);
  for (const auto& kv : o.overrides) apply_override(doc, kv);
  if (!o.seeds.empty()) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(o.seeds);
    for (std::string item; std::getline(ss, item, ',');) {
      try {
        seeds.push_back(std::stoull(item));
      } catch (const std::exception&) {
        throw ConfigError("--seeds: '" + item + "' is not a non-negative integer");
      }
    }
    doc["seeds"] = seeds;
  }
  return doc;
}

fs::path require_out(const Options& o) {
  if (o.out.empty()) throw ConfigError("--out DIR is required");
  fs::create_directories(o.out);
  return o.out;
}

std::vector<Criterion> parse_criteria(const std::string& list) {
  std::vector<Criterion> out;
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(parse_criterion(item));
  }
  if (out.empty()) throw ConfigError("--criteria is empty");
  return out;
}

void write_summary(const std::vector<AccuracyCurve>& curves, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "criterion,round,labels_used,mean_accuracy,variance\n";
  out.precision(17);
  std::size_t begin = 0;
  while (begin < curves.size()) {
    std::size_t end = begin;
    while (end < curves.size() && curves[end].criterion == curves[begin].criterion) ++end;
    const auto agg = aggregate_seeds(std::span(curves).subspan(begin, end - begin));
    for (const auto& a : agg) {
      out << curves[begin].criterion << ',' << a.round << ',' << a.labels_used << ',' << a.mean << ','
          << a.variance << '\n';
    }
    begin = end;
  }
}

int cmd_experiment(const Options& o, bool compare) {
  const auto cfg = config_from_json(build_document(o));
  const auto out = require_out(o);
  std::vector<Criterion> criteria;
  if (compare) {
    criteria = parse_criteria(o.criteria.empty() ? "diffusion,random,uncertainty,coreset" : o.criteria);
  } else {
    criteria = o.criteria.empty() ? std::vector<Criterion>{cfg.query.criterion} : parse_criteria(o.criteria);
  }
  const auto curves = run_comparison(cfg, criteria);
  emit_curves(curves, out / "curves.csv");
  emit_timings(curves, out / "timings.csv");
  write_summary(curves, out / "summary.csv");
  std::ofstream(out / "config.json") << to_json(cfg).dump(2) << '\n';
  std::cout << "wrote " << (out / "curves.csv").string() << " (" << curves.size() << " curves)\n";
  return 0;
}

int cmd_gen_checkerboard(const Options& o) {
  const auto cfg = config_from_json(build_document(o));
  const auto out = require_out(o);
  if (cfg.dataset.kind != DatasetSpec::Kind::Checkerboard) throw ConfigError("dataset.kind must be checkerboard");
  write_embedding_file(generate_checkerboard(cfg.dataset.checkerboard), out / "pool.emb1");
  std::cout << "wrote " << (out / "pool.emb1").string() << '\n';
  if (cfg.test.kind == DatasetSpec::Kind::Checkerboard) {
    write_embedding_file(generate_checkerboard(cfg.test.checkerboard), out / "test.emb1");
    std::cout << "wrote " << (out / "test.emb1").string() << '\n';
  }
  return 0;
}

int cmd_graph_report(const Options& o) {
  const auto cfg = config_from_json(build_document(o));
  const auto set = load_dataset(cfg.dataset);
  set.validate();
  const auto graph = build_knn_graph(set.vectors, cfg.graph.k, cfg.graph.method);
  const auto kernel = compute_kernel(graph, KernelOptions{1e-12, cfg.graph.symmetrize});
  const auto comps = connectivity_report(graph);
  const auto suggested = suggest_params(set.size());
  std::cout << "points " << set.size() << " dim " << set.dim() << " classes " << set.num_classes << '\n'
            << "K " << cfg.graph.k << " components " << comps.count << (comps.connected() ? " (connected)" : "")
            << '\n'
            << "suggested K " << suggested.k << " T " << suggested.t << '\n'
            << "T for K=" << cfg.graph.k << ": " << suggest_params(set.size(), cfg.graph.k).t << '\n';
  if (!o.out.empty()) {
    const auto out = require_out(o);
    std::ofstream csv(out / "graph.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot write graph.csv");
    write_graph_csv(csv, graph, kernel);
    std::cout << "wrote " << (out / "graph.csv").string() << '\n';
  }
  return 0;
}

int cmd_selfcheck() {
  const auto s = run_oracle_equivalence(50, 20240601);
  bool ok = true;
  auto line = [&](const char* name, bool pass, double value, const char* bound) {
    ok = ok && pass;
    std::printf("%s %-40s %.10g (%s)\n", pass ? "PASS" : "FAIL", name, value, bound);
  };
  line("propagation vs dense solve", s.max_diffuse_vs_dense <= 1e-6, s.max_diffuse_vs_dense, "<= 1e-6");
  line("Jacobi fixed point vs dense solve", s.max_jacobi_vs_dense <= 1e-6, s.max_jacobi_vs_dense, "<= 1e-6");
  line("Jacobi residual", s.max_residual <= 1e-8, s.max_residual, "<= 1e-8");
  line("spectral radius bound", s.max_spectral_upper < 1.0, s.max_spectral_upper, "< 1");
  line("Jacobi matrix inf-norm (eps=1e-6)", s.max_jacobi_inf_norm < 1.0, s.max_jacobi_inf_norm, "< 1");
  std::printf("%d instances in %.2f s\n", s.instances, s.seconds);
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-diffusion active learning"};
  app.require_subcommand(1);
  Options opts;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config, "JSON experiment config");
    sub->add_option("--out", opts.out, "output directory");
    sub->add_option("--set", opts.overrides, "KEY=VALUE override, dotted keys, repeatable")->take_all();
    sub->add_option("--seeds", opts.seeds, "comma-separated run seeds");
  };
  auto* gen = app.add_subcommand("gen-checkerboard", "write checkerboard pool/test sets as EMB1");
  add_common(gen);
  auto* run = app.add_subcommand("run", "run one criterion over all seeds");
  add_common(run);
  run->add_option("--criteria", opts.criteria, "override the configured criterion");
  auto* compare = app.add_subcommand("compare", "run several criteria over all seeds");
  add_common(compare);
  compare->add_option("--criteria", opts.criteria, "comma-separated criteria");
  auto* graph = app.add_subcommand("graph-report", "K-NN graph connectivity and parameter suggestions");
  add_common(graph);
  auto* check = app.add_subcommand("selfcheck", "numerical oracle and convergence checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (*gen) return cmd_gen_checkerboard(opts);
    if (*run) {
      if (opts.config.empty()) throw ConfigError("run requires --config PATH");
      return cmd_experiment(opts, false);
    }
    if (*compare) {
      if (opts.config.empty()) throw ConfigError("compare requires --config PATH");
      return cmd_experiment(opts, true);
    }
    if (*graph) return cmd_graph_report(opts);
    if (*check) return cmd_selfcheck();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const InfeasibleDrawError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
