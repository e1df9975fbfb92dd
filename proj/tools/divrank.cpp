// Batch driver: divrank <synth|cluster|train-cae|rerank|sweep|eval> [options]
// Exit codes: 0 ok, 1 validation, 2 io, 3 numerical.

#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <string>

#include "divrank/pipeline.hpp"

namespace {

using namespace divrank;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha;
  std::optional<std::int64_t> k;
  bool paper_literal_init = false;

  // File values first, then flag overrides, then validation.
  ExperimentConfig resolve() const {
    ExperimentConfig cfg;
    if (!config_path.empty()) {
      json j;
      try {
        j = json::parse(read_text(config_path));
      } catch (const json::parse_error& e) {
        throw ValidationError("malformed config '" + config_path + "': " + e.what());
      }
      cfg = config_from_json(j);
    }
    if (seed) cfg.seed = *seed;
    if (alpha) cfg.alpha = *alpha;
    if (k) cfg.K = *k;
    if (paper_literal_init) cfg.paper_literal_init = true;
    return validate_config(cfg);
  }
};

void add_common(CLI::App* sub, Common& c, bool selection_flags) {
  sub->add_option("--config", c.config_path, "JSON config file");
  sub->add_option("--seed", c.seed, "64-bit base seed");
  if (selection_flags) {
    sub->add_option("--alpha", c.alpha, "accuracy/diversity trade-off");
    sub->add_option("--k", c.k, "list length");
    sub->add_flag("--paper-literal-init", c.paper_literal_init, "seed the greedy with argmax log D_ii");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diversified re-ranking with a bi-sequential DPP"};
  app.require_subcommand(1);

  Common common;

  SyntheticSpec spec;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic item/behavior/candidate corpus");
  add_common(synth, common, false);
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--clusters", spec.clusters);
  synth->add_option("--items-per-cluster", spec.items_per_cluster);
  synth->add_option("--dim", spec.dim);
  synth->add_option("--noise", spec.noise);
  synth->add_option("--users", spec.users);
  synth->add_option("--behaviors", spec.behaviors_per_user);
  synth->add_option("--page-size", spec.page_size);
  synth->add_option("--candidates", spec.candidates);
  synth->add_option("--sharpness", spec.sharpness);
  synth->add_option("--upstream-noise", spec.upstream_noise);

  std::string items_path, behaviors_path, clusters_path, out_path, user_out;
  auto* cluster = app.add_subcommand("cluster", "cluster items by bipartite modularity");
  add_common(cluster, common, false);
  cluster->add_option("--items", items_path)->required();
  cluster->add_option("--behaviors", behaviors_path)->required();
  cluster->add_option("--out", out_path, "item cluster file")->required();
  cluster->add_option("--user-out", user_out, "optional user cluster file");

  std::string train_out;
  auto* train = app.add_subcommand("train-cae", "train interest encoders and the accuracy model");
  add_common(train, common, false);
  train->add_option("--items", items_path)->required();
  train->add_option("--behaviors", behaviors_path)->required();
  train->add_option("--clusters", clusters_path)->required();
  train->add_option("--out", train_out, "output directory")->required();

  std::string candidates_path, profiles_path, params_path;
  RerankOptions ro;
  auto* rerank = app.add_subcommand("rerank", "re-rank candidate sets");
  add_common(rerank, common, true);
  rerank->add_option("--candidates", candidates_path)->required();
  rerank->add_option("--profiles", profiles_path, "profile cache from train-cae");
  rerank->add_option("--params", params_path, "checkpoint from train-cae; base scores are used when absent");
  rerank->add_option("--out", out_path)->required();
  rerank->add_option("--method", ro.method, "bs-dpp | fixed-dpp | mmr");
  rerank->add_option("--lambda", ro.mmr_lambda, "MMR trade-off (default 1/(1+alpha))");
  rerank->add_option("--diagnostics", ro.diagnostics_path, "per-step CSV");
  rerank->add_option("--dump-kernel", ro.dump_kernel_dir, "directory for per-user kernel CSVs");

  std::string labels_path, alphas_text = "0,0.5,1,2,4";
  std::size_t runs = 1;
  auto* sweep = app.add_subcommand("sweep", "alpha sweep for all methods");
  add_common(sweep, common, true);
  sweep->add_option("--candidates", candidates_path)->required();
  sweep->add_option("--profiles", profiles_path);
  sweep->add_option("--params", params_path);
  sweep->add_option("--labels", labels_path)->required();
  sweep->add_option("--alphas", alphas_text, "comma-separated, strictly increasing");
  sweep->add_option("--runs", runs);
  sweep->add_option("--out", out_path)->required();

  std::string results_path;
  auto* eval = app.add_subcommand("eval", "metric report for a result file");
  add_common(eval, common, true);
  eval->add_option("--results", results_path)->required();
  eval->add_option("--labels", labels_path)->required();
  eval->add_option("--candidates", candidates_path)->required();
  eval->add_option("--out", out_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*synth) {
      if (common.seed) spec.seed = *common.seed;
      cmd_synth(spec, synth_out);
    } else if (*cluster) {
      const auto cfg = common.resolve();
      auto r = cmd_cluster(items_path, behaviors_path, out_path, cfg.seed, user_out);
      std::cerr << "modularity " << format_double(r.modularity) << "\n";
    } else if (*train) {
      auto paths = cmd_train(items_path, behaviors_path, clusters_path, common.resolve(), train_out);
      std::cerr << "wrote " << paths.params << "\n";
    } else if (*rerank) {
      cmd_rerank(candidates_path, profiles_path, params_path, common.resolve(), out_path, ro);
    } else if (*sweep) {
      const auto alphas = parse_double_list(alphas_text);
      cmd_sweep(candidates_path, profiles_path, params_path, labels_path, common.resolve(), alphas, runs, out_path);
    } else if (*eval) {
      const auto cfg = common.resolve();
      cmd_eval(results_path, labels_path, candidates_path, static_cast<std::size_t>(cfg.K), out_path);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
