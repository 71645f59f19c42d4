// Experiment runner: ecgmatch <verb> [options]. See README for the verbs.
#include <CLI11.hpp>

#include <iostream>

#include "ecgmatch/cli.hpp"

int main(int argc, char** argv) {
  using namespace ecgmatch;
  CLI::App app{"ECGMatch semi-supervised multi-label ECG classification"};
  app.require_subcommand(1);

  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  int threads = 1;
  GlobalOptions opts;
  const auto add_globals = [&](CLI::App* sub) {
    sub->add_option("--config", config, "experiment config (JSON)")->envname("ECGMATCH_CONFIG");
    sub->add_option("--out", out, "output directory or file")->envname("ECGMATCH_OUT");
    sub->add_option("--seed", seed, "run a single seed instead of the configured list")->envname("ECGMATCH_SEED");
    sub->add_option("--threads", threads, "augmentation worker threads")->envname("ECGMATCH_THREADS");
  };

  auto* run = app.add_subcommand("run", "train and evaluate every configured model");
  add_globals(run);
  auto* grid = app.add_subcommand("gridsearch", "sweep lambda_u / lambda_f");
  add_globals(grid);

  std::string scores, labels;
  auto* eval = app.add_subcommand("eval", "metrics of an external score matrix");
  add_globals(eval);
  eval->add_option("scores", scores, "scores CSV (n x C)")->required();
  eval->add_option("labels", labels, "binary labels CSV (n x C)")->required();

  std::string pattern, control;
  auto* compare = app.add_subcommand("compare", "Friedman / Bonferroni-Dunn comparison of metric reports");
  add_globals(compare);
  compare->add_option("reports", pattern, "glob matching metrics CSV files")->required();
  compare->add_option("--control", control, "control model name")->required();

  std::string terms, map_file;
  auto* annotate = app.add_subcommand("annotate", "map diagnosis terms to the five superclasses");
  add_globals(annotate);
  annotate->add_option("terms", terms, "one sample per line, terms separated by ';'")->required();
  annotate->add_option("--map", map_file, "annotation map TSV")->required();

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset and manifest");
  add_globals(synth);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  const auto given = [](CLI::App* sub, const char* name) { return sub->count(name) > 0 || !sub->get_option(name)->empty(); };
  CLI::App* active = app.get_subcommands().front();
  if (given(active, "--out")) opts.out = out;
  if (given(active, "--seed")) opts.seed = seed;
  if (given(active, "--threads")) opts.threads = threads;
  const bool has_config = given(active, "--config");

  const auto need_config = [&]() {
    if (!has_config) {
      std::cerr << "config error: --config is required for '" << active->get_name() << "'\n";
      return false;
    }
    return true;
  };

  if (active == run) return need_config() ? cmd_run(config, opts, std::cout, std::cerr) : kExitConfig;
  if (active == grid) return need_config() ? cmd_gridsearch(config, opts, std::cout, std::cerr) : kExitConfig;
  if (active == eval) return cmd_eval(scores, labels, opts, std::cout, std::cerr);
  if (active == compare) return cmd_compare(pattern, control, opts, std::cout, std::cerr);
  if (active == annotate) return cmd_annotate(terms, map_file, std::cout, std::cerr);
  if (active == synth) {
    if (!need_config()) return kExitConfig;
    if (!opts.out) {
      std::cerr << "config error: synth needs --out <dataset file>\n";
      return kExitConfig;
    }
    return cmd_synth(config, *opts.out, std::cout, std::cerr);
  }
  return kExitConfig;
}
