#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ecgmatch/data.hpp"
#include "ecgmatch/trainer.hpp"

namespace ecgmatch {

/// Exit codes shared by every command.
enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitConfig = 2 };

/// Flags accepted by every verb. Each may also come from the environment
/// as ECGMATCH_CONFIG, ECGMATCH_OUT, ECGMATCH_SEED, ECGMATCH_THREADS.
struct GlobalOptions {
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

struct DataSource {
  std::optional<SynthConfig> synthetic;
  std::string path;
  DataFormat format = DataFormat::csv;
  std::optional<std::string> id;
};

struct GridSpec {
  enum class Mode { lambda_f, lambda_u, cartesian };
  Mode mode = Mode::lambda_f;
  std::vector<double> values{0.0, 0.4, 0.8, 1.2, 1.6};
  /// Value of the weight that is not swept.
  double fixed = 0.8;
};

/// (lambda_u, lambda_f) per grid cell, in sweep order.
std::vector<std::pair<double, double>> grid_cells(const GridSpec& grid);

struct ExperimentConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<DataSource> data;
  SplitSpec split;
  TrainConfig train;
  /// Models to run; defaults to the single model described by `train`.
  std::vector<TrainConfig> variants;
  std::optional<GridSpec> grid;
  std::string output_dir = "ecgmatch_out";
};

/// JSON document; unknown keys and ill-typed values raise ConfigError.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

std::vector<Dataset> load_sources(const ExperimentConfig& cfg);

int cmd_run(const std::string& config_path, const GlobalOptions& opts, std::ostream& out, std::ostream& err);
int cmd_gridsearch(const std::string& config_path, const GlobalOptions& opts, std::ostream& out, std::ostream& err);
int cmd_eval(const std::string& scores_path, const std::string& labels_path, const GlobalOptions& opts,
             std::ostream& out, std::ostream& err);
int cmd_compare(const std::string& report_glob, const std::string& control, const GlobalOptions& opts,
                std::ostream& out, std::ostream& err);
int cmd_annotate(const std::string& terms_path, const std::string& map_path, std::ostream& out, std::ostream& err);
int cmd_synth(const std::string& config_path, const std::string& out_path, std::ostream& out, std::ostream& err);

/// Plain numeric CSV matrix; '#' lines are skipped. Errors carry the line number.
Matrix read_matrix_csv(const std::string& path);

}  // namespace ecgmatch
