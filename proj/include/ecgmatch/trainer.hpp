#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ecgmatch/augment.hpp"
#include "ecgmatch/correlation.hpp"
#include "ecgmatch/data.hpp"
#include "ecgmatch/metrics.hpp"
#include "ecgmatch/nn.hpp"
#include "ecgmatch/objective.hpp"
#include "ecgmatch/pseudo.hpp"

namespace ecgmatch {

enum class Baseline { ecgmatch, supervised_only, fixed_threshold };
Baseline parse_baseline(const std::string& name);
std::string to_string(Baseline b);

struct Ablations {
  bool no_pseudo = false;  // lambda_u = 0, NAM and banks off
  bool no_nam = false;     // alpha = 1
  bool no_align = false;   // lambda_f = 0
};

/// Index into kMetricInfo; throws ConfigError for unknown names.
int parse_metric_name(const std::string& name);

struct TrainConfig {
  ModelConfig model;  // input_dim is filled from the data
  int batch_labeled = 64;
  int batch_unlabeled = 448;
  LossWeights weights;
  KnnConfig knn;
  OptimizerConfig optimizer;
  AugmentConfig augment;
  SimilarityKind similarity = SimilarityKind::cosine;
  MetricOptions metric_options;
  int max_epochs = 50;
  int patience = 10;
  int monitor_metric = 3;  // MAP
  std::uint64_t seed = 0;
  Ablations ablations;
  Baseline baseline = Baseline::ecgmatch;
  double fixed_tau = 0.95;
  int pretrain_max_epochs = 100;
  int pretrain_patience = 10;
  bool pretrain_augment = true;
  /// Samples are pooled to this many bins per channel before the network.
  int pool_len = 16;
  /// Worker threads for augmentation; results do not depend on it.
  int threads = 1;

  void validate() const;
  /// Loss weights after ablations and baseline are applied.
  LossWeights effective_weights() const;
  /// Report name, e.g. "ecgmatch", "ecgmatch-no_nam", "supervised_only".
  std::string model_name() const;
};

/// Raw training material for one run.
struct TrainData {
  const Dataset* labeled = nullptr;
  const Dataset* unlabeled = nullptr;
  const Dataset* val = nullptr;
};

struct TrainState {
  ModelConfig model;
  ParameterSet student;
  ParameterSet teacher;
  ParameterSet velocity;
  MemoryBanks banks;
  CorrelationMatrix r_b;
  int step = 0;
};

struct StepResult {
  LossBreakdown loss;
  double lr = 0.0;
  /// Fraction of pseudo-label entries with alpha = 1 per class (fixed-threshold baseline only).
  Vector acceptance;
};

/// Role of an augmented batch; part of the random-stream key.
enum class BatchRole : std::uint64_t { labeled = 1, unlabeled_weak = 2, unlabeled_strong = 3, bank = 4, pretrain = 5 };

/// Preprocessed inputs of signals[indices[j]] after weak (or strong) augmentation.
/// Every sample draws from its own stream keyed by (seed, step, role, j).
Matrix augmented_inputs(const Dataset& ds, const std::vector<std::size_t>& indices, std::uint64_t seed, int step,
                        BatchRole role, bool strong, const TrainConfig& cfg);
/// Preprocessed inputs without augmentation.
Matrix clean_inputs(const Dataset& ds, int pool_len);

/// Keeps the best-scoring snapshot and decides when to stop.
class EarlyStopper {
 public:
  EarlyStopper(int patience, bool higher_is_better);
  /// Records one epoch's score; true when training should stop.
  bool update(double score, const ParameterSet& params);
  bool improved_last() const { return improved_last_; }
  double best_score() const { return best_; }
  int best_epoch() const { return best_epoch_; }
  const ParameterSet& best_params() const { return best_params_; }
  int epochs() const { return epochs_; }

 private:
  int patience_;
  bool higher_;
  double best_;
  int best_epoch_ = 0;
  int epochs_ = 0;
  int stale_ = 0;
  bool improved_last_ = false;
  ParameterSet best_params_;
};

struct LogRow {
  std::string phase;
  int epoch = 0;
  int step = 0;
  double lb = 0.0, lu = 0.0, lf = 0.0, loss = 0.0;
  double lr = 0.0;
  double val_metric = 0.0;
  Vector acceptance;
};

inline constexpr const char* kTrainLogHeader = "phase,epoch,step,lb,lu,lf,loss,lr,val_metric,acceptance";
void write_train_log(std::ostream& out, const std::vector<LogRow>& rows);

/// Monitored validation score of a model (NaN metrics count as -inf / +inf).
double validation_score(const ModelConfig& model, const ParameterSet& params, const Matrix& val_inputs,
                        const Matrix& val_labels, const TrainConfig& cfg);

struct PretrainResult {
  ParameterSet teacher;
  std::vector<LogRow> log;
};

/// Seeded starting weights of the teacher network.
ParameterSet initial_parameters(const TrainConfig& cfg, const ModelConfig& model);

/// Supervised pretraining with early stopping on the validation metric.
PretrainResult pretrain_teacher(const TrainData& data, const TrainConfig& cfg, const ModelConfig& model);

/// Student/teacher from the pretrained teacher, R_b from all labeled
/// samples, banks filled by a teacher pass over weak(x_u).
TrainState init_state(const TrainData& data, const TrainConfig& cfg, const ModelConfig& model,
                      const ParameterSet& pretrained);

/// One iteration: augment, bank update, pseudo-labels, agreement, losses,
/// SGD on the student, EMA on the teacher.
StepResult train_step(TrainState& state, const TrainData& data, const std::vector<std::size_t>& labeled_batch,
                      const std::vector<std::size_t>& unlabeled_batch, const TrainConfig& cfg);

/// Number of iterations per epoch, floor(N_B / B) and at least one.
int iterations_per_epoch(std::size_t n_labeled, int batch_labeled);

struct TrainResult {
  ParameterSet best_student;
  TrainState final_state;
  std::vector<LogRow> log;
  int epochs_run = 0;
};

TrainResult train(const TrainData& data, const TrainConfig& cfg);

struct SeedReport {
  std::uint64_t seed = 0;
  MetricsReport report;
  TrainResult training;
};

struct ExperimentResult {
  std::string model_name;
  std::string dataset_name;
  std::vector<SeedReport> runs;
  std::array<double, 6> mean{};
  std::array<double, 6> stddev{};
};

/// Split, pretrain, train and test once per seed. The seed drives the
/// split, initialisation and augmentation. Errors carry the failing stage.
ExperimentResult run_experiment(const std::vector<Dataset>& datasets, SplitSpec split, TrainConfig cfg,
                                const std::vector<std::uint64_t>& seeds);

/// Test-set scores of a model.
ScoreMatrix predict_scores(const ModelConfig& model, const ParameterSet& params, const Dataset& test, int pool_len);

}  // namespace ecgmatch
