#include "ecgmatch/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <numeric>
#include <ostream>
#include <thread>

namespace ecgmatch {

Baseline parse_baseline(const std::string& name) {
  if (name == "ecgmatch") return Baseline::ecgmatch;
  if (name == "supervised_only") return Baseline::supervised_only;
  if (name == "fixed_threshold") return Baseline::fixed_threshold;
  throw ConfigError("unknown baseline '" + name + "'");
}

std::string to_string(Baseline b) {
  switch (b) {
    case Baseline::ecgmatch: return "ecgmatch";
    case Baseline::supervised_only: return "supervised_only";
    case Baseline::fixed_threshold: return "fixed_threshold";
  }
  return "?";
}

int parse_metric_name(const std::string& name) {
  for (int m = 0; m < 6; ++m)
    if (name == kMetricInfo[m].name) return m;
  throw ConfigError("unknown metric '" + name + "'");
}

void TrainConfig::validate() const {
  if (batch_labeled <= 0 || batch_unlabeled <= 0) throw ConfigError("train: batch sizes must be positive");
  weights.validate();
  optimizer.validate();
  augment.validate();
  if (knn.k < 1) throw ConfigError("train: knn.k must be positive");
  if (max_epochs < 1 || pretrain_max_epochs < 1) throw ConfigError("train: epoch limits must be positive");
  if (patience < 1 || pretrain_patience < 1) throw ConfigError("train: patience must be positive");
  if (monitor_metric < 0 || monitor_metric > 5) throw ConfigError("train: monitored metric out of range");
  if (!(fixed_tau >= 0.0 && fixed_tau <= 1.0)) throw ConfigError("train: fixed_tau must be in [0,1]");
  if (pool_len < 1) throw ConfigError("train: pool_len must be positive");
  if (threads < 1) throw ConfigError("train: threads must be positive");
}

LossWeights TrainConfig::effective_weights() const {
  LossWeights w = weights;
  if (ablations.no_pseudo || baseline == Baseline::supervised_only) w.lambda_u = 0.0;
  if (ablations.no_align || baseline == Baseline::supervised_only) w.lambda_f = 0.0;
  return w;
}

std::string TrainConfig::model_name() const {
  if (baseline != Baseline::ecgmatch) return to_string(baseline);
  std::string name = "ecgmatch";
  if (ablations.no_pseudo) name += "-no_pseudo";
  if (ablations.no_nam) name += "-no_nam";
  if (ablations.no_align) name += "-no_align";
  return name;
}

namespace {

template <class F>
auto staged(const char* stage, F&& fn) {
  const auto tag = [stage](const std::exception& e) { return std::string("[") + stage + "] " + e.what(); };
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(tag(e));
  } catch (const NumericError& e) {
    throw NumericError(tag(e));
  } catch (const ContractViolation& e) {
    throw ContractViolation(tag(e));
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw Error(tag(e));
  }
}

// Runs fn(i) for i in [0, n) over up to `threads` workers. fn must only
// touch state owned by index i.
template <class F>
void parallel_for(std::size_t n, int threads, F&& fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n / 32 + 1);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w * n / workers; i < (w + 1) * n / workers; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

Matrix label_rows(const Dataset& ds, const std::vector<std::size_t>& indices) {
  Matrix y(static_cast<Eigen::Index>(indices.size()), ds.labels.cols());
  for (std::size_t j = 0; j < indices.size(); ++j)
    y.row(static_cast<Eigen::Index>(j)) = ds.labels.row(static_cast<Eigen::Index>(indices[j]));
  return y;
}

std::vector<std::size_t> permutation(std::size_t n, RandomStream rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i-- > 1;)
    std::swap(idx[i], idx[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
  return idx;
}

// Consecutive chunks of a shuffled order; the final partial chunk is dropped
// unless it is the only one.
std::vector<std::size_t> chunk(const std::vector<std::size_t>& order, int it, int size) {
  const std::size_t b = static_cast<std::size_t>(size);
  const std::size_t start = static_cast<std::size_t>(it) * b;
  const std::size_t end = std::min(order.size(), start + b);
  return {order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end)};
}

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kPretrainOrderStream = 0x9e0d;
constexpr std::uint64_t kLabeledOrderStream = 0x1abe;
constexpr std::uint64_t kUnlabeledOrderStream = 0x0a1b;
constexpr int kBankInitStep = -1;

bool has_any_positive(const Matrix& labels) { return (labels.array() > 0.5).any(); }

LogRow epoch_row(const char* phase, int epoch, int step, const LossBreakdown& sum, int iters, double lr,
                 double val) {
  LogRow row;
  row.phase = phase;
  row.epoch = epoch;
  row.step = step;
  row.lb = sum.lb / iters;
  row.lu = sum.lu / iters;
  row.lf = sum.lf / iters;
  row.loss = sum.total / iters;
  row.lr = lr;
  row.val_metric = val;
  return row;
}

void accumulate(LossBreakdown& sum, const LossBreakdown& l) {
  sum.lb += l.lb;
  sum.lu += l.lu;
  sum.lf += l.lf;
  sum.total += l.total;
}

}  // namespace

Matrix augmented_inputs(const Dataset& ds, const std::vector<std::size_t>& indices, std::uint64_t seed, int step,
                        BatchRole role, bool strong, const TrainConfig& cfg) {
  if (indices.empty()) throw ContractViolation("augmented_inputs: empty batch");
  const RandomStream base =
      RandomStream(seed, static_cast<std::uint64_t>(role)).substream(static_cast<std::uint64_t>(static_cast<std::int64_t>(step)));
  const Eigen::Index dim = ds.signals.front().channels() * cfg.pool_len;
  Matrix out(static_cast<Eigen::Index>(indices.size()), dim);
  parallel_for(indices.size(), cfg.threads, [&](std::size_t j) {
    RandomStream rng = base.substream(j);
    const SignalMatrix& x = ds.signals.at(indices[j]);
    const SignalMatrix a = strong ? strong_augment(x, rng, cfg.augment) : weak_augment(x, rng, cfg.augment);
    out.row(static_cast<Eigen::Index>(j)) = preprocess(a, cfg.pool_len).transpose();
  });
  return out;
}

Matrix clean_inputs(const Dataset& ds, int pool_len) { return preprocess_batch(ds.signals, pool_len); }

EarlyStopper::EarlyStopper(int patience, bool higher_is_better)
    : patience_(patience),
      higher_(higher_is_better),
      best_(higher_is_better ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity()) {
  if (patience < 1) throw ConfigError("early stop: patience must be positive");
}

bool EarlyStopper::update(double score, const ParameterSet& params) {
  ++epochs_;
  const bool better = higher_ ? score > best_ : score < best_;
  improved_last_ = better || epochs_ == 1;
  if (improved_last_) {
    if (better) best_ = score;
    best_epoch_ = epochs_;
    best_params_ = params;
    stale_ = 0;
    return false;
  }
  return ++stale_ >= patience_;
}

void write_train_log(std::ostream& out, const std::vector<LogRow>& rows) {
  out << kTrainLogHeader << '\n';
  char buf[64];
  const auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    out << r.phase << ',' << r.epoch << ',' << r.step << ',' << num(r.lb) << ',' << num(r.lu) << ',' << num(r.lf)
        << ',' << num(r.loss) << ',' << num(r.lr) << ',' << num(r.val_metric) << ',';
    for (Eigen::Index c = 0; c < r.acceptance.size(); ++c) out << (c ? ";" : "") << num(r.acceptance(c));
    out << '\n';
  }
}

double validation_score(const ModelConfig& model, const ParameterSet& params, const Matrix& val_inputs,
                        const Matrix& val_labels, const TrainConfig& cfg) {
  const ScoreMatrix sm{forward(model, params, val_inputs).probs, val_labels};
  const double v = metric_value(evaluate_metrics(sm, cfg.metric_options), cfg.monitor_metric);
  if (std::isnan(v))
    return kMetricInfo[cfg.monitor_metric].higher_is_better ? -std::numeric_limits<double>::infinity()
                                                            : std::numeric_limits<double>::infinity();
  return v;
}

int iterations_per_epoch(std::size_t n_labeled, int batch_labeled) {
  if (batch_labeled <= 0) throw ConfigError("iterations_per_epoch: batch size must be positive");
  return std::max<int>(1, static_cast<int>(n_labeled / static_cast<std::size_t>(batch_labeled)));
}

ParameterSet initial_parameters(const TrainConfig& cfg, const ModelConfig& model) {
  RandomStream rng(cfg.seed, kInitStream);
  return init_parameters(model, rng);
}

PretrainResult pretrain_teacher(const TrainData& data, const TrainConfig& cfg, const ModelConfig& model) {
  if (!data.labeled || data.labeled->size() == 0) throw ConfigError("pretrain: labeled set is empty");
  if (!data.val || data.val->size() == 0) throw ConfigError("pretrain: validation set is empty");
  if (!has_any_positive(data.labeled->labels))
    throw ConfigError("pretrain: labeled set has no positive label in any class; nothing to learn");
  ParameterSet params = initial_parameters(cfg, model);
  ParameterSet velocity = params.zeros_like();
  const Matrix val_inputs = clean_inputs(*data.val, cfg.pool_len);
  const Matrix all_clean = cfg.pretrain_augment ? Matrix() : clean_inputs(*data.labeled, cfg.pool_len);

  const bool higher = kMetricInfo[cfg.monitor_metric].higher_is_better;
  EarlyStopper stopper(cfg.pretrain_patience, higher);
  const int iters = iterations_per_epoch(data.labeled->size(), cfg.batch_labeled);
  PretrainResult result;
  int step = 0;
  for (int epoch = 1; epoch <= cfg.pretrain_max_epochs; ++epoch) {
    const auto order = permutation(data.labeled->size(), RandomStream(cfg.seed, kPretrainOrderStream).substream(static_cast<std::uint64_t>(epoch)));
    LossBreakdown sum;
    double lr = 0.0;
    for (int it = 0; it < iters; ++it) {
      const auto batch = chunk(order, it, cfg.batch_labeled);
      Matrix x;
      if (cfg.pretrain_augment) {
        x = augmented_inputs(*data.labeled, batch, cfg.seed, step, BatchRole::pretrain, false, cfg);
      } else {
        x.resize(static_cast<Eigen::Index>(batch.size()), all_clean.cols());
        for (std::size_t j = 0; j < batch.size(); ++j)
          x.row(static_cast<Eigen::Index>(j)) = all_clean.row(static_cast<Eigen::Index>(batch[j]));
      }
      const Matrix y = label_rows(*data.labeled, batch);
      ObjectiveInputs in;
      in.labeled_inputs = &x;
      in.labels = &y;
      in.use_unsupervised = false;
      in.use_alignment = false;
      ParameterSet grad;
      accumulate(sum, evaluate_objective(model, params, in, &grad));
      lr = lr_at(step, cfg.optimizer);
      sgd_step(params, grad, velocity, lr, cfg.optimizer.momentum);
      ++step;
    }
    const double val = validation_score(model, params, val_inputs, data.val->labels, cfg);
    result.log.push_back(epoch_row("pretrain", epoch, step, sum, iters, lr, val));
    if (stopper.update(val, params)) break;
  }
  result.teacher = stopper.best_params();
  return result;
}

TrainState init_state(const TrainData& data, const TrainConfig& cfg, const ModelConfig& model,
                      const ParameterSet& pretrained) {
  check_shapes(model, pretrained);
  TrainState s;
  s.model = model;
  s.teacher = pretrained;
  s.student = pretrained;
  s.velocity = pretrained.zeros_like();
  s.r_b = correlation_labeled(data.labeled->labels, cfg.similarity);
  const LossWeights w = cfg.effective_weights();
  if (w.lambda_u > 0.0 && data.unlabeled && data.unlabeled->size() > 0) {
    std::vector<std::size_t> all(data.unlabeled->size());
    std::iota(all.begin(), all.end(), 0);
    const Matrix weak = augmented_inputs(*data.unlabeled, all, cfg.seed, kBankInitStep, BatchRole::bank, false, cfg);
    s.banks = bank_init(model, s.teacher, weak);
  }
  return s;
}

StepResult train_step(TrainState& state, const TrainData& data, const std::vector<std::size_t>& labeled_batch,
                      const std::vector<std::size_t>& unlabeled_batch, const TrainConfig& cfg) {
  const LossWeights w = cfg.effective_weights();
  const bool unsupervised = w.lambda_u > 0.0;
  const bool alignment = w.lambda_f > 0.0;
  const bool use_unlabeled = (unsupervised || alignment) && !unlabeled_batch.empty();
  StepResult result;

  const Matrix xb = augmented_inputs(*data.labeled, labeled_batch, cfg.seed, state.step, BatchRole::labeled, false, cfg);
  const Matrix yb = label_rows(*data.labeled, labeled_batch);
  ObjectiveInputs in;
  in.labeled_inputs = &xb;
  in.labels = &yb;
  in.similarity = cfg.similarity;
  in.weights = w;
  in.use_unsupervised = unsupervised;
  in.use_alignment = alignment;

  Matrix weak, strong, alpha;
  PseudoLabels pseudo;
  if (use_unlabeled) {
    weak = augmented_inputs(*data.unlabeled, unlabeled_batch, cfg.seed, state.step, BatchRole::unlabeled_weak, false, cfg);
    strong = augmented_inputs(*data.unlabeled, unlabeled_batch, cfg.seed, state.step, BatchRole::unlabeled_strong, true, cfg);
    in.strong_inputs = &strong;
    in.weak_inputs = &weak;
    in.reference_correlation = &state.r_b.values;
    if (unsupervised) {
      if (state.banks.size() == 0) throw ContractViolation("train_step: memory banks are not initialised");
      std::vector<Eigen::Index> idx(unlabeled_batch.begin(), unlabeled_batch.end());
      bank_update(state.banks, idx, state.model, state.teacher, weak);
      const Matrix queries = forward(state.model, state.student, weak).features;
      pseudo = generate_pseudo_labels(state.banks, queries, cfg.knn,
                                      cfg.knn.exclude_self ? std::span<const Eigen::Index>(idx)
                                                           : std::span<const Eigen::Index>());
      if (cfg.baseline == Baseline::fixed_threshold) {
        alpha = (pseudo.values.array().max(1.0 - pseudo.values.array()) >= cfg.fixed_tau).cast<double>().matrix();
        result.acceptance = alpha.colwise().mean().transpose();
      } else if (cfg.ablations.no_nam) {
        alpha = Matrix::Ones(pseudo.values.rows(), pseudo.values.cols());
      } else {
        alpha = pseudo.agreement;
      }
      in.pseudo_labels = &pseudo.values;
      in.agreement = &alpha;
    }
  }

  ParameterSet grad;
  result.loss = evaluate_objective(state.model, state.student, in, &grad);
  result.lr = lr_at(state.step, cfg.optimizer);
  sgd_step(state.student, grad, state.velocity, result.lr, cfg.optimizer.momentum);
  ema_update(state.teacher, state.student, cfg.optimizer.ema_momentum);
  ++state.step;
  return result;
}

TrainResult train(const TrainData& data, const TrainConfig& cfg) {
  cfg.validate();
  if (!data.labeled || !data.val) throw ContractViolation("train: labeled and validation sets are required");
  if (data.labeled->size() == 0) throw ConfigError("train: labeled set is empty");
  ModelConfig model = cfg.model;
  model.input_dim = static_cast<int>(data.labeled->signals.front().channels()) * cfg.pool_len;
  model.num_classes = data.labeled->num_classes();
  model.validate();

  TrainResult result;
  PretrainResult pre = staged("pretrain", [&] { return pretrain_teacher(data, cfg, model); });
  result.log = std::move(pre.log);

  return staged("train", [&] {
    const LossWeights w = cfg.effective_weights();
    const bool use_unlabeled =
        (w.lambda_u > 0.0 || w.lambda_f > 0.0) && data.unlabeled && data.unlabeled->size() > 0;
    TrainState state = init_state(data, cfg, model, pre.teacher);
    const Matrix val_inputs = clean_inputs(*data.val, cfg.pool_len);
    const bool higher = kMetricInfo[cfg.monitor_metric].higher_is_better;
    EarlyStopper stopper(cfg.patience, higher);
    // The pretrained starting point is the first candidate.
    const double start = validation_score(model, state.student, val_inputs, data.val->labels, cfg);
    stopper.update(start, state.student);
    result.log.push_back(epoch_row("train", 0, state.step, LossBreakdown{}, 1, lr_at(state.step, cfg.optimizer), start));

    const int iters = iterations_per_epoch(data.labeled->size(), cfg.batch_labeled);
    const std::size_t n_u = use_unlabeled ? data.unlabeled->size() : 0;
    const std::size_t b_u = static_cast<std::size_t>(cfg.batch_unlabeled);
    const bool with_replacement = use_unlabeled && n_u < b_u * static_cast<std::size_t>(iters);
    int epoch = 1;
    for (; epoch <= cfg.max_epochs; ++epoch) {
      const auto order = permutation(data.labeled->size(), RandomStream(cfg.seed, kLabeledOrderStream).substream(static_cast<std::uint64_t>(epoch)));
      RandomStream u_rng = RandomStream(cfg.seed, kUnlabeledOrderStream).substream(static_cast<std::uint64_t>(epoch));
      const auto u_order = use_unlabeled && !with_replacement ? permutation(n_u, u_rng) : std::vector<std::size_t>{};
      LossBreakdown sum;
      Vector acceptance;
      double lr = 0.0;
      for (int it = 0; it < iters; ++it) {
        const auto lb = chunk(order, it, cfg.batch_labeled);
        std::vector<std::size_t> ub;
        if (use_unlabeled) {
          if (with_replacement) {
            for (std::size_t j = 0; j < b_u; ++j)
              ub.push_back(static_cast<std::size_t>(u_rng.uniform_int(0, static_cast<std::int64_t>(n_u) - 1)));
          } else {
            ub = chunk(u_order, it, cfg.batch_unlabeled);
          }
        }
        const StepResult r = train_step(state, data, lb, ub, cfg);
        accumulate(sum, r.loss);
        lr = r.lr;
        if (r.acceptance.size() > 0) acceptance = acceptance.size() ? Vector(acceptance + r.acceptance) : r.acceptance;
      }
      const double val = validation_score(model, state.student, val_inputs, data.val->labels, cfg);
      LogRow row = epoch_row("train", epoch, state.step, sum, iters, lr, val);
      if (acceptance.size() > 0) row.acceptance = acceptance / iters;
      result.log.push_back(std::move(row));
      if (stopper.update(val, state.student)) break;
    }
    result.epochs_run = std::min(epoch, cfg.max_epochs);
    result.best_student = stopper.best_params();
    result.final_state = std::move(state);
    return std::move(result);
  });
}

ScoreMatrix predict_scores(const ModelConfig& model, const ParameterSet& params, const Dataset& test, int pool_len) {
  return {forward(model, params, clean_inputs(test, pool_len)).probs, test.labels};
}

ExperimentResult run_experiment(const std::vector<Dataset>& datasets, SplitSpec split, TrainConfig cfg,
                                const std::vector<std::uint64_t>& seeds) {
  if (datasets.empty()) throw ConfigError("run_experiment: no dataset given");
  if (seeds.empty()) throw ConfigError("run_experiment: no seed given");
  cfg.validate();
  split.validate();
  ExperimentResult out;
  out.model_name = cfg.model_name();
  switch (split.protocol) {
    case Protocol::within: out.dataset_name = datasets.front().dataset_id; break;
    case Protocol::mix: out.dataset_name = "mix"; break;
    case Protocol::cross: out.dataset_name = split.held_out.value_or("cross"); break;
  }
  for (std::uint64_t seed : seeds) {
    split.seed = seed;
    cfg.seed = seed;
    const SplitResult parts = staged("split", [&] {
      switch (split.protocol) {
        case Protocol::within:
          if (datasets.size() != 1) throw ConfigError("within protocol expects exactly one dataset");
          return split_within(datasets.front(), split);
        case Protocol::mix: return split_mix(datasets, split);
        case Protocol::cross: return split_cross(datasets, split);
      }
      throw ConfigError("unknown protocol");
    });
    SeedReport run;
    run.seed = seed;
    run.training = train(TrainData{&parts.labeled, &parts.unlabeled, &parts.val}, cfg);
    run.report = staged("evaluate", [&] {
      return evaluate_metrics(
          predict_scores(run.training.final_state.model, run.training.best_student, parts.test, cfg.pool_len),
          cfg.metric_options);
    });
    out.runs.push_back(std::move(run));
  }
  const double n = static_cast<double>(out.runs.size());
  for (int m = 0; m < 6; ++m) {
    double s = 0.0;
    for (const auto& r : out.runs) s += metric_value(r.report, m);
    out.mean[m] = s / n;
    double ss = 0.0;
    for (const auto& r : out.runs) ss += std::pow(metric_value(r.report, m) - out.mean[m], 2);
    out.stddev[m] = out.runs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  }
  return out;
}

}  // namespace ecgmatch
