#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ecgmatch/common.hpp"
#include "ecgmatch/rng.hpp"

namespace ecgmatch {

enum class Activation { relu, tanh };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

/// Shape of the feedforward model. The extractor maps input_dim through
/// hidden_dims to feature_dim (activation between layers, none after the
/// feature layer). The head is feature_dim -> head_hidden -> num_classes,
/// followed by an elementwise sigmoid.
struct ModelConfig {
  int input_dim = 0;
  std::vector<int> hidden_dims;
  int feature_dim = 128;
  int head_hidden = 128;
  int num_classes = 5;
  Activation activation = Activation::relu;

  void validate() const;
  std::size_t extractor_layer_count() const { return hidden_dims.size() + 1; }
  std::size_t layer_count() const { return extractor_layer_count() + 2; }
};

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

/// Weights and biases of one model, extractor layers first then the head.
struct ParameterSet {
  std::vector<Layer> layers;

  std::size_t size() const;
  /// Sum of squared entries over every weight and bias.
  double squared_norm() const;
  bool all_finite() const;
  /// this += scale * other (shapes must match).
  void add_scaled(const ParameterSet& other, double scale);
  void scale(double factor);
  ParameterSet zeros_like() const;
  bool same_shape(const ParameterSet& other) const;
};

bool operator==(const ParameterSet& a, const ParameterSet& b);

ParameterSet zero_parameters(const ModelConfig& cfg);
/// Glorot-uniform weights, zero biases.
ParameterSet init_parameters(const ModelConfig& cfg, RandomStream& rng);
void check_shapes(const ModelConfig& cfg, const ParameterSet& params);

struct ForwardResult {
  Matrix features;  // n x feature_dim
  Matrix probs;     // n x num_classes
};

/// Activations retained for backpropagation.
struct ForwardCache {
  std::vector<Matrix> inputs;       // input to each layer
  std::vector<Matrix> pre_activation;  // W x + b of each layer
  Matrix features;
  Matrix probs;
};

ForwardResult forward(const ModelConfig& cfg, const ParameterSet& params, const Matrix& batch);
ForwardCache forward_cached(const ModelConfig& cfg, const ParameterSet& params, const Matrix& batch);

/// Backpropagates dLoss/dlogits (n x C) through the network.
ParameterSet backward_from_logits(const ModelConfig& cfg, const ParameterSet& params,
                                  const ForwardCache& cache, const Matrix& grad_logits);
/// Backpropagates dLoss/dprobs (n x C) through the sigmoid and the network.
ParameterSet backward_from_probs(const ModelConfig& cfg, const ParameterSet& params,
                                 const ForwardCache& cache, const Matrix& grad_probs);

/// Throws NumericError naming the first layer holding a non-finite entry.
void check_finite_gradient(const ParameterSet& grad);

// ---- losses -------------------------------------------------------------

inline constexpr double kProbEpsilon = 1e-7;

double clamp_probability(double p);

/// Mean binary cross-entropy over n*C entries. Labels may be soft.
double bce_supervised(const Matrix& probs, const Matrix& labels);
/// Mean over n*C of alpha * BCE(q, pseudo).
double bce_weighted_unsupervised(const Matrix& probs, const Matrix& pseudo, const Matrix& alpha);
/// dLoss/dlogit of the (optionally weighted) mean BCE. Entries whose
/// probability sits outside the clamp range get zero gradient.
Matrix bce_grad_logits(const Matrix& probs, const Matrix& targets, const Matrix* weights);

struct LossWeights {
  double lambda_u = 0.8;
  double lambda_f = 0.8;
  void validate() const;
};

double total_loss(double lb, double lu, double lf, const LossWeights& w);

// ---- optimisation -------------------------------------------------------

struct OptimizerConfig {
  double lr0 = 3e-2;
  double momentum = 0.9;
  double gamma = 10.0;
  double power = 0.75;
  int max_steps = 5000;
  double ema_momentum = 0.999;
  /// Evaluate the schedule as printed, eta0 / (1 + gamma*e/E)^(-p), which grows with e.
  bool literal_schedule = false;
  void validate() const;
};

/// v <- momentum * v + grad; params <- params - lr * v.
void sgd_step(ParameterSet& params, const ParameterSet& grads, ParameterSet& velocity, double lr,
              double momentum);
/// teacher <- m * teacher + (1 - m) * student.
void ema_update(ParameterSet& teacher, const ParameterSet& student, double m);
/// eta0 * (1 + gamma * step / E)^(-p); steps past E are clamped to E.
double lr_at(int step, const OptimizerConfig& cfg);

// ---- checkpoints --------------------------------------------------------

/// Record = (rows x cols matrix, rows-vector). Binary layout, little-endian:
///   u64 record_count, then (u64 rows, u64 cols) per record,
///   then per record rows*cols f64 (row-major) followed by rows f64.
struct CheckpointRecord {
  Matrix matrix;
  Vector vector;
};

void write_records(std::ostream& out, const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> read_records(std::istream& in);

void save_checkpoint(const std::string& path, const ParameterSet& params);
ParameterSet load_checkpoint(const std::string& path);

}  // namespace ecgmatch
