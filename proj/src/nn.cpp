#include "ecgmatch/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>

namespace ecgmatch {

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + name + "'");
}

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

void ModelConfig::validate() const {
  if (input_dim <= 0) throw ConfigError("model: input_dim must be positive");
  for (int h : hidden_dims)
    if (h <= 0) throw ConfigError("model: hidden_dims entries must be positive");
  if (feature_dim <= 0) throw ConfigError("model: feature_dim must be positive");
  if (head_hidden <= 0) throw ConfigError("model: head_hidden must be positive");
  if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
}

namespace {

std::vector<std::pair<int, int>> layer_shapes(const ModelConfig& cfg) {
  std::vector<std::pair<int, int>> shapes;  // (out, in)
  int in = cfg.input_dim;
  for (int h : cfg.hidden_dims) {
    shapes.emplace_back(h, in);
    in = h;
  }
  shapes.emplace_back(cfg.feature_dim, in);
  shapes.emplace_back(cfg.head_hidden, cfg.feature_dim);
  shapes.emplace_back(cfg.num_classes, cfg.head_hidden);
  return shapes;
}

// The feature layer (last extractor layer) and the output layer are linear.
bool has_activation(const ModelConfig& cfg, std::size_t layer) {
  const std::size_t feature_layer = cfg.extractor_layer_count() - 1;
  const std::size_t output_layer = cfg.layer_count() - 1;
  return layer != feature_layer && layer != output_layer;
}

Matrix activate(Activation a, const Matrix& x) {
  if (a == Activation::relu) return x.cwiseMax(0.0);
  return x.array().tanh().matrix();
}

// Multiplies grad by the activation derivative evaluated at pre-activation x.
Matrix activation_backward(Activation a, const Matrix& x, const Matrix& grad) {
  if (a == Activation::relu) return (x.array() > 0.0).select(grad, 0.0);
  const Eigen::ArrayXXd t = x.array().tanh();
  return (grad.array() * (1.0 - t * t)).matrix();
}

Matrix sigmoid(const Matrix& x) {
  return x.unaryExpr([](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

}  // namespace

std::size_t ParameterSet::size() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

double ParameterSet::squared_norm() const {
  double s = 0.0;
  for (const auto& l : layers) s += l.weight.squaredNorm() + l.bias.squaredNorm();
  return s;
}

bool ParameterSet::all_finite() const {
  return std::all_of(layers.begin(), layers.end(), [](const Layer& l) {
    return l.weight.allFinite() && l.bias.allFinite();
  });
}

bool ParameterSet::same_shape(const ParameterSet& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].weight.rows() != other.layers[i].weight.rows() ||
        layers[i].weight.cols() != other.layers[i].weight.cols() ||
        layers[i].bias.size() != other.layers[i].bias.size())
      return false;
  }
  return true;
}

void ParameterSet::add_scaled(const ParameterSet& other, double scale) {
  if (!same_shape(other)) throw ContractViolation("ParameterSet::add_scaled: shape mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].weight += scale * other.layers[i].weight;
    layers[i].bias += scale * other.layers[i].bias;
  }
}

void ParameterSet::scale(double factor) {
  for (auto& l : layers) {
    l.weight *= factor;
    l.bias *= factor;
  }
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet z;
  z.layers.reserve(layers.size());
  for (const auto& l : layers)
    z.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  return z;
}

bool operator==(const ParameterSet& a, const ParameterSet& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i)
    if (a.layers[i].weight != b.layers[i].weight || a.layers[i].bias != b.layers[i].bias)
      return false;
  return true;
}

ParameterSet zero_parameters(const ModelConfig& cfg) {
  cfg.validate();
  ParameterSet p;
  for (auto [out, in] : layer_shapes(cfg)) p.layers.push_back({Matrix::Zero(out, in), Vector::Zero(out)});
  return p;
}

ParameterSet init_parameters(const ModelConfig& cfg, RandomStream& rng) {
  ParameterSet p = zero_parameters(cfg);
  for (auto& l : p.layers) {
    const double limit = std::sqrt(6.0 / static_cast<double>(l.weight.rows() + l.weight.cols()));
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j)
        l.weight(i, j) = (2.0 * rng.uniform() - 1.0) * limit;
  }
  return p;
}

void check_shapes(const ModelConfig& cfg, const ParameterSet& params) {
  const auto shapes = layer_shapes(cfg);
  if (params.layers.size() != shapes.size())
    throw ConfigError("parameter set has " + std::to_string(params.layers.size()) +
                      " layers, model expects " + std::to_string(shapes.size()));
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& l = params.layers[i];
    if (l.weight.rows() != shapes[i].first || l.weight.cols() != shapes[i].second ||
        l.bias.size() != shapes[i].first)
      throw ConfigError("parameter layer " + std::to_string(i) + " shape mismatch");
  }
}

ForwardCache forward_cached(const ModelConfig& cfg, const ParameterSet& params, const Matrix& batch) {
  check_shapes(cfg, params);
  if (batch.cols() != cfg.input_dim)
    throw ConfigError("forward: batch has " + std::to_string(batch.cols()) + " columns, model expects " +
                      std::to_string(cfg.input_dim));
  if (!batch.allFinite()) throw NumericError("forward: non-finite input");
  ForwardCache cache;
  Matrix x = batch;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const Layer& l = params.layers[i];
    Matrix z = x * l.weight.transpose();
    z.rowwise() += l.bias.transpose();
    cache.inputs.push_back(std::move(x));
    x = has_activation(cfg, i) ? activate(cfg.activation, z) : z;
    cache.pre_activation.push_back(std::move(z));
    if (i + 1 == cfg.extractor_layer_count()) cache.features = x;
  }
  cache.probs = sigmoid(x);
  return cache;
}

ForwardResult forward(const ModelConfig& cfg, const ParameterSet& params, const Matrix& batch) {
  ForwardCache c = forward_cached(cfg, params, batch);
  return {std::move(c.features), std::move(c.probs)};
}

ParameterSet backward_from_logits(const ModelConfig& cfg, const ParameterSet& params,
                                  const ForwardCache& cache, const Matrix& grad_logits) {
  ParameterSet grad = params.zeros_like();
  Matrix g = grad_logits;
  for (std::size_t k = params.layers.size(); k-- > 0;) {
    if (has_activation(cfg, k)) g = activation_backward(cfg.activation, cache.pre_activation[k], g);
    grad.layers[k].weight = g.transpose() * cache.inputs[k];
    grad.layers[k].bias = g.colwise().sum().transpose();
    if (k > 0) g = g * params.layers[k].weight;
  }
  return grad;
}

ParameterSet backward_from_probs(const ModelConfig& cfg, const ParameterSet& params,
                                 const ForwardCache& cache, const Matrix& grad_probs) {
  const Matrix& p = cache.probs;
  const Matrix grad_logits = grad_probs.cwiseProduct(p.cwiseProduct((1.0 - p.array()).matrix()));
  return backward_from_logits(cfg, params, cache, grad_logits);
}

void check_finite_gradient(const ParameterSet& grad) {
  for (std::size_t i = 0; i < grad.layers.size(); ++i)
    if (!grad.layers[i].weight.allFinite() || !grad.layers[i].bias.allFinite())
      throw NumericError("non-finite gradient in layer " + std::to_string(i));
}

// ---- losses -------------------------------------------------------------

double clamp_probability(double p) { return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon); }

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ContractViolation(std::string(what) + ": shape mismatch");
}

double bce_term(double p, double y) {
  const double q = clamp_probability(p);
  return -((1.0 - y) * std::log(1.0 - q) + y * std::log(q));
}

}  // namespace

double bce_supervised(const Matrix& probs, const Matrix& labels) {
  require_same_shape(probs, labels, "bce_supervised");
  if (probs.hasNaN() || labels.hasNaN()) throw NumericError("bce_supervised: NaN input");
  if (probs.size() == 0) return 0.0;
  double s = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    for (Eigen::Index c = 0; c < probs.cols(); ++c) s += bce_term(probs(i, c), labels(i, c));
  return s / static_cast<double>(probs.size());
}

double bce_weighted_unsupervised(const Matrix& probs, const Matrix& pseudo, const Matrix& alpha) {
  require_same_shape(probs, pseudo, "bce_weighted_unsupervised");
  require_same_shape(probs, alpha, "bce_weighted_unsupervised");
  if (probs.hasNaN() || pseudo.hasNaN()) throw NumericError("bce_weighted_unsupervised: NaN input");
  if (!alpha.allFinite() || alpha.minCoeff() < 0.0 || alpha.maxCoeff() > 1.0)
    throw ContractViolation("bce_weighted_unsupervised: alpha must lie in [0,1]");
  if (probs.size() == 0) return 0.0;
  double s = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    for (Eigen::Index c = 0; c < probs.cols(); ++c)
      s += alpha(i, c) * bce_term(probs(i, c), pseudo(i, c));
  return s / static_cast<double>(probs.size());
}

Matrix bce_grad_logits(const Matrix& probs, const Matrix& targets, const Matrix* weights) {
  require_same_shape(probs, targets, "bce_grad_logits");
  if (weights) require_same_shape(probs, *weights, "bce_grad_logits");
  const double scale = probs.size() ? 1.0 / static_cast<double>(probs.size()) : 0.0;
  Matrix g(probs.rows(), probs.cols());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      const double p = probs(i, c);
      const bool inside = p > kProbEpsilon && p < 1.0 - kProbEpsilon;
      const double w = weights ? (*weights)(i, c) : 1.0;
      g(i, c) = inside ? w * (p - targets(i, c)) * scale : 0.0;
    }
  }
  return g;
}

void LossWeights::validate() const {
  if (!std::isfinite(lambda_u) || !std::isfinite(lambda_f) || lambda_u < 0.0 || lambda_f < 0.0)
    throw ConfigError("loss weights must be finite and non-negative");
}

double total_loss(double lb, double lu, double lf, const LossWeights& w) {
  return lb + w.lambda_u * lu + w.lambda_f * lf;
}

// ---- optimisation -------------------------------------------------------

void OptimizerConfig::validate() const {
  if (!(lr0 > 0.0)) throw ConfigError("optimizer: lr0 must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("optimizer: momentum must be in [0,1)");
  if (!(gamma > 0.0)) throw ConfigError("optimizer: gamma must be positive");
  if (!(power > 0.0)) throw ConfigError("optimizer: power must be positive");
  if (max_steps <= 0) throw ConfigError("optimizer: max_steps must be positive");
  if (ema_momentum < 0.0 || ema_momentum > 1.0)
    throw ConfigError("optimizer: ema_momentum must be in [0,1]");
}

void sgd_step(ParameterSet& params, const ParameterSet& grads, ParameterSet& velocity, double lr,
              double momentum) {
  if (!params.same_shape(grads) || !params.same_shape(velocity))
    throw ContractViolation("sgd_step: shape mismatch");
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    velocity.layers[i].weight = momentum * velocity.layers[i].weight + grads.layers[i].weight;
    velocity.layers[i].bias = momentum * velocity.layers[i].bias + grads.layers[i].bias;
    params.layers[i].weight -= lr * velocity.layers[i].weight;
    params.layers[i].bias -= lr * velocity.layers[i].bias;
  }
}

void ema_update(ParameterSet& teacher, const ParameterSet& student, double m) {
  if (!teacher.same_shape(student)) throw ContractViolation("ema_update: shape mismatch");
  if (m < 0.0 || m > 1.0) throw ContractViolation("ema_update: momentum outside [0,1]");
  for (std::size_t i = 0; i < teacher.layers.size(); ++i) {
    teacher.layers[i].weight = m * teacher.layers[i].weight + (1.0 - m) * student.layers[i].weight;
    teacher.layers[i].bias = m * teacher.layers[i].bias + (1.0 - m) * student.layers[i].bias;
  }
}

double lr_at(int step, const OptimizerConfig& cfg) {
  const double e = std::clamp(step, 0, cfg.max_steps);
  const double base = 1.0 + cfg.gamma * e / cfg.max_steps;
  if (cfg.literal_schedule) return cfg.lr0 / std::pow(base, -cfg.power);
  return cfg.lr0 * std::pow(base, -cfg.power);
}

// ---- checkpoints --------------------------------------------------------

namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8))
    throw ParseError("checkpoint truncated", static_cast<std::size_t>(std::max<std::streamoff>(0, in.gcount())));
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

}  // namespace

void write_records(std::ostream& out, const std::vector<CheckpointRecord>& records) {
  put_u64(out, records.size());
  for (const auto& r : records) {
    if (r.vector.size() != r.matrix.rows())
      throw ContractViolation("checkpoint record vector length must equal matrix rows");
    put_u64(out, static_cast<std::uint64_t>(r.matrix.rows()));
    put_u64(out, static_cast<std::uint64_t>(r.matrix.cols()));
  }
  for (const auto& r : records) {
    for (Eigen::Index i = 0; i < r.matrix.rows(); ++i)
      for (Eigen::Index j = 0; j < r.matrix.cols(); ++j) put_f64(out, r.matrix(i, j));
    for (Eigen::Index i = 0; i < r.vector.size(); ++i) put_f64(out, r.vector(i));
  }
}

std::vector<CheckpointRecord> read_records(std::istream& in) {
  const std::uint64_t count = get_u64(in);
  if (count > (1u << 20)) throw ParseError("checkpoint: implausible record count", 0);
  std::vector<std::pair<std::uint64_t, std::uint64_t>> shapes(count);
  for (auto& s : shapes) {
    s.first = get_u64(in);
    s.second = get_u64(in);
    if (s.first > (1ull << 32) || s.second > (1ull << 32))
      throw ParseError("checkpoint: implausible shape", 8);
  }
  std::vector<CheckpointRecord> records;
  records.reserve(count);
  for (auto [rows, cols] : shapes) {
    CheckpointRecord r{Matrix(rows, cols), Vector(rows)};
    for (Eigen::Index i = 0; i < r.matrix.rows(); ++i)
      for (Eigen::Index j = 0; j < r.matrix.cols(); ++j) r.matrix(i, j) = get_f64(in);
    for (Eigen::Index i = 0; i < r.vector.size(); ++i) r.vector(i) = get_f64(in);
    records.push_back(std::move(r));
  }
  return records;
}

void save_checkpoint(const std::string& path, const ParameterSet& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  std::vector<CheckpointRecord> records;
  for (const auto& l : params.layers) records.push_back({l.weight, l.bias});
  write_records(out, records);
}

ParameterSet load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  ParameterSet p;
  for (auto& r : read_records(in)) p.layers.push_back({std::move(r.matrix), std::move(r.vector)});
  return p;
}

}  // namespace ecgmatch
