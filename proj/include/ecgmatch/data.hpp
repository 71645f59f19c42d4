#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ecgmatch/augment.hpp"
#include "ecgmatch/common.hpp"

namespace ecgmatch {

/// The five re-annotation superclasses, in label-vector order.
inline const std::array<std::string, 5> kSuperclasses = {
    "Abnormal Rhythms", "ST/T Abnormalities", "Conduction Disturbance", "Other Abnormalities", "Normal Signals"};
inline constexpr int kNormalClass = 4;

std::vector<std::string> default_class_names(int num_classes);

struct Dataset {
  std::string dataset_id;
  std::vector<std::string> class_names;
  std::vector<SignalMatrix> signals;
  Matrix labels;  // n x C, binary
  /// Source dataset id of every sample; differs from dataset_id only for pooled sets.
  std::vector<std::string> provenance;

  std::size_t size() const { return signals.size(); }
  int num_classes() const { return static_cast<int>(labels.cols()); }
  void validate() const;
};

Dataset subset(const Dataset& ds, const std::vector<std::size_t>& indices);

enum class DataFormat { csv, raw_f32 };
DataFormat parse_data_format(const std::string& name);

/// CSV layout: optional '#key=value' metadata lines (dataset_id, class_names
/// separated by ';'), one header row "n,channels,length,C" holding the four
/// integers, then per sample one label row (C values) followed by
/// `channels` signal rows of `length` values.
///
/// raw_f32 layout, little-endian: "ECGD" magic, u32 version (1), u32 n,
/// u32 channels, u32 length, u32 C, then per sample C f32 labels followed by
/// channels*length f32 signal values (channel-major).
Dataset load_dataset(const std::string& path, DataFormat format);
void save_dataset(const std::string& path, const Dataset& ds, DataFormat format);

// ---- annotation ----------------------------------------------------------

/// Original diagnosis term (lower case) -> superclass indices.
struct AnnotationMap {
  std::map<std::string, std::set<int>> entries;
};

/// Two tab-separated columns per line: original term, superclass name.
/// Repeated terms accumulate. Blank lines and '#' comments are skipped.
AnnotationMap load_annotation_map(const std::string& path);
AnnotationMap parse_annotation_map(const std::string& text);

class UnmappableSampleError : public Error {
 public:
  using Error::Error;
};

/// Union of mapped superclasses as a 5-vector; Normal is dropped when any
/// abnormal class is present. Unknown terms are skipped with a warning.
Vector map_annotations(const std::vector<std::string>& original, const AnnotationMap& am);

// ---- splits ---------------------------------------------------------------

enum class Protocol { within, cross, mix };
Protocol parse_protocol(const std::string& name);
std::string to_string(Protocol p);

struct SplitSpec {
  Protocol protocol = Protocol::within;
  double train_frac = 0.8;
  double val_frac = 0.1;
  double test_frac = 0.1;
  double labeled_frac = 0.05;
  std::uint64_t seed = 0;
  std::optional<std::string> held_out;

  /// Published ratios for each protocol.
  static SplitSpec defaults(Protocol p);
  void validate() const;
};

struct SampleRef {
  std::size_t dataset = 0;
  std::size_t index = 0;
  auto operator<=>(const SampleRef&) const = default;
};

struct SplitResult {
  Dataset labeled, unlabeled, val, test;
  std::vector<SampleRef> labeled_refs, unlabeled_refs, val_refs, test_refs;
};

SplitResult split_within(const Dataset& ds, const SplitSpec& spec);
SplitResult split_mix(const std::vector<Dataset>& datasets, const SplitSpec& spec);
SplitResult split_cross(const std::vector<Dataset>& datasets, const SplitSpec& spec);

// ---- synthetic data ------------------------------------------------------

struct SynthConfig {
  std::string dataset_id = "synthetic";
  int n_samples = 2000;
  int num_classes = 5;
  std::vector<double> target_marginals;  // default: fixed values per class
  Matrix target_correlation;             // latent Gaussian correlation; default identity
  int signal_length = 128;
  int channels = 12;
  /// Per-class channels x length templates; generated from the seed when empty.
  std::vector<Matrix> class_prototypes;
  double noise_level = 0.5;
  /// When set, this class is positive exactly when no other class is (a
  /// "normal" label). Its target marginal is then ignored.
  std::optional<int> exclusive_class;
  std::uint64_t seed = 0;

  /// Fills defaults and checks invariants.
  void resolve();
};

/// The latent correlation admits no Gaussian copula (not positive definite).
class CalibrationError : public Error {
 public:
  using Error::Error;
};

/// Prototypes used when none are configured.
std::vector<Matrix> default_prototypes(int num_classes, int channels, int length, std::uint64_t seed);

/// Threshold t with P(Z > t) = marginal for Z ~ N(0,1), found by bisection.
double calibrate_threshold(double marginal);

Dataset synth_generate(SynthConfig cfg);

// ---- preprocessing -------------------------------------------------------

/// Per-channel z-score (constant channel -> zeros), average pooling of each
/// channel to pool_len bins, flattened channel-major.
Vector preprocess(const SignalMatrix& x, int pool_len);
Matrix preprocess_batch(const std::vector<SignalMatrix>& signals, int pool_len);

}  // namespace ecgmatch
