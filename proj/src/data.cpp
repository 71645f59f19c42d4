#include "ecgmatch/data.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "ecgmatch/rng.hpp"

namespace ecgmatch {

std::vector<std::string> default_class_names(int num_classes) {
  if (num_classes == static_cast<int>(kSuperclasses.size()))
    return {kSuperclasses.begin(), kSuperclasses.end()};
  std::vector<std::string> names;
  for (int c = 0; c < num_classes; ++c) names.push_back("class_" + std::to_string(c));
  return names;
}

void Dataset::validate() const {
  if (static_cast<Eigen::Index>(signals.size()) != labels.rows())
    throw ConfigError("dataset '" + dataset_id + "': signal count differs from label rows");
  if (static_cast<Eigen::Index>(class_names.size()) != labels.cols())
    throw ConfigError("dataset '" + dataset_id + "': class_names length differs from C");
  if (!provenance.empty() && provenance.size() != signals.size())
    throw ConfigError("dataset '" + dataset_id + "': provenance length differs from sample count");
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    const double v = labels.data()[i];
    if (v != 0.0 && v != 1.0) throw ConfigError("dataset '" + dataset_id + "': non-binary label");
  }
  for (const auto& s : signals)
    if (!s.data().allFinite()) throw ConfigError("dataset '" + dataset_id + "': non-finite signal value");
}

Dataset subset(const Dataset& ds, const std::vector<std::size_t>& indices) {
  Dataset out;
  out.dataset_id = ds.dataset_id;
  out.class_names = ds.class_names;
  out.labels.resize(static_cast<Eigen::Index>(indices.size()), ds.labels.cols());
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const std::size_t i = indices[j];
    out.signals.push_back(ds.signals[i]);
    out.labels.row(static_cast<Eigen::Index>(j)) = ds.labels.row(static_cast<Eigen::Index>(i));
    out.provenance.push_back(ds.provenance.empty() ? ds.dataset_id : ds.provenance[i]);
  }
  return out;
}

DataFormat parse_data_format(const std::string& name) {
  if (name == "csv") return DataFormat::csv;
  if (name == "raw_f32") return DataFormat::raw_f32;
  throw ConfigError("unknown data format '" + name + "'");
}

// ---- file formats ---------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(s);
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double parse_number(const std::string& cell, std::size_t line) {
  const std::string t = trim(cell);
  try {
    std::size_t used = 0;
    const double v = std::stod(t, &used);
    if (used != t.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ParseError("non-numeric cell '" + t + "'", line);
  }
}

std::vector<double> parse_row(const std::string& line, std::size_t expected, std::size_t line_no,
                              const char* what) {
  const auto cells = split(line, ',');
  if (cells.size() != expected)
    throw ParseError(std::string(what) + ": expected " + std::to_string(expected) + " values, found " +
                         std::to_string(cells.size()),
                     line_no);
  std::vector<double> v;
  v.reserve(expected);
  for (const auto& c : cells) v.push_back(parse_number(c, line_no));
  return v;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'", 0);
  Dataset ds;
  ds.dataset_id = std::filesystem::path(path).stem().string();
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::size_t n = 0, channels = 0, length = 0, classes = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      const auto eq = t.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = trim(t.substr(1, eq - 1));
      const std::string value = trim(t.substr(eq + 1));
      if (key == "dataset_id") ds.dataset_id = value;
      if (key == "class_names") ds.class_names = split(value, ';');
      continue;
    }
    const auto h = parse_row(t, 4, line_no, "header");
    for (double v : h)
      if (v < 1 || v != std::floor(v)) throw ParseError("header values must be positive integers", line_no);
    n = static_cast<std::size_t>(h[0]);
    channels = static_cast<std::size_t>(h[1]);
    length = static_cast<std::size_t>(h[2]);
    classes = static_cast<std::size_t>(h[3]);
    have_header = true;
    break;
  }
  if (!have_header) throw ParseError("empty dataset file '" + path + "'", line_no);

  const auto next_line = [&](const char* what) {
    while (std::getline(in, line)) {
      ++line_no;
      if (!trim(line).empty()) return;
    }
    throw ParseError(std::string("unexpected end of file, expected ") + what, line_no);
  };

  ds.labels.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(classes));
  for (std::size_t i = 0; i < n; ++i) {
    next_line("label row");
    const auto lab = parse_row(line, classes, line_no, "label row");
    for (std::size_t c = 0; c < classes; ++c) {
      if (lab[c] != 0.0 && lab[c] != 1.0) throw ParseError("non-binary label", line_no);
      ds.labels(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = lab[c];
    }
    SignalMatrix s(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(length));
    for (std::size_t ch = 0; ch < channels; ++ch) {
      next_line("signal row");
      const auto row = parse_row(line, length, line_no, "signal row");
      for (std::size_t t = 0; t < length; ++t) s(static_cast<Eigen::Index>(ch), static_cast<Eigen::Index>(t)) = row[t];
    }
    ds.signals.push_back(std::move(s));
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) throw ParseError("trailing data after last sample", line_no);
  }
  if (ds.class_names.empty()) ds.class_names = default_class_names(static_cast<int>(classes));
  if (ds.class_names.size() != classes) throw ParseError("class_names metadata does not match C", 1);
  ds.provenance.assign(n, ds.dataset_id);
  return ds;
}

void save_csv(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  const Eigen::Index channels = ds.signals.empty() ? 0 : ds.signals.front().channels();
  const Eigen::Index length = ds.signals.empty() ? 0 : ds.signals.front().length();
  out << "#dataset_id=" << ds.dataset_id << '\n';
  out << "#class_names=";
  for (std::size_t c = 0; c < ds.class_names.size(); ++c) out << (c ? ";" : "") << ds.class_names[c];
  out << '\n';
  out << ds.size() << ',' << channels << ',' << length << ',' << ds.labels.cols() << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (Eigen::Index c = 0; c < ds.labels.cols(); ++c)
      out << (c ? "," : "") << static_cast<int>(ds.labels(static_cast<Eigen::Index>(i), c));
    out << '\n';
    const auto& s = ds.signals[i];
    for (Eigen::Index ch = 0; ch < s.channels(); ++ch) {
      for (Eigen::Index t = 0; t < s.length(); ++t) out << (t ? "," : "") << format_double(s(ch, t));
      out << '\n';
    }
  }
}

constexpr char kRawMagic[4] = {'E', 'C', 'G', 'D'};

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32(std::istream& in, std::size_t& offset) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw ParseError("raw_f32: truncated file", offset);
  offset += 4;
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

Dataset load_raw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'", 0);
  std::size_t offset = 0;
  char magic[4];
  if (!in.read(magic, 4)) throw ParseError("raw_f32: empty or truncated file", 0);
  if (std::memcmp(magic, kRawMagic, 4) != 0) throw ParseError("raw_f32: bad magic", 0);
  offset = 4;
  const auto version = get_u32(in, offset);
  if (version != 1) throw ParseError("raw_f32: unsupported version " + std::to_string(version), offset - 4);
  const auto n = get_u32(in, offset);
  const auto channels = get_u32(in, offset);
  const auto length = get_u32(in, offset);
  const auto classes = get_u32(in, offset);
  if (channels == 0 || length == 0 || classes == 0) throw ParseError("raw_f32: zero dimension in header", offset);
  Dataset ds;
  ds.dataset_id = std::filesystem::path(path).stem().string();
  ds.labels.resize(n, classes);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t c = 0; c < classes; ++c) {
      const float v = std::bit_cast<float>(get_u32(in, offset));
      if (v != 0.0f && v != 1.0f) throw ParseError("raw_f32: non-binary label", offset - 4);
      ds.labels(i, c) = v;
    }
    SignalMatrix s(channels, length);
    for (std::uint32_t ch = 0; ch < channels; ++ch)
      for (std::uint32_t t = 0; t < length; ++t) s(ch, t) = std::bit_cast<float>(get_u32(in, offset));
    ds.signals.push_back(std::move(s));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError("raw_f32: trailing bytes", offset);
  ds.class_names = default_class_names(static_cast<int>(classes));
  ds.provenance.assign(n, ds.dataset_id);
  return ds;
}

void save_raw(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(kRawMagic, 4);
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(ds.size()));
  put_u32(out, ds.signals.empty() ? 0 : static_cast<std::uint32_t>(ds.signals.front().channels()));
  put_u32(out, ds.signals.empty() ? 0 : static_cast<std::uint32_t>(ds.signals.front().length()));
  put_u32(out, static_cast<std::uint32_t>(ds.labels.cols()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (Eigen::Index c = 0; c < ds.labels.cols(); ++c)
      put_f32(out, static_cast<float>(ds.labels(static_cast<Eigen::Index>(i), c)));
    const auto& s = ds.signals[i];
    for (Eigen::Index ch = 0; ch < s.channels(); ++ch)
      for (Eigen::Index t = 0; t < s.length(); ++t) put_f32(out, static_cast<float>(s(ch, t)));
  }
}

}  // namespace

Dataset load_dataset(const std::string& path, DataFormat format) {
  Dataset ds = format == DataFormat::csv ? load_csv(path) : load_raw(path);
  if (!ds.signals.empty()) {
    const auto ch = ds.signals.front().channels();
    const auto len = ds.signals.front().length();
    for (const auto& s : ds.signals)
      if (s.channels() != ch || s.length() != len) throw ParseError("inconsistent signal shapes", 0);
  }
  return ds;
}

void save_dataset(const std::string& path, const Dataset& ds, DataFormat format) {
  if (format == DataFormat::csv)
    save_csv(path, ds);
  else
    save_raw(path, ds);
}

// ---- annotation ----------------------------------------------------------

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

int superclass_index(const std::string& name) {
  const std::string key = lower(trim(name));
  for (std::size_t i = 0; i < kSuperclasses.size(); ++i)
    if (lower(kSuperclasses[i]) == key) return static_cast<int>(i);
  return -1;
}

}  // namespace

AnnotationMap parse_annotation_map(const std::string& text) {
  AnnotationMap am;
  std::stringstream ss(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto tab = t.find('\t');
    if (tab == std::string::npos) throw ParseError("annotation map: expected two tab-separated columns", line_no);
    const std::string term = lower(trim(t.substr(0, tab)));
    const int cls = superclass_index(t.substr(tab + 1));
    if (cls < 0) throw ParseError("annotation map: unknown superclass '" + trim(t.substr(tab + 1)) + "'", line_no);
    am.entries[term].insert(cls);
  }
  return am;
}

AnnotationMap load_annotation_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open annotation map '" + path + "'", 0);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_annotation_map(ss.str());
}

Vector map_annotations(const std::vector<std::string>& original, const AnnotationMap& am) {
  Vector out = Vector::Zero(static_cast<Eigen::Index>(kSuperclasses.size()));
  bool any = false;
  for (const auto& term : original) {
    const std::string key = lower(trim(term));
    if (key.empty()) continue;
    const auto it = am.entries.find(key);
    if (it == am.entries.end()) {
      warn("unknown annotation term '" + key + "' skipped");
      continue;
    }
    for (int c : it->second) out(c) = 1.0;
    any = true;
  }
  if (!any) throw UnmappableSampleError("no annotation term could be mapped");
  bool abnormal = false;
  for (int c = 0; c < kNormalClass; ++c) abnormal = abnormal || out(c) > 0.0;
  if (abnormal) out(kNormalClass) = 0.0;
  return out;
}

// ---- splits ---------------------------------------------------------------

Protocol parse_protocol(const std::string& name) {
  if (name == "within") return Protocol::within;
  if (name == "cross") return Protocol::cross;
  if (name == "mix") return Protocol::mix;
  throw ConfigError("unknown protocol '" + name + "'");
}

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::within: return "within";
    case Protocol::cross: return "cross";
    case Protocol::mix: return "mix";
  }
  return "?";
}

SplitSpec SplitSpec::defaults(Protocol p) {
  SplitSpec s;
  s.protocol = p;
  switch (p) {
    case Protocol::within: s.train_frac = 0.8, s.val_frac = 0.1, s.test_frac = 0.1, s.labeled_frac = 0.05; break;
    case Protocol::mix: s.train_frac = 0.8, s.val_frac = 0.1, s.test_frac = 0.1, s.labeled_frac = 0.01; break;
    case Protocol::cross: s.train_frac = 0.9, s.val_frac = 0.1, s.test_frac = 0.0, s.labeled_frac = 0.01; break;
  }
  return s;
}

void SplitSpec::validate() const {
  if (train_frac < 0 || val_frac < 0 || test_frac < 0) throw ConfigError("split: fractions must be non-negative");
  if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9) throw ConfigError("split: fractions must sum to 1");
  if (!(labeled_frac > 0.0 && labeled_frac <= 1.0)) throw ConfigError("split: labeled_frac must be in (0,1]");
  if (protocol == Protocol::cross && test_frac != 0.0)
    throw ConfigError("split: cross protocol takes its test set from the held-out dataset; test_frac must be 0");
}

namespace {

std::vector<std::size_t> shuffled(std::size_t n, RandomStream rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i-- > 1;) std::swap(idx[i], idx[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
  return idx;
}

struct Pool {
  Dataset merged;
  std::vector<SampleRef> refs;
};

Pool pool_datasets(const std::vector<const Dataset*>& parts, const std::vector<std::size_t>& ids,
                   const std::string& pooled_id) {
  Pool p;
  p.merged.dataset_id = pooled_id;
  p.merged.class_names = parts.front()->class_names;
  Eigen::Index total = 0;
  for (const auto* d : parts) total += static_cast<Eigen::Index>(d->size());
  p.merged.labels.resize(total, parts.front()->labels.cols());
  Eigen::Index row = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Dataset& d = *parts[k];
    if (d.labels.cols() != p.merged.labels.cols()) throw ConfigError("datasets disagree on class count");
    for (std::size_t i = 0; i < d.size(); ++i) {
      p.merged.signals.push_back(d.signals[i]);
      p.merged.labels.row(row++) = d.labels.row(static_cast<Eigen::Index>(i));
      p.merged.provenance.push_back(d.provenance.empty() ? d.dataset_id : d.provenance[i]);
      p.refs.push_back({ids[k], i});
    }
  }
  return p;
}

std::size_t labeled_count(double frac, std::size_t n_train) {
  if (n_train == 0) return 0;
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(frac * static_cast<double>(n_train))), 1, n_train);
}

void warn_missing_positives(const Dataset& labeled) {
  for (Eigen::Index c = 0; c < labeled.labels.cols(); ++c)
    if (labeled.labels.col(c).sum() == 0.0)
      warn("labeled split has no positive sample for class '" + labeled.class_names[static_cast<std::size_t>(c)] + "'");
}

// Shuffles the pool, cuts train/val/test, then cuts train into labeled/unlabeled.
SplitResult cut(const Pool& pool, const SplitSpec& spec, std::size_t n_train, std::size_t n_val) {
  const std::size_t n = pool.merged.size();
  const auto order = shuffled(n, RandomStream(spec.seed, 0x5011b));
  const std::size_t n_lab = labeled_count(spec.labeled_frac, n_train);
  std::vector<std::size_t> lab(order.begin(), order.begin() + n_lab);
  std::vector<std::size_t> unl(order.begin() + n_lab, order.begin() + n_train);
  std::vector<std::size_t> val(order.begin() + n_train, order.begin() + n_train + n_val);
  std::vector<std::size_t> test(order.begin() + n_train + n_val, order.end());
  SplitResult r;
  r.labeled = subset(pool.merged, lab);
  r.unlabeled = subset(pool.merged, unl);
  r.val = subset(pool.merged, val);
  r.test = subset(pool.merged, test);
  for (auto i : lab) r.labeled_refs.push_back(pool.refs[i]);
  for (auto i : unl) r.unlabeled_refs.push_back(pool.refs[i]);
  for (auto i : val) r.val_refs.push_back(pool.refs[i]);
  for (auto i : test) r.test_refs.push_back(pool.refs[i]);
  warn_missing_positives(r.labeled);
  return r;
}

std::size_t rounded(double frac, std::size_t n) {
  return static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
}

}  // namespace

SplitResult split_within(const Dataset& ds, const SplitSpec& spec) {
  spec.validate();
  const Pool pool = pool_datasets({&ds}, {0}, ds.dataset_id);
  const std::size_t n = ds.size();
  const std::size_t n_train = std::min(n, rounded(spec.train_frac, n));
  const std::size_t n_val = std::min(n - n_train, rounded(spec.val_frac, n));
  return cut(pool, spec, n_train, n_val);
}

SplitResult split_mix(const std::vector<Dataset>& datasets, const SplitSpec& spec) {
  spec.validate();
  if (datasets.size() < 2) throw ConfigError("split_mix: needs at least two datasets");
  std::vector<const Dataset*> parts;
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < datasets.size(); ++k) {
    parts.push_back(&datasets[k]);
    ids.push_back(k);
  }
  const Pool pool = pool_datasets(parts, ids, "mix");
  const std::size_t n = pool.merged.size();
  const std::size_t n_train = std::min(n, rounded(spec.train_frac, n));
  const std::size_t n_val = std::min(n - n_train, rounded(spec.val_frac, n));
  return cut(pool, spec, n_train, n_val);
}

SplitResult split_cross(const std::vector<Dataset>& datasets, const SplitSpec& spec) {
  spec.validate();
  if (!spec.held_out) throw ConfigError("split_cross: held_out dataset id is required");
  std::vector<const Dataset*> parts;
  std::vector<std::size_t> ids;
  std::optional<std::size_t> held;
  for (std::size_t k = 0; k < datasets.size(); ++k) {
    if (datasets[k].dataset_id == *spec.held_out) {
      held = k;
    } else {
      parts.push_back(&datasets[k]);
      ids.push_back(k);
    }
  }
  if (!held) throw ConfigError("split_cross: held-out dataset '" + *spec.held_out + "' not found");
  if (parts.empty()) throw ConfigError("split_cross: no training datasets remain");
  const Pool pool = pool_datasets(parts, ids, "cross-" + *spec.held_out);
  const std::size_t n = pool.merged.size();
  const std::size_t n_train = std::min(n, rounded(spec.train_frac, n));
  SplitResult r = cut(pool, spec, n_train, n - n_train);
  std::vector<std::size_t> all(datasets[*held].size());
  std::iota(all.begin(), all.end(), 0);
  r.test = subset(datasets[*held], all);
  for (auto i : all) r.test_refs.push_back({*held, i});
  return r;
}

// ---- synthetic data ------------------------------------------------------

void SynthConfig::resolve() {
  if (n_samples < 1) throw ConfigError("synth: n_samples must be positive");
  if (num_classes < 2) throw ConfigError("synth: num_classes must be >= 2");
  if (signal_length < 1 || channels < 1) throw ConfigError("synth: signal_length and channels must be positive");
  if (!(noise_level >= 0.0)) throw ConfigError("synth: noise_level must be non-negative");
  if (target_marginals.empty()) {
    const double base[] = {0.38, 0.48, 0.22, 0.25, 0.17};
    for (int c = 0; c < num_classes; ++c) target_marginals.push_back(base[c % 5]);
  }
  if (static_cast<int>(target_marginals.size()) != num_classes)
    throw ConfigError("synth: target_marginals must have C entries");
  for (double m : target_marginals)
    if (!(m > 0.0 && m < 1.0)) throw ConfigError("synth: marginals must be in (0,1)");
  if (target_correlation.size() == 0) target_correlation = Matrix::Identity(num_classes, num_classes);
  if (target_correlation.rows() != num_classes || target_correlation.cols() != num_classes)
    throw ConfigError("synth: target_correlation must be C x C");
  if (!target_correlation.isApprox(target_correlation.transpose(), 1e-12))
    throw ConfigError("synth: target_correlation must be symmetric");
  for (int c = 0; c < num_classes; ++c)
    if (std::abs(target_correlation(c, c) - 1.0) > 1e-12)
      throw ConfigError("synth: target_correlation must have a unit diagonal");
  if (exclusive_class && (*exclusive_class < 0 || *exclusive_class >= num_classes))
    throw ConfigError("synth: exclusive_class out of range");
  if (class_prototypes.empty()) class_prototypes = default_prototypes(num_classes, channels, signal_length, seed);
  if (static_cast<int>(class_prototypes.size()) != num_classes)
    throw ConfigError("synth: need one prototype per class");
  for (const auto& p : class_prototypes)
    if (p.rows() != channels || p.cols() != signal_length || !p.allFinite())
      throw ConfigError("synth: prototypes must be finite channels x signal_length matrices");
}

std::vector<Matrix> default_prototypes(int num_classes, int channels, int length, std::uint64_t seed) {
  // Time-symmetric templates: temporal flipping leaves them unchanged, so
  // the label signal survives every augmentation except noise and dropout.
  RandomStream rng(seed, 0x9407);
  std::vector<Matrix> out;
  for (int c = 0; c < num_classes; ++c) {
    // Two mirrored bumps per class, spread between the edges and the centre.
    const double bump_pos = (0.04 + 0.42 * c / std::max(1, num_classes - 1)) * (length - 1);
    const double width = 0.035 * length + 0.5;
    Vector shape(length);
    for (int t = 0; t < length; ++t) {
      const double a = (t - bump_pos) / width;
      const double b = (t - (length - 1 - bump_pos)) / width;
      shape(t) = std::exp(-0.5 * a * a) + std::exp(-0.5 * b * b);
    }
    Matrix proto(channels, length);
    for (int ch = 0; ch < channels; ++ch) proto.row(ch) = (0.5 + rng.uniform()) * shape.transpose();
    out.push_back(std::move(proto));
  }
  return out;
}

double calibrate_threshold(double marginal) {
  if (!(marginal > 0.0 && marginal < 1.0)) throw ConfigError("calibrate_threshold: marginal must be in (0,1)");
  double lo = -40.0, hi = 40.0;
  for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double upper_tail = 0.5 * std::erfc(mid / std::numbers::sqrt2);
    (upper_tail > marginal ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

Dataset synth_generate(SynthConfig cfg) {
  cfg.resolve();
  const int classes = cfg.num_classes;
  Eigen::LLT<Matrix> llt(cfg.target_correlation);
  if (llt.info() != Eigen::Success) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cfg.target_correlation);
    Vector vals = eig.eigenvalues().cwiseMax(1e-6);
    Matrix near = eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
    const Vector d = near.diagonal().cwiseSqrt().cwiseInverse();
    near = d.asDiagonal() * near * d.asDiagonal();
    std::ostringstream msg;
    msg << "synth: latent correlation is not positive definite; nearest PD suggestion:\n"
        << near.format(Eigen::IOFormat(6, 0, ", ", "\n", "[", "]"));
    throw CalibrationError(msg.str());
  }
  const Matrix lower_factor = llt.matrixL();
  std::vector<double> thresholds;
  for (double m : cfg.target_marginals) thresholds.push_back(calibrate_threshold(m));

  Dataset ds;
  ds.dataset_id = cfg.dataset_id;
  ds.class_names = default_class_names(classes);
  ds.labels.resize(cfg.n_samples, classes);
  const RandomStream root(cfg.seed, 0x5e7d);
  for (int i = 0; i < cfg.n_samples; ++i) {
    RandomStream rng = root.substream(static_cast<std::uint64_t>(i));
    Vector e(classes);
    for (int c = 0; c < classes; ++c) e(c) = rng.normal();
    const Vector z = lower_factor * e;
    Matrix signal = Matrix::Zero(cfg.channels, cfg.signal_length);
    bool any_other = false;
    for (int c = 0; c < classes; ++c) {
      if (cfg.exclusive_class && *cfg.exclusive_class == c) continue;
      const bool on = z(c) > thresholds[static_cast<std::size_t>(c)];
      ds.labels(i, c) = on ? 1.0 : 0.0;
      any_other = any_other || on;
      if (on) signal += cfg.class_prototypes[static_cast<std::size_t>(c)];
    }
    if (cfg.exclusive_class) {
      const int c = *cfg.exclusive_class;
      ds.labels(i, c) = any_other ? 0.0 : 1.0;
      if (!any_other) signal += cfg.class_prototypes[static_cast<std::size_t>(c)];
    }
    if (cfg.noise_level > 0.0)
      for (int ch = 0; ch < cfg.channels; ++ch)
        for (int t = 0; t < cfg.signal_length; ++t) signal(ch, t) += cfg.noise_level * rng.normal();
    ds.signals.emplace_back(std::move(signal));
  }
  ds.provenance.assign(static_cast<std::size_t>(cfg.n_samples), ds.dataset_id);
  return ds;
}

// ---- preprocessing -------------------------------------------------------

Vector preprocess(const SignalMatrix& x, int pool_len) {
  if (pool_len < 1) throw ConfigError("preprocess: pool_len must be positive");
  const Eigen::Index channels = x.channels();
  const Eigen::Index len = x.length();
  if (len == 0) throw ContractViolation("preprocess: empty signal");
  Vector out(channels * pool_len);
  Vector z(len);
  for (Eigen::Index c = 0; c < channels; ++c) {
    const auto row = x.data().row(c).array();
    const double mean = row.mean();
    const double sd = std::sqrt((row - mean).square().mean());
    if (sd > 0.0)
      z = ((row - mean) / sd).matrix().transpose();
    else
      z.setZero();
    for (int b = 0; b < pool_len; ++b) {
      const Eigen::Index start = (static_cast<Eigen::Index>(b) * len) / pool_len;
      const Eigen::Index end = std::max(start + 1, (static_cast<Eigen::Index>(b + 1) * len) / pool_len);
      out(c * pool_len + b) = z.segment(start, end - start).mean();
    }
  }
  return out;
}

Matrix preprocess_batch(const std::vector<SignalMatrix>& signals, int pool_len) {
  if (signals.empty()) return Matrix(0, 0);
  const Eigen::Index dim = signals.front().channels() * pool_len;
  Matrix out(static_cast<Eigen::Index>(signals.size()), dim);
  for (std::size_t i = 0; i < signals.size(); ++i) {
    const Vector v = preprocess(signals[i], pool_len);
    if (v.size() != dim) throw ConfigError("preprocess_batch: inconsistent channel count");
    out.row(static_cast<Eigen::Index>(i)) = v.transpose();
  }
  return out;
}

}  // namespace ecgmatch
