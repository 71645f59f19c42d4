#include "ecgmatch/cli.hpp"

#include <glob.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ecgmatch/correlation.hpp"
#include "ecgmatch/metrics.hpp"
#include "ecgmatch/stats.hpp"

namespace ecgmatch {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---- configuration --------------------------------------------------------

namespace {

/// Typed view of one JSON object. Every key read through it is recorded;
/// finish() rejects whatever remains.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) {
    known_.insert(key);
    return j_.contains(key);
  }

  void get(const std::string& key, int& dst) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_integer()) fail(key, "an integer");
    dst = v.get<int>();
  }
  void get(const std::string& key, double& dst) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number()) fail(key, "a number");
    dst = v.get<double>();
  }
  void get(const std::string& key, bool& dst) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_boolean()) fail(key, "a boolean");
    dst = v.get<bool>();
  }
  void get(const std::string& key, std::string& dst) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_string()) fail(key, "a string");
    dst = v.get<std::string>();
  }
  void get(const std::string& key, std::uint64_t& dst) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned()) fail(key, "a non-negative integer");
    dst = v.get<std::uint64_t>();
  }
  void get(const std::string& key, std::vector<double>& dst) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array()) fail(key, "an array of numbers");
    dst.clear();
    for (const auto& e : v) {
      if (!e.is_number()) fail(key, "an array of numbers");
      dst.push_back(e.get<double>());
    }
  }
  void get(const std::string& key, std::vector<int>& dst) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array()) fail(key, "an array of integers");
    dst.clear();
    for (const auto& e : v) {
      if (!e.is_number_integer()) fail(key, "an array of integers");
      dst.push_back(e.get<int>());
    }
  }
  void get(const std::string& key, std::vector<std::uint64_t>& dst) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array()) fail(key, "an array of non-negative integers");
    dst.clear();
    for (const auto& e : v) {
      if (!e.is_number_unsigned()) fail(key, "an array of non-negative integers");
      dst.push_back(e.get<std::uint64_t>());
    }
  }
  template <class T, class Parse>
  void get_enum(const std::string& key, T& dst, Parse parse) {
    std::string s;
    get(key, s);
    if (has(key)) {
      try {
        dst = parse(s);
      } catch (const ConfigError& e) {
        throw ConfigError(path_ + "." + key + ": " + e.what());
      }
    }
  }
  Section child(const std::string& key) { return Section(j_.at(key), path_ + "." + key); }
  const json& raw(const std::string& key) {
    known_.insert(key);
    return j_.at(key);
  }
  const std::string& path() const { return path_; }

  void finish() const {
    std::vector<std::string> unknown;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!known_.count(it.key())) unknown.push_back(it.key());
    if (unknown.empty()) return;
    std::string msg = path_ + ": unknown key";
    msg += unknown.size() > 1 ? "s" : "";
    for (std::size_t i = 0; i < unknown.size(); ++i) msg += (i ? ", '" : " '") + unknown[i] + "'";
    throw ConfigError(msg);
  }

 private:
  [[noreturn]] void fail(const std::string& key, const char* expected) const {
    throw ConfigError(path_ + "." + key + ": expected " + expected);
  }

  const json& j_;
  std::string path_;
  std::set<std::string> known_;
};

Matrix parse_square(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ConfigError(path + ": expected a square array of arrays");
  const auto n = static_cast<Eigen::Index>(j.size());
  Matrix m(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n)
      throw ConfigError(path + ": expected a square array of arrays");
    for (Eigen::Index c = 0; c < n; ++c) {
      if (!row[static_cast<std::size_t>(c)].is_number()) throw ConfigError(path + ": non-numeric entry");
      m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
  }
  return m;
}

SynthConfig parse_synth(Section s) {
  SynthConfig c;
  s.get("dataset_id", c.dataset_id);
  s.get("n_samples", c.n_samples);
  s.get("num_classes", c.num_classes);
  s.get("marginals", c.target_marginals);
  if (s.has("correlation")) c.target_correlation = parse_square(s.raw("correlation"), s.path() + ".correlation");
  s.get("signal_length", c.signal_length);
  s.get("channels", c.channels);
  s.get("noise_level", c.noise_level);
  if (s.has("exclusive_class")) {
    int e = 0;
    s.get("exclusive_class", e);
    c.exclusive_class = e;
  }
  s.get("seed", c.seed);
  s.finish();
  return c;
}

void parse_variant_fields(Section& s, TrainConfig& t) {
  s.get_enum("baseline", t.baseline, parse_baseline);
  s.get("no_pseudo", t.ablations.no_pseudo);
  s.get("no_nam", t.ablations.no_nam);
  s.get("no_align", t.ablations.no_align);
  s.get("fixed_tau", t.fixed_tau);
}

}  // namespace

std::vector<std::pair<double, double>> grid_cells(const GridSpec& grid) {
  std::vector<std::pair<double, double>> cells;
  switch (grid.mode) {
    case GridSpec::Mode::lambda_f:
      for (double v : grid.values) cells.emplace_back(grid.fixed, v);
      break;
    case GridSpec::Mode::lambda_u:
      for (double v : grid.values) cells.emplace_back(v, grid.fixed);
      break;
    case GridSpec::Mode::cartesian:
      for (double u : grid.values)
        for (double f : grid.values) cells.emplace_back(u, f);
      break;
  }
  return cells;
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what(), e.byte);
  }
  ExperimentConfig cfg;
  Section top(root, "config");
  top.get("seeds", cfg.seeds);
  top.get("output_dir", cfg.output_dir);

  if (top.has("data")) {
    Section d = top.child("data");
    if (d.has("synthetic")) {
      const json& syn = d.raw("synthetic");
      if (syn.is_array()) {
        for (std::size_t i = 0; i < syn.size(); ++i)
          cfg.data.push_back({parse_synth(Section(syn[i], "config.data.synthetic[" + std::to_string(i) + "]")), "",
                              DataFormat::csv, std::nullopt});
      } else {
        cfg.data.push_back({parse_synth(d.child("synthetic")), "", DataFormat::csv, std::nullopt});
      }
    }
    if (d.has("files")) {
      const json& files = d.raw("files");
      if (!files.is_array()) throw ConfigError("config.data.files: expected an array");
      for (std::size_t i = 0; i < files.size(); ++i) {
        Section f(files[i], "config.data.files[" + std::to_string(i) + "]");
        DataSource src;
        f.get("path", src.path);
        if (src.path.empty()) throw ConfigError(f.path() + ".path: required");
        f.get_enum("format", src.format, parse_data_format);
        if (f.has("id")) {
          std::string id;
          f.get("id", id);
          src.id = id;
        }
        f.finish();
        cfg.data.push_back(std::move(src));
      }
    }
    d.finish();
  }

  if (top.has("split")) {
    Section s = top.child("split");
    Protocol p = Protocol::within;
    s.get_enum("protocol", p, parse_protocol);
    cfg.split = SplitSpec::defaults(p);
    s.get("train_frac", cfg.split.train_frac);
    s.get("val_frac", cfg.split.val_frac);
    s.get("test_frac", cfg.split.test_frac);
    s.get("labeled_frac", cfg.split.labeled_frac);
    if (s.has("held_out")) {
      std::string h;
      s.get("held_out", h);
      cfg.split.held_out = h;
    }
    s.finish();
  } else {
    cfg.split = SplitSpec::defaults(Protocol::within);
  }

  TrainConfig& t = cfg.train;
  if (top.has("model")) {
    Section m = top.child("model");
    m.get("hidden_dims", t.model.hidden_dims);
    m.get("feature_dim", t.model.feature_dim);
    m.get("head_hidden", t.model.head_hidden);
    m.get_enum("activation", t.model.activation, parse_activation);
    m.finish();
  }
  if (top.has("train")) {
    Section s = top.child("train");
    s.get("batch_labeled", t.batch_labeled);
    s.get("batch_unlabeled", t.batch_unlabeled);
    s.get("lambda_u", t.weights.lambda_u);
    s.get("lambda_f", t.weights.lambda_f);
    s.get("max_epochs", t.max_epochs);
    s.get("patience", t.patience);
    s.get_enum("monitor", t.monitor_metric, parse_metric_name);
    s.get("pretrain_max_epochs", t.pretrain_max_epochs);
    s.get("pretrain_patience", t.pretrain_patience);
    s.get("pretrain_augment", t.pretrain_augment);
    s.get("pool_len", t.pool_len);
    s.get("threads", t.threads);
    s.get_enum("similarity", t.similarity, parse_similarity_kind);
    parse_variant_fields(s, t);
    s.finish();
  }
  if (top.has("knn")) {
    Section s = top.child("knn");
    s.get("k", t.knn.k);
    s.get_enum("distance", t.knn.distance, parse_distance_kind);
    s.get("exclude_self", t.knn.exclude_self);
    s.finish();
  }
  if (top.has("optimizer")) {
    Section s = top.child("optimizer");
    s.get("lr0", t.optimizer.lr0);
    s.get("momentum", t.optimizer.momentum);
    s.get("gamma", t.optimizer.gamma);
    s.get("power", t.optimizer.power);
    s.get("max_steps", t.optimizer.max_steps);
    s.get("ema_momentum", t.optimizer.ema_momentum);
    s.get("literal_schedule", t.optimizer.literal_schedule);
    s.finish();
  }
  if (top.has("augment")) {
    Section s = top.child("augment");
    s.get("dropout_max_frac", t.augment.dropout_max_frac);
    s.get("dropout_per_channel", t.augment.dropout_per_channel);
    s.get("noise_sigma", t.augment.noise_sigma);
    s.get("noise_relative", t.augment.noise_relative);
    s.get("strong_max_transforms", t.augment.strong_max_transforms);
    s.finish();
  }
  if (top.has("metrics")) {
    Section s = top.child("metrics");
    s.get("beta", t.metric_options.beta);
    s.get("threshold", t.metric_options.threshold);
    s.finish();
  }
  if (top.has("variants")) {
    const json& vs = top.raw("variants");
    if (!vs.is_array() || vs.empty()) throw ConfigError("config.variants: expected a non-empty array");
    for (std::size_t i = 0; i < vs.size(); ++i) {
      Section v(vs[i], "config.variants[" + std::to_string(i) + "]");
      TrainConfig tv = t;
      tv.ablations = {};
      tv.baseline = Baseline::ecgmatch;
      parse_variant_fields(v, tv);
      v.finish();
      cfg.variants.push_back(std::move(tv));
    }
  } else {
    cfg.variants.push_back(t);
  }
  if (top.has("grid")) {
    Section g = top.child("grid");
    GridSpec grid;
    g.get_enum("mode", grid.mode, [](const std::string& m) {
      if (m == "lambda_f") return GridSpec::Mode::lambda_f;
      if (m == "lambda_u") return GridSpec::Mode::lambda_u;
      if (m == "cartesian") return GridSpec::Mode::cartesian;
      throw ConfigError("unknown grid mode '" + m + "'");
    });
    g.get("values", grid.values);
    g.get("fixed", grid.fixed);
    g.finish();
    if (grid.values.empty()) throw ConfigError("config.grid.values: must not be empty");
    for (double v : grid.values)
      if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("config.grid.values: weights must be finite and >= 0");
    cfg.grid = grid;
  }
  top.finish();

  if (cfg.seeds.empty()) throw ConfigError("config.seeds: at least one seed is required");
  if (cfg.data.empty()) throw ConfigError("config.data: no dataset configured");
  cfg.split.validate();
  for (const auto& v : cfg.variants) v.validate();
  for (auto src : cfg.data)
    if (src.synthetic) src.synthetic->resolve();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

std::vector<Dataset> load_sources(const ExperimentConfig& cfg) {
  std::vector<Dataset> out;
  for (const auto& src : cfg.data) {
    if (src.synthetic) {
      out.push_back(synth_generate(*src.synthetic));
    } else {
      Dataset ds = load_dataset(src.path, src.format);
      if (src.id) {
        ds.dataset_id = *src.id;
        ds.provenance.assign(ds.size(), ds.dataset_id);
      }
      ds.validate();
      out.push_back(std::move(ds));
    }
  }
  return out;
}

// ---- helpers ----------------------------------------------------------------

namespace {

int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

std::string fmt(double v, const char* f = "%.10g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error("cannot write '" + p.string() + "'");
  return f;
}

void apply_globals(ExperimentConfig& cfg, const GlobalOptions& opts) {
  if (opts.out) cfg.output_dir = *opts.out;
  if (opts.seed) cfg.seeds = {*opts.seed};
  if (opts.threads) {
    if (*opts.threads < 1) throw ConfigError("--threads must be positive");
    cfg.train.threads = *opts.threads;
    for (auto& v : cfg.variants) v.threads = *opts.threads;
  }
}

void write_summary_rows(std::ostream& f, const ExperimentResult& r) {
  f << r.model_name << ',' << r.dataset_name << ",mean";
  for (double v : r.mean) f << ',' << fmt(v);
  f << '\n' << r.model_name << ',' << r.dataset_name << ",std";
  for (double v : r.stddev) f << ',' << fmt(v);
  f << '\n';
}

/// Writes logs, checkpoints, banks and R_b of every seed.
void write_run_artifacts(const fs::path& dir, const ExperimentResult& r, const std::vector<std::string>& class_names) {
  for (const auto& run : r.runs) {
    const std::string stem = r.model_name + "_seed" + std::to_string(run.seed);
    {
      auto f = open_out(dir / "logs" / (stem + ".csv"));
      write_train_log(f, run.training.log);
    }
    fs::create_directories(dir / "checkpoints");
    save_checkpoint((dir / "checkpoints" / (stem + "_student.bin")).string(), run.training.best_student);
    save_checkpoint((dir / "checkpoints" / (stem + "_teacher.bin")).string(), run.training.final_state.teacher);
    if (run.training.final_state.banks.size() > 0)
      save_banks((dir / "checkpoints" / (stem + "_banks.bin")).string(), run.training.final_state.banks);
    auto f = open_out(dir / "correlation" / (stem + "_rb.csv"));
    write_correlation_csv(f, run.training.final_state.r_b, class_names);
  }
}

void print_summary(std::ostream& out, const ExperimentResult& r) {
  out << r.model_name << " on " << r.dataset_name << " (" << r.runs.size() << " seeds):";
  for (int m = 0; m < 6; ++m)
    out << ' ' << kMetricInfo[m].name << '=' << fmt(r.mean[m], "%.4f") << "+-" << fmt(r.stddev[m], "%.4f");
  out << '\n';
}

}  // namespace

// ---- commands -------------------------------------------------------------

int cmd_run(const std::string& config_path, const GlobalOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    ExperimentConfig cfg = load_experiment_config(config_path);
    apply_globals(cfg, opts);
    const std::vector<Dataset> datasets = load_sources(cfg);
    const fs::path dir(cfg.output_dir);
    auto metrics = open_out(dir / "metrics.csv");
    auto summary = open_out(dir / "summary.csv");
    metrics << kMetricsCsvHeader << '\n';
    summary << kMetricsCsvHeader << '\n';
    for (const auto& variant : cfg.variants) {
      const ExperimentResult r = run_experiment(datasets, cfg.split, variant, cfg.seeds);
      for (const auto& run : r.runs)
        write_metrics_csv_row(metrics, r.model_name, r.dataset_name, std::to_string(run.seed), run.report);
      write_summary_rows(summary, r);
      write_run_artifacts(dir, r, datasets.front().class_names);
      print_summary(out, r);
    }
    out << "reports written to " << dir.string() << '\n';
    return kExitOk;
  });
}

int cmd_gridsearch(const std::string& config_path, const GlobalOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    ExperimentConfig cfg = load_experiment_config(config_path);
    apply_globals(cfg, opts);
    if (!cfg.grid) throw ConfigError("config.grid: required for gridsearch");
    const std::vector<Dataset> datasets = load_sources(cfg);
    const fs::path dir(cfg.output_dir);
    auto grid = open_out(dir / "grid.csv");
    auto plot = open_out(dir / "grid_plot.csv");
    grid << "lambda_u,lambda_f,model,dataset";
    for (const auto& mi : kMetricInfo) grid << ',' << mi.name << "_mean";
    for (const auto& mi : kMetricInfo) grid << ',' << mi.name << "_std";
    grid << '\n';
    plot << "lambda_u,lambda_f,metric,mean,std\n";
    for (const auto& [lu, lf] : grid_cells(*cfg.grid)) {
      TrainConfig t = cfg.variants.front();
      t.weights.lambda_u = lu;
      t.weights.lambda_f = lf;
      const ExperimentResult r = run_experiment(datasets, cfg.split, t, cfg.seeds);
      grid << fmt(lu) << ',' << fmt(lf) << ',' << r.model_name << ',' << r.dataset_name;
      for (double v : r.mean) grid << ',' << fmt(v);
      for (double v : r.stddev) grid << ',' << fmt(v);
      grid << '\n';
      for (int m = 0; m < 6; ++m)
        plot << fmt(lu) << ',' << fmt(lf) << ',' << kMetricInfo[m].name << ',' << fmt(r.mean[m]) << ','
             << fmt(r.stddev[m]) << '\n';
      out << "lambda_u=" << fmt(lu) << " lambda_f=" << fmt(lf) << ": ";
      print_summary(out, r);
    }
    out << "grid written to " << (dir / "grid.csv").string() << '\n';
    return kExitOk;
  });
}

Matrix read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'", 0);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      ++col;
      try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
        if (used != cell.size()) throw std::invalid_argument("trailing");
        row.push_back(v);
      } catch (const std::exception&) {
        throw ParseError(path + ": non-numeric cell '" + cell + "' in column " + std::to_string(col), line_no);
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseError(path + ": ragged row", line_no);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(path + ": no data rows", line_no);
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return m;
}

int cmd_eval(const std::string& scores_path, const std::string& labels_path, const GlobalOptions& opts,
             std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    ScoreMatrix sm{read_matrix_csv(scores_path), read_matrix_csv(labels_path)};
    if (sm.scores.rows() != sm.labels.rows() || sm.scores.cols() != sm.labels.cols())
      throw ConfigError("shape mismatch: scores are " + std::to_string(sm.scores.rows()) + "x" +
                        std::to_string(sm.scores.cols()) + ", labels are " + std::to_string(sm.labels.rows()) + "x" +
                        std::to_string(sm.labels.cols()));
    try {
      sm.validate();
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    const MetricsReport r = evaluate_metrics(sm);
    for (int m = 0; m < 6; ++m) out << kMetricInfo[m].name << '=' << fmt(metric_value(r, m)) << '\n';
    out << "ranking_rows_skipped=" << r.ranking_rows_skipped << '\n'
        << "coverage_rows_skipped=" << r.coverage_rows_skipped << '\n'
        << "map_classes_skipped=" << r.map_classes_skipped << '\n'
        << "auc_classes_skipped=" << r.auc_classes_skipped << '\n';
    if (opts.out) {
      auto f = open_out(fs::path(*opts.out) / "metrics.csv");
      f << kMetricsCsvHeader << '\n';
      write_metrics_csv_row(f, "external", fs::path(scores_path).stem().string(), "-", r);
    }
    return kExitOk;
  });
}

namespace {

std::vector<std::string> expand_glob(const std::string& pattern) {
  glob_t g{};
  std::vector<std::string> paths;
  if (::glob(pattern.c_str(), 0, nullptr, &g) == 0)
    for (std::size_t i = 0; i < g.gl_pathc; ++i) paths.emplace_back(g.gl_pathv[i]);
  globfree(&g);
  return paths;
}

}  // namespace

int cmd_compare(const std::string& report_glob, const std::string& control, const GlobalOptions& opts,
                std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto files = expand_glob(report_glob);
    if (files.empty()) throw ConfigError("no report file matches '" + report_glob + "'");
    std::vector<std::string> models, datasets;
    std::map<std::pair<std::string, std::string>, std::pair<std::array<double, 6>, int>> cells;
    for (const auto& path : files) {
      std::ifstream in(path);
      if (!in) throw ParseError("cannot open '" + path + "'", 0);
      for (const auto& row : read_metrics_csv(in)) {
        if (row.seed == "mean" || row.seed == "std") continue;
        if (std::find(models.begin(), models.end(), row.model) == models.end()) models.push_back(row.model);
        if (std::find(datasets.begin(), datasets.end(), row.dataset) == datasets.end()) datasets.push_back(row.dataset);
        auto& cell = cells[{row.model, row.dataset}];
        for (int m = 0; m < 6; ++m) cell.first[m] += row.values[m];
        ++cell.second;
      }
    }
    const int k = static_cast<int>(models.size());
    const int n = static_cast<int>(datasets.size());
    if (k < 2 || n < 2)
      throw ConfigError("comparison needs at least 2 models and 2 datasets (found " + std::to_string(k) + " and " +
                        std::to_string(n) + ")");
    std::vector<std::string> missing;
    for (const auto& mdl : models)
      for (const auto& ds : datasets)
        if (!cells.count({mdl, ds})) missing.push_back("(" + mdl + ", " + ds + ")");
    if (!missing.empty()) {
      std::string msg = "missing report cells:";
      for (const auto& m : missing) msg += ' ' + m;
      throw ConfigError(msg);
    }
    const auto control_it = std::find(models.begin(), models.end(), control);
    if (control_it == models.end()) throw ConfigError("control model '" + control + "' not found in the reports");
    const int control_index = static_cast<int>(control_it - models.begin());

    double q = 0.0;
    if (k <= 10) {
      q = bonferroni_dunn_q(k, 0.05);
    } else {
      q = bonferroni_dunn_q_from_normal(k, 0.05);
      warn("more than 10 models; Bonferroni-Dunn q taken from the normal quantile");
    }
    const double cd = q * std::sqrt(static_cast<double>(k) * (k + 1) / (6.0 * n));
    const double f_crit = critical_f_value(k, n, 0.05);
    const bool published_shape = k == 8 && n == 4;

    std::ostringstream stats_csv, ranks_csv;
    stats_csv << "metric,k,n,chi2,f_f,f_critical,f_critical_published,cd\n";
    ranks_csv << "metric,model,mean_rank,control_rank,cd_low,cd_high,rank_difference,significant\n";
    out << "models=" << k << " datasets=" << n << " control=" << control << '\n'
        << "critical_difference=" << fmt(cd, "%.4f") << " (alpha=0.05, q=" << fmt(q, "%.3f") << ")\n"
        << "f_critical=" << fmt(f_crit, "%.4f") << '\n';
    if (published_shape)
      out << "f_critical_published=" << fmt(kPublishedFriedmanCriticalValue, "%.4f") << '\n';

    for (int m = 0; m < 6; ++m) {
      PerformanceTable table{Matrix(n, k), kMetricInfo[m].higher_is_better};
      for (int d = 0; d < n; ++d)
        for (int j = 0; j < k; ++j) {
          const auto& cell = cells.at({models[static_cast<std::size_t>(j)], datasets[static_cast<std::size_t>(d)]});
          table.values(d, j) = cell.first[m] / cell.second;
        }
      const RankTable ranks = rank_models(table);
      const FriedmanResult fr = friedman_statistic(ranks);
      const auto verdicts = dunn_compare(ranks, control_index, cd);
      stats_csv << kMetricInfo[m].name << ',' << k << ',' << n << ',' << fmt(fr.chi2) << ',' << fmt(fr.f_f) << ','
                << fmt(f_crit) << ',' << (published_shape ? fmt(kPublishedFriedmanCriticalValue, "%.4f") : "")
                << ',' << fmt(cd) << '\n';
      const double control_rank = ranks.mean_ranks(control_index);
      out << kMetricInfo[m].name << ": chi2=" << fmt(fr.chi2, "%.4f") << " F_F=" << fmt(fr.f_f, "%.4f")
          << (fr.f_f > f_crit ? " (reject equal ranks)" : " (equal ranks not rejected)") << '\n';
      for (int j = 0; j < k; ++j) {
        const auto v = std::find_if(verdicts.begin(), verdicts.end(), [j](const DunnVerdict& x) { return x.model == j; });
        const double diff = v == verdicts.end() ? 0.0 : v->rank_difference;
        const bool sig = v != verdicts.end() && v->significant;
        ranks_csv << kMetricInfo[m].name << ',' << models[static_cast<std::size_t>(j)] << ','
                  << fmt(ranks.mean_ranks(j)) << ',' << fmt(control_rank) << ',' << fmt(control_rank - cd) << ','
                  << fmt(control_rank + cd) << ',' << fmt(diff) << ',' << (sig ? 1 : 0) << '\n';
        out << "  " << models[static_cast<std::size_t>(j)] << " mean_rank=" << fmt(ranks.mean_ranks(j), "%.3f");
        if (j == control_index)
          out << " (control)";
        else
          out << (sig ? " significant" : " not significant");
        out << '\n';
      }
    }
    if (opts.out) {
      const fs::path dir(*opts.out);
      open_out(dir / "compare_stats.csv") << stats_csv.str();
      open_out(dir / "compare_ranks.csv") << ranks_csv.str();
    }
    return kExitOk;
  });
}

int cmd_annotate(const std::string& terms_path, const std::string& map_path, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const AnnotationMap am = load_annotation_map(map_path);
    std::ifstream in(terms_path);
    if (!in) throw ParseError("cannot open '" + terms_path + "'", 0);
    std::vector<std::pair<std::size_t, std::string>> unmappable;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      std::vector<std::string> terms;
      std::stringstream ss(line);
      std::string term;
      while (std::getline(ss, term, ';')) terms.push_back(term);
      try {
        const Vector v = map_annotations(terms, am);
        for (Eigen::Index c = 0; c < v.size(); ++c) out << (c ? "," : "") << static_cast<int>(v(c));
        out << '\n';
      } catch (const UnmappableSampleError&) {
        out << "unmappable\n";
        unmappable.emplace_back(line_no, line);
      }
    }
    if (unmappable.empty()) return kExitOk;
    out << "unmappable lines: " << unmappable.size() << '\n';
    for (const auto& [no, text] : unmappable) out << "  line " << no << ": " << text << '\n';
    return kExitRuntime;
  });
}

int cmd_synth(const std::string& config_path, const std::string& out_path, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = load_experiment_config(config_path);
    std::vector<SynthConfig> synths;
    for (const auto& src : cfg.data)
      if (src.synthetic) synths.push_back(*src.synthetic);
    if (synths.size() != 1) throw ConfigError("synth: config must describe exactly one synthetic dataset");
    SynthConfig sc = synths.front();
    sc.resolve();
    const Dataset ds = synth_generate(sc);
    const fs::path path(out_path);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const std::string ext = path.extension().string();
    save_dataset(out_path, ds, ext == ".bin" || ext == ".f32" ? DataFormat::raw_f32 : DataFormat::csv);

    json manifest;
    manifest["dataset_id"] = ds.dataset_id;
    manifest["n_samples"] = ds.size();
    manifest["seed"] = sc.seed;
    manifest["class_names"] = ds.class_names;
    manifest["target_marginals"] = sc.target_marginals;
    std::vector<double> marg;
    for (Eigen::Index c = 0; c < ds.labels.cols(); ++c) marg.push_back(ds.labels.col(c).mean());
    manifest["empirical_marginals"] = marg;
    manifest["correlation_kind"] = "cosine";
    const Matrix r = correlation_labeled(ds.labels, SimilarityKind::cosine).values;
    json rows = json::array();
    for (Eigen::Index i = 0; i < r.rows(); ++i) {
      std::vector<double> row(r.row(i).data(), r.row(i).data() + r.cols());
      rows.push_back(row);
    }
    manifest["empirical_correlation"] = rows;
    auto f = open_out(out_path + ".manifest.json");
    f << manifest.dump(2) << '\n';
    out << "wrote " << ds.size() << " samples to " << out_path << '\n';
    return kExitOk;
  });
}

}  // namespace ecgmatch
