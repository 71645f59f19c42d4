#include <doctest.h>

#include <cstdlib>
#include <functional>
#include <sys/wait.h>
#include <sstream>

#include <json.hpp>

#include "ecgmatch/cli.hpp"
#include "support.hpp"

using namespace ecgmatch;
using json = nlohmann::json;

namespace {

// Tiny run: a few seconds per variant.
json tiny_config(const std::string& id = "tiny", int epochs = 2) {
  auto j = json::parse(R"({
    "seeds": [0],
    "data": {"synthetic": {"n_samples": 160, "channels": 2, "signal_length": 32,
                           "noise_level": 1.0, "exclusive_class": 4, "seed": 3}},
    "split": {"protocol": "within", "labeled_frac": 0.2},
    "model": {"hidden_dims": [16], "feature_dim": 8, "head_hidden": 8},
    "train": {"batch_labeled": 4, "batch_unlabeled": 16, "pool_len": 8,
              "pretrain_max_epochs": 2, "pretrain_patience": 2, "patience": 2},
    "knn": {"k": 3}
  })");
  j["data"]["synthetic"]["dataset_id"] = id;
  j["train"]["max_epochs"] = epochs;
  return j;
}

std::string write_config(const testing::TempDir& dir, const std::string& name, const json& cfg) {
  const auto path = dir.file(name);
  testing::spit(path, cfg.dump(2));
  return path;
}

GlobalOptions out_to(const std::string& path) {
  GlobalOptions o;
  o.out = path;
  return o;
}

int count_lines(const std::string& text) { return static_cast<int>(std::count(text.begin(), text.end(), '\n')); }

void write_report(const std::string& path, const std::vector<std::pair<std::string, std::string>>& cells,
                  const std::function<double(std::size_t)>& value) {
  std::ofstream f(path);
  f << kMetricsCsvHeader << '\n';
  for (std::size_t i = 0; i < cells.size(); ++i) {
    MetricsReport r;
    r.ranking_loss = r.hamming_loss = 1.0 - value(i);
    r.coverage = 5.0 - value(i);
    r.map = r.macro_auc = r.macro_gbeta = value(i);
    write_metrics_csv_row(f, cells[i].first, cells[i].second, "0", r);
  }
}

}  // namespace

TEST_CASE("configuration problems exit with code 2") {
  testing::TempDir dir;
  std::ostringstream out, err;
  CHECK(cmd_run(dir.file("absent.json"), {}, out, err) == kExitConfig);

  auto bad = tiny_config();
  bad["train"]["lamda_u"] = 0.5;
  CHECK(cmd_run(write_config(dir, "typo.json", bad), {}, out, err) == kExitConfig);
  CHECK(err.str().find("lamda_u") != std::string::npos);

  testing::spit(dir.file("broken.json"), "{\"seeds\": [0,");
  CHECK(cmd_run(dir.file("broken.json"), {}, out, err) == kExitConfig);

  auto wrong_type = tiny_config();
  wrong_type["train"]["max_epochs"] = "ten";
  CHECK(cmd_run(write_config(dir, "type.json", wrong_type), {}, out, err) == kExitConfig);

  CHECK(cmd_gridsearch(write_config(dir, "nogrid.json", tiny_config()), {}, out, err) == kExitConfig);
}

TEST_CASE("config parsing fills every section") {
  auto j = tiny_config();
  j["variants"] = json::array({json{{"baseline", "supervised_only"}}, json{{"no_nam", true}}});
  j["optimizer"] = json{{"lr0", 0.01}, {"max_steps", 300}};
  j["grid"] = json{{"mode", "cartesian"}};
  const auto cfg = parse_experiment_config(j.dump());
  REQUIRE(cfg.variants.size() == 2);
  CHECK(cfg.variants[0].model_name() == "supervised_only");
  CHECK(cfg.variants[1].model_name() == "ecgmatch-no_nam");
  CHECK(cfg.variants[1].optimizer.lr0 == 0.01);
  CHECK(cfg.train.batch_unlabeled == 16);
  CHECK(grid_cells(*cfg.grid).size() == 25);
  GridSpec sweep;
  const auto cells = grid_cells(sweep);
  REQUIRE(cells.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(cells[i].first == 0.8);
    CHECK(cells[i].second == doctest::Approx(0.4 * static_cast<double>(i)));
  }
}

TEST_CASE("smoke run writes finite, reproducible reports") {
  testing::TempDir dir;
  const auto cfg = write_config(dir, "smoke.json", tiny_config());
  std::ostringstream out, err;
  REQUIRE(cmd_run(cfg, out_to(dir.file("a")), out, err) == kExitOk);
  REQUIRE(cmd_run(cfg, out_to(dir.file("b")), out, err) == kExitOk);
  const auto a = testing::slurp(dir.file("a/metrics.csv"));
  CHECK(a == testing::slurp(dir.file("b/metrics.csv")));
  CHECK(testing::slurp(dir.file("a/summary.csv")) == testing::slurp(dir.file("b/summary.csv")));
  std::istringstream in(a);
  const auto rows = read_metrics_csv(in);
  REQUIRE(rows.size() == 1);
  for (double v : rows[0].values) CHECK(std::isfinite(v));
  CHECK(std::filesystem::exists(dir.file("a/logs/ecgmatch_seed0.csv")));
  CHECK(std::filesystem::exists(dir.file("a/checkpoints/ecgmatch_seed0_teacher.bin")));
}

TEST_CASE("runtime failures exit with code 1 and name the stage") {
  testing::TempDir dir;
  auto j = tiny_config();
  j["optimizer"] = json{{"lr0", 1e300}, {"momentum", 0.0}};
  std::ostringstream out, err;
  CHECK(cmd_run(write_config(dir, "diverge.json", j), out_to(dir.file("o")), out, err) == kExitRuntime);
  CHECK(err.str().find("[pretrain]") != std::string::npos);
}

TEST_CASE("compare reads run outputs directly") {
  testing::TempDir dir;
  std::ostringstream out, err;
  for (const std::string id : {"one", "two"}) {
    auto j = tiny_config(id, 1);
    j["variants"] = json::array({json::object(), json{{"baseline", "supervised_only"}}});
    REQUIRE(cmd_run(write_config(dir, id + ".json", j), out_to(dir.file("runs/" + id)), out, err) == kExitOk);
  }
  std::ostringstream cmp;
  CHECK(cmd_compare(dir.file("runs/*/metrics.csv"), "ecgmatch", out_to(dir.file("cmp")), cmp, err) == kExitOk);
  CHECK(cmp.str().find("models=2 datasets=2") != std::string::npos);
  CHECK(std::filesystem::exists(dir.file("cmp/compare_ranks.csv")));
}

TEST_CASE("grid search cell counts") {
  testing::TempDir dir;
  std::ostringstream out, err;
  auto j = tiny_config("g", 1);
  j["train"]["pretrain_max_epochs"] = 1;
  j["grid"] = json{{"mode", "lambda_f"}};
  REQUIRE(cmd_gridsearch(write_config(dir, "f.json", j), out_to(dir.file("f")), out, err) == kExitOk);
  const auto grid = testing::slurp(dir.file("f/grid.csv"));
  CHECK(count_lines(grid) == 6);
  CHECK(grid.find("\n0.8,0,") != std::string::npos);
  CHECK(grid.find("\n0.8,1.6,") != std::string::npos);
  CHECK(count_lines(testing::slurp(dir.file("f/grid_plot.csv"))) == 1 + 5 * 6);

  j["grid"] = json{{"mode", "cartesian"}, {"values", {0.0, 0.8}}};
  REQUIRE(cmd_gridsearch(write_config(dir, "c.json", j), out_to(dir.file("c")), out, err) == kExitOk);
  CHECK(count_lines(testing::slurp(dir.file("c/grid.csv"))) == 1 + 4);
}

TEST_CASE("eval against oracle values") {
  testing::TempDir dir;
  std::mt19937_64 gen(5);
  const Matrix s = testing::random_scores(gen, 12, 5, true);
  const Matrix y = testing::random_binary(gen, 12, 5, 0.4);
  auto dump = [&](const std::string& name, const Matrix& m) {
    std::ostringstream o;
    o.precision(17);
    for (long i = 0; i < m.rows(); ++i) {
      for (long j = 0; j < m.cols(); ++j) o << (j ? "," : "") << m(i, j);
      o << '\n';
    }
    testing::spit(dir.file(name), o.str());
    return dir.file(name);
  };
  std::ostringstream out, err;
  REQUIRE(cmd_eval(dump("s.csv", s), dump("y.csv", y), out_to(dir.file("e")), out, err) == kExitOk);
  auto value = [&](const std::string& key) {
    const auto at = out.str().find(key + "=");
    return std::stod(out.str().substr(at + key.size() + 1));
  };
  CHECK(value("ranking_loss") == doctest::Approx(testing::oracle_ranking_loss(s, y)).epsilon(1e-9));
  CHECK(value("coverage") == doctest::Approx(testing::oracle_coverage(s, y)).epsilon(1e-9));
  CHECK(value("map") == doctest::Approx(testing::oracle_map(s, y)).epsilon(1e-9));
  CHECK(value("macro_auc") == doctest::Approx(testing::oracle_auc(s, y)).epsilon(1e-9));
  CHECK(value("macro_gbeta") == doctest::Approx(testing::oracle_gbeta(s, y, 2.0, 0.5)).epsilon(1e-9));
  CHECK(std::filesystem::exists(dir.file("e/metrics.csv")));

  std::ostringstream one;
  REQUIRE(cmd_eval(dump("s1.csv", s.topRows(1)), dump("y1.csv", (Matrix(1, 5) << 1, 0, 1, 0, 0).finished()), {},
                   one, err) == kExitOk);
  CHECK(one.str().find("coverage=nan") == std::string::npos);
  CHECK(one.str().find("auc_classes_skipped=5") != std::string::npos);

  CHECK(cmd_eval(dump("s2.csv", s.topRows(2)), dump("y3.csv", y.topRows(3)), {}, out, err) == kExitConfig);

  testing::spit(dir.file("nan.csv"), "0.1,0.2,0.3,0.4,0.5\n0.1,abc,0.3,0.4,0.5\n");
  std::ostringstream perr;
  CHECK(cmd_eval(dir.file("nan.csv"), dump("y2.csv", y.topRows(2)), {}, out, perr) == kExitConfig);
  CHECK(perr.str().find("abc") != std::string::npos);
  CHECK(perr.str().find("(at 2)") != std::string::npos);
}

TEST_CASE("compare statistics on constructed reports") {
  testing::TempDir dir;
  std::ostringstream err;

  SUBCASE("eight models on four datasets") {
    std::vector<std::pair<std::string, std::string>> cells;
    for (int d = 0; d < 4; ++d)
      for (int m = 0; m < 8; ++m) cells.emplace_back("m" + std::to_string(m), "d" + std::to_string(d));
    write_report(dir.file("r.csv"), cells, [&](std::size_t i) { return 0.9 - 0.01 * static_cast<double>(i % 8); });
    std::ostringstream out;
    REQUIRE(cmd_compare(dir.file("*.csv"), "m0", out_to(dir.file("o")), out, err) == kExitOk);
    CHECK(out.str().find("critical_difference=4.659") != std::string::npos);
    CHECK(out.str().find("f_critical_published=3.2590") != std::string::npos);
    CHECK(testing::slurp(dir.file("o/compare_stats.csv")).find(",3.2590,") != std::string::npos);
  }
  SUBCASE("identical reports") {
    std::vector<std::pair<std::string, std::string>> cells;
    for (int d = 0; d < 3; ++d)
      for (int m = 0; m < 4; ++m) cells.emplace_back("m" + std::to_string(m), "d" + std::to_string(d));
    write_report(dir.file("r.csv"), cells, [](std::size_t) { return 0.7; });
    std::ostringstream out;
    REQUIRE(cmd_compare(dir.file("r.csv"), "m1", {}, out, err) == kExitOk);
    CHECK(out.str().find("F_F=0.0000") != std::string::npos);
    std::istringstream lines(out.str());
    for (std::string line; std::getline(lines, line);)
      if (line.ends_with(" significant")) CHECK(line.ends_with(" not significant"));
  }
  SUBCASE("a dominant control is significant against everyone") {
    std::vector<std::pair<std::string, std::string>> cells;
    for (int d = 0; d < 20; ++d)
      for (int m = 0; m < 3; ++m) cells.emplace_back("m" + std::to_string(m), "d" + std::to_string(d));
    write_report(dir.file("r.csv"), cells, [](std::size_t i) { return 0.9 - 0.1 * static_cast<double>(i % 3); });
    std::ostringstream out;
    REQUIRE(cmd_compare(dir.file("r.csv"), "m0", {}, out, err) == kExitOk);
    CHECK(out.str().find("not significant") == std::string::npos);
  }
  SUBCASE("missing cells are listed") {
    write_report(dir.file("r.csv"), {{"a", "x"}, {"b", "x"}, {"a", "y"}}, [](std::size_t) { return 0.5; });
    std::ostringstream out, e2;
    CHECK(cmd_compare(dir.file("r.csv"), "a", {}, out, e2) == kExitConfig);
    CHECK(e2.str().find("(b, y)") != std::string::npos);
  }
}

TEST_CASE("annotate prints superclass vectors") {
  testing::TempDir dir;
  testing::spit(dir.file("terms.txt"),
                "atrial fibrillation;right bundle branch block\nsinus rhythm\nnot a diagnosis\n");
  const std::string map = std::string(ECGMATCH_SOURCE_DIR) + "/data/annotation_map.tsv";
  std::ostringstream out, err;
  CHECK(cmd_annotate(dir.file("terms.txt"), map, out, err) == kExitRuntime);
  CHECK(out.str().rfind("1,0,1,0,0\n0,0,0,0,1\nunmappable\nunmappable lines: 1\n  line 3: not a diagnosis\n", 0) == 0);

  testing::spit(dir.file("ok.txt"), "sinus rhythm;st depression\n");
  std::ostringstream ok;
  CHECK(cmd_annotate(dir.file("ok.txt"), map, ok, err) == kExitOk);
  CHECK(ok.str().rfind("0,1,0,0,0\n", 0) == 0);
}

TEST_CASE("synth writes a dataset and a manifest") {
  testing::TempDir dir;
  auto j = tiny_config();
  j["data"]["synthetic"]["n_samples"] = 5000;
  j["data"]["synthetic"].erase("exclusive_class");
  j["data"]["synthetic"]["signal_length"] = 8;
  const auto cfg = write_config(dir, "s.json", j);
  std::ostringstream out, err;
  REQUIRE(cmd_synth(cfg, dir.file("a/d.csv"), out, err) == kExitOk);
  REQUIRE(cmd_synth(cfg, dir.file("b/d.csv"), out, err) == kExitOk);
  CHECK(testing::slurp(dir.file("a/d.csv")) == testing::slurp(dir.file("b/d.csv")));
  const auto m = json::parse(testing::slurp(dir.file("a/d.csv.manifest.json")));
  for (int c = 0; c < 5; ++c)
    CHECK(std::abs(m["empirical_marginals"][c].get<double>() - m["target_marginals"][c].get<double>()) <= 0.02);
  const auto& r = m["empirical_correlation"];
  for (int a = 0; a < 5; ++a) {
    CHECK(r[a][a].get<double>() == doctest::Approx(1.0).epsilon(1e-12));
    for (int b = 0; b < 5; ++b) CHECK(r[a][b].get<double>() == r[b][a].get<double>());
  }
  CHECK(load_dataset(dir.file("a/d.csv"), DataFormat::csv).size() == 5000);

  auto bad = j;
  bad["data"]["synthetic"]["correlation"] = json::array({{1, 0.9, 0.9, 0, 0}, {0.9, 1, -0.9, 0, 0},
                                                         {0.9, -0.9, 1, 0, 0}, {0, 0, 0, 1, 0}, {0, 0, 0, 0, 1}});
  CHECK(cmd_synth(write_config(dir, "bad.json", bad), dir.file("c/d.csv"), out, err) == kExitRuntime);
}

TEST_CASE("command-line binary honours flags and environment") {
  testing::TempDir dir;
  const std::string bin = ECGMATCH_CLI_PATH;
  auto sh = [](const std::string& cmd) {
    const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  CHECK(sh(bin + " run") == kExitConfig);
  CHECK(sh(bin + " frobnicate") == kExitConfig);
  CHECK(sh(bin + " run --config " + dir.file("none.json")) == kExitConfig);
  auto j = tiny_config("env", 1);
  const auto cfg = write_config(dir, "e.json", j);
  CHECK(sh("ECGMATCH_CONFIG=" + cfg + " ECGMATCH_OUT=" + dir.file("envout") + " " + bin + " run") == kExitOk);
  CHECK(std::filesystem::exists(dir.file("envout/metrics.csv")));
}
