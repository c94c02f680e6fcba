#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "golden_sgd/analysis.hpp"
#include "golden_sgd/experiment.hpp"
#include "golden_sgd/report.hpp"

using namespace golden_sgd;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("golden_sgd_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.optimizers = {OptimizerKind::sgd};
  c.eta_list = {0.001, 0.016, 0.2};
  c.momentum_list = {0.0, 0.874};
  c.fractions = {1.0};
  c.seeds = {0, 1};
  c.epochs = 2;
  c.train_size = 120;
  c.val_size = 60;
  c.test_size = 60;
  c.dataset = "synthetic";
  return c;
}

const DataBundle& tiny_data() {
  static const DataBundle d = load_data(tiny_config());
  return d;
}

RunRecord record(double eta, std::size_t eta_index, double min_loss, double metric, bool diverged = false) {
  RunRecord r;
  r.cell.eta = eta;
  r.cell.eta_index = eta_index;
  r.min_val_loss = min_loss;
  r.val_loss = {min_loss};
  r.train_loss = {min_loss};
  r.epoch_of_min = 1;
  r.test_metric = metric;
  r.diverged = diverged;
  return r;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

std::size_t count_matches(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

// ------------------------------------------------------------------ config

TEST(Config, DefaultsMatchTheGrid) {
  const ExperimentConfig c;
  EXPECT_EQ(c.eta_list.size(), 6u);
  EXPECT_EQ(c.momentum_list.size(), 10u);
  EXPECT_EQ(c.seeds.size(), 5u);
  EXPECT_EQ(c.batch_size, 64u);
  EXPECT_EQ(c.fractions, (std::vector<double>{1.0, 0.75, 0.5, 0.25}));
  EXPECT_EQ(enumerate_runs(c).size(), 6u * 10 * 5 * 4);
  ExperimentConfig one_fraction = c;
  one_fraction.fractions = {1.0};
  EXPECT_EQ(enumerate_runs(one_fraction).size(), 300u);
}

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c = tiny_config();
  c.optimizers = {OptimizerKind::sgd, OptimizerKind::adam};
  const auto back = config_from_json(nlohmann::json::parse(to_json(c).dump()));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
  const auto single = config_from_json(nlohmann::json::parse(R"({"optimizer": "adam"})"));
  EXPECT_EQ(single.optimizers, (std::vector<OptimizerKind>{OptimizerKind::adam}));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"learning_rate": 0.1})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"eta_list": []})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"momentum_list": [1.0]})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"optimizer": "rmsprop"})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"epochs": "ten"})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"([1, 2])")), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), IoError);
}

TEST(Data, SyntheticFallbackWithNotice) {
  const auto& d = tiny_data();
  EXPECT_EQ(d.train.size(), 120u);
  EXPECT_EQ(d.val.size(), 60u);
  EXPECT_EQ(d.test.size(), 60u);
  EXPECT_EQ(d.test.split, Split::test);
  EXPECT_NE(d.notice.find("synthetic"), std::string::npos);
}

TEST(Data, IdxDirectoryIsUsedWhenPresent) {
  const auto dir = temp_dir("idx_data");
  const Dataset train = synthetic_digits(200, 1), test = synthetic_digits(80, 2, Split::test);
  write_idx(train, (dir / "train-images-idx3-ubyte").string(), (dir / "train-labels-idx1-ubyte").string());
  write_idx(test, (dir / "t10k-images-idx3-ubyte").string(), (dir / "t10k-labels-idx1-ubyte").string());
  ExperimentConfig c = tiny_config();
  c.dataset = "idx";
  c.data_dir = dir.string();
  const auto d = load_data(c);
  EXPECT_EQ(d.train.provenance, Provenance::idx_file);
  EXPECT_EQ(d.train.size() + d.val.size(), 180u);
  EXPECT_EQ(d.test.size(), 60u);
  c.data_dir = (dir / "nothing").string();
  EXPECT_THROW(load_data(c), IoError);
}

// -------------------------------------------------------------------- runs

TEST(RunCell, DeterministicAndConsistent) {
  const auto c = tiny_config();
  const Cell cell{OptimizerKind::sgd, 0.016, 0.874, 1.0, 1, 1, 0};
  const RunRecord a = run_cell(c, cell, 1, tiny_data());
  const RunRecord b = run_cell(c, cell, 1, tiny_data());
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  ASSERT_EQ(a.val_loss.size(), 2u);
  EXPECT_EQ(a.min_val_loss, *std::min_element(a.val_loss.begin(), a.val_loss.end()));
  EXPECT_GE(a.epoch_of_min, 1u);
  EXPECT_LE(a.epoch_of_min, 2u);
  EXPECT_EQ(a.val_loss[a.epoch_of_min - 1], a.min_val_loss);
  EXPECT_EQ(a.seed, 1u);
}

TEST(RunCell, SeedValueNotIndexDrivesTheRun) {
  auto c = tiny_config();
  const Cell cell{OptimizerKind::sgd, 0.016, 0.0, 1.0, 1, 0, 0};
  const RunRecord in_grid = run_cell(c, cell, 1, tiny_data());
  c.seeds = {1};
  const RunRecord alone = run_cell(c, cell, 0, tiny_data());
  EXPECT_EQ(in_grid.val_loss, alone.val_loss);
  EXPECT_EQ(in_grid.test_metric, alone.test_metric);
}

TEST(RunCell, DivergedRunIsRetained) {
  auto c = tiny_config();
  const Cell cell{OptimizerKind::sgd, 1e5, 0.925, 1.0, 0, 0, 0};
  const RunRecord r = run_cell(c, cell, 0, tiny_data());
  EXPECT_TRUE(r.diverged);
  EXPECT_EQ(r.score(), 0.0);
  EXPECT_EQ(r.test_metric, 0.0);
  EXPECT_LE(r.last_finite_epoch, c.epochs);
  EXPECT_EQ(r.val_loss.size(), r.last_finite_epoch);
}

TEST(RunCell, AdamUsesMomentumAsBeta1) {
  const auto c = tiny_config();
  const Cell a{OptimizerKind::adam, 0.001, 0.0, 1.0, 0, 0, 0};
  const Cell b{OptimizerKind::adam, 0.001, 0.874, 1.0, 0, 0, 0};
  const auto ra = run_cell(c, a, 0, tiny_data()), rb = run_cell(c, b, 0, tiny_data());
  EXPECT_NE(ra.val_loss, rb.val_loss);
}

TEST(RunGrid, CountsOrderAndWorkerInvariance) {
  const auto c = tiny_config();
  const auto one = run_grid(c, tiny_data(), GridOptions{1, "", false});
  const auto four = run_grid(c, tiny_data(), GridOptions{4, "", false});
  ASSERT_EQ(one.size(), 12u);
  EXPECT_EQ(runs_jsonl(one), runs_jsonl(four));
  // (eta, momentum, seed) nesting
  EXPECT_EQ(one[0].cell.eta_index, 0u);
  EXPECT_EQ(one[1].seed_index, 1u);
  EXPECT_EQ(one[2].cell.momentum_index, 1u);
  EXPECT_EQ(one[4].cell.eta_index, 1u);
  for (const auto& r : one) {
    if (!r.diverged) {
      EXPECT_EQ(r.min_val_loss, *std::min_element(r.val_loss.begin(), r.val_loss.end()));
    }
  }
}

TEST(RunGrid, FailuresAreRecorded) {
  auto c = tiny_config();
  c.fractions = {0.05};  // 12 per class * 0.05 -> empty classes
  const auto recs = run_grid(c, tiny_data());
  ASSERT_EQ(recs.size(), 12u);
  for (const auto& r : recs) {
    EXPECT_TRUE(r.diverged);
    EXPECT_FALSE(r.error.empty());
  }
}

// --------------------------------------------------------------- analysis

TEST(SelectBest, Rules) {
  const std::vector<RunRecord> single{record(0.1, 0, 0.7, 0.5)};
  EXPECT_EQ(&select_best_by_val_loss(single), &single[0]);
  const std::vector<RunRecord> two{record(0.1, 0, 0.5, 0.9), record(0.2, 1, 0.4, 0.8)};
  EXPECT_EQ(select_best_by_val_loss(two).cell.eta, 0.2);
  const std::vector<RunRecord> tie{record(0.1, 0, 0.4, 0.91), record(0.2, 1, 0.4, 0.93)};
  EXPECT_EQ(select_best_by_val_loss(tie).test_metric, 0.93);
  const std::vector<RunRecord> full_tie{record(0.2, 1, 0.4, 0.9), record(0.1, 0, 0.4, 0.9)};
  EXPECT_EQ(select_best_by_val_loss(full_tie).cell.eta_index, 0u);
  const std::vector<RunRecord> diverged{record(0.1, 0, 0.1, 0.99, true)};
  EXPECT_THROW(select_best_by_val_loss(diverged), NoCandidateError);
}

TEST(Convergence, MonotoneAndVShapedCurves) {
  std::vector<RunRecord> recs;
  for (int k = 0; k < 6; ++k) {
    RunRecord r = record(0.01 * (k + 1), k, 0, 0.5 + 0.01 * k);
    r.val_loss = {1.0, 0.8, 0.6, 0.5, 0.45};
    r.min_val_loss = 0.45;
    r.epoch_of_min = 5;
    recs.push_back(r);
  }
  auto rows = convergence_report(recs, 5);
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0].rank, 1u);
  EXPECT_DOUBLE_EQ(rows[0].eta, 0.06);  // highest metric first
  for (const auto& row : rows) EXPECT_EQ(row.epoch_of_min, 5u);
  EXPECT_DOUBLE_EQ(mean_epoch_of_min(rows), 5.0);

  // V-shaped curve, minimum at epoch 3, through a real run record.
  RunRecord v = record(0.5, 0, 0, 0.99);
  v.val_loss = {1.0, 0.7, 0.3, 0.6, 0.9};
  v.min_val_loss = 0.3;
  v.epoch_of_min = 3;
  recs.push_back(v);
  rows = convergence_report(recs, 5);
  EXPECT_EQ(rows[0].epoch_of_min, 3u);
  EXPECT_THROW(convergence_report(std::vector<RunRecord>(3), 5), InsufficientDataError);
}

TEST(Summary, CellMeansTopAndBest) {
  auto c = tiny_config();
  c.eta_list = {0.001, 0.016, 0.1, 0.2};
  c.momentum_list = {0.0, 0.5, 0.874};
  c.seeds = {0, 1, 2, 3, 4, 5};
  std::vector<RunRecord> recs;
  Rng rng(1);
  for (const auto& [cell, si] : enumerate_runs(c)) {
    RunRecord r;
    r.cell = cell;
    r.seed_index = si;
    r.seed = c.seeds[si];
    r.test_metric = rng.uniform(0.5, 1.0);
    r.diverged = si == 5 && cell.eta_index == 3;
    recs.push_back(r);
  }
  const auto s = summarize_grid(c, recs);
  ASSERT_EQ(s.panels.size(), 1u);
  const auto& p = s.panels[0];
  ASSERT_EQ(p.cells.size(), 12u);
  for (const auto& cs : p.cells) {
    double sum = 0;
    for (const auto& r : recs) {
      if (r.cell.eta_index == cs.cell.eta_index && r.cell.momentum_index == cs.cell.momentum_index) sum += r.score();
    }
    EXPECT_NEAR(cs.mean_score, sum / 6.0, 1e-12);
  }
  EXPECT_EQ(p.top_cells.size(), 10u);
  EXPECT_EQ(p.best_cell, p.top_cells.front());
  for (const auto& cs : p.cells) EXPECT_LE(cs.mean_score, p.cells[p.best_cell].mean_score);
  ASSERT_TRUE(p.proposed_cell.has_value());
  EXPECT_EQ(p.cells[*p.proposed_cell].cell.eta, 0.016);
  EXPECT_EQ(p.at(3, 0).diverged, 1u);
  const bool proposed_in_top =
      std::find(p.top_cells.begin(), p.top_cells.end(), *p.proposed_cell) != p.top_cells.end();
  EXPECT_EQ(p.wilcoxon.size(), proposed_in_top ? 9u : 10u);
}

// ----------------------------------------------------------------- reports

TEST(Reports, FilesCountsAndRoundTrip) {
  const auto c = tiny_config();
  const auto recs = run_grid(c, tiny_data(), GridOptions{2, "", false});
  const auto dir = temp_dir("reports");
  emit_reports(recs, summarize_grid(c, recs), dir);

  const auto jsonl = lines_of(read_text(dir / "runs.jsonl"));
  EXPECT_EQ(jsonl.size(), 12u);
  const auto csv = lines_of(read_text(dir / "grid.csv"));
  ASSERT_EQ(csv.size(), 13u);
  EXPECT_EQ(csv[0], "optimizer,eta,momentum,fraction,seed,min_val_loss,epoch_of_min,test_metric,diverged");
  for (std::size_t i = 0; i < recs.size(); ++i) {
    std::vector<std::string> cols;
    std::stringstream ss(csv[i + 1]);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    ASSERT_EQ(cols.size(), 9u);
    EXPECT_EQ(std::stod(cols[1]), recs[i].cell.eta);
    EXPECT_EQ(std::stod(cols[7]), recs[i].test_metric);
    if (!recs[i].diverged) {
      EXPECT_EQ(std::stod(cols[5]), recs[i].min_val_loss);
    }
  }

  const auto back = read_runs_jsonl((dir / "runs.jsonl").string());
  EXPECT_EQ(runs_jsonl(back), runs_jsonl(recs));
  EXPECT_TRUE(fs::exists(dir / "summary.json"));
  EXPECT_EQ(lines_of(read_text(dir / "timings.csv")).size(), 13u);
  EXPECT_EQ(read_text(dir / "runs.jsonl").find("wall"), std::string::npos);
}

TEST(Reports, HeatmapMarksTenGreenOneRed) {
  ExperimentConfig c;
  c.fractions = {1.0};
  c.seeds = {0};
  std::vector<RunRecord> recs;
  Rng rng(2);
  for (const auto& [cell, si] : enumerate_runs(c)) {
    RunRecord r;
    r.cell = cell;
    r.seed_index = si;
    r.test_metric = rng.uniform();
    recs.push_back(r);
  }
  const auto svg = render_heatmap_svg(summarize_grid(c, recs));
  EXPECT_EQ(count_matches(svg, "class=\"top10\""), 10u);
  EXPECT_EQ(count_matches(svg, "class=\"best\""), 1u);
  EXPECT_EQ(count_matches(svg, "class=\"cell\""), 60u);
  EXPECT_NE(svg.find("<svg"), std::string::npos);
}

TEST(Reports, UnwritableDirectory) {
  const auto dir = temp_dir("blocked");
  write_text(dir / "file", "x");
  EXPECT_THROW(emit_reports({}, GridSummary{}, dir / "file" / "sub"), IoError);
}

TEST(Reports, NoiseFixtureManifest) {
  const auto dir = temp_dir("noise_fixture");
  Dataset test = synthetic_digits(20, 3, Split::test);
  const NoiseSpec spec{NoiseMode::pixel_flip, 5.0, 9};
  const Dataset noised = apply_noise(test, spec);
  write_noise_fixture(noised, spec, dir);
  const auto manifest = nlohmann::json::parse(read_text(dir / "noise_5.json"));
  EXPECT_EQ(manifest["mode"], "pixel-flip");
  EXPECT_EQ(manifest["percent"], 5.0);
  EXPECT_EQ(manifest["seed"], 9);
  const Dataset back = load_idx((dir / "noise_5-images-idx3-ubyte").string(),
                                (dir / "noise_5-labels-idx1-ubyte").string(), Split::test);
  EXPECT_EQ(back.pixels, noised.pixels);
}

// ------------------------------------------------------------------- noise

TEST(NoiseEval, ZeroLevelMatchesCleanAndMissingSkipped) {
  auto c = tiny_config();
  c.eta_list = {0.016};
  c.momentum_list = {0.874};
  const auto dir = temp_dir("noise_eval");
  const auto recs = run_grid(c, tiny_data(), GridOptions{1, dir.string(), false});
  fs::remove(dir / (run_id(recs[1]) + ".gsgd"));
  const double levels[] = {0.0, 50.0};
  const auto res = noise_eval(recs, tiny_data().test, levels, 1, dir.string());
  ASSERT_EQ(res.skipped.size(), 1u);
  ASSERT_EQ(res.models.at("sgd").size(), 1u);
  Rng unused(0);
  Model m = build_mnist_cnn(unused);
  load_into(m.parameters(), read_checkpoint((dir / (run_id(recs[0]) + ".gsgd")).string()));
  EXPECT_EQ(res.mean_error.at("sgd")[0], 1.0 - evaluate(m, tiny_data().test).accuracy);
  EXPECT_EQ(res.mean_error.at("sgd")[0], 1.0 - recs[0].test_metric);
}
