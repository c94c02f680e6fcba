// golden-sgd: constants, single runs, grid search and reports.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "golden_sgd/analysis.hpp"
#include "golden_sgd/bayes_core.hpp"
#include "golden_sgd/experiment.hpp"
#include "golden_sgd/report.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace golden_sgd;

namespace {

ExperimentConfig load_run_config(const fs::path& runs) {
  const auto path = runs / "config.json";
  if (!fs::exists(path)) throw IoError("no config.json in " + runs.string());
  return load_config(path.string());
}

int cmd_constants() {
  const auto c = bayes::derived_constants();
  std::printf("%-8s %.17g\n", "golden", c.golden);
  std::printf("%-8s %.17g\n", "alpha", c.alpha);
  std::printf("%-8s %.17g\n", "eta", c.eta);
  nlohmann::ordered_json j;
  j["golden"] = c.golden;
  j["alpha"] = c.alpha;
  j["eta"] = c.eta;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed, const std::string& checkpoint_dir) {
  ExperimentConfig config = load_config(config_path);
  if (seed) config.seeds = {*seed};
  const auto data = load_data(config);
  std::cerr << data.notice << "\n";
  const Cell cell{config.optimizers.front(), config.eta_list.front(), config.momentum_list.front(),
                  config.fractions.front(), 0, 0, 0};
  if (!checkpoint_dir.empty()) fs::create_directories(checkpoint_dir);
  const RunRecord r = run_cell(config, cell, 0, data, RunOptions{checkpoint_dir});
  std::printf("%s optimizer=%s eta=%g momentum=%g fraction=%g seed=%llu\n", run_id(r).c_str(),
              to_string(cell.optimizer), cell.eta, cell.momentum, cell.fraction,
              static_cast<unsigned long long>(r.seed));
  std::printf("epoch  train_loss  val_loss (sample mean)\n");
  for (std::size_t e = 0; e < r.val_loss.size(); ++e) {
    std::printf("%5zu  %10.6f  %10.6f\n", e + 1, r.train_loss[e], r.val_loss[e]);
  }
  if (r.diverged) std::printf("diverged after epoch %zu\n", r.last_finite_epoch);
  std::printf("min val loss %.6f at epoch %zu, test accuracy %.4f (%.1fs)\n", r.min_val_loss, r.epoch_of_min,
              r.test_metric, r.wall_seconds);
  std::cout << to_json(r).dump() << "\n";
  return 0;
}

int cmd_grid(const std::string& config_path, const fs::path& out, std::size_t workers) {
  const ExperimentConfig config = load_config(config_path);
  fs::create_directories(out / "checkpoints");
  write_text(out / "config.json", to_json(config).dump(2) + "\n");
  const auto data = load_data(config);
  std::cerr << data.notice << "\n";
  const auto records = run_grid(config, data, GridOptions{workers, (out / "checkpoints").string(), true});
  const auto summary = summarize_grid(config, records);
  emit_reports(records, summary, out);
  std::size_t diverged = 0;
  for (const auto& r : records) diverged += r.diverged ? 1 : 0;
  std::printf("%zu runs (%zu diverged) written to %s\n", records.size(), diverged, out.string().c_str());
  return 0;
}

void print_panel(const PanelSummary& p) {
  std::printf("\n[%s, fraction %g] top-%zu mean %.4f std %.4f\n", to_string(p.optimizer), p.fraction, p.top.k,
              p.top.mean, p.top.stddev);
  std::printf("  rank  eta      momentum  mean_test  diverged\n");
  for (std::size_t k = 0; k < p.top_cells.size(); ++k) {
    const auto& c = p.cells[p.top_cells[k]];
    std::printf("  %4zu  %-7g  %-8g  %.4f     %zu%s\n", k + 1, c.cell.eta, c.cell.momentum, c.mean_score,
                c.diverged, p.top_cells[k] == p.best_cell ? "  best" : "");
  }
  if (p.proposed_cell) {
    const auto& c = p.cells[*p.proposed_cell];
    std::printf("  derived pair (eta %g, momentum %g): mean %.4f\n", c.cell.eta, c.cell.momentum, c.mean_score);
    for (const auto& [idx, pv] : p.wilcoxon) {
      const auto& o = p.cells[idx];
      if (pv) {
        std::printf("    vs (%g, %g): Wilcoxon p = %.4f\n", o.cell.eta, o.cell.momentum, *pv);
      } else {
        std::printf("    vs (%g, %g): Wilcoxon undefined (identical scores)\n", o.cell.eta, o.cell.momentum);
      }
    }
  }
}

int cmd_report(const fs::path& runs) {
  const ExperimentConfig config = load_run_config(runs);
  const auto records = read_runs_jsonl((runs / "runs.jsonl").string());
  const auto summary = summarize_grid(config, records);
  std::printf("%zu runs; validation loss is the sample mean over the full validation split\n", records.size());
  for (const auto& p : summary.panels) print_panel(p);

  std::printf("\nconvergence (top 5 runs by test accuracy)\n");
  std::vector<std::pair<std::string, double>> means;
  for (auto opt : config.optimizers) {
    std::vector<RunRecord> subset;
    for (const auto& r : records) {
      if (r.cell.optimizer == opt) subset.push_back(r);
    }
    try {
      const auto best = select_best_by_val_loss(subset);
      std::printf("%s best by val loss: eta %g momentum %g fraction %g seed %llu, min val loss %.6f at epoch %zu, "
                  "test %.4f\n",
                  to_string(opt), best.cell.eta, best.cell.momentum, best.cell.fraction,
                  static_cast<unsigned long long>(best.seed), best.min_val_loss, best.epoch_of_min, best.test_metric);
    } catch (const NoCandidateError& e) {
      std::printf("%s: %s\n", to_string(opt), e.what());
    }
    try {
      const auto rows = convergence_report(subset, 5);
      std::printf("  rank  eta      momentum  min_val_loss  epoch_of_min  test\n");
      for (const auto& row : rows) {
        std::printf("  %4zu  %-7g  %-8g  %-12.6f  %-12zu  %.4f\n", row.rank, row.eta, row.momentum, row.min_val_loss,
                    row.epoch_of_min, row.test_metric);
      }
      means.emplace_back(to_string(opt), mean_epoch_of_min(rows));
    } catch (const InsufficientDataError& e) {
      std::printf("%s: %s\n", to_string(opt), e.what());
    }
  }
  for (const auto& [name, m] : means) std::printf("%s mean epoch of min val loss: %.2f\n", name.c_str(), m);
  return 0;
}

std::vector<double> parse_levels(const std::string& text) {
  std::vector<double> levels;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      levels.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad noise level '" + item + "'");
    }
  }
  if (levels.empty()) throw ConfigError("no noise levels given");
  return levels;
}

int cmd_noise_eval(const fs::path& runs, const std::string& levels_text, std::uint64_t seed) {
  const ExperimentConfig config = load_run_config(runs);
  const auto records = read_runs_jsonl((runs / "runs.jsonl").string());
  const auto levels = parse_levels(levels_text);
  const auto data = load_data(config);
  std::cerr << data.notice << "\n";
  const auto result = noise_eval(records, data.test, levels, seed, (runs / "checkpoints").string());
  for (double level : levels) {
    const NoiseSpec spec{NoiseMode::pixel_flip, level, seed};
    write_noise_fixture(apply_noise(data.test, spec), spec, runs / "noise");
  }

  std::printf("pixel-flip noise on the test split (pixels chosen independently per image)\n");
  std::printf("%-8s", "level");
  for (const auto& [opt, _] : result.mean_error) std::printf("  %-10s", opt.c_str());
  std::printf("\n");
  for (std::size_t l = 0; l < levels.size(); ++l) {
    std::printf("%-8g", levels[l]);
    for (const auto& [_, errs] : result.mean_error) std::printf("  %-10.4f", errs[l]);
    std::printf("\n");
  }
  for (const auto& [opt, models] : result.models) std::printf("%s: %zu models evaluated\n", opt.c_str(), models.size());
  if (!result.skipped.empty()) std::printf("%zu models skipped (missing checkpoints)\n", result.skipped.size());

  nlohmann::ordered_json j;
  j["mode"] = to_string(NoiseMode::pixel_flip);
  j["selection"] = "independent per image";
  j["seed"] = seed;
  j["levels"] = levels;
  j["mean_error"] = result.mean_error;
  j["models"] = result.models;
  j["skipped"] = result.skipped;
  write_text(runs / "noise.json", j.dump(2) + "\n");
  return 0;
}

int cmd_plot(const fs::path& runs, const fs::path& out) {
  const ExperimentConfig config = load_run_config(runs);
  const auto records = read_runs_jsonl((runs / "runs.jsonl").string());
  write_text(out, render_heatmap_svg(summarize_grid(config, records)));
  std::printf("wrote %s\n", out.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Golden-ratio SGD experiments"};
  app.require_subcommand(1);

  auto* constants = app.add_subcommand("constants", "Print the derived golden, alpha and eta constants");

  auto* train = app.add_subcommand("train", "Train the first grid cell of a config");
  std::string train_config, train_ckpt;
  std::optional<std::uint64_t> train_seed;
  train->add_option("--config", train_config, "Config JSON")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", train_seed, "Seed value (default: first configured seed)");
  train->add_option("--checkpoint-dir", train_ckpt, "Write the best checkpoint here");

  auto* grid = app.add_subcommand("grid", "Run the full grid and write reports");
  std::string grid_config, grid_out;
  std::size_t workers = 1;
  grid->add_option("--config", grid_config, "Config JSON")->required()->check(CLI::ExistingFile);
  grid->add_option("--out", grid_out, "Output directory")->required();
  grid->add_option("--workers", workers, "Parallel workers")->check(CLI::PositiveNumber);

  auto* noise = app.add_subcommand("noise-eval", "Evaluate top checkpoints under flip noise");
  std::string noise_runs, levels = "0,5,10";
  std::uint64_t noise_seed = 0;
  noise->add_option("--runs", noise_runs, "Grid output directory")->required()->check(CLI::ExistingDirectory);
  noise->add_option("--levels", levels, "Comma-separated percentages");
  noise->add_option("--seed", noise_seed, "Noise seed");

  auto* report = app.add_subcommand("report", "Summarize a grid output directory");
  std::string report_runs;
  report->add_option("--runs", report_runs, "Grid output directory")->required()->check(CLI::ExistingDirectory);

  auto* plot = app.add_subcommand("plot", "Render the heatmap SVG");
  std::string plot_runs, plot_out;
  plot->add_option("--runs", plot_runs, "Grid output directory")->required()->check(CLI::ExistingDirectory);
  plot->add_option("--out", plot_out, "SVG path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*constants) return cmd_constants();
    if (*train) return cmd_train(train_config, train_seed, train_ckpt);
    if (*grid) return cmd_grid(grid_config, grid_out, workers);
    if (*noise) return cmd_noise_eval(noise_runs, levels, noise_seed);
    if (*report) return cmd_report(report_runs);
    if (*plot) return cmd_plot(plot_runs, plot_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
