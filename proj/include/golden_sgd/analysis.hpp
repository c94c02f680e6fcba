#pragma once

// Post-hoc analyses over grid runs: per-cell aggregation with top-10 and
// Wilcoxon comparisons, best-by-validation-loss selection, convergence
// epochs and noise robustness.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "golden_sgd/bayes_core.hpp"
#include "golden_sgd/checkpoint.hpp"
#include "golden_sgd/experiment.hpp"
#include "golden_sgd/noise.hpp"
#include "golden_sgd/stats.hpp"

namespace golden_sgd {

// ------------------------------------------------------ grid aggregation

struct CellSummary {
  Cell cell;
  std::vector<double> seed_scores;  // ordered by seed index; diverged = 0
  std::size_t diverged = 0;
  double mean_score = 0.0;
};

// One (optimizer, fraction) slice of the grid: an eta x momentum matrix.
struct PanelSummary {
  OptimizerKind optimizer = OptimizerKind::sgd;
  std::size_t fraction_index = 0;
  double fraction = 1.0;
  std::size_t eta_count = 0;
  std::size_t momentum_count = 0;
  std::vector<CellSummary> cells;  // eta-major
  SampleSummary top;               // over cell means
  std::vector<std::size_t> top_cells;
  std::size_t best_cell = 0;
  std::optional<std::size_t> proposed_cell;
  // Wilcoxon p of the proposed cell against each other top cell (paired by
  // seed); empty optional when the test is undefined.
  std::vector<std::pair<std::size_t, std::optional<double>>> wilcoxon;

  const CellSummary& at(std::size_t eta_index, std::size_t momentum_index) const {
    return cells.at(eta_index * momentum_count + momentum_index);
  }
};

struct GridSummary {
  std::vector<PanelSummary> panels;
};

// The theoretically derived pair, matched at three decimals.
inline bool is_proposed_pair(double eta, double momentum) {
  return std::abs(eta - bayes::learning_eta()) < 5e-4 && std::abs(momentum - bayes::momentum_alpha()) < 5e-4;
}

inline GridSummary summarize_grid(const ExperimentConfig& config, std::span<const RunRecord> records,
                                  std::size_t top_k = 10) {
  GridSummary summary;
  for (auto opt : config.optimizers) {
    for (std::size_t fi = 0; fi < config.fractions.size(); ++fi) {
      PanelSummary panel;
      panel.optimizer = opt;
      panel.fraction_index = fi;
      panel.fraction = config.fractions[fi];
      panel.eta_count = config.eta_list.size();
      panel.momentum_count = config.momentum_list.size();
      for (std::size_t ei = 0; ei < panel.eta_count; ++ei) {
        for (std::size_t mi = 0; mi < panel.momentum_count; ++mi) {
          CellSummary cs;
          cs.cell = Cell{opt, config.eta_list[ei], config.momentum_list[mi], config.fractions[fi], ei, mi, fi};
          cs.seed_scores.assign(config.seeds.size(), 0.0);
          std::vector<bool> seen(config.seeds.size(), false);
          for (const auto& r : records) {
            if (r.cell.optimizer == opt && r.cell.fraction_index == fi && r.cell.eta_index == ei &&
                r.cell.momentum_index == mi && r.seed_index < seen.size()) {
              cs.seed_scores[r.seed_index] = r.score();
              seen[r.seed_index] = true;
              if (r.diverged) ++cs.diverged;
            }
          }
          double sum = 0.0;
          for (double s : cs.seed_scores) sum += s;
          cs.mean_score = sum / static_cast<double>(cs.seed_scores.size());
          if (is_proposed_pair(cs.cell.eta, cs.cell.momentum)) panel.proposed_cell = panel.cells.size();
          panel.cells.push_back(std::move(cs));
        }
      }
      std::vector<double> means;
      for (const auto& c : panel.cells) means.push_back(c.mean_score);
      panel.top = top_k_mean(means, std::min(top_k, means.size()));
      panel.top_cells.assign(panel.top.ranking.begin(), panel.top.ranking.begin() + static_cast<std::ptrdiff_t>(panel.top.k));
      panel.best_cell = panel.top_cells.front();
      if (panel.proposed_cell) {
        const auto& proposed = panel.cells[*panel.proposed_cell];
        for (std::size_t idx : panel.top_cells) {
          if (idx == *panel.proposed_cell) continue;
          std::optional<double> p;
          try {
            p = wilcoxon_signed_rank(proposed.seed_scores, panel.cells[idx].seed_scores).p_value;
          } catch (const UndefinedTestError&) {
          }
          panel.wilcoxon.emplace_back(idx, p);
        }
      }
      summary.panels.push_back(std::move(panel));
    }
  }
  return summary;
}

// --------------------------------------------------------------- selection

// Smallest minimum validation loss; ties go to the higher test metric, then
// the lower eta index.
inline const RunRecord& select_best_by_val_loss(std::span<const RunRecord> records) {
  const RunRecord* best = nullptr;
  for (const auto& r : records) {
    if (r.diverged || !std::isfinite(r.min_val_loss)) continue;
    if (best == nullptr) {
      best = &r;
      continue;
    }
    if (r.min_val_loss < best->min_val_loss ||
        (r.min_val_loss == best->min_val_loss &&
         (r.test_metric > best->test_metric ||
          (r.test_metric == best->test_metric && r.cell.eta_index < best->cell.eta_index)))) {
      best = &r;
    }
  }
  if (best == nullptr) throw NoCandidateError("no non-diverged run to select from");
  return *best;
}

// -------------------------------------------------------------- convergence

struct ConvergenceRow {
  std::size_t rank;  // 1-based
  double eta;
  double momentum;
  double min_val_loss;
  std::size_t epoch_of_min;  // 1-based
  double test_metric;
};

// The top_n runs by test metric with the epoch of their minimum validation loss.
inline std::vector<ConvergenceRow> convergence_report(std::span<const RunRecord> records, std::size_t top_n = 5) {
  if (records.size() < top_n) {
    throw InsufficientDataError("convergence_report needs " + std::to_string(top_n) + " records, got " +
                                std::to_string(records.size()));
  }
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return records[a].score() > records[b].score(); });
  std::vector<ConvergenceRow> rows;
  for (std::size_t k = 0; k < top_n; ++k) {
    const auto& r = records[order[k]];
    rows.push_back({k + 1, r.cell.eta, r.cell.momentum, r.min_val_loss, r.epoch_of_min, r.score()});
  }
  return rows;
}

inline double mean_epoch_of_min(std::span<const ConvergenceRow> rows) {
  if (rows.empty()) throw InsufficientDataError("no convergence rows");
  double sum = 0.0;
  for (const auto& r : rows) sum += static_cast<double>(r.epoch_of_min);
  return sum / static_cast<double>(rows.size());
}

// ------------------------------------------------------------------- noise

struct NoiseEvalResult {
  std::vector<double> levels;
  // Per optimizer: mean error (1 - accuracy) per level over the evaluated models.
  std::map<std::string, std::vector<double>> mean_error;
  std::map<std::string, std::vector<std::string>> models;
  std::vector<std::string> skipped;
};

// Top runs (by score, non-diverged) of one optimizer, best first.
inline std::vector<const RunRecord*> top_runs(std::span<const RunRecord> records, OptimizerKind opt, std::size_t k) {
  std::vector<const RunRecord*> out;
  for (const auto& r : records) {
    if (r.cell.optimizer == opt && !r.diverged) out.push_back(&r);
  }
  std::stable_sort(out.begin(), out.end(), [](auto* a, auto* b) { return a->score() > b->score(); });
  if (out.size() > k) out.resize(k);
  return out;
}

// Evaluates the checkpoints of the top-k runs per optimizer on flip-noised
// copies of the test split. Each level is applied once and shared by all
// models. Missing checkpoints are skipped with a warning.
inline NoiseEvalResult noise_eval(std::span<const RunRecord> records, const Dataset& test,
                                  std::span<const double> levels, std::uint64_t seed,
                                  const std::string& checkpoint_dir, std::size_t top_k = 10) {
  NoiseEvalResult result;
  result.levels.assign(levels.begin(), levels.end());
  std::vector<Dataset> noised;
  for (double level : levels) noised.push_back(apply_noise(test, NoiseSpec{NoiseMode::pixel_flip, level, seed}));

  for (auto opt : {OptimizerKind::sgd, OptimizerKind::adam}) {
    const auto runs = top_runs(records, opt, top_k);
    if (runs.empty()) continue;
    std::vector<double> sums(levels.size(), 0.0);
    std::size_t evaluated = 0;
    for (const RunRecord* r : runs) {
      const auto path = std::filesystem::path(checkpoint_dir) / (run_id(*r) + ".gsgd");
      if (!std::filesystem::exists(path)) {
        std::cerr << "warning: missing checkpoint " << path.string() << ", skipping\n";
        result.skipped.push_back(run_id(*r));
        continue;
      }
      Rng unused(0);
      Model model = build_mnist_cnn(unused);
      load_into(model.parameters(), read_checkpoint(path.string()));
      for (std::size_t l = 0; l < levels.size(); ++l) sums[l] += 1.0 - evaluate(model, noised[l]).accuracy;
      result.models[to_string(opt)].push_back(run_id(*r));
      ++evaluated;
    }
    if (evaluated == 0) continue;
    auto& mean = result.mean_error[to_string(opt)];
    for (double s : sums) mean.push_back(s / static_cast<double>(evaluated));
  }
  return result;
}

}  // namespace golden_sgd
