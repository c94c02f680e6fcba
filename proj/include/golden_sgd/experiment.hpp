#pragma once

// Grid-search experiments: configuration, data preparation, single training
// runs and the parallel grid runner.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "golden_sgd/checkpoint.hpp"
#include "golden_sgd/dataset.hpp"
#include "golden_sgd/errors.hpp"
#include "golden_sgd/model.hpp"
#include "golden_sgd/optim.hpp"
#include "golden_sgd/rng.hpp"
#include "json.hpp"

namespace golden_sgd {

enum class OptimizerKind { sgd, adam };

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

struct ExperimentConfig {
  std::vector<OptimizerKind> optimizers{OptimizerKind::sgd};
  std::vector<double> eta_list{0.0001, 0.001, 0.01, 0.016, 0.1, 0.2};
  std::vector<double> momentum_list{0.0, 0.2, 0.4, 0.6, 0.8, 0.825, 0.85, 0.874, 0.9, 0.925};
  std::vector<double> fractions{1.0, 0.75, 0.5, 0.25};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  std::string dataset = "auto";  // auto | idx | synthetic
  std::string data_dir;          // overrides GOLDEN_SGD_DATA when set
  std::size_t train_size = 2000;
  std::size_t val_size = 500;
  std::size_t test_size = 1000;
  std::vector<double> noise_levels{0.0, 5.0, 10.0};
  std::uint64_t master_seed = 0;

  void validate() const {
    auto nonempty = [](bool empty, const char* what) {
      if (empty) throw ConfigError(std::string(what) + " must not be empty");
    };
    nonempty(optimizers.empty(), "optimizer");
    nonempty(eta_list.empty(), "eta_list");
    nonempty(momentum_list.empty(), "momentum_list");
    nonempty(fractions.empty(), "fractions");
    nonempty(seeds.empty(), "seeds");
    for (double e : eta_list) {
      if (!(e > 0.0)) throw ConfigError("eta values must be > 0");
    }
    for (double m : momentum_list) {
      if (!(m >= 0.0 && m < 1.0)) throw ConfigError("momentum values must lie in [0,1)");
    }
    for (double f : fractions) {
      if (!(f > 0.0 && f <= 1.0)) throw ConfigError("fractions must lie in (0,1]");
    }
    for (double p : noise_levels) {
      if (!(p >= 0.0 && p <= 100.0)) throw ConfigError("noise levels must lie in [0,100]");
    }
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (train_size < kNumClasses || val_size == 0 || test_size == 0) throw ConfigError("split sizes too small");
    if (dataset != "auto" && dataset != "idx" && dataset != "synthetic") {
      throw ConfigError("dataset must be auto, idx or synthetic");
    }
  }
};

inline nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  std::vector<std::string> opts;
  for (auto o : c.optimizers) opts.push_back(to_string(o));
  if (opts.size() == 1) {
    j["optimizer"] = opts.front();
  } else {
    j["optimizer"] = opts;
  }
  j["eta_list"] = c.eta_list;
  j["momentum_list"] = c.momentum_list;
  j["fractions"] = c.fractions;
  j["seeds"] = c.seeds;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["dataset"] = c.dataset;
  if (!c.data_dir.empty()) j["data_dir"] = c.data_dir;
  j["train_size"] = c.train_size;
  j["val_size"] = c.val_size;
  j["test_size"] = c.test_size;
  j["noise_levels"] = c.noise_levels;
  j["master_seed"] = c.master_seed;
  return j;
}

// Missing keys keep their defaults; unknown keys are rejected.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "optimizer") {
        c.optimizers.clear();
        if (value.is_string()) {
          c.optimizers.push_back(optimizer_from_string(value.get<std::string>()));
        } else {
          for (const auto& v : value) c.optimizers.push_back(optimizer_from_string(v.get<std::string>()));
        }
      } else if (key == "eta_list") {
        c.eta_list = value.get<std::vector<double>>();
      } else if (key == "momentum_list") {
        c.momentum_list = value.get<std::vector<double>>();
      } else if (key == "fractions") {
        c.fractions = value.get<std::vector<double>>();
      } else if (key == "seeds") {
        c.seeds = value.get<std::vector<std::uint64_t>>();
      } else if (key == "epochs") {
        c.epochs = value.get<std::size_t>();
      } else if (key == "batch_size") {
        c.batch_size = value.get<std::size_t>();
      } else if (key == "dataset") {
        c.dataset = value.get<std::string>();
      } else if (key == "data_dir") {
        c.data_dir = value.get<std::string>();
      } else if (key == "train_size") {
        c.train_size = value.get<std::size_t>();
      } else if (key == "val_size") {
        c.val_size = value.get<std::size_t>();
      } else if (key == "test_size") {
        c.test_size = value.get<std::size_t>();
      } else if (key == "noise_levels") {
        c.noise_levels = value.get<std::vector<double>>();
      } else if (key == "master_seed") {
        c.master_seed = value.get<std::uint64_t>();
      } else {
        throw ConfigError("unknown config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

// ------------------------------------------------------------------ data

struct DataBundle {
  Dataset train;
  Dataset val;
  Dataset test;
  std::string notice;
};

namespace detail {

inline std::string resolve_data_dir(const ExperimentConfig& c) {
  if (!c.data_dir.empty()) return c.data_dir;
  if (const char* env = std::getenv("GOLDEN_SGD_DATA"); env && *env) return env;
  return {};
}

inline bool idx_files_present(const std::filesystem::path& dir) {
  for (const char* f : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
                        "t10k-labels-idx1-ubyte"}) {
    if (!std::filesystem::exists(dir / f)) return false;
  }
  return true;
}

}  // namespace detail

// Fixed train/val/test splits, determined by the master seed alone.
inline DataBundle load_data(const ExperimentConfig& c) {
  DataBundle d;
  const std::string dir = detail::resolve_data_dir(c);
  const bool have_idx = !dir.empty() && detail::idx_files_present(dir);
  if (c.dataset == "idx" && !have_idx) {
    throw IoError("dataset=idx but no MNIST IDX files found (set GOLDEN_SGD_DATA or data_dir)");
  }
  const std::size_t pool_size = c.train_size + c.val_size;
  Dataset pool;
  if (have_idx && c.dataset != "synthetic") {
    const std::filesystem::path p(dir);
    Dataset full = load_idx((p / "train-images-idx3-ubyte").string(), (p / "train-labels-idx1-ubyte").string());
    Dataset full_test = load_idx((p / "t10k-images-idx3-ubyte").string(), (p / "t10k-labels-idx1-ubyte").string(),
                                 Split::test);
    if (pool_size > full.size() || c.test_size > full_test.size()) {
      throw ConfigError("requested split sizes exceed the IDX dataset");
    }
    pool = pool_size == full.size() ? std::move(full)
                                    : stratified_split(full, pool_size, hash_keys(c.master_seed, {0x706f6f6c})).first;
    d.test = c.test_size == full_test.size()
                 ? std::move(full_test)
                 : stratified_split(full_test, c.test_size, hash_keys(c.master_seed, {0x74657374})).first;
    d.notice = "data: MNIST IDX files from " + dir;
  } else {
    pool = synthetic_digits(pool_size, hash_keys(c.master_seed, {0x747261696e}));
    d.test = synthetic_digits(c.test_size, hash_keys(c.master_seed, {0x74657374}), Split::test);
    d.notice = dir.empty() ? "data: GOLDEN_SGD_DATA not set, using synthetic digits"
                           : "data: synthetic digits (no IDX files in " + dir + ")";
    if (c.dataset == "synthetic") d.notice = "data: synthetic digits";
  }
  auto [train, val] = stratified_split(pool, c.train_size, hash_keys(c.master_seed, {0x76616c}));
  d.train = std::move(train);
  d.val = std::move(val);
  d.train.split = Split::train;
  d.val.split = Split::val;
  d.test.split = Split::test;
  return d;
}

// ------------------------------------------------------------ evaluation

struct Evaluation {
  double mean_loss;
  double accuracy;
};

// Sample-mean cross-entropy and accuracy over a whole split.
inline Evaluation evaluate(const Model& model, const Dataset& ds, std::size_t chunk = 250) {
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    const std::size_t end = std::min(ds.size(), start + chunk);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    const Tensor logits = model.predict(normalize_to_pm1(ds, idx));
    const auto labels = labels_of(ds, idx);
    for (double l : cross_entropy_per_sample(logits, labels)) loss_sum += l;
    const std::size_t classes = logits.dim(1);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto row = logits.data().subspan(b * classes, classes);
      const auto pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      if (pred == labels[b]) ++correct;
    }
  }
  const auto n = static_cast<double>(ds.size());
  return {loss_sum / n, static_cast<double>(correct) / n};
}

// ------------------------------------------------------------------ runs

struct Cell {
  OptimizerKind optimizer = OptimizerKind::sgd;
  double eta = 0.0;
  double momentum = 0.0;
  double fraction = 1.0;
  std::size_t eta_index = 0;
  std::size_t momentum_index = 0;
  std::size_t fraction_index = 0;
};

struct RunRecord {
  Cell cell;
  std::uint64_t seed = 0;
  std::size_t seed_index = 0;
  std::vector<double> train_loss;  // per completed epoch
  std::vector<double> val_loss;    // per completed epoch, sample mean
  double min_val_loss = std::numeric_limits<double>::quiet_NaN();
  std::size_t epoch_of_min = 0;  // 1-based; 0 when no epoch completed
  double test_metric = 0.0;      // test accuracy at the min-validation-loss checkpoint
  bool diverged = false;
  std::size_t last_finite_epoch = 0;
  std::string error;
  double wall_seconds = 0.0;

  // Ranking score: diverged runs count as 0.
  double score() const noexcept { return diverged ? 0.0 : test_metric; }
};

inline std::string run_id(const RunRecord& r) {
  return std::string(to_string(r.cell.optimizer)) + "_e" + std::to_string(r.cell.eta_index) + "_m" +
         std::to_string(r.cell.momentum_index) + "_f" + std::to_string(r.cell.fraction_index) + "_s" +
         std::to_string(r.seed);
}

// Per-run stream: depends only on the master seed and the cell's grid
// coordinates, so growing the grid never perturbs existing runs.
inline std::uint64_t run_seed(std::uint64_t master_seed, const Cell& cell, std::uint64_t seed) {
  return hash_keys(master_seed, {cell.eta_index, cell.momentum_index, cell.fraction_index, seed});
}

struct RunOptions {
  std::string checkpoint_dir;  // empty: no checkpoint written
};

inline RunRecord run_cell(const ExperimentConfig& config, const Cell& cell, std::size_t seed_index,
                          const DataBundle& data, const RunOptions& options = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.cell = cell;
  rec.seed_index = seed_index;
  rec.seed = config.seeds.at(seed_index);

  const Dataset train = subsample(data.train, cell.fraction,
                                  hash_keys(config.master_seed, {0x73756273, cell.fraction_index, rec.seed}));
  const Rng root(run_seed(config.master_seed, cell, rec.seed));
  Rng init_rng = root.derive({1});
  Rng order_rng = root.derive({2});
  Rng dropout_rng = root.derive({3});
  Model model = build_mnist_cnn(init_rng);
  auto& params = model.parameters();

  std::variant<SgdState, AdamState> opt;
  if (cell.optimizer == OptimizerKind::sgd) {
    opt = make_sgd(params, cell.eta, cell.momentum);
  } else {
    opt = make_adam(params, cell.eta, cell.momentum, kAdamBeta2, kAdamEpsilon);
  }

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<NamedTensor> best_params;

  for (std::size_t epoch = 1; epoch <= config.epochs && !rec.diverged; ++epoch) {
    shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      const Tensor x = normalize_to_pm1(train, batch);
      const auto y = labels_of(train, batch);
      model.zero_grad();
      Trace trace = model.forward(x, true, &dropout_rng);
      const double loss = Model::loss(trace, y);
      if (!std::isfinite(loss)) {
        rec.diverged = true;
        break;
      }
      loss_sum += loss * static_cast<double>(batch.size());
      model.backward(trace, y);
      try {
        std::visit(
            [&](auto& s) {
              if constexpr (std::is_same_v<std::decay_t<decltype(s)>, SgdState>) {
                sgd_step(params, s);
              } else {
                adam_step(params, s);
              }
            },
            opt);
      } catch (const NonFiniteGradientError&) {
        rec.diverged = true;
        break;
      }
    }
    if (rec.diverged) break;
    const Evaluation val = evaluate(model, data.val);
    if (!std::isfinite(val.mean_loss)) {
      rec.diverged = true;
      break;
    }
    rec.train_loss.push_back(loss_sum / static_cast<double>(train.size()));
    rec.val_loss.push_back(val.mean_loss);
    rec.last_finite_epoch = epoch;
    if (best_params.empty() || val.mean_loss < rec.min_val_loss) {
      rec.min_val_loss = val.mean_loss;
      rec.epoch_of_min = epoch;
      best_params = params;
    }
  }

  if (!best_params.empty()) {
    for (std::size_t k = 0; k < params.size(); ++k) {
      std::copy(best_params[k].tensor.data().begin(), best_params[k].tensor.data().end(),
                params[k].tensor.data().begin());
    }
    rec.test_metric = rec.diverged ? 0.0 : evaluate(model, data.test).accuracy;
    if (!options.checkpoint_dir.empty() && !rec.diverged) {
      write_checkpoint((std::filesystem::path(options.checkpoint_dir) / (run_id(rec) + ".gsgd")).string(),
                       best_params);
    }
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

// Every (optimizer, fraction, eta, momentum, seed) combination, in that
// nesting order.
inline std::vector<std::pair<Cell, std::size_t>> enumerate_runs(const ExperimentConfig& c) {
  std::vector<std::pair<Cell, std::size_t>> jobs;
  for (auto opt : c.optimizers) {
    for (std::size_t fi = 0; fi < c.fractions.size(); ++fi) {
      for (std::size_t ei = 0; ei < c.eta_list.size(); ++ei) {
        for (std::size_t mi = 0; mi < c.momentum_list.size(); ++mi) {
          for (std::size_t si = 0; si < c.seeds.size(); ++si) {
            jobs.push_back({Cell{opt, c.eta_list[ei], c.momentum_list[mi], c.fractions[fi], ei, mi, fi}, si});
          }
        }
      }
    }
  }
  return jobs;
}

struct GridOptions {
  std::size_t workers = 1;
  std::string checkpoint_dir;
  bool progress = false;
};

// Runs every job on a bounded worker pool. Results are stored by job index,
// so the output order never depends on scheduling.
inline std::vector<RunRecord> run_grid(const ExperimentConfig& config, const DataBundle& data,
                                       const GridOptions& options = {}) {
  config.validate();
  const auto jobs = enumerate_runs(config);
  std::vector<RunRecord> records(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      const auto& [cell, seed_index] = jobs[j];
      try {
        records[j] = run_cell(config, cell, seed_index, data, RunOptions{options.checkpoint_dir});
      } catch (const std::exception& e) {
        RunRecord failed;
        failed.cell = cell;
        failed.seed_index = seed_index;
        failed.seed = config.seeds[seed_index];
        failed.diverged = true;
        failed.error = e.what();
        records[j] = std::move(failed);
      }
      if (options.progress) {
        std::lock_guard lock(log_mutex);
        const auto& r = records[j];
        std::cerr << "[" << (j + 1) << "/" << jobs.size() << "] " << run_id(r) << " eta=" << r.cell.eta
                  << " momentum=" << r.cell.momentum << " test=" << r.test_metric
                  << (r.diverged ? " (diverged)" : "") << " " << r.wall_seconds << "s\n";
      }
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, std::min(options.workers, jobs.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }
  return records;
}

}  // namespace golden_sgd
