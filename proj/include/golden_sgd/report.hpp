#pragma once

// Run outputs: runs.jsonl, grid.csv, heatmap.svg, summary.json and
// timings.csv. Wall-clock times go to timings.csv only, keeping
// runs.jsonl byte-identical across repeated runs.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "golden_sgd/analysis.hpp"
#include "golden_sgd/experiment.hpp"
#include "golden_sgd/noise.hpp"
#include "json.hpp"

namespace golden_sgd {

// 17 significant digits: enough to round-trip any double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline nlohmann::ordered_json to_json(const RunRecord& r) {
  nlohmann::ordered_json j;
  j["optimizer"] = to_string(r.cell.optimizer);
  j["eta"] = r.cell.eta;
  j["momentum"] = r.cell.momentum;
  j["fraction"] = r.cell.fraction;
  j["eta_index"] = r.cell.eta_index;
  j["momentum_index"] = r.cell.momentum_index;
  j["fraction_index"] = r.cell.fraction_index;
  j["seed"] = r.seed;
  j["seed_index"] = r.seed_index;
  j["train_loss"] = r.train_loss;
  j["val_loss"] = r.val_loss;
  if (std::isfinite(r.min_val_loss)) {
    j["min_val_loss"] = r.min_val_loss;
  } else {
    j["min_val_loss"] = nullptr;
  }
  j["epoch_of_min"] = r.epoch_of_min;
  j["test_metric"] = r.test_metric;
  j["diverged"] = r.diverged;
  j["last_finite_epoch"] = r.last_finite_epoch;
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

inline RunRecord record_from_json(const nlohmann::json& j) {
  RunRecord r;
  try {
    r.cell.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
    r.cell.eta = j.at("eta").get<double>();
    r.cell.momentum = j.at("momentum").get<double>();
    r.cell.fraction = j.at("fraction").get<double>();
    r.cell.eta_index = j.at("eta_index").get<std::size_t>();
    r.cell.momentum_index = j.at("momentum_index").get<std::size_t>();
    r.cell.fraction_index = j.at("fraction_index").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.seed_index = j.at("seed_index").get<std::size_t>();
    r.train_loss = j.at("train_loss").get<std::vector<double>>();
    r.val_loss = j.at("val_loss").get<std::vector<double>>();
    const auto& m = j.at("min_val_loss");
    r.min_val_loss = m.is_null() ? std::numeric_limits<double>::quiet_NaN() : m.get<double>();
    r.epoch_of_min = j.at("epoch_of_min").get<std::size_t>();
    r.test_metric = j.at("test_metric").get<double>();
    r.diverged = j.at("diverged").get<bool>();
    r.last_finite_epoch = j.at("last_finite_epoch").get<std::size_t>();
    if (j.contains("error")) r.error = j.at("error").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed run record: ") + e.what());
  }
  return r;
}

inline std::string runs_jsonl(std::span<const RunRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<RunRecord> read_runs_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<RunRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ": " + e.what());
    }
  }
  return records;
}

inline const char* kGridCsvHeader =
    "optimizer,eta,momentum,fraction,seed,min_val_loss,epoch_of_min,test_metric,diverged";

inline std::string grid_csv(std::span<const RunRecord> records) {
  std::string out = std::string(kGridCsvHeader) + "\n";
  for (const auto& r : records) {
    out += std::string(to_string(r.cell.optimizer)) + "," + format_double(r.cell.eta) + "," +
           format_double(r.cell.momentum) + "," + format_double(r.cell.fraction) + "," + std::to_string(r.seed) +
           "," + format_double(r.min_val_loss) + "," + std::to_string(r.epoch_of_min) + "," +
           format_double(r.test_metric) + "," + (r.diverged ? "true" : "false") + "\n";
  }
  return out;
}

// --------------------------------------------------------------- heatmap

namespace detail {

inline std::string shade(double t) {
  // white (t = 0) to deep blue (t = 1)
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(255 - t * (255 - 8)));
  const int g = static_cast<int>(std::lround(255 - t * (255 - 48)));
  const int b = static_cast<int>(std::lround(255 - t * (255 - 107)));
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

inline std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace detail

// One eta x momentum panel per (optimizer, fraction). Cell shading is linear
// between the panel's min and max mean metric; top cells are outlined green
// (class "top10") and the best cell additionally red (class "best").
inline std::string render_heatmap_svg(const GridSummary& summary) {
  constexpr int cell_w = 56, cell_h = 30, left = 70, top = 50, gap = 40;
  std::ostringstream body;
  int x0 = 0;
  int max_h = 0;
  for (const auto& panel : summary.panels) {
    const int width = left + static_cast<int>(panel.momentum_count) * cell_w + gap;
    const int height = top + static_cast<int>(panel.eta_count) * cell_h + 40;
    max_h = std::max(max_h, height);
    double lo = HUGE_VAL, hi = -HUGE_VAL;
    for (const auto& c : panel.cells) {
      lo = std::min(lo, c.mean_score);
      hi = std::max(hi, c.mean_score);
    }
    body << "<g transform=\"translate(" << x0 << ",0)\">\n";
    body << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << to_string(panel.optimizer)
         << " fraction=" << detail::short_number(panel.fraction) << "</text>\n";
    body << "<text x=\"" << left << "\" y=\"38\" font-size=\"11\">momentum</text>\n";
    body << "<text x=\"4\" y=\"" << top - 4 << "\" font-size=\"11\">eta</text>\n";
    for (std::size_t mi = 0; mi < panel.momentum_count; ++mi) {
      body << "<text x=\"" << left + static_cast<int>(mi) * cell_w + 4 << "\" y=\"" << top - 4
           << "\" font-size=\"10\">" << detail::short_number(panel.at(0, mi).cell.momentum) << "</text>\n";
    }
    for (std::size_t ei = 0; ei < panel.eta_count; ++ei) {
      const int y = top + static_cast<int>(ei) * cell_h;
      body << "<text x=\"4\" y=\"" << y + 19 << "\" font-size=\"10\">"
           << detail::short_number(panel.at(ei, 0).cell.eta) << "</text>\n";
      for (std::size_t mi = 0; mi < panel.momentum_count; ++mi) {
        const auto& c = panel.at(ei, mi);
        const int x = left + static_cast<int>(mi) * cell_w;
        const double t = hi > lo ? (c.mean_score - lo) / (hi - lo) : 0.0;
        body << "<rect class=\"cell\" x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell_w << "\" height=\""
             << cell_h << "\" fill=\"" << detail::shade(t) << "\" stroke=\"#cccccc\"/>\n";
        char label[32];
        std::snprintf(label, sizeof label, "%.3f", c.mean_score);
        body << "<text x=\"" << x + 8 << "\" y=\"" << y + 19 << "\" font-size=\"10\" fill=\""
             << (t > 0.6 ? "#ffffff" : "#000000") << "\">" << label << "</text>\n";
      }
    }
    for (std::size_t idx : panel.top_cells) {
      const int x = left + static_cast<int>(idx % panel.momentum_count) * cell_w;
      const int y = top + static_cast<int>(idx / panel.momentum_count) * cell_h;
      body << "<rect class=\"top10\" x=\"" << x + 1 << "\" y=\"" << y + 1 << "\" width=\"" << cell_w - 2
           << "\" height=\"" << cell_h - 2 << "\" fill=\"none\" stroke=\"#00a000\" stroke-width=\"2\"/>\n";
    }
    {
      const int x = left + static_cast<int>(panel.best_cell % panel.momentum_count) * cell_w;
      const int y = top + static_cast<int>(panel.best_cell / panel.momentum_count) * cell_h;
      body << "<rect class=\"best\" x=\"" << x + 4 << "\" y=\"" << y + 4 << "\" width=\"" << cell_w - 8
           << "\" height=\"" << cell_h - 8 << "\" fill=\"none\" stroke=\"#e00000\" stroke-width=\"2\"/>\n";
    }
    body << "</g>\n";
    x0 += width;
  }
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << std::max(x0, 1) << "\" height=\"" << max_h
      << "\" font-family=\"sans-serif\">\n"
      << body.str() << "</svg>\n";
  return svg.str();
}

// ----------------------------------------------------------------- summary

inline nlohmann::ordered_json to_json(const GridSummary& summary) {
  nlohmann::ordered_json panels = nlohmann::ordered_json::array();
  for (const auto& p : summary.panels) {
    nlohmann::ordered_json jp;
    jp["optimizer"] = to_string(p.optimizer);
    jp["fraction"] = p.fraction;
    auto cell_json = [&](std::size_t idx) {
      const auto& c = p.cells[idx];
      nlohmann::ordered_json jc;
      jc["eta"] = c.cell.eta;
      jc["momentum"] = c.cell.momentum;
      jc["mean_metric"] = c.mean_score;
      jc["seed_metrics"] = c.seed_scores;
      jc["diverged"] = c.diverged;
      return jc;
    };
    jp["cells"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < p.cells.size(); ++i) jp["cells"].push_back(cell_json(i));
    jp["top"] = nlohmann::ordered_json::array();
    for (std::size_t idx : p.top_cells) jp["top"].push_back(cell_json(idx));
    jp["top_mean"] = p.top.mean;
    jp["top_std"] = p.top.stddev;
    jp["best"] = cell_json(p.best_cell);
    if (p.proposed_cell) {
      jp["proposed"] = cell_json(*p.proposed_cell);
      nlohmann::ordered_json tests = nlohmann::ordered_json::array();
      for (const auto& [idx, pv] : p.wilcoxon) {
        nlohmann::ordered_json t;
        t["eta"] = p.cells[idx].cell.eta;
        t["momentum"] = p.cells[idx].cell.momentum;
        if (pv) {
          t["p_value"] = *pv;
        } else {
          t["p_value"] = nullptr;
        }
        tests.push_back(t);
      }
      jp["wilcoxon_vs_proposed"] = tests;
    }
    panels.push_back(jp);
  }
  nlohmann::ordered_json j;
  j["panels"] = panels;
  return j;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Noised test images as IDX files next to a {mode, percent, seed} manifest.
inline void write_noise_fixture(const Dataset& noised, const NoiseSpec& spec, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const std::string stem = "noise_" + format_double(spec.percent);
  write_idx(noised, (dir / (stem + "-images-idx3-ubyte")).string(), (dir / (stem + "-labels-idx1-ubyte")).string());
  nlohmann::ordered_json j;
  j["mode"] = to_string(spec.mode);
  j["percent"] = spec.percent;
  j["seed"] = spec.seed;
  j["selection"] = "independent per image";
  j["images"] = stem + "-images-idx3-ubyte";
  j["labels"] = stem + "-labels-idx1-ubyte";
  write_text(dir / (stem + ".json"), j.dump(2) + "\n");
}

inline void emit_reports(std::span<const RunRecord> records, const GridSummary& summary,
                         const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  write_text(out_dir / "runs.jsonl", runs_jsonl(records));
  write_text(out_dir / "grid.csv", grid_csv(records));
  write_text(out_dir / "heatmap.svg", render_heatmap_svg(summary));
  write_text(out_dir / "summary.json", to_json(summary).dump(2) + "\n");
  std::string timings = "run_id,wall_seconds\n";
  for (const auto& r : records) timings += run_id(r) + "," + format_double(r.wall_seconds) + "\n";
  write_text(out_dir / "timings.csv", timings);
}

}  // namespace golden_sgd
