#pragma once

// Image datasets: IDX parsing, procedural digit glyphs, [-1, 1]
// normalization and stratified sampling.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "golden_sgd/errors.hpp"
#include "golden_sgd/rng.hpp"
#include "golden_sgd/tensor.hpp"

namespace golden_sgd {

enum class Split { train, val, test };
enum class Provenance { idx_file, synthetic };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline const char* to_string(Provenance p) { return p == Provenance::idx_file ? "idx-file" : "synthetic"; }

inline constexpr std::size_t kNumClasses = 10;

// Images are stored contiguously, row-major, channels interleaved (HWC).
struct Dataset {
  std::size_t rows = 28;
  std::size_t cols = 28;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;
  std::vector<std::uint8_t> labels;
  Split split = Split::train;
  Provenance provenance = Provenance::synthetic;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t pixels_per_image() const noexcept { return rows * cols * channels; }

  std::span<const std::uint8_t> image(std::size_t i) const {
    return std::span<const std::uint8_t>(pixels).subspan(i * pixels_per_image(), pixels_per_image());
  }
  std::span<std::uint8_t> image(std::size_t i) {
    return std::span<std::uint8_t>(pixels).subspan(i * pixels_per_image(), pixels_per_image());
  }

  void validate() const {
    if (pixels.size() != labels.size() * pixels_per_image()) {
      throw ConsistencyError("dataset holds " + std::to_string(pixels.size()) + " pixel bytes for " +
                             std::to_string(labels.size()) + " labels");
    }
  }

  std::array<std::size_t, kNumClasses> class_counts() const {
    std::array<std::size_t, kNumClasses> counts{};
    for (auto y : labels) {
      if (y >= kNumClasses) throw ConsistencyError("label " + std::to_string(y) + " out of range");
      ++counts[y];
    }
    return counts;
  }
};

// Subset in the given index order.
inline Dataset take(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out;
  out.rows = ds.rows;
  out.cols = ds.cols;
  out.channels = ds.channels;
  out.split = ds.split;
  out.provenance = ds.provenance;
  out.labels.reserve(indices.size());
  out.pixels.reserve(indices.size() * ds.pixels_per_image());
  for (std::size_t i : indices) {
    out.labels.push_back(ds.labels.at(i));
    auto img = ds.image(i);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
  }
  return out;
}

// ------------------------------------------------------------------- IDX

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::uint32_t read_be32(std::string_view bytes, std::size_t offset, const std::string& what) {
  if (bytes.size() < offset + 4) throw TruncationError(what + ": truncated header");
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  return v;
}

inline void write_be32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xff));
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace detail

struct IdxImages {
  std::size_t count, rows, cols;
  std::vector<std::uint8_t> pixels;
};

inline IdxImages parse_idx_images(std::string_view bytes, const std::string& what = "idx images") {
  const auto magic = detail::read_be32(bytes, 0, what);
  if (magic != kIdxImageMagic) {
    throw FormatError(what + ": bad magic " + std::to_string(magic) + ", expected 0x00000803");
  }
  IdxImages out{detail::read_be32(bytes, 4, what), detail::read_be32(bytes, 8, what),
                detail::read_be32(bytes, 12, what), {}};
  const std::size_t n = out.count * out.rows * out.cols;
  if (bytes.size() - 16 < n) {
    throw TruncationError(what + ": expected " + std::to_string(n) + " pixel bytes, found " +
                          std::to_string(bytes.size() - 16));
  }
  out.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(n));
  return out;
}

inline std::vector<std::uint8_t> parse_idx_labels(std::string_view bytes, const std::string& what = "idx labels") {
  const auto magic = detail::read_be32(bytes, 0, what);
  if (magic != kIdxLabelMagic) {
    throw FormatError(what + ": bad magic " + std::to_string(magic) + ", expected 0x00000801");
  }
  const std::size_t n = detail::read_be32(bytes, 4, what);
  if (bytes.size() - 8 < n) {
    throw TruncationError(what + ": expected " + std::to_string(n) + " labels, found " +
                          std::to_string(bytes.size() - 8));
  }
  return {bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(n)};
}

inline std::string encode_idx_images(const Dataset& ds) {
  if (ds.channels != 1) throw FormatError("IDX image encoding supports single-channel images only");
  std::string out;
  detail::write_be32(out, kIdxImageMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(ds.size()));
  detail::write_be32(out, static_cast<std::uint32_t>(ds.rows));
  detail::write_be32(out, static_cast<std::uint32_t>(ds.cols));
  out.append(ds.pixels.begin(), ds.pixels.end());
  return out;
}

inline std::string encode_idx_labels(const Dataset& ds) {
  std::string out;
  detail::write_be32(out, kIdxLabelMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(ds.size()));
  out.append(ds.labels.begin(), ds.labels.end());
  return out;
}

inline void write_idx(const Dataset& ds, const std::string& image_path, const std::string& label_path) {
  for (const auto& [path, bytes] : {std::pair{image_path, encode_idx_images(ds)},
                                    std::pair{label_path, encode_idx_labels(ds)}}) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path);
  }
}

inline Dataset load_idx(const std::string& image_path, const std::string& label_path, Split split = Split::train) {
  auto images = parse_idx_images(detail::read_file(image_path), image_path);
  auto labels = parse_idx_labels(detail::read_file(label_path), label_path);
  if (images.count != labels.size()) {
    throw ConsistencyError(image_path + " holds " + std::to_string(images.count) + " images but " + label_path +
                           " holds " + std::to_string(labels.size()) + " labels");
  }
  Dataset ds;
  ds.rows = images.rows;
  ds.cols = images.cols;
  ds.channels = 1;
  ds.pixels = std::move(images.pixels);
  ds.labels = std::move(labels);
  ds.split = split;
  ds.provenance = Provenance::idx_file;
  return ds;
}

// ------------------------------------------------------- synthetic digits

namespace detail {

struct Point {
  double x, y;
};
using Stroke = std::vector<Point>;

inline Stroke ellipse(double cx, double cy, double rx, double ry, double start = 0.0, double sweep = 2 * std::numbers::pi,
                      int segments = 18) {
  Stroke s;
  for (int k = 0; k <= segments; ++k) {
    const double t = start + sweep * k / segments;
    s.push_back({cx + rx * std::cos(t), cy + ry * std::sin(t)});
  }
  return s;
}

// Glyph skeletons in a unit box, x to the right and y downwards.
inline std::vector<Stroke> digit_skeleton(int digit) {
  constexpr double pi = std::numbers::pi;
  switch (digit) {
    case 0: return {ellipse(0.5, 0.5, 0.3, 0.45)};
    case 1: return {{{0.32, 0.22}, {0.55, 0.04}, {0.55, 0.96}}};
    case 2: return {{{0.2, 0.28}, {0.3, 0.1}, {0.5, 0.03}, {0.7, 0.1}, {0.78, 0.3},
                     {0.65, 0.5}, {0.4, 0.72}, {0.18, 0.95}, {0.85, 0.95}}};
    case 3: return {{{0.2, 0.1}, {0.5, 0.02}, {0.78, 0.15}, {0.75, 0.35}, {0.45, 0.48},
                     {0.78, 0.6}, {0.8, 0.82}, {0.5, 0.97}, {0.18, 0.88}}};
    case 4: return {{{0.65, 0.96}, {0.65, 0.04}, {0.15, 0.65}, {0.88, 0.65}}};
    case 5: return {{{0.8, 0.05}, {0.3, 0.05}, {0.25, 0.45}, {0.55, 0.4}, {0.78, 0.55},
                     {0.78, 0.8}, {0.5, 0.97}, {0.2, 0.88}}};
    case 6: return {{{0.7, 0.04}, {0.42, 0.22}, {0.24, 0.52}, {0.25, 0.82}, {0.5, 0.97},
                     {0.75, 0.82}, {0.75, 0.62}, {0.5, 0.5}, {0.26, 0.62}}};
    case 7: return {{{0.15, 0.05}, {0.85, 0.05}, {0.45, 0.96}}};
    case 8: return {ellipse(0.5, 0.26, 0.22, 0.22), ellipse(0.5, 0.72, 0.27, 0.25)};
    case 9: return {ellipse(0.5, 0.3, 0.25, 0.25, 0.0, 2 * pi), {{0.75, 0.3}, {0.72, 0.96}}};
    default: throw DomainError("digit must lie in [0,9]");
  }
}

inline double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = p.x - (a.x + t * dx), ey = p.y - (a.y + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

// Renders one jittered glyph into a rows x cols 8-bit buffer.
inline void render_digit(int digit, Rng& rng, std::size_t rows, std::size_t cols, std::span<std::uint8_t> out) {
  auto strokes = digit_skeleton(digit);
  const double jitter = 0.04;
  for (auto& stroke : strokes) {
    for (auto& p : stroke) {
      p.x += jitter * rng.normal();
      p.y += jitter * rng.normal();
    }
  }
  if (rng.uniform() < 0.3) {
    // stray stroke
    const Point a{rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)};
    strokes.push_back({a, {a.x + rng.uniform(-0.35, 0.35), a.y + rng.uniform(-0.35, 0.35)}});
  }
  const double angle = std::clamp(0.18 * rng.normal(), -0.45, 0.45);
  const double shear = std::clamp(0.18 * rng.normal(), -0.45, 0.45);
  const double sx = rng.uniform(0.7, 1.1) * 16.0;
  const double sy = rng.uniform(0.8, 1.1) * 20.0;
  const double cx = cols / 2.0 + rng.uniform(-2.0, 2.0);
  const double cy = rows / 2.0 + rng.uniform(-2.0, 2.0);
  const double radius = rng.uniform(0.7, 1.9);
  const double ca = std::cos(angle), sa = std::sin(angle);

  std::vector<std::pair<Point, Point>> segments;
  for (const auto& stroke : strokes) {
    std::vector<Point> mapped;
    for (const auto& p : stroke) {
      const double u = (p.x - 0.5) + shear * (p.y - 0.5);
      const double v = p.y - 0.5;
      const double x = u * sx, y = v * sy;
      mapped.push_back({cx + ca * x - sa * y, cy + sa * x + ca * y});
    }
    for (std::size_t k = 1; k < mapped.size(); ++k) segments.emplace_back(mapped[k - 1], mapped[k]);
  }
  const double contrast = rng.uniform(0.6, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const Point p{c + 0.5, r + 0.5};
      double d = 1e9;
      for (const auto& [a, b] : segments) d = std::min(d, segment_distance(p, a, b));
      double v = std::clamp(radius + 0.5 - d, 0.0, 1.0) * contrast;
      v += 0.08 * rng.normal();
      out[r * cols + c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
  }
}

}  // namespace detail

// n procedurally rendered 28x28 digit glyphs with balanced classes (the
// first n % 10 classes get one extra sample), in seeded random order.
inline Dataset synthetic_digits(std::size_t n, std::uint64_t seed, Split split = Split::train) {
  if (n < kNumClasses) throw DomainError("synthetic_digits requires n >= 10");
  Dataset ds;
  ds.split = split;
  ds.provenance = Provenance::synthetic;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = static_cast<std::uint8_t>(i % kNumClasses);
  Rng order(Rng(seed).derive({0x6f72646572}));
  shuffle(ds.labels.begin(), ds.labels.end(), order);
  ds.pixels.resize(n * ds.pixels_per_image());
  for (std::size_t i = 0; i < n; ++i) {
    Rng glyph = Rng(seed).derive({0x676c797068, i});
    detail::render_digit(ds.labels[i], glyph, ds.rows, ds.cols, ds.image(i));
  }
  return ds;
}

// ---------------------------------------------------------- normalization

inline double normalize_intensity(std::uint8_t v) noexcept { return v / 127.5 - 1.0; }

// Batch tensor (N, C, H, W) with x -> x/127.5 - 1 for the listed images.
inline Tensor normalize_to_pm1(const Dataset& ds, std::span<const std::size_t> indices) {
  Tensor out({indices.size(), ds.channels, ds.rows, ds.cols});
  auto dst = out.data();
  const std::size_t plane = ds.rows * ds.cols;
  for (std::size_t b = 0; b < indices.size(); ++b) {
    auto img = ds.image(indices[b]);
    for (std::size_t p = 0; p < plane; ++p) {
      for (std::size_t c = 0; c < ds.channels; ++c) {
        dst[(b * ds.channels + c) * plane + p] = normalize_intensity(img[p * ds.channels + c]);
      }
    }
  }
  return out;
}

inline Tensor normalize_to_pm1(const Dataset& ds) {
  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return normalize_to_pm1(ds, all);
}

inline std::vector<int> labels_of(const Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(ds.labels[i]);
  return out;
}

// -------------------------------------------------------------- sampling

namespace detail {

inline std::array<std::vector<std::size_t>, kNumClasses> indices_by_class(const Dataset& ds) {
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] >= kNumClasses) throw ConsistencyError("label out of range");
    by_class[ds.labels[i]].push_back(i);
  }
  return by_class;
}

}  // namespace detail

// Stratified sampling without replacement keeping floor(fraction * n_c) of
// each class; surviving items keep their original relative order.
inline Dataset subsample(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw DomainError("subsample fraction must lie in (0,1], got " + std::to_string(fraction));
  }
  if (fraction == 1.0) return ds;
  auto by_class = detail::indices_by_class(ds);
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    const auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(idx.size())));
    if (n == 0) {
      throw DegenerateSplitError("fraction " + std::to_string(fraction) + " leaves class " + std::to_string(c) +
                                 " empty");
    }
    Rng rng = Rng(seed).derive({c});
    shuffle(idx.begin(), idx.end(), rng);
    keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n));
  }
  std::sort(keep.begin(), keep.end());
  return take(ds, keep);
}

// Stratified split into (first, second) with `first_count` items in the
// first part. Per-class quotas use largest-remainder rounding.
inline std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, std::size_t first_count, std::uint64_t seed) {
  if (first_count > ds.size()) throw DomainError("split size exceeds dataset size");
  auto by_class = detail::indices_by_class(ds);
  std::array<std::size_t, kNumClasses> quota{};
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const double exact = static_cast<double>(first_count) * by_class[c].size() / static_cast<double>(ds.size());
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[c];
    remainders.emplace_back(exact - quota[c], c);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < first_count; ++k, ++assigned) ++quota[remainders[k % kNumClasses].second];

  std::vector<std::size_t> first, second;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    auto& idx = by_class[c];
    Rng rng = Rng(seed).derive({c});
    shuffle(idx.begin(), idx.end(), rng);
    const auto q = std::min(quota[c], idx.size());
    first.insert(first.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(q));
    second.insert(second.end(), idx.begin() + static_cast<std::ptrdiff_t>(q), idx.end());
  }
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  return {take(ds, first), take(ds, second)};
}

}  // namespace golden_sgd
