#pragma once

// Test-time noise: grayscale pixel inversion (v -> 255 - v) and intensity
// inversion in HSI space for color images. Both pick exactly
// floor(percent/100 * pixel_count) distinct pixels per image.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "golden_sgd/dataset.hpp"
#include "golden_sgd/errors.hpp"
#include "golden_sgd/rng.hpp"

namespace golden_sgd {

enum class NoiseMode { pixel_flip, hsi_intensity };

// Names used in manifests; the HSI mode is reported as an inversion since
// that is how intensity noise is realised here.
inline const char* to_string(NoiseMode m) {
  return m == NoiseMode::pixel_flip ? "pixel-flip" : "hsi-intensity-inversion";
}

inline NoiseMode noise_mode_from_string(const std::string& s) {
  if (s == "pixel-flip") return NoiseMode::pixel_flip;
  if (s == "hsi-intensity" || s == "hsi-intensity-inversion") return NoiseMode::hsi_intensity;
  throw DomainError("unknown noise mode '" + s + "'");
}

struct NoiseSpec {
  NoiseMode mode = NoiseMode::pixel_flip;
  double percent = 0.0;
  std::uint64_t seed = 0;
};

inline void check_percent(double percent) {
  if (!(percent >= 0.0 && percent <= 100.0)) {
    throw DomainError("noise percent must lie in [0,100], got " + std::to_string(percent));
  }
}

inline std::size_t noised_pixel_count(double percent, std::size_t pixel_count) {
  check_percent(percent);
  return static_cast<std::size_t>(std::floor(percent * static_cast<double>(pixel_count) / 100.0));
}

// Distinct pixel indices chosen uniformly without replacement.
inline std::vector<std::size_t> select_pixels(std::size_t pixel_count, double percent, Rng& rng) {
  const std::size_t k = noised_pixel_count(percent, pixel_count);
  std::vector<std::size_t> idx(pixel_count);
  for (std::size_t i = 0; i < pixel_count; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + rng.below(pixel_count - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline std::vector<std::uint8_t> flip_pixels(std::span<const std::uint8_t> image, std::span<const std::size_t> chosen) {
  std::vector<std::uint8_t> out(image.begin(), image.end());
  for (std::size_t i : chosen) out[i] = static_cast<std::uint8_t>(255 - out[i]);
  return out;
}

inline std::vector<std::uint8_t> flip_noise(std::span<const std::uint8_t> image, double percent, Rng& rng) {
  return flip_pixels(image, select_pixels(image.size(), percent, rng));
}

inline std::vector<std::uint8_t> flip_noise(std::span<const std::uint8_t> image, double percent, std::uint64_t seed) {
  Rng rng(seed);
  return flip_noise(image, percent, rng);
}

// ------------------------------------------------------------------- HSI

struct Hsi {
  double h;  // radians in [0, 2pi)
  double s;  // [0, 1]
  double i;  // [0, 1]
};

struct Rgb {
  double r, g, b;  // [0, 1]
};

// Hue is reported as 0 when saturation is zero.
inline Hsi rgb_to_hsi(Rgb c) {
  const double sum = c.r + c.g + c.b;
  Hsi out{0.0, 0.0, sum / 3.0};
  const double mn = std::min({c.r, c.g, c.b});
  if (sum <= 0.0 || mn == std::max({c.r, c.g, c.b})) return out;
  out.s = 1.0 - 3.0 * mn / sum;
  const double num = 0.5 * ((c.r - c.g) + (c.r - c.b));
  const double den = std::sqrt((c.r - c.g) * (c.r - c.g) + (c.r - c.b) * (c.g - c.b));
  const double theta = std::acos(std::clamp(num / den, -1.0, 1.0));
  out.h = c.b <= c.g ? theta : 2.0 * std::numbers::pi - theta;
  if (out.h >= 2.0 * std::numbers::pi) out.h = 0.0;
  return out;
}

// Inverse transform; channels may leave [0, 1] when the intensity has no
// headroom for the requested saturation.
inline Rgb hsi_to_rgb(Hsi c) {
  constexpr double third = 2.0 * std::numbers::pi / 3.0;
  constexpr double sixth = std::numbers::pi / 3.0;
  auto boosted = [&](double h) { return c.i * (1.0 + c.s * std::cos(h) / std::cos(sixth - h)); };
  const double low = c.i * (1.0 - c.s);
  if (c.h < third) {
    const double r = boosted(c.h);
    return {r, 3.0 * c.i - (r + low), low};
  }
  if (c.h < 2.0 * third) {
    const double g = boosted(c.h - third);
    return {low, g, 3.0 * c.i - (low + g)};
  }
  const double b = boosted(c.h - 2.0 * third);
  return {3.0 * c.i - (low + b), low, b};
}

inline Hsi rgb8_to_hsi(std::array<std::uint8_t, 3> p) {
  return rgb_to_hsi({p[0] / 255.0, p[1] / 255.0, p[2] / 255.0});
}

inline std::array<std::uint8_t, 3> hsi_to_rgb8(Hsi c) {
  const Rgb rgb = hsi_to_rgb(c);
  auto q = [](double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
  return {q(rgb.r), q(rgb.g), q(rgb.b)};
}

// `image` is interleaved RGB. Selected pixels get i -> 1 - i; the rest are
// copied unchanged.
inline std::vector<std::uint8_t> hsi_intensity_noise(std::span<const std::uint8_t> image, double percent, Rng& rng) {
  if (image.size() % 3 != 0) throw ShapeError("hsi_intensity_noise expects interleaved RGB");
  std::vector<std::uint8_t> out(image.begin(), image.end());
  for (std::size_t p : select_pixels(image.size() / 3, percent, rng)) {
    Hsi hsi = rgb8_to_hsi({out[3 * p], out[3 * p + 1], out[3 * p + 2]});
    hsi.i = 1.0 - hsi.i;
    const auto rgb = hsi_to_rgb8(hsi);
    std::copy(rgb.begin(), rgb.end(), out.begin() + static_cast<std::ptrdiff_t>(3 * p));
  }
  return out;
}

inline std::vector<std::uint8_t> hsi_intensity_noise(std::span<const std::uint8_t> image, double percent,
                                                     std::uint64_t seed) {
  Rng rng(seed);
  return hsi_intensity_noise(image, percent, rng);
}

// Applies `spec` to every image of a test split, with an independent pixel
// selection per image.
inline Dataset apply_noise(const Dataset& ds, const NoiseSpec& spec) {
  if (ds.split != Split::test) {
    throw DomainError(std::string("noise may only be applied to the test split, got ") + to_string(ds.split));
  }
  check_percent(spec.percent);
  Dataset out = ds;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Rng rng = Rng(spec.seed).derive({i});
    std::vector<std::uint8_t> noised;
    if (spec.mode == NoiseMode::pixel_flip) {
      if (ds.channels != 1) throw ShapeError("pixel-flip noise expects grayscale images");
      noised = flip_noise(ds.image(i), spec.percent, rng);
    } else {
      if (ds.channels != 3) throw ShapeError("hsi-intensity noise expects RGB images");
      noised = hsi_intensity_noise(ds.image(i), spec.percent, rng);
    }
    std::copy(noised.begin(), noised.end(), out.image(i).begin());
  }
  return out;
}

}  // namespace golden_sgd
