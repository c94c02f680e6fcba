#pragma once

// Closed-form objects of the double-Bayesian hyperparameter derivation:
// base-lambda logarithms, the inner/outer Bayes residuals, and the derived
// momentum and learning-rate constants.
//
// Every function here is pure. Probabilities use the convention that the
// golden ratio is the root ~0.618 of p^2 + p - 1 = 0.

#include <cmath>
#include <numbers>
#include <string>

#include "golden_sgd/errors.hpp"

namespace golden_sgd::bayes {

inline constexpr double kIdentityTolerance = 1e-12;

// Base of a logarithm: positive and different from one.
class LogBase {
 public:
  explicit LogBase(double lambda) : lambda_(lambda) {
    if (!(lambda > 0.0) || !std::isfinite(lambda) || lambda == 1.0) {
      throw DomainError("log base must be positive, finite and != 1, got " +
                        std::to_string(lambda));
    }
  }

  double value() const noexcept { return lambda_; }

  LogBase reciprocal() const { return LogBase(1.0 / lambda_); }

 private:
  double lambda_;
};

// Angle on the first quadrant of the unit circle, phi in [0, pi/2].
class CircleAngle {
 public:
  explicit CircleAngle(double phi) : phi_(phi) {
    if (!(phi >= 0.0 && phi <= std::numbers::pi / 2)) {
      throw DomainError("circle angle must lie in [0, pi/2], got " + std::to_string(phi));
    }
  }

  double phi() const noexcept { return phi_; }
  double sin() const noexcept { return std::sin(phi_); }
  double cos() const noexcept { return std::cos(phi_); }

 private:
  double phi_;
};

// P(A), P(B), P(A|B), P(B|A), all strictly inside (0, 1).
class BayesQuad {
 public:
  BayesQuad(double p_a, double p_b, double p_a_given_b, double p_b_given_a)
      : p_a_(checked(p_a, "p_a")),
        p_b_(checked(p_b, "p_b")),
        p_a_given_b_(checked(p_a_given_b, "p_a_given_b")),
        p_b_given_a_(checked(p_b_given_a, "p_b_given_a")) {}

  // Canonical form from the two posteriors via the uncertainty principle:
  // P(A) = 1 - P(B|A) and P(B) = 1 - P(A|B).
  static BayesQuad from_posteriors(double p_a_given_b, double p_b_given_a) {
    return BayesQuad(1.0 - p_b_given_a, 1.0 - p_a_given_b, p_a_given_b, p_b_given_a);
  }

  double p_a() const noexcept { return p_a_; }
  double p_b() const noexcept { return p_b_; }
  double p_a_given_b() const noexcept { return p_a_given_b_; }
  double p_b_given_a() const noexcept { return p_b_given_a_; }

  bool is_canonical(double tol = kIdentityTolerance) const noexcept {
    return std::abs(p_a_ - (1.0 - p_b_given_a_)) <= tol &&
           std::abs(p_b_ - (1.0 - p_a_given_b_)) <= tol;
  }

  // P(A|B) P(B) - P(B|A) P(A); zero when Bayes' theorem holds.
  double bayes_residual() const noexcept {
    return p_a_given_b_ * p_b_ - p_b_given_a_ * p_a_;
  }

 private:
  static double checked(double p, const char* name) {
    if (!(p > 0.0 && p < 1.0)) {
      throw DomainError(std::string(name) + " must lie strictly inside (0,1), got " +
                        std::to_string(p));
    }
    return p;
  }

  double p_a_;
  double p_b_;
  double p_a_given_b_;
  double p_b_given_a_;
};

struct DerivedConstants {
  double golden;
  double alpha;
  double eta;
};

inline double golden_ratio() { return (std::sqrt(5.0) - 1.0) / 2.0; }

inline double momentum_alpha() { return std::numbers::sqrt2 * golden_ratio(); }

inline double learning_eta() {
  const double gap = 1.0 - momentum_alpha();
  return gap * gap;
}

inline DerivedConstants derived_constants() {
  return {golden_ratio(), momentum_alpha(), learning_eta()};
}

inline double log_base(LogBase base, double x) {
  if (!(x > 0.0)) {
    throw DomainError("log_base requires x > 0, got " + std::to_string(x));
  }
  return std::log(x) / std::log(base.value());
}

// Base lambda with log_lambda(x) == target, i.e. lambda = x^(1/target).
inline LogBase solve_base(double x, double target) {
  if (!(x > 0.0) || x == 1.0) {
    throw DomainError("solve_base requires x > 0 and x != 1, got " + std::to_string(x));
  }
  if (!(target > 0.0)) {
    throw DomainError("solve_base requires target > 0, got " + std::to_string(target));
  }
  return LogBase(std::pow(x, 1.0 / target));
}

// Base for which x is a fixed point of the logarithm: log_lambda(x) == x.
inline LogBase fixed_point_base(double x) { return solve_base(x, x); }

inline double inner_residual(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError("inner_residual requires p in (0,1), got " + std::to_string(p));
  }
  return p - (1.0 - p) / p;
}

struct BisectionResult {
  double root;
  double lower;  // initial bracket
  double upper;
  int iterations;
};

// Bisection on p^2 + p - 1 over [0.1, 0.9]. The fixed-point map
// p <- (1-p)/p has slope magnitude ~2.618 at the root and does not converge.
inline BisectionResult solve_inner_bracketed(double tolerance = 1e-12) {
  constexpr double kLower = 0.1;
  constexpr double kUpper = 0.9;
  auto poly = [](double p) { return p * p + p - 1.0; };
  double lo = kLower;
  double hi = kUpper;
  int iterations = 0;
  while (hi - lo > tolerance && iterations < 200) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double f_mid = poly(mid);
    if (f_mid == 0.0) {
      lo = hi = mid;
      break;
    }
    if ((poly(lo) < 0.0) == (f_mid < 0.0)) {
      lo = mid;
    } else {
      hi = mid;
    }
    ++iterations;
  }
  return {0.5 * (lo + hi), kLower, kUpper, iterations};
}

inline double solve_inner() { return solve_inner_bracketed().root; }

// P(A) - sin(phi) * log_lambda(cos(phi)).
inline double outer_residual(CircleAngle angle, LogBase base, double p_a) {
  if (!(p_a >= 0.0)) {
    throw DomainError("outer_residual requires p_a >= 0, got " + std::to_string(p_a));
  }
  if (angle.phi() >= std::numbers::pi / 2) {
    throw DivergenceError("log_lambda(cos(phi)) diverges at phi = pi/2");
  }
  return p_a - angle.sin() * log_base(base, angle.cos());
}

inline CircleAngle angle_for_p(double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw DomainError("angle_for_p requires p in [0,1], got " + std::to_string(p));
  }
  return CircleAngle(std::asin(p));
}

struct ChainReport {
  double p;
  double ratio_argument;   // (1 - p) / p
  double square_argument;  // 1 - p^2
  double sin_phi;          // p
  double cos_phi;          // sqrt(1 - p^2)
  bool arguments_coincide;
};

// Evaluates the log arguments along the inner-equation rewriting chain;
// they coincide exactly when p^2 == 1 - p.
inline ChainReport pythagorean_chain_check(double p, double tol = kIdentityTolerance) {
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError("pythagorean_chain_check requires p in (0,1), got " + std::to_string(p));
  }
  ChainReport report{};
  report.p = p;
  report.ratio_argument = (1.0 - p) / p;
  report.square_argument = 1.0 - p * p;
  report.sin_phi = p;
  report.cos_phi = std::sqrt(1.0 - p * p);
  report.arguments_coincide = std::abs(report.ratio_argument - report.square_argument) <= tol;
  return report;
}

}  // namespace golden_sgd::bayes
