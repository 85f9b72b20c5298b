#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

#include "trot/matrix.hpp"

namespace trot {

/// Width of the classical branch around q = 1. The generic deformed formulas
/// lose roughly seven digits inside this band, so q there routes to ln/exp.
inline constexpr double kClassicalBranchTol = 1e-9;

inline bool is_classical(double q) { return std::abs(q - 1.0) < kClassicalBranchTol; }

/// q-logarithm: (x^{1-q} - 1)/(1-q), ln x in the classical branch.
/// Defined for x > 0 only.
inline double q_log(double x, double q) {
  if (!(x > 0.0)) throw std::domain_error("q_log: argument must be positive");
  if (is_classical(q)) return std::log(x);
  const double one_minus_q = 1.0 - q;
  // expm1 form of (x^{1-q} - 1)/(1-q); exact cancellation-free near x = 1.
  return std::expm1(one_minus_q * std::log(x)) / one_minus_q;
}

struct QExpResult {
  double value = 0.0;
  bool saturated = false;  ///< overflow (or the q>1 pole) clipped to huge
};

/// q-exponential: (1 + (1-q)x)^{1/(1-q)} where the base is positive.
/// Nonpositive base means 0 for q < 1 (cutoff) and saturation for q > 1
/// (the pole at x = 1/(q-1)). Overflow never escapes as a silent infinity.
inline QExpResult q_exp_checked(double x, double q) {
  constexpr double kHuge = std::numeric_limits<double>::max();
  if (is_classical(q)) {
    if (x > 709.0) return {kHuge, true};
    return {std::exp(x), false};
  }
  const double one_minus_q = 1.0 - q;
  const double base = 1.0 + one_minus_q * x;
  if (base <= 0.0) {
    if (one_minus_q > 0.0) return {0.0, false};  // positive exponent: cutoff to zero
    return {kHuge, true};                        // q > 1: past the pole
  }
  const double log_result = std::log(base) / one_minus_q;
  if (log_result > 709.0) return {kHuge, true};
  return {std::exp(log_result), false};
}

inline double q_exp(double x, double q) { return q_exp_checked(x, q).value; }

struct EntropyReport {
  double h_q = 0.0;
  double q = 1.0;
};

namespace detail {

// 0^q is taken as 0 for every q >= 0 (mass-free cells contribute nothing).
inline double pow_or_zero(double p, double q) { return p > 0.0 ? std::pow(p, q) : 0.0; }

template <typename Range>
inline EntropyReport tsallis_entropy_range(const Range& p, double q) {
  double h = 0.0;
  if (is_classical(q)) {
    for (double v : p) {
      if (v < 0.0) throw std::domain_error("tsallis_entropy: negative entry");
      if (v > 0.0) h -= v * std::log(v);
    }
  } else {
    double acc = 0.0;
    for (double v : p) {
      if (v < 0.0) throw std::domain_error("tsallis_entropy: negative entry");
      acc += pow_or_zero(v, q) - v;
    }
    h = acc / (1.0 - q);
  }
  return {h, q};
}

/// One cell of the generalized KL divergence sum: p ln(p/r) - p + r, with
/// 0 ln 0 = 0 and +inf when p > 0 meets r = 0.
inline double generalized_kl_cell(double p, double r) {
  if (p == 0.0) return r;
  if (r == 0.0) return std::numeric_limits<double>::infinity();
  return p * std::log(p / r) - p + r;
}

/// One cell of the Tsallis relative q-entropy sum (generic branch):
/// (q p + (1-q) r - p^q r^{1-q}) / (1-q), with the 0-entry conventions of
/// generalized_kl_cell carried over. Finite for q < 1 even when r = 0.
inline double relative_q_cell(double p, double r, double q) {
  if (p == 0.0 && r == 0.0) return 0.0;
  const double one_minus_q = 1.0 - q;
  if (r == 0.0 && q > 1.0) return std::numeric_limits<double>::infinity();
  const double cross = pow_or_zero(p, q) * pow_or_zero(r, one_minus_q);
  return (q * p + one_minus_q * r - cross) / one_minus_q;
}

}  // namespace detail

inline EntropyReport tsallis_entropy(const Vector& p, double q) {
  return detail::tsallis_entropy_range(p, q);
}

/// Matrix case: the entropy of the vectorized matrix.
inline EntropyReport tsallis_entropy(const Matrix& p, double q) {
  return detail::tsallis_entropy_range(p, q);
}

/// Tsallis relative q-entropy K_q(P, R); generalized KL divergence in the
/// classical branch. Returns +inf when absolute continuity fails at q >= 1.
inline double tsallis_relative_entropy(const Matrix& p, const Matrix& r, double q) {
  if (!p.same_shape(r)) throw std::invalid_argument("tsallis_relative_entropy: shape mismatch");
  double acc = 0.0;
  if (is_classical(q)) {
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double pv = p.data()[k], rv = r.data()[k];
      if (pv < 0.0 || rv < 0.0) throw std::domain_error("tsallis_relative_entropy: negative entry");
      acc += detail::generalized_kl_cell(pv, rv);
    }
  } else {
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double pv = p.data()[k], rv = r.data()[k];
      if (pv < 0.0 || rv < 0.0) throw std::domain_error("tsallis_relative_entropy: negative entry");
      acc += detail::relative_q_cell(pv, rv, q);
    }
  }
  return acc;
}

/// Element-wise q-th power P^q (the escort transform).
inline Matrix escort_power(const Matrix& p, double q) {
  Matrix out(p.rows(), p.cols());
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double v = p.data()[k];
    if (v < 0.0) throw std::domain_error("escort_power: negative entry");
    out.data()[k] = detail::pow_or_zero(v, q);
  }
  return out;
}

}  // namespace trot
