#pragma once

// Spectral classification of SL(2,Z) generators and the geometry of evolved
// unit balls: diameters, time-scaling functions and breaking-time estimates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string_view>

#include "toral/error.hpp"
#include "toral/matrix.hpp"

namespace toral {

enum class Family { Hyperbolic, Parabolic, Elliptic };

constexpr std::string_view to_string(Family f) noexcept {
  switch (f) {
    case Family::Hyperbolic: return "hyperbolic";
    case Family::Parabolic: return "parabolic";
    case Family::Elliptic: return "elliptic";
  }
  return "unknown";
}

/// Family tag plus derived spectral quantities. Fields that do not apply to
/// the family are left empty.
struct SpectralData {
  Family family = Family::Elliptic;
  std::int64_t trace = 0;  ///< Tr(T); the semi-trace is trace / 2
  double eta = 1.0;        ///< largest singular value of T
  double xi = 0.0;         ///< Lyapunov exponent, nats per step

  std::optional<double> lambda;  ///< expanding eigenvalue, signed, |lambda| > 1
  std::optional<double> beta;    ///< angle from e+ to e-, in (0, pi)
  std::optional<double> J;       ///< shear strength (eta - 1/eta) / 2
  std::optional<double> phi;     ///< rotation angle, cos(phi) = semi-trace

  /// Elliptic only: least k >= 1 with T^k = +-1, and least k >= 1 with T^k = 1.
  std::optional<int> sign_period;
  std::optional<int> order;

  double semitrace() const noexcept { return static_cast<double>(trace) / 2.0; }
  double sin_beta() const { return std::sin(beta.value()); }
  double abs_lambda() const { return std::fabs(lambda.value()); }
};

namespace detail {

// Largest singular value of a determinant-one matrix from its Frobenius norm:
// eta + 1/eta = sqrt(F + 2), eta - 1/eta = sqrt(F - 2).
inline double top_singular_value(const IntMatrix2& m) {
  const double f = static_cast<double>(m.frobenius2());
  return 0.5 * (std::sqrt(f + 2.0) + std::sqrt(std::max(f - 2.0, 0.0)));
}

inline double eigenline_angle(const IntMatrix2& m, double mu) {
  double x, y;
  if (m.a12 != 0) {
    x = static_cast<double>(m.a12);
    y = mu - static_cast<double>(m.a11);
  } else {
    x = mu - static_cast<double>(m.a22);
    y = static_cast<double>(m.a21);
  }
  return std::atan2(y, x);
}

}  // namespace detail

/// Classifies T by |semi-trace| and fills in the family's spectral data.
inline SpectralData classify(const ToralMatrix& T) {
  const IntMatrix2& m = T.matrix();
  SpectralData s;
  s.trace = m.trace();
  s.eta = detail::top_singular_value(m);

  const std::int64_t abs_trace = s.trace < 0 ? -s.trace : s.trace;
  if (abs_trace > 2) {
    s.family = Family::Hyperbolic;
    const double tr = static_cast<double>(s.trace);
    const double disc = std::sqrt(tr * tr - 4.0);
    const double lam = 0.5 * (tr + std::copysign(disc, tr));
    s.lambda = lam;
    s.xi = std::log(std::fabs(lam));

    const double theta_plus = detail::eigenline_angle(m, lam);
    const double theta_minus = detail::eigenline_angle(m, 1.0 / lam);
    double b = std::fmod(theta_minus - theta_plus, std::numbers::pi);
    if (b < 0) b += std::numbers::pi;
    s.beta = b;
  } else if (abs_trace == 2) {
    s.family = Family::Parabolic;
    s.J = 0.5 * (s.eta - 1.0 / s.eta);
  } else {
    s.family = Family::Elliptic;
    const double c = std::acos(s.semitrace());
    s.phi = m.a12 > 0 ? c : -c;

    IntMatrix2 p = m;
    for (int k = 1; k <= 12; ++k) {
      if (!s.sign_period && p.is_plus_minus_identity()) s.sign_period = k;
      if (p == IntMatrix2::identity()) {
        s.order = k;
        break;
      }
      p = multiply(p, m);
    }
    // Integer elliptic matrices have order 3, 4 or 6.
    if (!s.order || !s.sign_period)
      throw Error(ErrorKind::InvalidArgument, "elliptic matrix without finite order <= 12");
  }
  return s;
}

/// D_T(n): the largest radius of the n-evolved unit ball, max |T^n v| over
/// |v| = 1. At n = 1 this equals eta.
inline double diameter_formula(const SpectralData& s, std::int64_t n) {
  require(n >= 0, ErrorKind::InvalidArgument, "diameter needs n >= 0");
  switch (s.family) {
    case Family::Hyperbolic: {
      if (n == 0) return 1.0;
      const double L = s.abs_lambda();
      const double nn = static_cast<double>(n);
      const double q = (std::pow(L, nn) - std::pow(L, -nn)) / (2.0 * s.sin_beta());
      return q + std::sqrt(q * q + 1.0);
    }
    case Family::Parabolic: {
      const double nj = static_cast<double>(n) * s.J.value();
      return nj + std::sqrt(nj * nj + 1.0);
    }
    case Family::Elliptic:
      return n % s.sign_period.value() == 0 ? 1.0 : s.eta;
  }
  return 1.0;
}

/// Diameter of the union of evolved balls from time -n to n. Equals
/// D_T(n) for the hyperbolic and parabolic families and eta (n >= 1) for the
/// elliptic one.
inline double union_diameter(const SpectralData& s, std::int64_t n) {
  if (s.family == Family::Elliptic) return n == 0 ? 1.0 : s.eta;
  return diameter_formula(s, n);
}

/// Oracle for diameter_formula: max |T^n v| over `samples` equally spaced
/// points of the unit circle.
inline double diameter_bruteforce(const ToralMatrix& T, std::int64_t n, std::int64_t samples) {
  require(samples >= 64, ErrorKind::InvalidArgument, "diameter_bruteforce needs samples >= 64");
  require(n >= 0, ErrorKind::InvalidArgument, "diameter_bruteforce needs n >= 0");

  double m11, m12, m21, m22;
  try {
    const IntMatrix2 p = power(T.matrix(), n);
    m11 = static_cast<double>(p.a11);
    m12 = static_cast<double>(p.a12);
    m21 = static_cast<double>(p.a21);
    m22 = static_cast<double>(p.a22);
  } catch (const Error&) {
    // Entries beyond int64: fall back to floating powers.
    long double a = 1, b = 0, c = 0, d = 1;
    const IntMatrix2& t = T.matrix();
    for (std::int64_t k = 0; k < n; ++k) {
      const long double na = a * t.a11 + b * t.a21, nb = a * t.a12 + b * t.a22;
      const long double nc = c * t.a11 + d * t.a21, nd = c * t.a12 + d * t.a22;
      a = na, b = nb, c = nc, d = nd;
    }
    m11 = static_cast<double>(a), m12 = static_cast<double>(b);
    m21 = static_cast<double>(c), m22 = static_cast<double>(d);
  }

  double best = 0.0;
  const double step = 2.0 * std::numbers::pi / static_cast<double>(samples);
  for (std::int64_t k = 0; k < samples; ++k) {
    const double th = step * static_cast<double>(k);
    const double vx = std::cos(th), vy = std::sin(th);
    best = std::max(best, std::hypot(m11 * vx + m12 * vy, m21 * vx + m22 * vy));
  }
  return best;
}

/// Gamma_T(n): n log|lambda|, log n or 0 depending on the family.
inline double scaling_function(const SpectralData& s, std::int64_t n) {
  require(n >= 1, ErrorKind::InvalidArgument, "scaling function needs n >= 1");
  switch (s.family) {
    case Family::Hyperbolic: return static_cast<double>(n) * s.xi;
    case Family::Parabolic: return std::log(static_cast<double>(n));
    case Family::Elliptic: return 0.0;
  }
  return 0.0;
}

/// Largest n with Gamma_T(n) < log(N) / gamma; nullopt means unbounded
/// (elliptic family).
inline std::optional<std::int64_t> breaking_time_estimate(const SpectralData& s, std::int64_t N,
                                                          double gamma) {
  require(N >= 2, ErrorKind::InvalidArgument, "breaking time needs N >= 2");
  require(gamma > 1.0, ErrorKind::InvalidArgument, "breaking time needs gamma > 1");
  const double logN = std::log(static_cast<double>(N));

  switch (s.family) {
    case Family::Elliptic: return std::nullopt;
    case Family::Hyperbolic: {
      // n xi < log N / gamma, compared as gamma * n * xi < log N.
      auto ok = [&](std::int64_t n) { return gamma * static_cast<double>(n) * s.xi < logN; };
      auto n = static_cast<std::int64_t>(std::floor(logN / (gamma * s.xi)));
      while (n > 0 && !ok(n)) --n;
      while (ok(n + 1)) ++n;
      return n;
    }
    case Family::Parabolic: {
      // log n < log N / gamma, i.e. n < N^(1/gamma).
      auto ok = [&](std::int64_t n) { return gamma * std::log(static_cast<double>(n)) < logN; };
      auto n = static_cast<std::int64_t>(std::floor(std::exp(logN / gamma)));
      if (n < 1) n = 1;
      while (n > 1 && !ok(n)) --n;
      while (ok(n + 1)) ++n;
      return n;
    }
  }
  return std::nullopt;
}

}  // namespace toral
