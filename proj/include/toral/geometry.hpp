#pragma once

// Exact rational arcs and rectangles on the unit torus. Lattice cells and
// partition atoms are both of this form, so every overlap used downstream is
// a product of two exact 1-D arc intersections.

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>

#include <boost/rational.hpp>

#include "toral/error.hpp"
#include "toral/lattice.hpp"

namespace toral {

using Rational = boost::rational<std::int64_t>;

inline double to_double(const Rational& r) noexcept {
  return static_cast<double>(r.numerator()) / static_cast<double>(r.denominator());
}

inline Rational frac(const Rational& r) {
  const std::int64_t fl = r.numerator() >= 0 ? r.numerator() / r.denominator()
                                             : -((-r.numerator() + r.denominator() - 1) / r.denominator());
  return r - Rational(fl);
}

inline std::string to_string(const Rational& r) {
  if (r.denominator() == 1) return std::to_string(r.numerator());
  return std::to_string(r.numerator()) + "/" + std::to_string(r.denominator());
}

/// Half-open arc [lo, lo + len) of the unit circle; it wraps past 1 when
/// lo + len > 1. Invariants: 0 <= lo < 1 and 0 < len <= 1.
class Arc {
 public:
  Arc(Rational lo, Rational len) : lo_(frac(lo)), len_(len) {
    require(len > 0 && len <= 1, ErrorKind::InvalidPartition, "arc length must be in (0, 1]");
    if (len_ == Rational(1)) lo_ = 0;
  }

  /// [a, b) read on the circle; b <= a wraps through 0, and a == b is the
  /// whole circle only when written as [0, 1).
  static Arc between(Rational a, Rational b) {
    if (a == Rational(0) && b == Rational(1)) return Arc(0, 1);
    const Rational lo = frac(a);
    Rational len = frac(b) - lo;
    if (len <= 0) len += 1;
    return Arc(lo, len);
  }

  static Arc full() { return Arc(0, 1); }

  const Rational& lo() const noexcept { return lo_; }
  const Rational& length() const noexcept { return len_; }
  Rational hi() const { return lo_ + len_; }
  bool is_full() const noexcept { return len_ == Rational(1); }

  /// Compares against the endpoints themselves, so arcs sharing an endpoint
  /// never both miss or both claim a point.
  bool contains(double x) const noexcept {
    if (is_full()) return true;
    const double lo = to_double(lo_);
    const Rational h = hi();
    if (h <= 1) return lo <= x && x < to_double(h);
    return x >= lo || x < to_double(h - 1);
  }

  /// Up to two ordinary intervals inside [0, 1] covering the arc.
  int pieces(std::array<std::pair<Rational, Rational>, 2>& out) const {
    const Rational h = hi();
    if (h <= 1) {
      out[0] = {lo_, h};
      return 1;
    }
    out[0] = {lo_, Rational(1)};
    out[1] = {Rational(0), h - 1};
    return 2;
  }

  friend bool operator==(const Arc&, const Arc&) = default;

 private:
  Rational lo_, len_;
};

/// Exact length of the intersection of two arcs.
inline Rational overlap(const Arc& a, const Arc& b) {
  std::array<std::pair<Rational, Rational>, 2> pa, pb;
  const int na = a.pieces(pa), nb = b.pieces(pb);
  Rational total = 0;
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < nb; ++j) {
      const Rational lo = std::max(pa[i].first, pb[j].first);
      const Rational hi = std::min(pa[i].second, pb[j].second);
      if (hi > lo) total += hi - lo;
    }
  return total;
}

struct TorusRect {
  Arc x1, x2;

  Rational measure() const { return x1.length() * x2.length(); }
  bool contains(const TorusPoint& p) const noexcept { return x1.contains(p.x1) && x2.contains(p.x2); }
  friend bool operator==(const TorusRect&, const TorusRect&) = default;
};

inline Rational overlap(const TorusRect& a, const TorusRect& b) {
  return overlap(a.x1, b.x1) * overlap(a.x2, b.x2);
}

/// 1-D lattice cell of index k: [(k - 1/2)/N, (k + 1/2)/N) mod 1, the set of
/// coordinates that round to k.
inline Arc cell_arc(std::int64_t k, std::int64_t N) {
  return Arc(Rational(2 * k - 1, 2 * N), Rational(1, N));
}

inline TorusRect cell_rect(const LatticePoint& p, const LatticeConfig& cfg) {
  return {cell_arc(p.p1, cfg.N()), cell_arc(p.p2, cfg.N())};
}

}  // namespace toral
