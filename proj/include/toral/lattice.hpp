#pragma once

// The N x N lattice (Z/NZ)^2, nearest-point rounding of torus points, the
// exact discrete dynamics U_T and its permutation table.

#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "toral/error.hpp"
#include "toral/matrix.hpp"

namespace toral {

inline constexpr std::int64_t kMaxLatticeSide = std::int64_t{1} << 30;
inline constexpr std::int64_t kDefaultMaxPoints = std::int64_t{1} << 26;

class LatticeConfig {
 public:
  explicit LatticeConfig(std::int64_t N) : N_(N) {
    require(N >= 2, ErrorKind::InvalidArgument, "lattice needs N >= 2, got " + std::to_string(N));
    require(N <= kMaxLatticeSide, ErrorKind::CapacityExceeded, "lattice side too large");
  }

  std::int64_t N() const noexcept { return N_; }
  /// Number of lattice points, the Hilbert-space dimension N^2.
  std::int64_t script_N() const noexcept { return N_ * N_; }

  friend bool operator==(const LatticeConfig&, const LatticeConfig&) = default;

 private:
  std::int64_t N_;
};

struct LatticePoint {
  std::int64_t p1 = 0, p2 = 0;
  friend bool operator==(const LatticePoint&, const LatticePoint&) = default;
};

/// Row-major flattening l = p1 * N + p2.
inline std::int64_t index_of(const LatticePoint& p, const LatticeConfig& cfg) noexcept {
  return p.p1 * cfg.N() + p.p2;
}

inline LatticePoint point_at(std::int64_t index, const LatticeConfig& cfg) noexcept {
  return {index / cfg.N(), index % cfg.N()};
}

/// Reduces a real number into [0, 1).
inline double wrap_unit(double v) noexcept {
  double r = v - std::floor(v);
  if (r >= 1.0) r = 0.0;  // v slightly below an integer
  return r;
}

struct TorusPoint {
  double x1 = 0.0, x2 = 0.0;

  TorusPoint() = default;
  TorusPoint(double a, double b) noexcept : x1(wrap_unit(a)), x2(wrap_unit(b)) {}
};

/// Length of the shorter segment joining x and y on the unit torus.
inline double torus_distance(const TorusPoint& x, const TorusPoint& y) noexcept {
  auto circ = [](double a, double b) {
    const double d = std::fabs(a - b);
    return std::min(d, 1.0 - d);
  };
  return std::hypot(circ(x.x1, y.x1), circ(x.x2, y.x2));
}

/// x_hat_N = (floor(N x1 + 1/2), floor(N x2 + 1/2)) mod N.
inline LatticePoint round_to_lattice(const TorusPoint& x, const LatticeConfig& cfg) noexcept {
  const auto N = cfg.N();
  const double n = static_cast<double>(N);
  auto r = [&](double v) {
    return detail::mod(static_cast<std::int64_t>(std::floor(n * v + 0.5)), N);
  };
  return {r(x.x1), r(x.x2)};
}

/// The lattice point as a torus point, p / N.
inline TorusPoint to_torus(const LatticePoint& p, const LatticeConfig& cfg) noexcept {
  const double n = static_cast<double>(cfg.N());
  return {static_cast<double>(p.p1) / n, static_cast<double>(p.p2) / n};
}

/// U_T^j for a fixed power j, reduced mod N once; the identity matrix is
/// allowed here (it models the trivial dynamics).
class LatticeMap {
 public:
  LatticeMap(const IntMatrix2& m, const LatticeConfig& cfg, std::int64_t j = 1)
      : N_(cfg.N()), m_(power_mod(m, j, cfg.N())) {}
  LatticeMap(const ToralMatrix& T, const LatticeConfig& cfg, std::int64_t j = 1)
      : LatticeMap(T.matrix(), cfg, j) {}

  LatticePoint operator()(const LatticePoint& p) const noexcept {
    using detail::mulmod;
    return {(mulmod(m_.a11, p.p1, N_) + mulmod(m_.a12, p.p2, N_)) % N_,
            (mulmod(m_.a21, p.p1, N_) + mulmod(m_.a22, p.p2, N_)) % N_};
  }

  std::int64_t N() const noexcept { return N_; }
  const IntMatrix2& matrix_mod_N() const noexcept { return m_; }

 private:
  std::int64_t N_;
  IntMatrix2 m_;
};

/// U_T^j(l) = T^j l mod N in exact integer arithmetic (j may be negative).
inline LatticePoint discrete_step(const ToralMatrix& T, const LatticePoint& l,
                                  const LatticeConfig& cfg, std::int64_t j) {
  return LatticeMap(T, cfg, j)(l);
}

/// Continuous dynamics T^j(x) mod 1, iterated one step at a time in
/// extended precision.
inline TorusPoint evolve(const IntMatrix2& m, const TorusPoint& x, std::int64_t j) {
  IntMatrix2 step = j < 0 ? m.unimodular_inverse() : m;
  long double a = x.x1, b = x.x2;
  for (std::int64_t k = 0, steps = j < 0 ? -j : j; k < steps; ++k) {
    const long double na = step.a11 * a + step.a12 * b;
    const long double nb = step.a21 * a + step.a22 * b;
    a = na - std::floor(na);
    b = nb - std::floor(nb);
  }
  return {static_cast<double>(a), static_cast<double>(b)};
}

inline TorusPoint evolve(const ToralMatrix& T, const TorusPoint& x, std::int64_t j) {
  return evolve(T.matrix(), x, j);
}

/// Bijection of {0, ..., N^2 - 1}; forward[l] is the row-major index of
/// U_T(l). Acting on a diagonal observable by X -> X o forward realises the
/// discrete Koopman automorphism.
class Permutation {
 public:
  Permutation() = default;
  explicit Permutation(std::vector<std::uint32_t> forward) : forward_(std::move(forward)) {}

  static Permutation identity(std::size_t n) {
    std::vector<std::uint32_t> f(n);
    std::iota(f.begin(), f.end(), 0u);
    return Permutation(std::move(f));
  }

  std::size_t size() const noexcept { return forward_.size(); }
  std::uint32_t operator[](std::size_t i) const noexcept { return forward_[i]; }
  std::span<const std::uint32_t> forward() const noexcept { return forward_; }

  friend bool operator==(const Permutation&, const Permutation&) = default;

  bool is_bijection() const {
    std::vector<char> seen(forward_.size(), 0);
    for (auto v : forward_) {
      if (v >= forward_.size() || seen[v]) return false;
      seen[v] = 1;
    }
    return true;
  }

  Permutation inverse() const {
    std::vector<std::uint32_t> inv(forward_.size());
    for (std::size_t i = 0; i < forward_.size(); ++i) inv[forward_[i]] = static_cast<std::uint32_t>(i);
    return Permutation(std::move(inv));
  }

  /// (this o other)[l] = this[other[l]]: apply `other` first.
  Permutation after(const Permutation& other) const {
    require(other.size() == size(), ErrorKind::DimensionMismatch, "permutation sizes differ");
    std::vector<std::uint32_t> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = forward_[other.forward_[i]];
    return Permutation(std::move(out));
  }

  Permutation power(std::int64_t j) const {
    Permutation base = j < 0 ? inverse() : *this;
    Permutation acc = identity(size());
    for (std::int64_t e = j < 0 ? -j : j; e > 0; e >>= 1) {
      if (e & 1) acc = acc.after(base);
      base = base.after(base);
    }
    return acc;
  }

  /// Diagonal entries of Theta(X): entry l becomes X[forward[l]].
  template <class T>
  std::vector<T> apply_to_diagonal(std::span<const T> diag) const {
    require(diag.size() == size(), ErrorKind::DimensionMismatch, "diagonal length differs");
    std::vector<T> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = diag[forward_[i]];
    return out;
  }

  std::vector<std::uint64_t> cycle_lengths() const {
    std::vector<std::uint64_t> lengths;
    std::vector<char> seen(size(), 0);
    for (std::size_t s = 0; s < size(); ++s) {
      if (seen[s]) continue;
      std::uint64_t len = 0;
      for (std::size_t i = s; !seen[i]; i = forward_[i]) {
        seen[i] = 1;
        ++len;
      }
      lengths.push_back(len);
    }
    return lengths;
  }

  /// Least p >= 1 with forward^p = identity (lcm of the cycle lengths).
  std::uint64_t order() const {
    std::uint64_t acc = 1;
    for (auto len : cycle_lengths()) {
      const std::uint64_t g = std::gcd(acc, len);
      std::uint64_t r;
      if (__builtin_mul_overflow(acc / g, len, &r))
        throw Error(ErrorKind::Overflow, "permutation order exceeds 64 bits");
      acc = r;
    }
    return acc;
  }

 private:
  std::vector<std::uint32_t> forward_;
};

namespace detail {
inline void check_capacity(const LatticeConfig& cfg, std::int64_t max_points) {
  if (cfg.script_N() > max_points || cfg.script_N() > std::int64_t{0xFFFFFFFF})
    throw Error(ErrorKind::CapacityExceeded,
                "N^2 = " + std::to_string(cfg.script_N()) + " exceeds the table limit " +
                    std::to_string(max_points));
}
}  // namespace detail

/// Permutation table of U_T^j over all N^2 lattice points.
inline Permutation build_permutation(const IntMatrix2& m, const LatticeConfig& cfg,
                                     std::int64_t j = 1,
                                     std::int64_t max_points = kDefaultMaxPoints) {
  detail::check_capacity(cfg, max_points);
  const LatticeMap U(m, cfg, j);
  const auto N = cfg.N();
  std::vector<std::uint32_t> f(static_cast<std::size_t>(cfg.script_N()));
  for (std::int64_t p1 = 0; p1 < N; ++p1)
    for (std::int64_t p2 = 0; p2 < N; ++p2)
      f[static_cast<std::size_t>(p1 * N + p2)] =
          static_cast<std::uint32_t>(index_of(U({p1, p2}), cfg));
  return Permutation(std::move(f));
}

inline Permutation build_permutation(const ToralMatrix& T, const LatticeConfig& cfg,
                                     std::int64_t j = 1,
                                     std::int64_t max_points = kDefaultMaxPoints) {
  return build_permutation(T.matrix(), cfg, j, max_points);
}

/// Global period of U_T on (Z/NZ)^2.
inline std::uint64_t orbit_period(const ToralMatrix& T, const LatticeConfig& cfg,
                                  std::int64_t max_points = kDefaultMaxPoints) {
  return build_permutation(T, cfg, 1, max_points).order();
}

// Serialization: N^2 row-major integers. CSV is one value per line after a
// "# N=<N>" header; binary is raw little-endian uint32 with no header.

inline void write_csv(std::ostream& os, const Permutation& p, const LatticeConfig& cfg) {
  os << "# N=" << cfg.N() << "\n";
  for (auto v : p.forward()) os << v << "\n";
}

inline Permutation read_csv(std::istream& is) {
  std::vector<std::uint32_t> f;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    f.push_back(static_cast<std::uint32_t>(std::stoul(line)));
  }
  Permutation p(std::move(f));
  require(p.is_bijection(), ErrorKind::InvalidArgument, "CSV table is not a permutation");
  return p;
}

inline void write_binary(std::ostream& os, const Permutation& p) {
  for (auto v : p.forward()) {
    const unsigned char bytes[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                    static_cast<unsigned char>(v >> 16),
                                    static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(bytes), 4);
  }
}

inline Permutation read_binary(std::istream& is) {
  std::vector<std::uint32_t> f;
  unsigned char b[4];
  while (is.read(reinterpret_cast<char*>(b), 4))
    f.push_back(std::uint32_t{b[0]} | std::uint32_t{b[1]} << 8 | std::uint32_t{b[2]} << 16 |
                std::uint32_t{b[3]} << 24);
  Permutation p(std::move(f));
  require(p.is_bijection(), ErrorKind::InvalidArgument, "binary table is not a permutation");
  return p;
}

}  // namespace toral
