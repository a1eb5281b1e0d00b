#pragma once

#include <cstdint>
#include <string>

#include "toral/error.hpp"

namespace toral {

/// Plain 2x2 integer matrix. No invariants; see ToralMatrix for the
/// validated generator type.
struct IntMatrix2 {
  std::int64_t a11 = 1, a12 = 0, a21 = 0, a22 = 1;

  static constexpr IntMatrix2 identity() noexcept { return {1, 0, 0, 1}; }

  constexpr std::int64_t det() const noexcept { return a11 * a22 - a12 * a21; }
  constexpr std::int64_t trace() const noexcept { return a11 + a22; }
  constexpr IntMatrix2 operator-() const noexcept { return {-a11, -a12, -a21, -a22}; }

  friend constexpr bool operator==(const IntMatrix2&, const IntMatrix2&) = default;

  /// Inverse of a determinant-one matrix.
  constexpr IntMatrix2 unimodular_inverse() const noexcept { return {a22, -a12, -a21, a11}; }

  /// Sum of squared entries (trace of M^T M).
  constexpr std::int64_t frobenius2() const noexcept {
    return a11 * a11 + a12 * a12 + a21 * a21 + a22 * a22;
  }

  bool is_plus_minus_identity() const noexcept {
    return *this == identity() || *this == -identity();
  }
};

namespace detail {

inline std::int64_t checked_mul(std::int64_t a, std::int64_t b) {
  std::int64_t r;
  if (__builtin_mul_overflow(a, b, &r)) throw Error(ErrorKind::Overflow, "integer matrix product");
  return r;
}

inline std::int64_t checked_add(std::int64_t a, std::int64_t b) {
  std::int64_t r;
  if (__builtin_add_overflow(a, b, &r)) throw Error(ErrorKind::Overflow, "integer matrix sum");
  return r;
}

__extension__ using int128 = __int128;

/// Non-negative residue of x mod m, m > 0.
constexpr std::int64_t mod(std::int64_t x, std::int64_t m) noexcept {
  const std::int64_t r = x % m;
  return r < 0 ? r + m : r;
}

constexpr std::int64_t mulmod(std::int64_t a, std::int64_t b, std::int64_t m) noexcept {
  return static_cast<std::int64_t>((static_cast<int128>(a) * b) % m);
}

}  // namespace detail

/// Exact product; throws Overflow instead of wrapping.
inline IntMatrix2 multiply(const IntMatrix2& x, const IntMatrix2& y) {
  using detail::checked_add;
  using detail::checked_mul;
  return {checked_add(checked_mul(x.a11, y.a11), checked_mul(x.a12, y.a21)),
          checked_add(checked_mul(x.a11, y.a12), checked_mul(x.a12, y.a22)),
          checked_add(checked_mul(x.a21, y.a11), checked_mul(x.a22, y.a21)),
          checked_add(checked_mul(x.a21, y.a12), checked_mul(x.a22, y.a22))};
}

/// Entries reduced to [0, m).
constexpr IntMatrix2 reduce(const IntMatrix2& x, std::int64_t m) noexcept {
  using detail::mod;
  return {mod(x.a11, m), mod(x.a12, m), mod(x.a21, m), mod(x.a22, m)};
}

/// Product modulo m of two matrices already reduced mod m.
constexpr IntMatrix2 multiply_mod(const IntMatrix2& x, const IntMatrix2& y, std::int64_t m) noexcept {
  using detail::mulmod;
  return {(mulmod(x.a11, y.a11, m) + mulmod(x.a12, y.a21, m)) % m,
          (mulmod(x.a11, y.a12, m) + mulmod(x.a12, y.a22, m)) % m,
          (mulmod(x.a21, y.a11, m) + mulmod(x.a22, y.a21, m)) % m,
          (mulmod(x.a21, y.a12, m) + mulmod(x.a22, y.a22, m)) % m};
}

/// M^j mod m for a determinant-one M; negative j uses the exact inverse.
inline IntMatrix2 power_mod(IntMatrix2 base, std::int64_t j, std::int64_t m) {
  require(m >= 1, ErrorKind::InvalidArgument, "modulus must be positive");
  if (j < 0) {
    base = base.unimodular_inverse();
    j = -j;
  }
  base = reduce(base, m);
  IntMatrix2 acc = reduce(IntMatrix2::identity(), m);
  while (j > 0) {
    if (j & 1) acc = multiply_mod(acc, base, m);
    base = multiply_mod(base, base, m);
    j >>= 1;
  }
  return acc;
}

/// Exact M^j over the integers (j may be negative); throws Overflow.
inline IntMatrix2 power(IntMatrix2 base, std::int64_t j) {
  if (j < 0) {
    base = base.unimodular_inverse();
    j = -j;
  }
  IntMatrix2 acc = IntMatrix2::identity();
  for (std::int64_t k = 0; k < j; ++k) acc = multiply(acc, base);
  return acc;
}

/// A 2x2 integer matrix with determinant one that is not +-identity:
/// the generator of a toral automorphism.
class ToralMatrix {
 public:
  ToralMatrix(std::int64_t t11, std::int64_t t12, std::int64_t t21, std::int64_t t22)
      : m_{t11, t12, t21, t22} {
    const auto det = static_cast<detail::int128>(t11) * t22 - static_cast<detail::int128>(t12) * t21;
    if (det != 1)
      throw Error(ErrorKind::NonUnimodular,
                  "determinant is " + std::to_string(static_cast<long long>(det)) + ", expected 1");
    if (m_.is_plus_minus_identity())
      throw Error(ErrorKind::TrivialMatrix, "T = +-identity is excluded");
  }

  explicit ToralMatrix(const IntMatrix2& m) : ToralMatrix(m.a11, m.a12, m.a21, m.a22) {}

  const IntMatrix2& matrix() const noexcept { return m_; }
  std::int64_t t11() const noexcept { return m_.a11; }
  std::int64_t t12() const noexcept { return m_.a12; }
  std::int64_t t21() const noexcept { return m_.a21; }
  std::int64_t t22() const noexcept { return m_.a22; }
  std::int64_t trace() const noexcept { return m_.trace(); }

  ToralMatrix inverse() const { return ToralMatrix(m_.unimodular_inverse()); }
  ToralMatrix negated() const { return ToralMatrix(-m_); }

  friend bool operator==(const ToralMatrix&, const ToralMatrix&) = default;

  std::string to_string() const {
    return "[[" + std::to_string(m_.a11) + "," + std::to_string(m_.a12) + "],[" +
           std::to_string(m_.a21) + "," + std::to_string(m_.a22) + "]]";
  }

 private:
  IntMatrix2 m_;
};

namespace presets {
inline ToralMatrix cat_map() { return {2, 1, 1, 1}; }
inline ToralMatrix unit_shear() { return {1, 1, 0, 1}; }
inline ToralMatrix quarter_turn() { return {0, 1, -1, 0}; }
}  // namespace presets

}  // namespace toral
