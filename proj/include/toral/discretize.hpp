#pragma once

// Anti-Wick discretization onto diagonal observables, the lattice-state
// kernel, the Egorov defect and verifiers for dynamical localization and
// orbit shadowing.

#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "toral/error.hpp"
#include "toral/geometry.hpp"
#include "toral/lattice.hpp"
#include "toral/maps.hpp"
#include "toral/matrix.hpp"
#include "toral/parallel.hpp"
#include "toral/rng.hpp"

namespace toral {

/// Diagonal of an element of D_N, row-major over the lattice.
template <class Scalar = double>
struct DiagonalObservable {
  LatticeConfig cfg;
  std::vector<Scalar> entries;

  DiagonalObservable(LatticeConfig c, std::vector<Scalar> e) : cfg(c), entries(std::move(e)) {
    require(static_cast<std::int64_t>(entries.size()) == cfg.script_N(),
            ErrorKind::DimensionMismatch, "diagonal observable needs N^2 entries");
  }

  static DiagonalObservable identity(LatticeConfig c) {
    return {c, std::vector<Scalar>(static_cast<std::size_t>(c.script_N()), Scalar(1))};
  }

  const Scalar& at(const LatticePoint& p) const { return entries[index_of(p, cfg)]; }

  /// Uniform trace state tau_N: mean of the entries.
  Scalar trace_state() const {
    Scalar s{};
    for (const auto& v : entries) s += v;
    return s / static_cast<double>(entries.size());
  }
};

/// A torus function with a declared uniform bound. Indicators of rational
/// rectangles keep their geometry so they can be discretized exactly.
template <class Scalar = double>
class Observable {
 public:
  using Fn = std::function<Scalar(const TorusPoint&)>;

  static Observable function(Fn fn, double bound, std::string name = "f") {
    Observable o;
    o.fn_ = std::move(fn);
    o.bound_ = bound;
    o.name_ = std::move(name);
    return o;
  }

  static Observable indicator(const TorusRect& rect, std::string name = "indicator") {
    Observable o;
    o.fn_ = [rect](const TorusPoint& x) { return rect.contains(x) ? Scalar(1) : Scalar(0); };
    o.bound_ = 1.0;
    o.rect_ = rect;
    o.name_ = std::move(name);
    return o;
  }

  Scalar operator()(const TorusPoint& x) const { return fn_(x); }
  double bound() const noexcept { return bound_; }
  const std::optional<TorusRect>& indicator_rect() const noexcept { return rect_; }
  const std::string& name() const noexcept { return name_; }

 private:
  Fn fn_;
  double bound_ = 0.0;
  std::optional<TorusRect> rect_;
  std::string name_;
};

namespace observables {

inline Observable<double> constant(double c) {
  return Observable<double>::function([c](const TorusPoint&) { return c; }, std::fabs(c), "const");
}

/// sin(2 pi x1)
inline Observable<double> sin_x1() {
  return Observable<double>::function(
      [](const TorusPoint& x) { return std::sin(2.0 * std::numbers::pi * x.x1); }, 1.0, "sin_x1");
}

/// cos(2 pi (x1 + x2))
inline Observable<double> cos_sum() {
  return Observable<double>::function(
      [](const TorusPoint& x) { return std::cos(2.0 * std::numbers::pi * (x.x1 + x.x2)); }, 1.0,
      "cos_sum");
}

}  // namespace observables

namespace detail {

// Mean of f over the q x q midpoint sub-grid of the cell centred at p / N.
template <class Scalar>
Scalar cell_average(const Observable<Scalar>& f, std::int64_t p1, std::int64_t p2, std::int64_t N,
                    int q) {
  const double n = static_cast<double>(N);
  Scalar acc{};
  for (int a = 0; a < q; ++a) {
    const double u = (static_cast<double>(p1) - 0.5 + (a + 0.5) / q) / n;
    for (int b = 0; b < q; ++b) {
      const double v = (static_cast<double>(p2) - 0.5 + (b + 0.5) / q) / n;
      acc += f(TorusPoint(u, v));
    }
  }
  return acc / static_cast<double>(q * q);
}

inline constexpr std::int64_t kRowChunk = 16;

// Exact s mod m for 0 <= s < 2^62 without a hardware division: the double
// quotient is off by at most one, which the fix-up absorbs.
struct FastMod {
  std::int64_t m;
  double inv;
  explicit FastMod(std::int64_t modulus) : m(modulus), inv(1.0 / static_cast<double>(modulus)) {}
  std::int64_t operator()(std::int64_t s) const noexcept {
    std::int64_t r = s - static_cast<std::int64_t>(static_cast<double>(s) * inv) * m;
    if (r < 0) r += m;
    else if (r >= m) r -= m;
    return r;
  }
};

}  // namespace detail

/// J_{N,inf}(f): entry l is N^2 times the integral of f over the cell of l.
/// Indicators are integrated exactly; other functions use the midpoint rule
/// on a quadrature x quadrature sub-grid (quadrature = 1 samples f(l / N)).
template <class Scalar>
DiagonalObservable<Scalar> discretize_aw(const Observable<Scalar>& f, const LatticeConfig& cfg,
                                         int quadrature = 1) {
  require(quadrature >= 1, ErrorKind::InvalidArgument, "quadrature must be >= 1");
  const auto N = cfg.N();
  std::vector<Scalar> e(static_cast<std::size_t>(cfg.script_N()));

  if (const auto& rect = f.indicator_rect()) {
    std::vector<double> w1(static_cast<std::size_t>(N)), w2(static_cast<std::size_t>(N));
    for (std::int64_t k = 0; k < N; ++k) {
      w1[k] = to_double(Rational(N) * overlap(cell_arc(k, N), rect->x1));
      w2[k] = to_double(Rational(N) * overlap(cell_arc(k, N), rect->x2));
    }
    for (std::int64_t p1 = 0; p1 < N; ++p1)
      for (std::int64_t p2 = 0; p2 < N; ++p2) e[p1 * N + p2] = Scalar(w1[p1] * w2[p2]);
    return {cfg, std::move(e)};
  }

  map_chunks(N, detail::kRowChunk, [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t p1 = r0; p1 < r1; ++p1)
      for (std::int64_t p2 = 0; p2 < N; ++p2)
        e[p1 * N + p2] = detail::cell_average(f, p1, p2, N, quadrature);
    return 0;
  });
  return {cfg, std::move(e)};
}

/// J_{inf,N}(X)(x) = <C(x), X C(x)>: the entry at x_hat_N.
template <class Scalar>
Scalar dediscretize_aw(const DiagonalObservable<Scalar>& X, const TorusPoint& x) {
  return X.at(round_to_lattice(x, X.cfg));
}

/// K_{N,n}(x, y): 1 iff U_T^n(x_hat) = y_hat.
inline int kernel(const ToralMatrix& T, const LatticeConfig& cfg, std::int64_t n,
                  const TorusPoint& x, const TorusPoint& y) {
  return discrete_step(T, round_to_lattice(x, cfg), cfg, n) == round_to_lattice(y, cfg) ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Egorov defect

namespace detail {

// Mesh coordinates (2a+1)/(2 grid) grouped by the lattice cell they round
// to: cell k owns order[start[k]] .. order[start[k+1]-1].
struct MeshCells {
  std::vector<std::int64_t> order, start;
};

inline MeshCells mesh_cells(std::int64_t N, std::int64_t grid) {
  MeshCells mc;
  mc.start.assign(static_cast<std::size_t>(N + 1), 0);
  std::vector<std::int64_t> cell(static_cast<std::size_t>(grid));
  for (std::int64_t a = 0; a < grid; ++a) {
    cell[static_cast<std::size_t>(a)] = (N * (2 * a + 1) + grid) / (2 * grid) % N;
    ++mc.start[static_cast<std::size_t>(cell[static_cast<std::size_t>(a)] + 1)];
  }
  for (std::size_t k = 1; k < mc.start.size(); ++k) mc.start[k] += mc.start[k - 1];
  mc.order.resize(static_cast<std::size_t>(grid));
  auto fill = mc.start;
  for (std::int64_t a = 0; a < grid; ++a)
    mc.order[static_cast<std::size_t>(fill[static_cast<std::size_t>(cell[static_cast<std::size_t>(a)])]++)] = a;
  return mc;
}

// Sum over the mesh of |f(P x) - X(Q x_hat)|^2 with P = T^j mod 2 grid and
// Q = T^j mod N. Points are visited cell by cell, so the lattice step and
// the table lookup happen once per cell.
template <class Scalar>
double egorov_pass(const IntMatrix2& P, const IntMatrix2& Q, const DiagonalObservable<Scalar>& X,
                   const Observable<Scalar>& f, std::int64_t grid, const MeshCells& mc) {
  const std::int64_t N = X.cfg.N();
  const std::int64_t M = 2 * grid;
  const double inv_m = 1.0 / static_cast<double>(M);
  const FastMod mod_m(M), mod_n(N);
  auto parts = map_chunks(N, kRowChunk, [&](std::int64_t r0, std::int64_t r1) {
    double sum = 0.0;
    for (std::int64_t p1 = r0; p1 < r1; ++p1) {
      for (std::int64_t p2 = 0; p2 < N; ++p2) {
        const std::int64_t q1 = mod_n(Q.a11 * p1 + Q.a12 * p2);
        const std::int64_t q2 = mod_n(Q.a21 * p1 + Q.a22 * p2);
        const Scalar disc = X.entries[static_cast<std::size_t>(q1 * N + q2)];
        for (std::int64_t i = mc.start[static_cast<std::size_t>(p1)]; i < mc.start[static_cast<std::size_t>(p1 + 1)]; ++i) {
          const std::int64_t v1 = 2 * mc.order[static_cast<std::size_t>(i)] + 1;
          const std::int64_t h1 = P.a11 * v1, h2 = P.a21 * v1;
          for (std::int64_t k = mc.start[static_cast<std::size_t>(p2)]; k < mc.start[static_cast<std::size_t>(p2 + 1)]; ++k) {
            const std::int64_t v2 = 2 * mc.order[static_cast<std::size_t>(k)] + 1;
            const std::int64_t w1 = mod_m(h1 + P.a12 * v2), w2 = mod_m(h2 + P.a22 * v2);
            const Scalar cont = f(TorusPoint(static_cast<double>(w1) * inv_m, static_cast<double>(w2) * inv_m));
            sum += std::norm(cont - disc);
          }
        }
      }
    }
    return sum;
  });
  double total = 0.0;
  for (double v : parts) total += v;
  return total;
}

}  // namespace detail

/// L2 norms of f o T^j - J_{inf,N}(Theta_N^j(J_{N,inf}(f))) for j = 0..j_max.
///
/// The mesh has grid x grid points ((2a+1)/(2 grid), (2b+1)/(2 grid)), so the
/// continuous orbit of every sample is computed exactly mod 2 grid and its
/// lattice rounding is an exact integer floor (ties round up). With
/// `stop_above` the sweep ends after the first j whose defect exceeds it.
template <class Scalar>
std::vector<double> egorov_defect_series(const IntMatrix2& m, const LatticeConfig& cfg,
                                         const Observable<Scalar>& f, std::int64_t j_max,
                                         std::int64_t grid, int quadrature = 2,
                                         std::optional<double> stop_above = std::nullopt) {
  require(j_max >= 0, ErrorKind::InvalidArgument, "j_max must be >= 0");
  require(grid >= cfg.N(), ErrorKind::InvalidArgument, "grid must be >= N");
  require(grid <= (std::int64_t{1} << 28), ErrorKind::CapacityExceeded, "grid too large");

  const auto X = discretize_aw(f, cfg, quadrature);
  const std::int64_t N = cfg.N();
  const std::int64_t M = 2 * grid;
  const IntMatrix2 tm = reduce(m, M), tn = reduce(m, N);
  const detail::MeshCells mc = detail::mesh_cells(N, grid);
  const double area = static_cast<double>(grid) * static_cast<double>(grid);

  std::vector<double> out;
  IntMatrix2 P = reduce(IntMatrix2::identity(), M), Q = reduce(IntMatrix2::identity(), N);
  for (std::int64_t j = 0; j <= j_max; ++j) {
    out.push_back(std::sqrt(detail::egorov_pass(P, Q, X, f, grid, mc) / area));
    if (stop_above && out.back() > *stop_above) break;
    P = multiply_mod(tm, P, M);
    Q = multiply_mod(tn, Q, N);
  }
  return out;
}

/// Egorov defect at a single time step j (negative j runs T^{-1}).
template <class Scalar>
double egorov_defect(const ToralMatrix& T, const LatticeConfig& cfg, const Observable<Scalar>& f,
                     std::int64_t j, std::int64_t grid, int quadrature = 2) {
  const IntMatrix2 m = j < 0 ? T.matrix().unimodular_inverse() : T.matrix();
  const std::int64_t steps = j < 0 ? -j : j;
  return egorov_defect_series(m, cfg, f, steps, grid, quadrature).back();
}

/// The defect of the kernel-smoothed evolution; identical in value to the
/// Egorov defect.
template <class Scalar>
double prop41_defect(const ToralMatrix& T, const LatticeConfig& cfg, const Observable<Scalar>& f,
                     std::int64_t n, std::int64_t grid, int quadrature = 2) {
  return egorov_defect(T, cfg, f, n, grid, quadrature);
}

/// Independent evaluation of the same norm: for every mesh point x the
/// smoothed value N^2 \int f(y) |K_{N,n}(x, y)|^2 dy is taken as the cell
/// average of f over the cell of U_T^n(x_hat), computed on demand, and f(T^n x)
/// uses the matrix power mod 2 grid instead of step-by-step iteration.
template <class Scalar>
double prop41_defect_direct(const ToralMatrix& T, const LatticeConfig& cfg,
                            const Observable<Scalar>& f, std::int64_t n, std::int64_t grid,
                            int quadrature = 2) {
  require(grid >= cfg.N(), ErrorKind::InvalidArgument, "grid must be >= N");
  require(!f.indicator_rect(), ErrorKind::InvalidArgument,
          "direct evaluation supports function observables only");
  const std::int64_t M = 2 * grid;
  const IntMatrix2 pm = power_mod(T.matrix(), n, M);
  const LatticeMap U(T, cfg, n);
  const double inv_m = 1.0 / static_cast<double>(M);

  double sum = 0.0;
  for (std::int64_t a = 0; a < grid; ++a) {
    for (std::int64_t b = 0; b < grid; ++b) {
      const std::int64_t v1 = 2 * a + 1, v2 = 2 * b + 1;
      const LatticePoint xhat = round_to_lattice(
          TorusPoint(static_cast<double>(v1) * inv_m, static_cast<double>(v2) * inv_m), cfg);
      const LatticePoint target = U(xhat);
      const Scalar smoothed = detail::cell_average(f, target.p1, target.p2, cfg.N(), quadrature);
      const std::int64_t w1 = (pm.a11 * v1 + pm.a12 * v2) % M;
      const std::int64_t w2 = (pm.a21 * v1 + pm.a22 * v2) % M;
      const Scalar cont = f(TorusPoint(static_cast<double>(w1) * inv_m, static_cast<double>(w2) * inv_m));
      sum += std::norm(cont - smoothed);
    }
  }
  return std::sqrt(sum / (static_cast<double>(grid) * static_cast<double>(grid)));
}

// ---------------------------------------------------------------------------
// Localization and shadowing

/// N~(n): above it the discrete orbit of x_hat stays within N~/(2N) of the
/// continuous orbit of x up to time n.
inline double shadowing_threshold(const SpectralData& s, std::int64_t n) {
  const double r2 = std::sqrt(2.0);
  switch (s.family) {
    case Family::Hyperbolic:
      return r2 * std::pow(s.abs_lambda(), static_cast<double>(n)) / s.sin_beta();
    case Family::Parabolic: return r2 * (2.0 * static_cast<double>(n) * s.J.value() + 1.0);
    case Family::Elliptic: return r2 * s.eta;
  }
  return 0.0;
}

/// N_M(n): above it K_{N,n}(x, y) = 0 whenever d(T^n x, y) >= d0.
inline double localization_threshold(const SpectralData& s, std::int64_t n, double d0) {
  require(d0 > 0, ErrorKind::InvalidArgument, "d0 must be positive");
  const double r2 = std::sqrt(2.0);
  const double shadow = shadowing_threshold(s, n);
  switch (s.family) {
    case Family::Hyperbolic: {
      const double spread = std::pow(s.abs_lambda(), static_cast<double>(n)) / s.sin_beta();
      return std::max((1.0 + spread) / (d0 * r2), shadow);
    }
    case Family::Parabolic:
      return std::max(r2 / d0 * (static_cast<double>(n) * s.J.value() + 1.0), shadow);
    case Family::Elliptic: return std::max((s.eta + 1.0) / (d0 * r2), shadow);
  }
  return shadow;
}

inline nlohmann::json matrix_json(const ToralMatrix& T) {
  return nlohmann::json::array({T.t11(), T.t12(), T.t21(), T.t22()});
}

struct LocalizationReport {
  ToralMatrix T;
  std::int64_t N = 0, n = 0;
  double gamma = 0, d0 = 0;
  std::int64_t trials = 0;
  std::uint64_t seed = 0;

  std::int64_t targeted = 0;     ///< pairs with y drawn inside the cell of U^n(x_hat)
  std::int64_t tested = 0;       ///< pairs with d(T^n x, y) >= d0
  std::int64_t violations = 0;   ///< tested pairs with K = 1
  std::int64_t kernel_hits = 0;  ///< all pairs with K = 1

  double threshold = 0;          ///< N_M(n)
  double scaling = 0;            ///< Gamma_T(n)
  double log_n_over_gamma = 0;
  bool premise_holds = false;    ///< N > N_M(n)
  bool time_window_holds = false;
};

inline void to_json(nlohmann::json& j, const LocalizationReport& r) {
  j = {{"operation", "verify_dynamical_localization"},
       {"parameters",
        {{"matrix", matrix_json(r.T)}, {"N", r.N}, {"n", r.n}, {"gamma", r.gamma}, {"d0", r.d0},
         {"trials", r.trials}}},
       {"seed", r.seed},
       {"counts",
        {{"drawn", r.trials}, {"targeted", r.targeted}, {"tested", r.tested},
         {"violations", r.violations}, {"kernel_hits", r.kernel_hits}}},
       {"threshold_N_M", r.threshold},
       {"scaling", r.scaling},
       {"log_N_over_gamma", r.log_n_over_gamma},
       {"premise_holds", r.premise_holds},
       {"time_window_holds", r.time_window_holds},
       {"max_ratio", nullptr},
       {"defect", nullptr}};
}

/// Draws `trials` seeded pairs (x, y) and counts kernel hits among pairs with
/// d(T^n x, y) >= d0. Odd-numbered trials draw y uniformly inside the lattice
/// cell of U_T^n(x_hat), so K = 1 for them and the distance test is the
/// substantive check; even-numbered trials draw y uniformly on the torus.
inline LocalizationReport verify_dynamical_localization(const ToralMatrix& T,
                                                        const LatticeConfig& cfg, std::int64_t n,
                                                        double gamma, double d0,
                                                        std::int64_t trials, std::uint64_t seed) {
  require(trials >= 1, ErrorKind::InvalidArgument, "trials must be >= 1");
  require(gamma > 1.0, ErrorKind::InvalidArgument, "gamma must be > 1");
  require(n >= 0, ErrorKind::InvalidArgument, "n must be >= 0");
  const SpectralData s = classify(T);

  LocalizationReport r{T};
  r.N = cfg.N();
  r.n = n;
  r.gamma = gamma;
  r.d0 = d0;
  r.trials = trials;
  r.seed = seed;
  r.threshold = localization_threshold(s, n, d0);
  r.scaling = n >= 1 ? scaling_function(s, n) : 0.0;
  r.log_n_over_gamma = std::log(static_cast<double>(cfg.N())) / gamma;
  r.premise_holds = static_cast<double>(cfg.N()) > r.threshold;
  r.time_window_holds = r.scaling < r.log_n_over_gamma;

  const LatticeMap U(T, cfg, n);
  const Rng root(seed);
  const double Nd = static_cast<double>(cfg.N());

  struct Counts {
    std::int64_t targeted = 0, tested = 0, violations = 0, hits = 0;
  };
  auto parts = map_chunks(trials, 4096, [&](std::int64_t k0, std::int64_t k1) {
    Counts c;
    for (std::int64_t k = k0; k < k1; ++k) {
      Rng rng = root.split(static_cast<std::uint64_t>(k));
      const TorusPoint x(rng.uniform(), rng.uniform());
      const LatticePoint target = U(round_to_lattice(x, cfg));
      TorusPoint y;
      if (k % 2 == 1) {
        ++c.targeted;
        y = TorusPoint((static_cast<double>(target.p1) - 0.5 + rng.uniform()) / Nd,
                       (static_cast<double>(target.p2) - 0.5 + rng.uniform()) / Nd);
      } else {
        y = TorusPoint(rng.uniform(), rng.uniform());
      }
      const int K = round_to_lattice(y, cfg) == target ? 1 : 0;
      c.hits += K;
      if (torus_distance(evolve(T, x, n), y) >= d0) {
        ++c.tested;
        c.violations += K;
      }
    }
    return c;
  });
  for (const auto& c : parts) {
    r.targeted += c.targeted;
    r.tested += c.tested;
    r.violations += c.violations;
    r.kernel_hits += c.hits;
  }
  return r;
}

struct ShadowingReport {
  ToralMatrix T;
  std::int64_t N = 0, n = 0, trials = 0;
  std::uint64_t seed = 0;
  double threshold = 0;  ///< N~(n)
  double bound = 0;      ///< N~(n) / (2N)
  double max_ratio = 0;  ///< max over samples and p <= n of distance * 2N / N~
  std::int64_t violations = 0;
};

inline void to_json(nlohmann::json& j, const ShadowingReport& r) {
  j = {{"operation", "verify_orbit_shadowing"},
       {"parameters", {{"matrix", matrix_json(r.T)}, {"N", r.N}, {"n", r.n}, {"trials", r.trials}}},
       {"seed", r.seed},
       {"counts", {{"samples", r.trials}, {"violations", r.violations}}},
       {"threshold_N_tilde", r.threshold},
       {"bound", r.bound},
       {"max_ratio", r.max_ratio},
       {"defect", nullptr}};
}

/// Checks d(T^p x, U_T^p(x_hat) / N) <= N~(n) / (2N) for p = 0..n on seeded
/// samples. Throws ThresholdUnmet when N <= N~(n).
inline ShadowingReport verify_orbit_shadowing(const ToralMatrix& T, const LatticeConfig& cfg,
                                              std::int64_t n, std::int64_t trials,
                                              std::uint64_t seed) {
  require(n >= 0, ErrorKind::InvalidArgument, "n must be >= 0");
  require(trials >= 1, ErrorKind::InvalidArgument, "trials must be >= 1");
  const SpectralData s = classify(T);
  ShadowingReport r{T};
  r.N = cfg.N();
  r.n = n;
  r.trials = trials;
  r.seed = seed;
  r.threshold = shadowing_threshold(s, n);
  r.bound = r.threshold / (2.0 * static_cast<double>(cfg.N()));
  if (!(static_cast<double>(cfg.N()) > r.threshold))
    throw Error(ErrorKind::ThresholdUnmet, "N = " + std::to_string(cfg.N()) +
                                               " is not above the shadowing threshold " +
                                               std::to_string(r.threshold));

  const LatticeMap U(T, cfg, 1);
  const Rng root(seed);
  struct Part {
    double max_ratio = 0;
    std::int64_t violations = 0;
  };
  auto parts = map_chunks(trials, 4096, [&](std::int64_t k0, std::int64_t k1) {
    Part p;
    for (std::int64_t k = k0; k < k1; ++k) {
      Rng rng = root.split(static_cast<std::uint64_t>(k));
      TorusPoint x(rng.uniform(), rng.uniform());
      LatticePoint l = round_to_lattice(x, cfg);
      bool bad = false;
      for (std::int64_t step = 0; step <= n; ++step) {
        const double ratio = torus_distance(x, to_torus(l, cfg)) / r.bound;
        p.max_ratio = std::max(p.max_ratio, ratio);
        bad = bad || ratio > 1.0;
        x = evolve(T, x, 1);
        l = U(l);
      }
      p.violations += bad ? 1 : 0;
    }
    return p;
  });
  for (const auto& p : parts) {
    r.max_ratio = std::max(r.max_ratio, p.max_ratio);
    r.violations += p.violations;
  }
  return r;
}

}  // namespace toral
