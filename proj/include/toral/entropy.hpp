#pragma once

// Symbolic codings of orbits over rectangle partitions: classical (KS)
// string probabilities by Monte Carlo, coherent-state (CS) probabilities of
// the discretized dynamics in closed form, their entropies and the
// comparison between the two as the lattice is refined.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
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

// ---------------------------------------------------------------------------
// Partitions

class Partition {
 public:
  explicit Partition(std::vector<TorusRect> atoms) : atoms_(std::move(atoms)) {
    require(!atoms_.empty(), ErrorKind::InvalidPartition, "partition needs at least one atom");
    Rational total = 0;
    for (const auto& a : atoms_) total += a.measure();
    require(total == Rational(1), ErrorKind::InvalidPartition,
            "atom measures sum to " + to_string(total) + ", not 1");
    for (std::size_t i = 0; i < atoms_.size(); ++i)
      for (std::size_t j = i + 1; j < atoms_.size(); ++j)
        require(overlap(atoms_[i], atoms_[j]) == Rational(0), ErrorKind::InvalidPartition,
                "atoms " + std::to_string(i) + " and " + std::to_string(j) + " overlap");
  }

  /// {x1 < 1/2, x1 >= 1/2}
  static Partition halves() {
    const Arc lo = Arc::between(0, Rational(1, 2)), hi = Arc::between(Rational(1, 2), 1);
    return Partition({{lo, Arc::full()}, {hi, Arc::full()}});
  }

  /// Atom 2a + b holds x1 in half a and x2 in half b.
  static Partition quadrants() {
    const Arc h[2] = {Arc::between(0, Rational(1, 2)), Arc::between(Rational(1, 2), 1)};
    return Partition({{h[0], h[0]}, {h[0], h[1]}, {h[1], h[0]}, {h[1], h[1]}});
  }

  std::size_t size() const noexcept { return atoms_.size(); }
  const std::vector<TorusRect>& atoms() const noexcept { return atoms_; }
  const TorusRect& operator[](std::size_t i) const noexcept { return atoms_[i]; }

  std::size_t atom_of(const TorusPoint& x) const {
    for (std::size_t i = 0; i < atoms_.size(); ++i)
      if (atoms_[i].contains(x)) return i;
    throw Error(ErrorKind::InvalidPartition, "point not covered by any atom");
  }

  /// Every non-trivial boundary coordinate lies on a lattice-cell edge
  /// (k + 1/2) / N.
  bool is_aligned(std::int64_t N) const {
    auto on_edge = [N](const Rational& c) {
      const Rational s = c * Rational(2 * N);
      return s.denominator() == 1 && s.numerator() % 2 != 0;
    };
    for (const auto& a : atoms_)
      for (const Arc* arc : {&a.x1, &a.x2})
        if (!arc->is_full() && (!on_edge(arc->lo()) || !on_edge(frac(arc->hi())))) return false;
    return true;
  }

  friend bool operator==(const Partition&, const Partition&) = default;

 private:
  std::vector<TorusRect> atoms_;
};

struct SnapResult {
  Partition partition;
  Rational distance;  ///< largest boundary displacement
};

/// Moves every boundary c to the cell edge (floor(N c) + 1/2) / N, the edge
/// of the cell that contains c from the left.
inline SnapResult snap_to_aligned(const Partition& P, std::int64_t N) {
  require(N >= 2, ErrorKind::InvalidArgument, "snap needs N >= 2");
  auto snap = [N](const Rational& c) {
    const Rational s = c * Rational(N);
    const std::int64_t fl = s.numerator() >= 0 ? s.numerator() / s.denominator()
                                               : -((-s.numerator() + s.denominator() - 1) / s.denominator());
    return Rational(2 * fl + 1, 2 * N);
  };
  Rational dist = 0;
  auto snap_arc = [&](const Arc& a) {
    if (a.is_full()) return a;
    const Rational lo = snap(a.lo()), hi = snap(a.hi());
    dist = std::max({dist, boost::abs(lo - a.lo()), boost::abs(hi - a.hi())});
    require(hi > lo, ErrorKind::InvalidPartition, "snapping collapses an atom at this N");
    return Arc(lo, hi - lo);
  };
  std::vector<TorusRect> atoms;
  for (const auto& a : P.atoms()) atoms.push_back({snap_arc(a.x1), snap_arc(a.x2)});
  return {Partition(std::move(atoms)), dist};
}

// ---------------------------------------------------------------------------
// Probability tables

namespace detail {

inline std::uint64_t checked_pow(std::uint64_t D, std::int64_t n) {
  std::uint64_t r = 1;
  for (std::int64_t k = 0; k < n; ++k)
    if (__builtin_mul_overflow(r, D, &r))
      throw Error(ErrorKind::Overflow, "D^n exceeds 64 bits");
  return r;
}

// Strings at or below this many codes are counted in a dense array.
inline constexpr std::uint64_t kDenseLimit = std::uint64_t{1} << 24;

// Histogram of codes, as sorted (code, count) pairs.
inline std::vector<std::pair<std::uint64_t, std::uint64_t>> count_codes(
    const std::vector<std::uint64_t>& codes, std::uint64_t space) {
  std::vector<std::pair<std::uint64_t, std::uint64_t>> out;
  if (space <= kDenseLimit) {
    std::vector<std::uint64_t> c(space, 0);
    for (auto v : codes) ++c[v];
    for (std::uint64_t v = 0; v < space; ++v)
      if (c[v]) out.emplace_back(v, c[v]);
    return out;
  }
  std::vector<std::uint64_t> sorted = codes;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    out.emplace_back(sorted[i], j - i);
    i = j;
  }
  return out;
}

}  // namespace detail

/// Probabilities of length-n strings over D symbols. A string i0 ... i_{n-1}
/// is packed as the base-D number with i0 as its leading digit; only
/// non-zero entries are stored, sorted by code. Tables built from counts
/// keep them, so their probabilities are exact rationals count / denominator.
class ProbabilityTable {
 public:
  using Entry = std::pair<std::uint64_t, double>;

  ProbabilityTable(std::int64_t n, std::size_t D, std::vector<Entry> entries)
      : n_(n), D_(D), entries_(std::move(entries)) {
    validate();
  }

  static ProbabilityTable from_counts(std::int64_t n, std::size_t D,
                                      std::vector<std::pair<std::uint64_t, std::uint64_t>> counts,
                                      std::uint64_t denominator) {
    std::vector<Entry> e;
    e.reserve(counts.size());
    std::uint64_t total = 0;
    for (const auto& [code, c] : counts) {
      e.emplace_back(code, static_cast<double>(c) / static_cast<double>(denominator));
      total += c;
    }
    require(total == denominator, ErrorKind::InvalidArgument, "counts do not sum to the denominator");
    ProbabilityTable t(n, D, std::move(e));
    t.counts_ = std::move(counts);
    t.denominator_ = denominator;
    return t;
  }

  std::int64_t n() const noexcept { return n_; }
  std::size_t D() const noexcept { return D_; }
  std::uint64_t space() const { return detail::checked_pow(D_, n_); }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  bool exact() const noexcept { return denominator_.has_value(); }
  std::optional<std::uint64_t> denominator() const noexcept { return denominator_; }
  const std::vector<std::pair<std::uint64_t, std::uint64_t>>& counts() const noexcept { return counts_; }

  double at(std::uint64_t code) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), code,
                               [](const Entry& e, std::uint64_t c) { return e.first < c; });
    return it != entries_.end() && it->first == code ? it->second : 0.0;
  }

  double sum() const {
    double s = 0;
    for (const auto& e : entries_) s += e.second;
    return s;
  }

  std::vector<int> symbols(std::uint64_t code) const {
    std::vector<int> s(static_cast<std::size_t>(n_));
    for (std::int64_t k = n_ - 1; k >= 0; --k) {
      s[static_cast<std::size_t>(k)] = static_cast<int>(code % D_);
      code /= D_;
    }
    return s;
  }

  std::uint64_t code_of(const std::vector<int>& s) const {
    require(static_cast<std::int64_t>(s.size()) == n_, ErrorKind::DimensionMismatch, "string length differs");
    std::uint64_t c = 0;
    for (int v : s) c = c * D_ + static_cast<std::uint64_t>(v);
    return c;
  }

  std::string label(std::uint64_t code) const {
    std::string out;
    for (int v : symbols(code)) {
      if (D_ > 10 && !out.empty()) out += '.';
      out += std::to_string(v);
    }
    return out;
  }

  /// The table of reversed strings: entry i0 ... i_{n-1} moves to
  /// i_{n-1} ... i0.
  ProbabilityTable reversed() const {
    auto rev = [&](std::uint64_t code) {
      std::uint64_t r = 0;
      for (std::int64_t k = 0; k < n_; ++k, code /= D_) r = r * D_ + code % D_;
      return r;
    };
    if (exact()) {
      auto c = counts_;
      for (auto& e : c) e.first = rev(e.first);
      std::sort(c.begin(), c.end());
      return from_counts(n_, D_, std::move(c), *denominator_);
    }
    auto e = entries_;
    for (auto& x : e) x.first = rev(x.first);
    std::sort(e.begin(), e.end());
    return {n_, D_, std::move(e)};
  }

 private:
  void validate() {
    require(n_ >= 1, ErrorKind::InvalidArgument, "string length must be >= 1");
    require(D_ >= 1, ErrorKind::InvalidArgument, "alphabet must be non-empty");
    const std::uint64_t sp = space();
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      require(entries_[i].first < sp, ErrorKind::InvalidArgument, "string code out of range");
      require(entries_[i].second >= 0 && std::isfinite(entries_[i].second), ErrorKind::InvalidArgument,
              "probabilities must be finite and >= 0");
      require(i == 0 || entries_[i - 1].first < entries_[i].first, ErrorKind::InvalidArgument,
              "table codes must be strictly increasing");
    }
    require(std::fabs(sum() - 1.0) <= 1e-12, ErrorKind::InvalidArgument, "probabilities do not sum to 1");
  }

  std::int64_t n_;
  std::size_t D_;
  std::vector<Entry> entries_;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> counts_;
  std::optional<std::uint64_t> denominator_;
};

/// -sum p log p in nats, summed in code order. Exact tables hold each
/// probability as the correctly rounded ratio count / denominator, so equal
/// rationals always give bit-identical entropies.
inline double shannon_entropy(const ProbabilityTable& t) {
  double s = 0;
  for (const auto& [code, p] : t.entries())
    if (p > 0) s -= p * std::log(p);
  return s;
}

/// S_mu(E) = -sum mu(E_i) log mu(E_i) from the exact atom areas.
inline double partition_entropy(const Partition& P) {
  double s = 0;
  for (const auto& a : P.atoms()) {
    const double m = to_double(a.measure());
    if (m > 0) s -= m * std::log(m);
  }
  return s;
}

inline void write_csv(std::ostream& os, const ProbabilityTable& t) {
  os << "string,code,probability\n";
  char buf[64];
  for (const auto& [code, p] : t.entries()) {
    std::snprintf(buf, sizeof buf, "%.17g", p);
    os << t.label(code) << ',' << code << ',' << buf << '\n';
  }
}

// ---------------------------------------------------------------------------
// Classical side

struct ClassicalEstimate {
  ProbabilityTable table;
  double entropy = 0;
  double entropy_stderr = 0;  ///< delta-method standard error of the plug-in entropy
  std::int64_t samples = 0;
  std::uint64_t seed = 0;

  /// sqrt(p (1 - p) / samples) for one string.
  double stderr_of(std::uint64_t code) const {
    const double p = table.at(code);
    return std::sqrt(p * (1 - p) / static_cast<double>(samples));
  }
};

namespace detail {

inline double entropy_stderr(const ProbabilityTable& t, std::int64_t samples, double S) {
  double m2 = 0;
  for (const auto& [code, p] : t.entries())
    if (p > 0) m2 += p * std::log(p) * std::log(p);
  return std::sqrt(std::max(m2 - S * S, 0.0) / static_cast<double>(samples));
}

// Codes of the forward orbit x, T x, ..., T^{n-1} x for seeded uniform x.
inline std::vector<std::uint64_t> orbit_codes(const IntMatrix2& m, const Partition& P, std::int64_t n,
                                              std::int64_t samples, std::uint64_t seed) {
  std::vector<std::uint64_t> codes(static_cast<std::size_t>(samples));
  const Rng root(seed);
  const std::uint64_t D = P.size();
  map_chunks(samples, 8192, [&](std::int64_t k0, std::int64_t k1) {
    for (std::int64_t k = k0; k < k1; ++k) {
      Rng rng = root.split(static_cast<std::uint64_t>(k));
      TorusPoint x(rng.uniform(), rng.uniform());
      std::uint64_t c = 0;
      for (std::int64_t j = 0; j < n; ++j) {
        c = c * D + P.atom_of(x);
        if (j + 1 < n) x = evolve(m, x, 1);
      }
      codes[static_cast<std::size_t>(k)] = c;
    }
    return 0;
  });
  return codes;
}

}  // namespace detail

/// Monte Carlo estimates of mu_i for every horizon 1..n_max from one set of
/// seeded orbits (horizon n reads the first n symbols).
inline std::vector<ClassicalEstimate> classical_probabilities_mc_all(const IntMatrix2& m,
                                                                    const Partition& P,
                                                                    std::int64_t n_max,
                                                                    std::int64_t samples,
                                                                    std::uint64_t seed) {
  require(samples >= 1000, ErrorKind::InvalidArgument, "Monte Carlo needs >= 1000 samples");
  require(n_max >= 1, ErrorKind::InvalidArgument, "horizon must be >= 1");
  const std::uint64_t D = P.size();
  detail::checked_pow(D, n_max);
  auto codes = detail::orbit_codes(m, P, n_max, samples, seed);

  std::vector<ClassicalEstimate> out;
  for (std::int64_t n = 1; n <= n_max; ++n) {
    const std::uint64_t drop = detail::checked_pow(D, n_max - n);
    std::vector<std::uint64_t> prefix(codes.size());
    for (std::size_t i = 0; i < codes.size(); ++i) prefix[i] = codes[i] / drop;
    auto table = ProbabilityTable::from_counts(
        n, D, detail::count_codes(prefix, detail::checked_pow(D, n)), static_cast<std::uint64_t>(samples));
    const double S = shannon_entropy(table);
    const double se = detail::entropy_stderr(table, samples, S);
    out.push_back({std::move(table), S, se, samples, seed});
  }
  return out;
}

inline ClassicalEstimate classical_probabilities_mc(const ToralMatrix& T, const Partition& P,
                                                    std::int64_t n, std::int64_t samples,
                                                    std::uint64_t seed) {
  return std::move(classical_probabilities_mc_all(T.matrix(), P, n, samples, seed).back());
}

struct EntropyRate {
  std::vector<double> entropy;    ///< S(n), index n - 1
  std::vector<double> rate;       ///< S(n) / n
  std::vector<double> increment;  ///< S(n) - S(n-1), with S(0) = 0
  std::vector<double> stderr_;    ///< standard error of S(n)
};

inline EntropyRate ks_entropy_rate(const ToralMatrix& T, const Partition& P, std::int64_t n_max,
                                   std::int64_t samples, std::uint64_t seed) {
  require(n_max >= 2, ErrorKind::InvalidArgument, "entropy rate needs n_max >= 2");
  EntropyRate r;
  double prev = 0;
  std::int64_t n = 1;
  for (const auto& e : classical_probabilities_mc_all(T.matrix(), P, n_max, samples, seed)) {
    r.entropy.push_back(e.entropy);
    r.rate.push_back(e.entropy / static_cast<double>(n++));
    r.increment.push_back(e.entropy - prev);
    r.stderr_.push_back(e.entropy_stderr);
    prev = e.entropy;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Cell weights and CS probabilities

/// w(l, E) = N^2 mu(cell(l) ∩ E). Atoms are rectangles and cells are
/// squares, so each weight is a product of two 1-D factors, stored exactly.
class CellWeightTable {
 public:
  CellWeightTable(const Partition& P, const LatticeConfig& cfg) : cfg_(cfg), D_(P.size()) {
    const auto N = cfg.N();
    f1_.resize(D_ * static_cast<std::size_t>(N));
    f2_.resize(f1_.size());
    d1_.resize(f1_.size());
    d2_.resize(f1_.size());
    aligned_ = true;
    for (std::size_t e = 0; e < D_; ++e)
      for (std::int64_t k = 0; k < N; ++k) {
        const std::size_t i = e * static_cast<std::size_t>(N) + static_cast<std::size_t>(k);
        f1_[i] = Rational(N) * overlap(cell_arc(k, N), P[e].x1);
        f2_[i] = Rational(N) * overlap(cell_arc(k, N), P[e].x2);
        d1_[i] = to_double(f1_[i]);
        d2_[i] = to_double(f2_[i]);
        aligned_ = aligned_ && is01(f1_[i]) && is01(f2_[i]);
      }
  }

  const LatticeConfig& cfg() const noexcept { return cfg_; }
  std::size_t D() const noexcept { return D_; }
  /// All weights are 0 or 1.
  bool aligned() const noexcept { return aligned_; }

  Rational exact(const LatticePoint& l, std::size_t e) const {
    return f1_[idx(e, l.p1)] * f2_[idx(e, l.p2)];
  }
  double operator()(const LatticePoint& l, std::size_t e) const {
    return d1_[idx(e, l.p1)] * d2_[idx(e, l.p2)];
  }

 private:
  static bool is01(const Rational& r) { return r == Rational(0) || r == Rational(1); }

  std::size_t idx(std::size_t e, std::int64_t k) const {
    return e * static_cast<std::size_t>(cfg_.N()) + static_cast<std::size_t>(k);
  }

  LatticeConfig cfg_;
  std::size_t D_;
  std::vector<Rational> f1_, f2_;
  std::vector<double> d1_, d2_;
  bool aligned_ = true;
};

inline CellWeightTable cell_weights(const Partition& P, const LatticeConfig& cfg) { return {P, cfg}; }

struct CsOptions {
  /// Unaligned partitions are refused when D^n exceeds this.
  std::uint64_t max_strings = std::uint64_t{1} << 24;
  /// Use the weighted-product evaluation even for aligned partitions.
  bool force_general = false;
  std::int64_t max_points = kDefaultMaxPoints;
};

namespace detail {

inline constexpr std::int64_t kLatticeChunk = 4096;

// Code sum_k a(U^k l) D^k for every lattice point, with a(.) the unique atom
// of weight 1 (aligned partitions only).
inline std::vector<std::uint64_t> lattice_codes(const IntMatrix2& m, const CellWeightTable& w,
                                                std::int64_t n) {
  const LatticeConfig& cfg = w.cfg();
  const LatticeMap U(m, cfg, 1);
  const std::uint64_t D = w.D();
  std::vector<std::uint64_t> codes(static_cast<std::size_t>(cfg.script_N()));
  map_chunks(cfg.script_N(), kLatticeChunk, [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t l = b; l < e; ++l) {
      LatticePoint p = point_at(l, cfg);
      std::uint64_t c = 0, place = 1;
      for (std::int64_t k = 0; k < n; ++k) {
        std::uint64_t a = 0;
        while (w(p, a) == 0.0) ++a;
        c += a * place;
        place *= D;
        p = U(p);
      }
      codes[static_cast<std::size_t>(l)] = c;
    }
    return 0;
  });
  return codes;
}

// Unnormalised sums of products of weights, accumulated per string.
inline ProbabilityTable general_cs(const IntMatrix2& m, const CellWeightTable& w, std::int64_t n) {
  const LatticeConfig& cfg = w.cfg();
  const LatticeMap U(m, cfg, 1);
  const std::size_t D = w.D();
  using Acc = std::unordered_map<std::uint64_t, double>;

  auto parts = map_chunks(cfg.script_N(), kLatticeChunk, [&](std::int64_t b, std::int64_t e) {
    Acc acc;
    std::vector<LatticePoint> orbit(static_cast<std::size_t>(n));
    struct Frame {
      std::int64_t k;
      std::uint64_t code, place;
      double prod;
    };
    std::vector<Frame> stack;
    for (std::int64_t l = b; l < e; ++l) {
      LatticePoint p = point_at(l, cfg);
      for (std::int64_t k = 0; k < n; ++k, p = U(p)) orbit[static_cast<std::size_t>(k)] = p;
      stack.push_back({0, 0, 1, 1.0});
      while (!stack.empty()) {
        const Frame f = stack.back();
        stack.pop_back();
        if (f.k == n) {
          acc[f.code] += f.prod;
          continue;
        }
        const LatticePoint& q = orbit[static_cast<std::size_t>(f.k)];
        for (std::size_t a = D; a-- > 0;) {
          const double wt = w(q, a);
          if (wt > 0) stack.push_back({f.k + 1, f.code + a * f.place, f.place * D, f.prod * wt});
        }
      }
    }
    return acc;
  });

  // Merge chunk maps in chunk order so every string's sum has a fixed order.
  Acc total;
  for (const auto& acc : parts)
    for (const auto& [code, v] : acc) total[code] += v;
  std::vector<ProbabilityTable::Entry> e(total.begin(), total.end());
  std::sort(e.begin(), e.end());
  const double norm = static_cast<double>(cfg.script_N());
  double s = 0;
  for (auto& x : e) s += (x.second /= norm);
  if (std::fabs(s - 1.0) > 1e-12)
    throw Error(ErrorKind::InvalidArgument, "CS weights do not sum to 1");
  return {n, D, std::move(e)};
}

}  // namespace detail

/// P_i^CS = N^-2 sum_l prod_k w(U^k l, E_{i_{n-1-k}}) for every horizon
/// 1..n_max. Aligned partitions reduce to exact histograms of lattice orbit
/// codes; other partitions expand the weighted products string by string.
inline std::vector<ProbabilityTable> cs_probabilities_all(const IntMatrix2& m, const LatticeConfig& cfg,
                                                          const Partition& P, std::int64_t n_max,
                                                          const CsOptions& opt = {}) {
  require(n_max >= 1, ErrorKind::InvalidArgument, "horizon must be >= 1");
  require(m.det() == 1, ErrorKind::NonUnimodular, "dynamics must have determinant 1");
  detail::check_capacity(cfg, opt.max_points);
  const CellWeightTable w(P, cfg);
  const std::uint64_t D = P.size();
  const std::uint64_t space = detail::checked_pow(D, n_max);
  std::vector<ProbabilityTable> out;

  if (w.aligned() && !opt.force_general) {
    const auto codes = detail::lattice_codes(m, w, n_max);
    std::vector<std::uint64_t> low(codes.size());
    for (std::int64_t n = 1; n <= n_max; ++n) {
      const std::uint64_t mod = detail::checked_pow(D, n);
      for (std::size_t i = 0; i < codes.size(); ++i) low[i] = codes[i] % mod;
      out.push_back(ProbabilityTable::from_counts(n, D, detail::count_codes(low, mod),
                                                  static_cast<std::uint64_t>(cfg.script_N())));
    }
    return out;
  }

  if (!w.aligned() && space > opt.max_strings)
    throw Error(ErrorKind::AlignmentRequired,
                "partition is not aligned to N = " + std::to_string(cfg.N()) + " and D^n = " +
                    std::to_string(space) + " exceeds the string cap; snap the partition first");
  for (std::int64_t n = 1; n <= n_max; ++n) out.push_back(detail::general_cs(m, w, n));
  return out;
}

inline ProbabilityTable cs_probabilities(const IntMatrix2& m, const LatticeConfig& cfg,
                                         const Partition& P, std::int64_t n,
                                         const CsOptions& opt = {}) {
  require(n >= 1, ErrorKind::InvalidArgument, "horizon must be >= 1");
  const CellWeightTable w(P, cfg);
  if (w.aligned() && !opt.force_general) return std::move(cs_probabilities_all(m, cfg, P, n, opt).back());
  const std::uint64_t space = detail::checked_pow(P.size(), n);
  if (!w.aligned() && space > opt.max_strings)
    throw Error(ErrorKind::AlignmentRequired,
                "partition is not aligned to N = " + std::to_string(cfg.N()) + " and D^n = " +
                    std::to_string(space) + " exceeds the string cap; snap the partition first");
  detail::check_capacity(cfg, opt.max_points);
  return detail::general_cs(m, w, n);
}

inline ProbabilityTable cs_probabilities(const ToralMatrix& T, const LatticeConfig& cfg,
                                         const Partition& P, std::int64_t n,
                                         const CsOptions& opt = {}) {
  return cs_probabilities(T.matrix(), cfg, P, n, opt);
}

/// S(U, I, E, rho, n); pass IntMatrix2::identity() for the measurement part.
inline double cs_entropy(const IntMatrix2& m, const LatticeConfig& cfg, const Partition& P,
                         std::int64_t n, const CsOptions& opt = {}) {
  return shannon_entropy(cs_probabilities(m, cfg, P, n, opt));
}

inline double cs_entropy(const ToralMatrix& T, const LatticeConfig& cfg, const Partition& P,
                         std::int64_t n, const CsOptions& opt = {}) {
  return cs_entropy(T.matrix(), cfg, P, n, opt);
}

struct EntropyComponents {
  double total = 0;        ///< S(W)
  double measurement = 0;  ///< S(1)
  double dynamical = 0;    ///< S(W) - S(1)
};

inline EntropyComponents entropy_components(const ToralMatrix& T, const LatticeConfig& cfg,
                                            const Partition& P, std::int64_t n,
                                            const CsOptions& opt = {}) {
  EntropyComponents c;
  c.total = cs_entropy(T, cfg, P, n, opt);
  c.measurement = cs_entropy(IntMatrix2::identity(), cfg, P, n, opt);
  c.dynamical = c.total - c.measurement;
  return c;
}

// ---------------------------------------------------------------------------
// Continuity bound

/// -x log x up to 1/e, then constant 1/e: the monotone envelope used in the
/// continuity estimate.
inline double eta_tilde(double x) {
  if (x <= 0) return 0;
  const double inv_e = std::exp(-1.0);
  return x <= inv_e ? -x * std::log(x) : inv_e;
}

struct FannesResult {
  double delta = 0;  ///< sum_i |p_i - q_i|
  double bound = 0;  ///< delta log D^n + eta_tilde(delta)
  double gap = 0;    ///< |S(a) - S(b)|
  bool holds = true;
};

inline FannesResult fannes_gap_bound(const ProbabilityTable& a, const ProbabilityTable& b) {
  require(a.n() == b.n() && a.D() == b.D(), ErrorKind::DimensionMismatch,
          "tables differ in string length or alphabet");
  FannesResult r;
  const auto& ea = a.entries();
  const auto& eb = b.entries();
  std::size_t i = 0, j = 0;
  while (i < ea.size() || j < eb.size()) {
    if (j == eb.size() || (i < ea.size() && ea[i].first < eb[j].first)) {
      r.delta += ea[i++].second;
    } else if (i == ea.size() || eb[j].first < ea[i].first) {
      r.delta += eb[j++].second;
    } else {
      r.delta += std::fabs(ea[i++].second - eb[j++].second);
    }
  }
  r.bound = r.delta * static_cast<double>(a.n()) * std::log(static_cast<double>(a.D())) + eta_tilde(r.delta);
  r.gap = std::fabs(shannon_entropy(a) - shannon_entropy(b));
  r.holds = r.gap <= r.bound + 1e-12;
  return r;
}

/// max_i |p_i - q_i|
inline double max_gap(const ProbabilityTable& a, const ProbabilityTable& b) {
  require(a.n() == b.n() && a.D() == b.D(), ErrorKind::DimensionMismatch,
          "tables differ in string length or alphabet");
  double m = 0;
  for (const auto& [code, p] : a.entries()) m = std::max(m, std::fabs(p - b.at(code)));
  for (const auto& [code, q] : b.entries()) m = std::max(m, std::fabs(q - a.at(code)));
  return m;
}

// ---------------------------------------------------------------------------
// CS versus KS

struct Theorem3Options {
  std::int64_t samples = 1'000'000;
  std::uint64_t seed = 0;
  /// Breaking when |S_cs - S_ks| / n exceeds this fraction of xi (hyperbolic).
  double hyperbolic_rate_fraction = 0.1;
  /// Breaking when |S_cs - S_ks| exceeds this (other families).
  double absolute_gap = 0.05;
  CsOptions cs;
};

struct Theorem3Cell {
  std::int64_t n = 0, N = 0;
  double S_cs = 0, S_ks = 0, S_ks_stderr = 0;
  double gap = 0;   ///< |S_cs - S_ks| / n
  double rate = 0;  ///< S_cs / n
  double epsilon = 0;  ///< max_i |P_rev(i) - mu_i|
  FannesResult fannes;
};

struct Theorem3Report {
  ToralMatrix T;
  Family family = Family::Hyperbolic;
  double xi = 0;
  std::int64_t n_max = 0;
  std::vector<std::int64_t> N_list{};
  Theorem3Options options{};
  double threshold = 0;  ///< value the breaking test compares against
  bool threshold_is_rate = true;

  std::vector<Rational> snap_distance{};  ///< per N
  std::vector<Theorem3Cell> cells{};    ///< n-major within each N: index i_N * n_max + (n - 1)
  std::vector<std::optional<std::int64_t>> breaking_time{};  ///< per N; empty if none up to n_max
  std::optional<double> fit_slope{}, fit_intercept{};          ///< breaking time vs log N
  std::int64_t fannes_violations = 0;

  const Theorem3Cell& cell(std::size_t iN, std::int64_t n) const {
    return cells[iN * static_cast<std::size_t>(n_max) + static_cast<std::size_t>(n - 1)];
  }
};

/// Least-squares line through (x, y); needs two distinct x.
inline std::optional<std::pair<double, double>> fit_line(const std::vector<double>& x,
                                                         const std::vector<double>& y) {
  if (x.size() < 2) return std::nullopt;
  const double k = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / k;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / k;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx <= 0) return std::nullopt;
  return std::make_pair(sxy / sxx, my - sxy / sxx * mx);
}

/// CS and KS entropies over the (n, N) grid. The requested partition is
/// snapped to each N before both sides are evaluated, so the two entropies
/// always refer to the same partition. Undetected breaking times are left
/// empty and excluded from the fit.
inline Theorem3Report theorem3_comparison(const ToralMatrix& T, const Partition& P, std::int64_t n_max,
                                          const std::vector<std::int64_t>& N_list,
                                          const Theorem3Options& opt) {
  require(n_max >= 1, ErrorKind::InvalidArgument, "n_max must be >= 1");
  require(!N_list.empty(), ErrorKind::InvalidArgument, "N list is empty");
  const SpectralData s = classify(T);
  Theorem3Report r{T};
  r.family = s.family;
  r.xi = s.xi;
  r.n_max = n_max;
  r.N_list = N_list;
  r.options = opt;
  r.threshold_is_rate = s.family == Family::Hyperbolic;
  r.threshold = r.threshold_is_rate ? opt.hyperbolic_rate_fraction * s.xi : opt.absolute_gap;

  std::vector<double> fx, fy;
  for (std::int64_t N : N_list) {
    const LatticeConfig cfg(N);
    const SnapResult snapped = snap_to_aligned(P, N);
    r.snap_distance.push_back(snapped.distance);
    const auto ks = classical_probabilities_mc_all(T.matrix(), snapped.partition, n_max, opt.samples, opt.seed);
    const auto cs = cs_probabilities_all(T.matrix(), cfg, snapped.partition, n_max, opt.cs);

    std::optional<std::int64_t> brk;
    for (std::int64_t n = 1; n <= n_max; ++n) {
      const auto& k = ks[static_cast<std::size_t>(n - 1)];
      const auto& c = cs[static_cast<std::size_t>(n - 1)];
      Theorem3Cell cell;
      cell.n = n;
      cell.N = N;
      cell.S_cs = shannon_entropy(c);
      cell.S_ks = k.entropy;
      cell.S_ks_stderr = k.entropy_stderr;
      const double abs_gap = std::fabs(cell.S_cs - cell.S_ks);
      cell.gap = abs_gap / static_cast<double>(n);
      cell.rate = cell.S_cs / static_cast<double>(n);
      const auto rev = c.reversed();
      cell.epsilon = max_gap(rev, k.table);
      cell.fannes = fannes_gap_bound(rev, k.table);
      r.fannes_violations += cell.fannes.holds ? 0 : 1;
      const double test = r.threshold_is_rate ? cell.gap : abs_gap;
      if (!brk && test > r.threshold) brk = n;
      r.cells.push_back(cell);
    }
    r.breaking_time.push_back(brk);
    if (brk) {
      fx.push_back(std::log(static_cast<double>(N)));
      fy.push_back(static_cast<double>(*brk));
    }
  }
  if (auto f = fit_line(fx, fy)) {
    r.fit_slope = f->first;
    r.fit_intercept = f->second;
  }
  return r;
}

inline void to_json(nlohmann::json& j, const Theorem3Report& r) {
  using nlohmann::json;
  json breaking = json::array();
  for (const auto& b : r.breaking_time) breaking.push_back(b ? json(*b) : json(nullptr));
  json snaps = json::array();
  for (const auto& d : r.snap_distance) snaps.push_back(to_string(d));
  json eps = json::array();
  for (std::size_t i = 0; i < r.N_list.size(); ++i) {
    double m = 0;
    for (std::int64_t n = 1; n <= r.n_max; ++n) m = std::max(m, r.cell(i, n).epsilon);
    eps.push_back(m);
  }
  j = {{"operation", "theorem3_comparison"},
       {"parameters",
        {{"matrix", json::array({r.T.t11(), r.T.t12(), r.T.t21(), r.T.t22()})},
         {"n_max", r.n_max},
         {"N_list", r.N_list},
         {"samples", r.options.samples}}},
       {"seed", r.options.seed},
       {"family", std::string(to_string(r.family))},
       {"xi", r.xi},
       {"breaking_threshold",
        {{"value", r.threshold}, {"applies_to", r.threshold_is_rate ? "gap_per_step" : "absolute_gap"}}},
       {"snap_distance", snaps},
       {"breaking_time", breaking},
       {"fit", {{"slope", r.fit_slope ? json(*r.fit_slope) : json(nullptr)},
                {"intercept", r.fit_intercept ? json(*r.fit_intercept) : json(nullptr)},
                {"reference_slope", r.xi > 0 ? json(1.0 / r.xi) : json(nullptr)}}},
       {"epsilon_max", eps},
       {"fannes_violations", r.fannes_violations}};
}

}  // namespace toral
