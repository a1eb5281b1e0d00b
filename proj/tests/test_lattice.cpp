#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "toral/toral.hpp"

using namespace toral;
using Catch::Approx;

TEST_CASE("lattice config") {
  CHECK(LatticeConfig(10).script_N() == 100);
  CHECK_THROWS_AS(LatticeConfig(1), Error);
  CHECK_THROWS_AS(LatticeConfig(kMaxLatticeSide + 1), Error);
  const LatticeConfig cfg(7);
  for (std::int64_t l = 0; l < cfg.script_N(); ++l) CHECK(index_of(point_at(l, cfg), cfg) == l);
}

TEST_CASE("torus distance") {
  CHECK(torus_distance({0, 0}, {0, 0}) == 0.0);
  CHECK(torus_distance({0.1, 0}, {0.9, 0}) == Approx(0.2));
  // Exhaustive minimum over the nine integer shifts.
  auto shifts = [](TorusPoint a, TorusPoint b) {
    double best = 10;
    for (int i = -1; i <= 1; ++i)
      for (int j = -1; j <= 1; ++j) best = std::min(best, std::hypot(a.x1 - b.x1 + i, a.x2 - b.x2 + j));
    return best;
  };
  CHECK(torus_distance({0.25, 0.25}, {0.75, 0.75}) == Approx(shifts({0.25, 0.25}, {0.75, 0.75})));
  CHECK(torus_distance({0.25, 0.25}, {0.75, 0.75}) == Approx(0.7071068).margin(1e-7));
  Rng rng(3);
  for (int k = 0; k < 1000; ++k) {
    const TorusPoint a(rng.uniform(), rng.uniform()), b(rng.uniform(), rng.uniform());
    CHECK(torus_distance(a, b) == Approx(shifts(a, b)).margin(1e-15));
  }
}

TEST_CASE("rounding to the lattice") {
  const LatticeConfig cfg(10);
  CHECK(round_to_lattice({0.3, 0.7}, cfg) == LatticePoint{3, 7});
  CHECK(round_to_lattice({0.96, 0.96}, cfg) == LatticePoint{0, 0});
  CHECK(round_to_lattice({0.04999, 0.05001}, cfg) == LatticePoint{0, 1});
  // N x + 1/2 landing on an integer rounds up.
  CHECK(round_to_lattice({0.25, 0.75}, LatticeConfig(2)) == LatticePoint{1, 0});
}

TEST_CASE("rounding distance bound") {
  Rng rng(11);
  for (std::int64_t N : {10, 100, 1000}) {
    const LatticeConfig cfg(N);
    for (int k = 0; k < 10000; ++k) {
      const TorusPoint x(rng.uniform(), rng.uniform());
      REQUIRE(torus_distance(x, to_torus(round_to_lattice(x, cfg), cfg)) <= 1 / (std::sqrt(2.0) * N) + 1e-15);
    }
  }
}

TEST_CASE("discrete steps") {
  const LatticeConfig cfg(5);
  const ToralMatrix cat = presets::cat_map();
  CHECK(discrete_step(cat, {1, 1}, cfg, 1) == LatticePoint{3, 2});
  CHECK(discrete_step(cat, {3, 2}, cfg, -1) == LatticePoint{1, 1});
  CHECK(discrete_step(cat, {4, 2}, cfg, 0) == LatticePoint{4, 2});
  for (std::int64_t j = -6; j <= 6; ++j)
    CHECK(discrete_step(cat, discrete_step(cat, {2, 3}, cfg, j), cfg, -j) == LatticePoint{2, 3});
}

TEST_CASE("lattice points map exactly under the continuous dynamics") {
  for (const ToralMatrix& T : {presets::cat_map(), presets::unit_shear(), ToralMatrix(3, 2, 1, 1), ToralMatrix(1, 1, -1, 0)})
    for (std::int64_t N : {7, 16, 100}) {
      const LatticeConfig cfg(N);
      Rng rng(static_cast<std::uint64_t>(N));
      for (int k = 0; k < 200; ++k) {
        const LatticePoint l{static_cast<std::int64_t>(rng.next() % N), static_cast<std::int64_t>(rng.next() % N)};
        for (std::int64_t j : {-3, -1, 1, 2, 5}) {
          const TorusPoint y = evolve(T, to_torus(l, cfg), j);
          CHECK(round_to_lattice(y, cfg) == discrete_step(T, l, cfg, j));
        }
      }
    }
}

TEST_CASE("permutation tables") {
  const auto p = build_permutation(presets::cat_map(), LatticeConfig(2));
  CHECK(p.size() == 4);
  CHECK(p.is_bijection());

  // Shear on N = 2: (0,0)->(0,0), (0,1)->(1,1), (1,0)->(1,0), (1,1)->(0,1).
  const auto s = build_permutation(presets::unit_shear(), LatticeConfig(2));
  CHECK(s == Permutation({0, 3, 2, 1}));

  for (std::int64_t N : {3, 8, 13}) {
    const auto q = build_permutation(ToralMatrix(3, 2, 1, 1), LatticeConfig(N));
    CHECK(q.after(q.inverse()) == Permutation::identity(q.size()));
    CHECK(q.inverse().after(q) == Permutation::identity(q.size()));
  }
  CHECK_THROWS_MATCHES(build_permutation(presets::cat_map(), LatticeConfig(100), 1, 1000), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) { return e.kind() == ErrorKind::CapacityExceeded; }));
}

TEST_CASE("permutation powers follow the group law") {
  for (std::int64_t N : {5, 32, 64}) {
    const LatticeConfig cfg(N);
    const ToralMatrix T = presets::cat_map();
    const auto p = build_permutation(T, cfg);
    Permutation acc = Permutation::identity(p.size());
    for (std::int64_t j = 1; j <= 20; ++j) {
      acc = p.after(acc);
      REQUIRE(acc == build_permutation(T, cfg, j));
      REQUIRE(p.power(j) == acc);
    }
    CHECK(p.power(-3) == build_permutation(T, cfg, -3));
  }
}

TEST_CASE("orbit periods") {
  for (std::int64_t N : {2, 3, 5, 8, 12})
    CHECK(4 % orbit_period(presets::quarter_turn(), LatticeConfig(N)) == 0);
  CHECK(orbit_period(presets::cat_map(), LatticeConfig(5)) == 10);
  CHECK(oracle::orbit_period_enumerated(presets::cat_map().matrix(), 5) == 10);
  CHECK(orbit_period(presets::unit_shear(), LatticeConfig(7)) == 7);
  for (std::int64_t N : {2, 4, 6, 7, 9, 10, 16, 25})
    for (const ToralMatrix& T : {presets::cat_map(), ToralMatrix(3, 2, 1, 1), ToralMatrix(1, 0, 2, 1)})
      CHECK(orbit_period(T, LatticeConfig(N)) == oracle::orbit_period_enumerated(T.matrix(), N));
}

TEST_CASE("the trace state is invariant") {
  const LatticeConfig cfg(9);
  const auto p = build_permutation(presets::cat_map(), cfg);
  std::vector<std::int64_t> diag(static_cast<std::size_t>(cfg.script_N()));
  for (std::size_t i = 0; i < diag.size(); ++i) diag[i] = static_cast<std::int64_t>(i * i % 17);
  const auto moved = p.apply_to_diagonal<std::int64_t>(diag);
  CHECK(std::accumulate(moved.begin(), moved.end(), std::int64_t{0}) ==
        std::accumulate(diag.begin(), diag.end(), std::int64_t{0}));
}

TEST_CASE("permutation serialization round-trips") {
  const LatticeConfig cfg(6);
  const auto p = build_permutation(ToralMatrix(3, 2, 1, 1), cfg);
  std::stringstream csv;
  write_csv(csv, p, cfg);
  CHECK(csv.str().rfind("# N=6\n", 0) == 0);
  CHECK(read_csv(csv) == p);
  std::stringstream bin;
  write_binary(bin, p);
  CHECK(bin.str().size() == 4 * p.size());
  CHECK(read_binary(bin) == p);
  std::stringstream bad("# N=2\n0\n0\n1\n2\n");
  CHECK_THROWS_AS(read_csv(bad), Error);
}

TEST_CASE("exact powers and overflow") {
  CHECK(power(presets::cat_map().matrix(), 10) == IntMatrix2{10946, 6765, 6765, 4181});
  CHECK_THROWS_MATCHES(power(presets::cat_map().matrix(), 60), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) { return e.kind() == ErrorKind::Overflow; }));
  // Reduced powers agree with exact ones where both exist.
  for (std::int64_t j = 0; j <= 30; ++j)
    CHECK(power_mod(presets::cat_map().matrix(), j, 1000003) == reduce(power(presets::cat_map().matrix(), j), 1000003));
}
