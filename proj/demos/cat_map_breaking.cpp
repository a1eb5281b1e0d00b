// Prints the breaking-time picture for the cat map at a few lattice sizes:
// the estimate log N / (gamma xi), the Egorov defect per step and the
// CS/KS entropy gap per step.

#include <cmath>
#include <cstdio>

#include "toral/toral.hpp"

int main() {
  using namespace toral;
  const ToralMatrix T = presets::cat_map();
  const SpectralData s = classify(T);
  std::printf("cat map: lambda=%.6f xi=%.6f\n", *s.lambda, s.xi);

  for (std::int64_t N : {64, 256, 1024}) {
    const LatticeConfig cfg(N);
    const auto est = breaking_time_estimate(s, N, 2.0);
    std::printf("\nN=%lld  log N/xi=%.2f  estimate(gamma=2)=%lld\n", static_cast<long long>(N),
                std::log(static_cast<double>(N)) / s.xi, static_cast<long long>(*est));

    const auto defect = egorov_defect_series(T.matrix(), cfg, observables::sin_x1(), 12, 2 * N);
    const auto P = snap_to_aligned(Partition::quadrants(), N).partition;
    const auto cs = cs_probabilities_all(T.matrix(), cfg, P, 8);
    const auto ks = classical_probabilities_mc_all(T.matrix(), P, 8, 200000, 7);
    std::printf("  j  defect     n  S_cs    S_ks    gap/n\n");
    for (int j = 0; j <= 12; ++j) {
      std::printf("%3d  %.4f", j, defect[j]);
      if (j >= 1 && j <= 8) {
        const double a = shannon_entropy(cs[j - 1]), b = ks[j - 1].entropy;
        std::printf("   %2d  %.4f  %.4f  %.4f", j, a, b, std::fabs(a - b) / j);
      }
      std::printf("\n");
    }
  }
}
