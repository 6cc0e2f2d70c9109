#include "diffal/selfcheck.hpp"

#include "diffal/reference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace diffal {

RandomInstance make_random_instance(std::mt19937_64& rng, Index min_n, Index max_n) {
  static constexpr Index kChoices[] = {2, 3, 5};
  std::uniform_int_distribution<Index> size_dist(min_n, max_n);
  std::uniform_int_distribution<int> k_pick(0, 2);
  std::uniform_int_distribution<int> c_pick(2, 3);
  std::uniform_int_distribution<Index> dim_dist(2, 4);
  std::normal_distribution<double> gauss;

  for (;;) {
    const Index n = size_dist(rng);
    const Index k = kChoices[k_pick(rng)];
    const int c = c_pick(rng);
    PointMatrix<double> x(n, dim_dist(rng));
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = gauss(rng);

    const auto graph = build_knn_graph(x, k);
    if (!connectivity_report(graph).connected()) continue;
    auto kernel = compute_kernel(graph);

    std::uniform_real_distribution<double> frac(0.3, 0.5);
    const auto num_labeled = std::max<Index>(2, std::llround(frac(rng) * static_cast<double>(n)));
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Index> labeled(order.begin(), order.begin() + num_labeled);
    // Anchor every node set that cannot reach a label along directed edges.
    for (;;) {
      const auto reached = reaches_targets(kernel, std::span<const Index>(labeled));
      const auto miss = std::find_if(order.begin(), order.end(),
                                     [&](Index i) { return !reached[static_cast<std::size_t>(i)]; });
      if (miss == order.end()) break;
      labeled.push_back(*miss);
    }
    std::sort(labeled.begin(), labeled.end());
    std::uniform_int_distribution<int> label_dist(0, c - 1);
    std::vector<int> labels;
    for (std::size_t t = 0; t < labeled.size(); ++t) labels.push_back(label_dist(rng));

    RandomInstance inst;
    inst.k = k;
    inst.signal = init_signal<double>(n, labeled, labels, c);
    inst.labeled_mask = inst.signal.clamp_mask;
    inst.kernel = std::move(kernel);
    return inst;
  }
}

EquivalenceSummary run_oracle_equivalence(int instances, std::uint64_t seed, int steps, double eps) {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);
  EquivalenceSummary s;
  for (int t = 0; t < instances; ++t) {
    const auto inst = make_random_instance(rng);
    const auto dense = dense_harmonic_solve(inst.kernel, inst.signal);
    const auto propagated = diffuse(inst.kernel, inst.signal, steps);
    const auto fixed = exact_fixed_point(inst.kernel, inst.signal, 1e-8, 1000 * inst.kernel.size());
    const auto diag = convergence_diagnostic(inst.kernel, inst.labeled_mask, eps);

    s.max_diffuse_vs_dense = std::max(s.max_diffuse_vs_dense, (propagated.chi - dense).cwiseAbs().maxCoeff());
    s.max_jacobi_vs_dense = std::max(s.max_jacobi_vs_dense, (fixed.signal.chi - dense).cwiseAbs().maxCoeff());
    s.max_residual = std::max(s.max_residual, fixed.residual);
    s.max_spectral_upper = std::max(s.max_spectral_upper, diag.spectral_radius_upper);
    s.max_jacobi_inf_norm = std::max(s.max_jacobi_inf_norm, diag.inf_norm);
    ++s.instances;
  }
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return s;
}

}  // namespace diffal
