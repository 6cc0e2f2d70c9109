#pragma once

#include "diffal/diffusion.hpp"
#include "diffal/knn_graph.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace diffal {

/// Random clamped-diffusion problem on a connected K-NN digraph in which every
/// node has a directed path to a labeled node.
struct RandomInstance {
  Kernel<double> kernel;
  DiffusionSignal<double> signal;
  std::vector<char> labeled_mask;
  Index k = 0;
};

/// N in [min_n, max_n], K drawn from {2,3,5}, C from {2,3}, 30-50% of nodes
/// labeled. Disconnected graphs are redrawn; nodes that cannot reach a label
/// are labeled as well.
RandomInstance make_random_instance(std::mt19937_64& rng, Index min_n = 12, Index max_n = 50);

struct EquivalenceSummary {
  int instances = 0;
  double max_diffuse_vs_dense = 0;    // T = 500 propagation vs dense LU, entrywise
  double max_jacobi_vs_dense = 0;     // exact_fixed_point vs dense LU, entrywise
  double max_residual = 0;            // exact_fixed_point residual
  double max_spectral_upper = 0;      // upper bound on rho(D_uu^-1 W_uu)
  double max_jacobi_inf_norm = 0;     // ||B_J||_inf for L_uu + eps I
  double seconds = 0;
};

/// Runs the propagation, Jacobi and dense routes on `instances` random problems.
EquivalenceSummary run_oracle_equivalence(int instances, std::uint64_t seed, int steps = 500, double eps = 1e-6);

}  // namespace diffal
