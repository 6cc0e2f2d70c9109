#pragma once

// Dense reference solution of the clamped harmonic system, used by the
// self-check and the tests as an oracle for the iterative paths.

#include "diffal/diffusion.hpp"

#include <Eigen/Dense>

#include <vector>

namespace diffal {

/// Solves L_uu chi_u = W_ul chi_l with a dense LU factorization of L_uu.
template <typename Scalar>
SignalMatrix<Scalar> dense_harmonic_solve(const Kernel<Scalar>& kernel, const DiffusionSignal<Scalar>& signal) {
  using Dense = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Index n = kernel.size();
  const Dense w = Dense(kernel.weights);
  const Dense l = Dense(kernel.degrees.asDiagonal()) - w;

  std::vector<Index> u, lab;
  for (Index i = 0; i < n; ++i) (signal.clamped(i) ? lab : u).push_back(i);

  SignalMatrix<Scalar> out = signal.clamp_values;
  if (u.empty()) return out;

  const auto nu = static_cast<Index>(u.size());
  const auto nl = static_cast<Index>(lab.size());
  Dense luu(nu, nu), wul(nu, nl), chil(nl, signal.chi.cols());
  for (Index a = 0; a < nu; ++a) {
    for (Index b = 0; b < nu; ++b) luu(a, b) = l(u[a], u[b]);
    for (Index b = 0; b < nl; ++b) wul(a, b) = w(u[a], lab[b]);
  }
  for (Index b = 0; b < nl; ++b) chil.row(b) = signal.clamp_values.row(lab[b]);

  const Dense rhs = wul * chil;
  const Dense chiu = luu.fullPivLu().solve(rhs);
  for (Index a = 0; a < nu; ++a) out.row(u[a]) = chiu.row(a);
  return out;
}

}  // namespace diffal
