#pragma once

#include "diffal/data.hpp"
#include "diffal/errors.hpp"
#include "diffal/knn_graph.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace diffal {

template <typename Scalar>
using SignalMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-class soft labels chi (N×C) with entries in [-1, 1]. Rows with
/// clamp_mask set are held at clamp_values by every operation.
template <typename Scalar>
struct DiffusionSignal {
  SignalMatrix<Scalar> chi;
  std::vector<char> clamp_mask;
  SignalMatrix<Scalar> clamp_values;  // meaningful on clamped rows only

  Index size() const { return chi.rows(); }
  int num_classes() const { return static_cast<int>(chi.cols()); }
  bool clamped(Index i) const { return clamp_mask[static_cast<std::size_t>(i)] != 0; }
};

enum class InitMode { Hard, Soft };

namespace detail {

template <typename Scalar>
void apply_clamps(DiffusionSignal<Scalar>& s) {
  for (Index i = 0; i < s.size(); ++i) {
    if (s.clamped(i)) s.chi.row(i) = s.clamp_values.row(i);
  }
}

}  // namespace detail

/// Builds chi^(0): +1 on a labeled point's own class and -1 elsewhere; unlabeled
/// rows are 0 (hard) or 2p - 1 from model posteriors (soft).
template <typename Scalar = double>
DiffusionSignal<Scalar> init_signal(Index n, std::span<const Index> labeled, std::span<const int> labels,
                                    int num_classes, InitMode mode = InitMode::Hard,
                                    const SignalMatrix<Scalar>* probs = nullptr) {
  if (labeled.size() != labels.size()) throw ShapeError("init_signal: labeled/labels length mismatch");
  if (num_classes < 2) throw ConfigError("init_signal: need C >= 2");

  DiffusionSignal<Scalar> s;
  s.chi = SignalMatrix<Scalar>::Zero(n, num_classes);
  s.clamp_values = SignalMatrix<Scalar>::Zero(n, num_classes);
  s.clamp_mask.assign(static_cast<std::size_t>(n), 0);

  if (mode == InitMode::Soft) {
    if (probs == nullptr) throw ConfigError("init_signal: soft mode requires model probabilities");
    if (probs->rows() != n || probs->cols() != num_classes) {
      throw ShapeError("init_signal: probabilities must be N×C");
    }
    for (Index i = 0; i < n; ++i) {
      const Scalar sum = probs->row(i).sum();
      if (std::abs(sum - Scalar(1)) > Scalar(1e-6) || probs->row(i).minCoeff() < 0) {
        throw ConfigError("init_signal: probability row " + std::to_string(i) + " is not on the simplex");
      }
    }
    s.chi = (Scalar(2) * probs->array() - Scalar(1)).matrix();
  }

  for (std::size_t k = 0; k < labeled.size(); ++k) {
    const Index i = labeled[k];
    const int y = labels[k];
    if (i < 0 || i >= n) throw std::out_of_range("init_signal: index " + std::to_string(i));
    if (y < 0 || y >= num_classes) throw ConfigError("init_signal: label out of range");
    s.clamp_mask[static_cast<std::size_t>(i)] = 1;
    s.clamp_values.row(i).setConstant(Scalar(-1));
    s.clamp_values(i, y) = Scalar(1);
  }
  detail::apply_clamps(s);
  return s;
}

template <typename Scalar = double>
DiffusionSignal<Scalar> init_signal(const PoolState& pool, InitMode mode = InitMode::Hard,
                                    const SignalMatrix<Scalar>* probs = nullptr) {
  return init_signal<Scalar>(pool.pool_size(), pool.labeled(), pool.labeled_labels(), pool.num_classes(),
                             mode, probs);
}

/// T steps of chi <- M chi followed by re-clamping of labeled rows.
template <typename Scalar>
DiffusionSignal<Scalar> diffuse(const Kernel<Scalar>& kernel, DiffusionSignal<Scalar> signal, int steps) {
  if (steps < 0) throw ConfigError("diffuse: T must be >= 0");
  if (signal.size() != kernel.size() || static_cast<Index>(signal.clamp_mask.size()) != kernel.size()) {
    throw ShapeError("diffuse: signal has " + std::to_string(signal.size()) + " rows, kernel " +
                     std::to_string(kernel.size()));
  }
  SignalMatrix<Scalar> next(signal.chi.rows(), signal.chi.cols());
  for (int t = 0; t < steps; ++t) {
    next.noalias() = kernel.transition * signal.chi;
    // Row sums of M are 1 only up to rounding.
    signal.chi = next.cwiseMax(Scalar(-1)).cwiseMin(Scalar(1));
    detail::apply_clamps(signal);
  }
  return signal;
}

template <typename Scalar>
struct FixedPointSolution {
  DiffusionSignal<Scalar> signal;
  Index iterations = 0;
  Scalar residual = 0;  // max over classes of ||L_uu chi_u - W_ul chi_l||_inf
};

namespace detail {

/// Throws SingularSystemError when some unlabeled node cannot reach a labeled node.
template <typename Scalar>
void require_anchored(const Kernel<Scalar>& kernel, const std::vector<char>& clamp_mask) {
  std::vector<Index> labeled;
  for (Index i = 0; i < kernel.size(); ++i) {
    if (clamp_mask[static_cast<std::size_t>(i)]) labeled.push_back(i);
  }
  const auto reached = reaches_targets(kernel, std::span<const Index>(labeled));
  const auto comps = connectivity_report(kernel);
  for (Index i = 0; i < kernel.size(); ++i) {
    if (!reached[static_cast<std::size_t>(i)]) {
      throw SingularSystemError("harmonic system is singular: node " + std::to_string(i) + " in component " +
                                std::to_string(comps.component[static_cast<std::size_t>(i)]) +
                                " has no directed path to a labeled node");
    }
  }
}

}  // namespace detail

/// Solves L_uu chi_u = W_ul chi_l per class by Jacobi sweeps, starting from the
/// signal's current unlabeled rows. max_iter = 0 selects 10·N.
template <typename Scalar>
FixedPointSolution<Scalar> exact_fixed_point(const Kernel<Scalar>& kernel, DiffusionSignal<Scalar> signal,
                                             Scalar tol = Scalar(1e-8), Index max_iter = 0) {
  const Index n = kernel.size();
  if (signal.size() != n) throw ShapeError("exact_fixed_point: signal/kernel size mismatch");
  detail::apply_clamps(signal);
  FixedPointSolution<Scalar> out;
  const bool any_unlabeled = std::find(signal.clamp_mask.begin(), signal.clamp_mask.end(), char{0}) !=
                             signal.clamp_mask.end();
  if (!any_unlabeled) {
    out.signal = std::move(signal);
    return out;
  }
  detail::require_anchored(kernel, signal.clamp_mask);
  if (max_iter <= 0) max_iter = 10 * n;

  const Index c = signal.chi.cols();
  using Row = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  SignalMatrix<Scalar> next = signal.chi;
  Row acc(c);
  for (Index iter = 0;; ++iter) {
    Scalar residual = 0;
    for (Index i = 0; i < n; ++i) {
      if (signal.clamped(i)) continue;
      acc.setZero();
      Scalar self = 0;
      for (typename SparseRowMatrix<Scalar>::InnerIterator it(kernel.weights, i); it; ++it) {
        if (it.col() == i) {
          self += it.value();
        } else {
          acc.noalias() += it.value() * signal.chi.row(it.col());
        }
      }
      const Scalar diag = kernel.degrees(i) - self;
      residual = std::max(residual, (diag * signal.chi.row(i) - acc).cwiseAbs().maxCoeff());
      next.row(i) = acc / diag;
    }
    out.iterations = iter;
    out.residual = residual;
    if (residual <= tol) break;
    if (iter >= max_iter) {
      throw NonConvergenceError("exact_fixed_point: no convergence after " + std::to_string(max_iter) +
                                    " Jacobi sweeps (residual " + std::to_string(residual) + ")",
                                static_cast<double>(residual));
    }
    signal.chi.swap(next);
    next = signal.chi;
  }
  out.signal = std::move(signal);
  return out;
}

/// Quadratic energy 1/2 sum_ij W_ij (chi_i - chi_j)^2 per class over stored edges.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> energy(const Kernel<Scalar>& kernel, const DiffusionSignal<Scalar>& s) {
  if (s.size() != kernel.size()) throw ShapeError("energy: signal/kernel size mismatch");
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> e = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(s.chi.cols());
  for (Index i = 0; i < kernel.size(); ++i) {
    for (typename SparseRowMatrix<Scalar>::InnerIterator it(kernel.weights, i); it; ++it) {
      e += it.value() * (s.chi.row(i) - s.chi.row(it.col())).array().square().matrix().transpose();
    }
  }
  return e / Scalar(2);
}

/// argmax over classes per row; ties go to the lowest class index.
template <typename Scalar>
std::vector<int> predict_labels(const DiffusionSignal<Scalar>& s) {
  std::vector<int> out(static_cast<std::size_t>(s.size()));
  for (Index i = 0; i < s.size(); ++i) {
    int best = 0;
    for (Index c = 1; c < s.chi.cols(); ++c) {
      if (s.chi(i, c) > s.chi(i, best)) best = static_cast<int>(c);
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

struct ConvergenceDiagnostic {
  double inf_norm = 0;                  // ||B_J||_inf for A = L_uu + eps I
  double spectral_radius_estimate = 0;  // midpoint of the bounds below
  double spectral_radius_lower = 0;
  double spectral_radius_upper = 0;
  Index power_iterations = 0;
  // upper < 1: the clamped iteration is a contraction and diffuse converges.
  bool certified() const { return spectral_radius_upper < 1.0; }
};

/// Jacobi iteration matrix norm for the regularized system and a bracketed
/// estimate of rho(D_uu^-1 W_uu). The bracket comes from Collatz-Wielandt
/// ratios of power iterates of S + I, whose Perron root is strictly dominant
/// even when S is periodic.
template <typename Scalar>
ConvergenceDiagnostic convergence_diagnostic(const Kernel<Scalar>& kernel, const std::vector<char>& labeled_mask,
                                             double eps = 1e-6, double tol = 1e-10, Index max_iter = 100000) {
  const Index n = kernel.size();
  if (static_cast<Index>(labeled_mask.size()) != n) throw ShapeError("convergence_diagnostic: mask size mismatch");
  std::vector<Index> unlabeled;
  std::vector<Index> local(static_cast<std::size_t>(n), -1);
  for (Index i = 0; i < n; ++i) {
    if (!labeled_mask[static_cast<std::size_t>(i)]) {
      local[static_cast<std::size_t>(i)] = static_cast<Index>(unlabeled.size());
      unlabeled.push_back(i);
    }
  }
  const auto m = static_cast<Index>(unlabeled.size());
  if (m == 0 || m == n) throw ConfigError("convergence_diagnostic: need labeled and unlabeled nodes");

  // S = D_uu^-1 W_uu as triplets in local numbering.
  std::vector<Eigen::Triplet<double>> triplets;
  ConvergenceDiagnostic diag;
  for (Index r = 0; r < m; ++r) {
    const Index i = unlabeled[static_cast<std::size_t>(r)];
    const double d = static_cast<double>(kernel.degrees(i));
    double self = 0, off = 0;
    for (typename SparseRowMatrix<Scalar>::InnerIterator it(kernel.weights, i); it; ++it) {
      const Index j = local[static_cast<std::size_t>(it.col())];
      if (j < 0) continue;
      const double w = static_cast<double>(it.value());
      triplets.emplace_back(static_cast<int>(r), static_cast<int>(j), w / d);
      (it.col() == i ? self : off) += w;
    }
    diag.inf_norm = std::max(diag.inf_norm, off / (d - self + eps));
  }
  Eigen::SparseMatrix<double, Eigen::RowMajor> s(m, m);
  s.setFromTriplets(triplets.begin(), triplets.end());

  Eigen::VectorXd x = Eigen::VectorXd::Ones(m);
  Eigen::VectorXd y(m), xs(m), ys(m);
  for (Index iter = 1; iter <= max_iter; ++iter) {
    y.noalias() = s * x;
    y += x;
    diag.spectral_radius_upper = (y.array() / x.array()).maxCoeff() - 1.0;
    // The lower bound holds for any nonnegative vector, so it is taken on the
    // dominant support; transient entries decay toward zero and would pin it at 0.
    xs = (x.array() >= 1e-12 * x.maxCoeff()).select(x, 0.0);
    ys.noalias() = s * xs;
    ys += xs;
    double lower = std::numeric_limits<double>::infinity();
    for (Index r = 0; r < m; ++r) {
      if (xs(r) > 0) lower = std::min(lower, ys(r) / xs(r));
    }
    diag.spectral_radius_lower = lower - 1.0;
    diag.power_iterations = iter;
    if (diag.spectral_radius_upper - diag.spectral_radius_lower <= tol) break;
    x = (y / y.maxCoeff()).cwiseMax(1e-200);  // stays positive, so the upper bound stays valid
  }
  diag.spectral_radius_estimate = 0.5 * (diag.spectral_radius_lower + diag.spectral_radius_upper);
  return diag;
}

template <typename Scalar>
ConvergenceDiagnostic convergence_diagnostic(const Kernel<Scalar>& kernel, const PoolState& pool, double eps = 1e-6) {
  std::vector<char> mask(static_cast<std::size_t>(pool.pool_size()), 0);
  for (Index i : pool.labeled()) mask[static_cast<std::size_t>(i)] = 1;
  return convergence_diagnostic(kernel, mask, eps);
}

}  // namespace diffal
