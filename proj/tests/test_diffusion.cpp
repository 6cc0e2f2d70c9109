#include "diffal/diffusion.hpp"
#include "diffal/reference.hpp"
#include "diffal/selfcheck.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace diffal;

namespace {

Kernel<double> kernel_from_dense(const Eigen::MatrixXd& w) {
  return kernel_from_weights<double>(w.sparseView());
}

// Undirected path 0 - 1 - ... - (n-1) with unit weights.
Kernel<double> path_kernel(Index n) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (Index i = 0; i + 1 < n; ++i) w(i, i + 1) = w(i + 1, i) = 1.0;
  return kernel_from_dense(w);
}

DiffusionSignal<double> one_label(Index n, Index node, int label, int c = 2) {
  const std::vector<Index> idx{node};
  const std::vector<int> lab{label};
  return init_signal<double>(n, idx, lab, c);
}

}  // namespace

TEST_CASE("initial signal") {
  const std::vector<Index> idx{1};
  const std::vector<int> lab{1};
  const auto s = init_signal<double>(3, idx, lab, 3);
  CHECK(s.chi.row(1) == Eigen::RowVector3d(-1, 1, -1));
  CHECK(s.chi.row(0).isZero());
  CHECK(s.chi.row(2).isZero());
  CHECK(s.clamp_mask == std::vector<char>{0, 1, 0});

  SUBCASE("soft rows use 2p - 1") {
    SignalMatrix<double> p(3, 3);
    p << 0.6, 0.3, 0.1, 0.2, 0.2, 0.6, 1.0 / 3, 1.0 / 3, 1.0 / 3;
    const auto soft = init_signal<double>(3, idx, lab, 3, InitMode::Soft, &p);
    CHECK(soft.chi(0, 0) == doctest::Approx(0.2));
    CHECK(soft.chi(0, 1) == doctest::Approx(-0.4));
    CHECK(soft.chi(0, 2) == doctest::Approx(-0.8));
    CHECK(soft.chi.row(1) == Eigen::RowVector3d(-1, 1, -1));

    CHECK_THROWS_AS(init_signal<double>(3, idx, lab, 3, InitMode::Soft), ConfigError);
    p(2, 0) = 0.9;
    CHECK_THROWS_AS(init_signal<double>(3, idx, lab, 3, InitMode::Soft, &p), ConfigError);
  }

  const std::vector<int> bad{3};
  CHECK_THROWS_AS(init_signal<double>(3, idx, bad, 3), ConfigError);
}

TEST_CASE("diffusion on a three-node chain") {
  Eigen::MatrixXd w(3, 3);
  w << 0, 1, 0, 0.5, 0, 0.5, 0, 1, 0;
  const auto kern = kernel_from_dense(w);
  const auto s0 = one_label(3, 0, 0);

  const auto t2 = diffuse(kern, s0, 2);
  CHECK(t2.chi.col(0) == Eigen::Vector3d(1, 0.5, 0.5));
  CHECK(t2.chi.col(1) == Eigen::Vector3d(-1, -0.5, -0.5));
  const auto t3 = diffuse(kern, s0, 3);
  CHECK(t3.chi.col(0) == Eigen::Vector3d(1, 0.75, 0.5));
  const auto t0 = diffuse(kern, s0, 0);
  CHECK(t0.chi == s0.chi);
  CHECK_THROWS_AS(diffuse(kern, s0, -1), ConfigError);
}

TEST_CASE("harmonic fixed point") {
  SUBCASE("path anchored at one end is constant") {
    const auto kern = path_kernel(3);
    // The default cap of 10 N sweeps is too small here: the Jacobi matrix has radius sqrt(1/2).
    CHECK_THROWS_AS(exact_fixed_point(kern, one_label(3, 0, 0)), NonConvergenceError);
    const auto sol = exact_fixed_point(kern, one_label(3, 0, 0), 1e-8, 1000);
    CHECK(sol.signal.chi(1, 0) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(sol.signal.chi(2, 0) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(sol.signal.chi(2, 1) == doctest::Approx(-1.0).epsilon(1e-8));
    CHECK(sol.residual <= 1e-8);
  }

  SUBCASE("two anchors interpolate linearly") {
    const auto kern = path_kernel(5);
    const std::vector<Index> idx{0, 4};
    const std::vector<int> lab{0, 1};
    const auto sig = init_signal<double>(5, idx, lab, 2);
    const auto sol = exact_fixed_point(kern, sig, 1e-12);
    const auto dense = dense_harmonic_solve(kern, sig);
    for (Index i = 0; i < 5; ++i) {
      CHECK(dense(i, 0) == doctest::Approx(1.0 - 0.5 * static_cast<double>(i)));
      CHECK(std::abs(sol.signal.chi(i, 0) - dense(i, 0)) < 1e-10);
    }
  }

  SUBCASE("everything labeled needs no sweeps") {
    const auto kern = path_kernel(2);
    const std::vector<Index> idx{0, 1};
    const std::vector<int> lab{0, 1};
    const auto sol = exact_fixed_point(kern, init_signal<double>(2, idx, lab, 2));
    CHECK(sol.iterations == 0);
    CHECK(sol.residual == 0.0);
  }

  SUBCASE("unanchored component is singular") {
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(4, 4);
    w(0, 1) = w(1, 0) = 1.0;
    w(2, 3) = w(3, 2) = 1.0;
    const auto kern = kernel_from_dense(w);
    CHECK_THROWS_WITH_AS(exact_fixed_point(kern, one_label(4, 0, 0)), doctest::Contains("component 1"),
                         SingularSystemError);
  }

  SUBCASE("iteration cap") {
    const auto kern = path_kernel(30);
    try {
      exact_fixed_point(kern, one_label(30, 0, 0), 1e-14, 3);
      FAIL("expected NonConvergenceError");
    } catch (const NonConvergenceError& e) {
      CHECK(e.residual() > 1e-14);
    }
  }
}

TEST_CASE("energy") {
  const auto kern = path_kernel(3);
  DiffusionSignal<double> s = one_label(3, 0, 0);
  const auto e = energy(kern, s);
  CHECK(e(0) == doctest::Approx(1.0));
  CHECK(e(1) == doctest::Approx(1.0));
  s.chi.setConstant(0.3);
  CHECK(energy(kern, s).isZero());
}

TEST_CASE("predicted labels break ties low") {
  DiffusionSignal<double> s;
  s.chi.resize(3, 3);
  s.chi << 0.2, 0.2, -1, -1, 0.5, 0.5, 0, 0, 0;
  CHECK(predict_labels(s) == std::vector<int>{0, 1, 0});
}

TEST_CASE("convergence diagnostic") {
  SUBCASE("path with a periodic unlabeled block") {
    const auto kern = path_kernel(3);
    const std::vector<char> mask{1, 0, 0};
    const auto d = convergence_diagnostic(kern, mask);
    CHECK(d.spectral_radius_lower <= std::sqrt(0.5) + 1e-9);
    CHECK(d.spectral_radius_upper >= std::sqrt(0.5) - 1e-9);
    CHECK(d.spectral_radius_estimate == doctest::Approx(std::sqrt(0.5)).epsilon(1e-8));
    CHECK(d.certified());
    CHECK(d.inf_norm < 1.0);
    CHECK(d.inf_norm > 0.99);
    CHECK(convergence_diagnostic(kern, mask, 0.01).inf_norm == doctest::Approx(1.0 / 1.01));
  }

  SUBCASE("unanchored block has radius one") {
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(4, 4);
    w(0, 1) = w(1, 0) = 1.0;
    w(2, 3) = w(3, 2) = 1.0;
    const auto d = convergence_diagnostic(kernel_from_dense(w), std::vector<char>{1, 0, 0, 0});
    CHECK(d.spectral_radius_upper == doctest::Approx(1.0).epsilon(1e-9));
    CHECK_FALSE(d.certified());
  }

  CHECK_THROWS_AS(convergence_diagnostic(path_kernel(3), std::vector<char>{0, 0, 0}), ConfigError);
  CHECK_THROWS_AS(convergence_diagnostic(path_kernel(3), std::vector<char>{1, 1, 1}), ConfigError);
}

TEST_CASE("properties on random anchored graphs") {
  std::mt19937_64 rng(4242);
  for (int trial = 0; trial < 40; ++trial) {
    const auto inst = make_random_instance(rng);
    const auto& kern = inst.kernel;
    const Index n = kern.size();
    const auto dense = dense_harmonic_solve(kern, inst.signal);

    // Clamped rows never move, every entry stays in [-1, 1], and the distance
    // to the fixed point never grows.
    auto s = inst.signal;
    double prev_err = (s.chi - dense).cwiseAbs().maxCoeff();
    for (int t = 0; t < 60; ++t) {
      s = diffuse(kern, std::move(s), 1);
      for (Index i = 0; i < n; ++i) {
        if (s.clamped(i)) CHECK(s.chi.row(i) == inst.signal.clamp_values.row(i));
      }
      CHECK(s.chi.cwiseAbs().maxCoeff() <= 1.0);
      const double err = (s.chi - dense).cwiseAbs().maxCoeff();
      CHECK(err <= prev_err + 1e-15);
      prev_err = err;
    }

    // Fixed point is harmonic on unlabeled nodes and matches the dense solve.
    const auto sol = exact_fixed_point(kern, inst.signal, 1e-10, 1000 * n);
    const SignalMatrix<double> mchi = kern.transition * sol.signal.chi;
    for (Index i = 0; i < n; ++i) {
      if (!sol.signal.clamped(i)) CHECK((mchi.row(i) - sol.signal.chi.row(i)).cwiseAbs().maxCoeff() < 1e-8);
    }
    const auto tight = exact_fixed_point(kern, inst.signal, 1e-13, 1000 * n);
    CHECK((tight.signal.chi - dense).cwiseAbs().maxCoeff() < 1e-9);

    const auto diag = convergence_diagnostic(kern, inst.labeled_mask);
    CHECK(diag.certified());
    CHECK(diag.inf_norm < 1.0);
    CHECK(diag.spectral_radius_lower <= diag.spectral_radius_upper);
    // Propagation reaches the fixed point at the rate the diagnostic predicts.
    const int steps = static_cast<int>(std::ceil(std::log(1e-9) / std::log(diag.spectral_radius_upper)));
    CHECK((diffuse(kern, inst.signal, steps).chi - dense).cwiseAbs().maxCoeff() < 1e-6);

    // Two classes: the channels are exact mirrors.
    if (s.num_classes() == 2) CHECK(s.chi.col(0) == -s.chi.col(1));
  }
}

TEST_CASE("fixed point minimizes energy on symmetric weights") {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (int trial = 0; trial < 10; ++trial) {
    PointMatrix<double> x(40, 2);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
    const auto kern = compute_kernel(build_knn_graph(x, 4), KernelOptions{1e-12, true});
    std::vector<Index> idx{0, 7, 19, 33};
    std::vector<int> lab{0, 1, 1, 0};
    const auto sig = init_signal<double>(40, idx, lab, 2);
    if (!connectivity_report(kern).connected()) continue;
    const auto sol = exact_fixed_point(kern, sig, 1e-12, 100000);
    const double base = energy(kern, sol.signal).sum();
    for (int rep = 0; rep < 20; ++rep) {
      auto pert = sol.signal;
      for (Index i = 0; i < 40; ++i) {
        if (!pert.clamped(i)) pert.chi.row(i).array() += u(rng);
      }
      CHECK(energy(kern, pert).sum() >= base - 1e-12);
    }
  }
}

TEST_CASE("oracle equivalence summary") {
  const auto s = run_oracle_equivalence(20, 7);
  CHECK(s.instances == 20);
  CHECK(s.max_diffuse_vs_dense <= 1e-6);
  CHECK(s.max_jacobi_vs_dense <= 1e-6);
  CHECK(s.max_residual <= 1e-8);
  CHECK(s.max_spectral_upper < 1.0);
  CHECK(s.max_jacobi_inf_norm < 1.0);
}
