#include "diffal/query.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

using namespace diffal;

namespace {

Kernel<double> kernel_from_dense(const Eigen::MatrixXd& w) {
  return kernel_from_weights<double>(w.sparseView());
}

Kernel<double> path_kernel(Index n) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (Index i = 0; i + 1 < n; ++i) w(i, i + 1) = w(i + 1, i) = 1.0;
  return kernel_from_dense(w);
}

PoolState pool_with(Index n, int c, std::initializer_list<std::pair<Index, int>> labeled, Index budget = 100) {
  PoolState pool(n, c, budget);
  for (auto [i, y] : labeled) pool.add_initial(i, y);
  return pool;
}

}  // namespace

TEST_CASE("criterion names") {
  for (auto c : {Criterion::Diffusion, Criterion::Random, Criterion::Uncertainty, Criterion::Margin,
                 Criterion::Entropy, Criterion::Coreset}) {
    CHECK(parse_criterion(to_string(c)) == c);
  }
  CHECK_THROWS_AS(parse_criterion("badge"), ConfigError);
}

TEST_CASE("smallest scores") {
  const std::vector<double> scores{0.9, 0.05, 0.4, 0.0};
  const std::vector<Index> all{0, 1, 2, 3};
  CHECK(select_smallest(scores, all, 2) == std::vector<Index>{3, 1});
  const std::vector<double> tied{0.5, 0.1, 0.1, 0.1};
  CHECK(select_smallest(tied, all, 2) == std::vector<Index>{1, 2});
  const std::vector<Index> some{0, 3};
  CHECK(select_smallest(tied, some, 5) == std::vector<Index>{3, 0});
}

TEST_CASE("diffusion scores") {
  SignalMatrix<double> chi(2, 3);
  chi << 0.2, 0.5, -1.0, -0.7, 0.7, 0.05;
  const auto minabs = diffusion_scores(chi, DiffusionScore::MinAbs);
  CHECK(minabs[0] == doctest::Approx(0.2));
  CHECK(minabs[1] == doctest::Approx(0.05));
  const auto margin = diffusion_scores(chi, DiffusionScore::ChannelMargin);
  CHECK(margin[0] == doctest::Approx(0.3));
  CHECK(margin[1] == doctest::Approx(0.65));
}

TEST_CASE("batch query on a four-node path") {
  const auto kern = path_kernel(4);
  const auto pool = pool_with(4, 2, {{0, 0}});
  const std::vector<int> truth{0, 0, 1, 1};
  const LabelSource oracle = [&](Index i) { return truth[static_cast<std::size_t>(i)]; };

  QueryConfig cfg;
  cfg.diffusion_time = 2;
  cfg.batch_size = 2;

  SUBCASE("one mini-batch") {
    cfg.mini_batch = 2;
    const auto r = diffusion_batch_query(kern, pool, cfg, nullptr, oracle);
    CHECK(r.batch == std::vector<Index>{3, 2});
    CHECK(r.diffusion_times == std::vector<int>{2});
    CHECK(r.unreached == std::vector<Index>{1});
  }

  SUBCASE("re-diffusing after each pick") {
    cfg.mini_batch = 1;
    const auto r = diffusion_batch_query(kern, pool, cfg, nullptr, oracle);
    CHECK(r.batch == std::vector<Index>{3, 1});
    CHECK(r.diffusion_times == std::vector<int>{2, 2});
    CHECK(r.unreached == std::vector<Index>{1, 0});
  }

  SUBCASE("predicted labels without an oracle") {
    // Node 3 carries no signal and is clamped to class 0, so 1 and 2 tie.
    cfg.mini_batch = 1;
    const auto r = diffusion_batch_query(kern, pool, cfg);
    CHECK(r.batch == std::vector<Index>{3, 1});
  }

  SUBCASE("dynamic T") {
    cfg.batch_size = 3;
    cfg.mini_batch = 1;
    cfg.diffusion_time = 3;
    cfg.delta = 1.0;
    CHECK(diffusion_batch_query(kern, pool, cfg, nullptr, oracle).diffusion_times == std::vector<int>{3, 2, 1});
    cfg.delta = 0.0;
    CHECK(diffusion_batch_query(kern, pool, cfg, nullptr, oracle).diffusion_times == std::vector<int>{3, 3, 3});
  }
}

TEST_CASE("unreached points ranked by influence") {
  // 0 <-> 4 carries the only label; 1, 2, 3 form a cycle the signal never enters.
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(5, 5);
  w(0, 4) = w(4, 0) = 1.0;
  w(1, 2) = 3.2;
  w(2, 3) = 1.1;
  w(3, 1) = 2.0;
  const auto kern = kernel_from_dense(w);
  const auto pool = pool_with(5, 2, {{0, 1}});
  QueryConfig cfg;
  cfg.batch_size = 2;
  cfg.mini_batch = 2;
  cfg.diffusion_time = 3;
  const auto r = diffusion_batch_query(kern, pool, cfg);
  CHECK(r.unreached == std::vector<Index>{3});
  CHECK(r.batch == std::vector<Index>{1, 3});

  cfg.influence_tiebreak = false;
  CHECK(diffusion_batch_query(kern, pool, cfg).batch == std::vector<Index>{1, 2});

  cfg.batch_size = 3;
  cfg.mini_batch = 3;
  cfg.influence_tiebreak = true;
  auto all = diffusion_batch_query(kern, pool, cfg).batch;
  std::sort(all.begin(), all.end());
  CHECK(all == std::vector<Index>{1, 2, 3});
}

TEST_CASE("posterior baselines") {
  SignalMatrix<double> p(4, 3);
  p << 0.5, 0.5, 0.0,  //
      0.4, 0.3, 0.3,   //
      0.6, 0.2, 0.2,   //
      0.45, 0.1, 0.45;
  const PoolState pool(4, 3, 10);
  CHECK(baseline_query(Criterion::Uncertainty, p, pool, 2, 0) == std::vector<Index>{1, 3});
  CHECK(baseline_query(Criterion::Margin, p, pool, 2, 0) == std::vector<Index>{0, 3});
  CHECK(baseline_query(Criterion::Entropy, p, pool, 2, 0) == std::vector<Index>{1, 2});

  const auto labeled = pool_with(4, 3, {{1, 0}});
  CHECK(baseline_query(Criterion::Uncertainty, p, labeled, 1, 0) == std::vector<Index>{3});

  SignalMatrix<double> bad = p;
  bad(0, 0) = 0.9;
  CHECK_THROWS_AS(baseline_query(Criterion::Margin, bad, pool, 1, 0), ConfigError);
  CHECK_THROWS_AS(baseline_query(Criterion::Coreset, p, pool, 1, 0), ConfigError);
  CHECK_THROWS_AS(baseline_query(Criterion::Entropy, p, pool, 5, 0), InsufficientPoolError);
}

TEST_CASE("posterior baselines match a direct ranking") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Index n = 30;
    const int c = 2 + trial % 4;
    SignalMatrix<double> p(n, c);
    for (Index i = 0; i < n; ++i) {
      for (int k = 0; k < c; ++k) p(i, k) = u(rng);
      p.row(i) /= p.row(i).sum();
    }
    const PoolState pool(n, c, 100);
    const Index b = 1 + trial % 7;
    auto rank = [&](auto key) {
      std::vector<Index> ids(static_cast<std::size_t>(n));
      std::iota(ids.begin(), ids.end(), Index{0});
      std::stable_sort(ids.begin(), ids.end(), [&](Index a, Index bb) { return key(a) < key(bb); });
      ids.resize(static_cast<std::size_t>(b));
      return ids;
    };
    auto sorted_row = [&](Index i) {
      std::vector<double> r;
      for (int k = 0; k < c; ++k) r.push_back(p(i, k));
      std::sort(r.rbegin(), r.rend());
      return r;
    };
    CHECK(baseline_query(Criterion::Uncertainty, p, pool, b, 0) == rank([&](Index i) { return p.row(i).maxCoeff(); }));
    CHECK(baseline_query(Criterion::Margin, p, pool, b, 0) ==
          rank([&](Index i) { return sorted_row(i)[0] - sorted_row(i)[1]; }));
    CHECK(baseline_query(Criterion::Entropy, p, pool, b, 0) ==
          rank([&](Index i) { return (p.row(i).array() * p.row(i).array().log()).sum(); }));
  }
}

TEST_CASE("random baseline") {
  const auto pool = pool_with(50, 2, {{3, 0}, {9, 1}});
  const SignalMatrix<double> none;
  const auto a = baseline_query(Criterion::Random, none, pool, 10, 5);
  CHECK(a == baseline_query(Criterion::Random, none, pool, 10, 5));
  CHECK(a != baseline_query(Criterion::Random, none, pool, 10, 6));
  CHECK(std::set<Index>(a.begin(), a.end()).size() == 10);
  for (Index i : a) CHECK_FALSE(pool.is_labeled(i));
}

TEST_CASE("greedy k-center") {
  PointMatrix<double> x(3, 1);
  x << 0.0, 1.0, 10.0;
  CHECK(coreset_greedy_query(x, pool_with(3, 2, {{0, 0}}), 2) == std::vector<Index>{2, 1});
  CHECK(coreset_greedy_query(x, pool_with(3, 2, {}), 2) == std::vector<Index>{0, 2});

  PointMatrix<double> tie(4, 1);
  tie << 0.0, -2.0, 2.0, 0.5;
  CHECK(coreset_greedy_query(tie, pool_with(4, 2, {{0, 0}}), 1) == std::vector<Index>{1});
}

TEST_CASE("batch query contracts on random graphs") {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 1000; ++trial) {
    const Index n = std::uniform_int_distribution<Index>(10, 60)(rng);
    PointMatrix<double> x(n, 2);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
    const Index k = std::uniform_int_distribution<Index>(2, 6)(rng);
    const auto kern = compute_kernel(build_knn_graph(x, k));

    const int c = std::uniform_int_distribution<int>(2, 4)(rng);
    PoolState pool(n, c, n);
    const Index nl = std::uniform_int_distribution<Index>(1, n / 3)(rng);
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> truth(static_cast<std::size_t>(n));
    for (auto& y : truth) y = std::uniform_int_distribution<int>(0, c - 1)(rng);
    for (Index t = 0; t < nl; ++t) pool.add_initial(order[static_cast<std::size_t>(t)], truth[static_cast<std::size_t>(order[static_cast<std::size_t>(t)])]);

    QueryConfig cfg;
    cfg.batch_size = std::uniform_int_distribution<Index>(1, std::min<Index>(10, n - nl))(rng);
    cfg.mini_batch = std::uniform_int_distribution<Index>(1, cfg.batch_size)(rng);
    cfg.diffusion_time = std::uniform_int_distribution<int>(1, 6)(rng);
    cfg.delta = trial % 3 == 0 ? 0.5 : 0.0;
    const LabelSource oracle = [&](Index i) { return truth[static_cast<std::size_t>(i)]; };

    const auto labeled_before = pool.labeled();
    const auto r = diffusion_batch_query(kern, pool, cfg, nullptr, oracle);
    CHECK(static_cast<Index>(r.batch.size()) == cfg.batch_size);
    CHECK(std::set<Index>(r.batch.begin(), r.batch.end()).size() == r.batch.size());
    for (Index i : r.batch) CHECK_FALSE(pool.is_labeled(i));
    CHECK(pool.labeled() == labeled_before);
    CHECK(static_cast<Index>(r.diffusion_times.size()) == cfg.num_mini_batches());
    for (std::size_t m = 0; m < r.diffusion_times.size(); ++m) {
      CHECK(r.diffusion_times[m] >= 1);
      if (m > 0) {
        const bool shrink = static_cast<double>(r.unreached[m - 1]) < cfg.delta * static_cast<double>(n);
        CHECK(r.diffusion_times[m] == (shrink ? std::max(1, r.diffusion_times[m - 1] - 1) : r.diffusion_times[m - 1]));
      }
    }
    CHECK(diffusion_batch_query(kern, pool, cfg, nullptr, oracle).batch == r.batch);

    // First mini-batch from a direct diffusion of the hard-clamped signal.
    auto sig = init_signal<double>(pool);
    for (int t = 0; t < cfg.diffusion_time; ++t) {
      const SignalMatrix<double> next = Eigen::MatrixXd(kern.transition) * sig.chi;
      for (Index i = 0; i < n; ++i) {
        if (!pool.is_labeled(i)) sig.chi.row(i) = next.row(i);
      }
    }
    std::vector<std::pair<double, Index>> ranked;
    Index n0 = 0;
    for (Index i : pool.unlabeled()) {
      const double s = sig.chi.row(i).cwiseAbs().minCoeff();
      ranked.emplace_back(s, i);
      if (sig.chi.row(i).cwiseAbs().maxCoeff() < 1e-12) ++n0;
    }
    CHECK(r.unreached[0] == n0);
    if (n0 <= cfg.mini_batch) {
      std::sort(ranked.begin(), ranked.end());
      for (Index t = 0; t < cfg.mini_batch; ++t) {
        CHECK(r.batch[static_cast<std::size_t>(t)] == ranked[static_cast<std::size_t>(t)].second);
      }
    }
  }
}
