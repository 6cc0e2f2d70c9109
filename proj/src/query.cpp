#include "diffal/query.hpp"

#include "diffal/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <utility>

namespace diffal {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void require_pool(const PoolState& pool, Index batch_size) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (pool.num_unlabeled() < batch_size) {
    throw InsufficientPoolError("query: " + std::to_string(pool.num_unlabeled()) +
                                " unlabeled points, batch of " + std::to_string(batch_size) + " requested");
  }
}

void require_probs(const SignalMatrix<double>& probs, const PoolState& pool) {
  if (probs.rows() != pool.pool_size() || probs.cols() != pool.num_classes()) {
    throw ShapeError("posteriors must be N×C (" + std::to_string(pool.pool_size()) + "×" +
                     std::to_string(pool.num_classes()) + ")");
  }
  for (Index i = 0; i < probs.rows(); ++i) {
    if (std::abs(probs.row(i).sum() - 1.0) > 1e-6 || probs.row(i).minCoeff() < 0.0) {
      throw ConfigError("posterior row " + std::to_string(i) + " is not a probability vector");
    }
  }
}

}  // namespace

Criterion parse_criterion(std::string_view name) {
  if (name == "diffusion") return Criterion::Diffusion;
  if (name == "random") return Criterion::Random;
  if (name == "uncertainty") return Criterion::Uncertainty;
  if (name == "margin") return Criterion::Margin;
  if (name == "entropy") return Criterion::Entropy;
  if (name == "coreset") return Criterion::Coreset;
  throw ConfigError("unknown criterion '" + std::string(name) + "'");
}

std::string_view to_string(Criterion c) {
  switch (c) {
    case Criterion::Diffusion: return "diffusion";
    case Criterion::Random: return "random";
    case Criterion::Uncertainty: return "uncertainty";
    case Criterion::Margin: return "margin";
    case Criterion::Entropy: return "entropy";
    case Criterion::Coreset: return "coreset";
  }
  return "?";
}

void QueryConfig::validate() const {
  if (batch_size < 1) throw ConfigError("query: batch size B must be >= 1");
  if (mini_batch < 1 || mini_batch > batch_size) throw ConfigError("query: need 1 <= P <= B");
  if (diffusion_time < 1) throw ConfigError("query: T0 must be >= 1");
  if (!(delta >= 0.0 && delta <= 1.0)) throw ConfigError("query: delta must lie in [0, 1]");
}

std::vector<double> diffusion_scores(const SignalMatrix<double>& chi, DiffusionScore score) {
  std::vector<double> out(static_cast<std::size_t>(chi.rows()));
  for (Index i = 0; i < chi.rows(); ++i) {
    if (score == DiffusionScore::MinAbs) {
      out[static_cast<std::size_t>(i)] = chi.row(i).cwiseAbs().minCoeff();
    } else {
      double first = -std::numeric_limits<double>::infinity(), second = first;
      for (Index c = 0; c < chi.cols(); ++c) {
        const double v = chi(i, c);
        if (v > first) {
          second = first;
          first = v;
        } else if (v > second) {
          second = v;
        }
      }
      out[static_cast<std::size_t>(i)] = first - second;
    }
  }
  return out;
}

std::vector<Index> select_smallest(std::span<const double> scores, std::span<const Index> candidates, Index count) {
  std::vector<std::pair<double, Index>> keyed;
  keyed.reserve(candidates.size());
  for (Index i : candidates) keyed.emplace_back(scores[static_cast<std::size_t>(i)], i);
  count = std::min<Index>(count, static_cast<Index>(keyed.size()));
  std::nth_element(keyed.begin(), keyed.begin() + count, keyed.end());
  std::sort(keyed.begin(), keyed.begin() + count);
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(count));
  for (Index t = 0; t < count; ++t) out.push_back(keyed[static_cast<std::size_t>(t)].second);
  return out;
}

DiffusionQueryResult diffusion_batch_query(const Kernel<double>& kernel, const PoolState& pool,
                                           const QueryConfig& cfg, const SignalMatrix<double>* probs,
                                           const LabelSource& oracle) {
  cfg.validate();
  require_pool(pool, cfg.batch_size);
  const Index n = pool.pool_size();
  if (kernel.size() != n) throw ShapeError("query: kernel and pool sizes differ");

  DiffusionQueryResult result;
  std::vector<Index> clamped(pool.labeled());
  std::vector<int> clamp_labels(pool.labeled_labels());
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  for (Index i : clamped) taken[static_cast<std::size_t>(i)] = 1;

  int steps = cfg.diffusion_time;
  std::vector<Index> candidates;
  while (static_cast<Index>(result.batch.size()) < cfg.batch_size) {
    const Index quota = std::min(cfg.mini_batch, cfg.batch_size - static_cast<Index>(result.batch.size()));

    auto start = Clock::now();
    auto signal = init_signal<double>(n, clamped, clamp_labels, pool.num_classes(), cfg.init_mode, probs);
    signal = diffuse(kernel, std::move(signal), steps);
    result.diffuse_seconds += seconds_since(start);
    result.diffusion_times.push_back(steps);

    start = Clock::now();
    candidates.clear();
    std::vector<Index> unreached;
    for (Index i = 0; i < n; ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      candidates.push_back(i);
      if (signal.chi.row(i).cwiseAbs().maxCoeff() < kZeroSignal) unreached.push_back(i);
    }
    const auto n0 = static_cast<Index>(unreached.size());
    result.unreached.push_back(n0);

    std::vector<Index> picks;
    if (cfg.influence_tiebreak && n0 > quota) {
      // Among unreached points prefer the largest outgoing weight sum.
      std::vector<double> neg_influence(static_cast<std::size_t>(n), 0.0);
      for (Index i : unreached) neg_influence[static_cast<std::size_t>(i)] = -kernel.degrees(i);
      picks = select_smallest(neg_influence, unreached, quota);
    } else {
      const auto scores = diffusion_scores(signal.chi, cfg.score);
      picks = select_smallest(scores, candidates, quota);
    }
    result.sort_seconds += seconds_since(start);

    const auto predicted = oracle ? std::vector<int>{} : predict_labels(signal);
    for (Index i : picks) {
      taken[static_cast<std::size_t>(i)] = 1;
      clamped.push_back(i);
      clamp_labels.push_back(oracle ? oracle(i) : predicted[static_cast<std::size_t>(i)]);
      result.batch.push_back(i);
    }
    if (static_cast<double>(n0) < cfg.delta * static_cast<double>(n)) steps = std::max(1, steps - 1);
  }
  return result;
}

std::vector<Index> baseline_query(Criterion criterion, const SignalMatrix<double>& probs, const PoolState& pool,
                                  Index batch_size, std::uint64_t seed) {
  require_pool(pool, batch_size);
  auto candidates = pool.unlabeled();

  if (criterion == Criterion::Random) {
    std::mt19937_64 rng(seed);
    for (Index k = 0; k < batch_size; ++k) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(k), candidates.size() - 1);
      std::swap(candidates[static_cast<std::size_t>(k)], candidates[pick(rng)]);
    }
    candidates.resize(static_cast<std::size_t>(batch_size));
    return candidates;
  }

  if (criterion != Criterion::Uncertainty && criterion != Criterion::Margin && criterion != Criterion::Entropy) {
    throw ConfigError("baseline_query: '" + std::string(to_string(criterion)) + "' is not a posterior-based criterion");
  }
  require_probs(probs, pool);

  std::vector<double> scores(static_cast<std::size_t>(probs.rows()));
  for (Index i = 0; i < probs.rows(); ++i) {
    const auto row = probs.row(i);
    double s = 0;
    switch (criterion) {
      case Criterion::Uncertainty:
        s = row.maxCoeff();
        break;
      case Criterion::Margin: {
        double first = -1, second = -1;
        for (Index c = 0; c < row.size(); ++c) {
          if (row(c) > first) {
            second = first;
            first = row(c);
          } else if (row(c) > second) {
            second = row(c);
          }
        }
        s = first - second;
        break;
      }
      case Criterion::Entropy:
        for (Index c = 0; c < row.size(); ++c) {
          if (row(c) > 0) s += row(c) * std::log(row(c));  // = -H, smaller is more uncertain
        }
        break;
      default:
        break;
    }
    scores[static_cast<std::size_t>(i)] = s;
  }
  return select_smallest(scores, candidates, batch_size);
}

std::vector<Index> coreset_greedy_query(const PointMatrix<double>& points, const PoolState& pool, Index batch_size) {
  require_pool(pool, batch_size);
  if (points.rows() != pool.pool_size()) throw ShapeError("coreset: points and pool sizes differ");
  const Index n = points.rows();
  const Index dim = points.cols();

  std::vector<double> min_dist(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  std::vector<char> covered(static_cast<std::size_t>(n), 0);
  auto absorb = [&](Index center) {
    covered[static_cast<std::size_t>(center)] = 1;
    const double* c = points.row(center).data();
    for (Index i = 0; i < n; ++i) {
      auto& d = min_dist[static_cast<std::size_t>(i)];
      d = std::min(d, detail::sq_dist(points.row(i).data(), c, dim));
    }
  };
  for (Index i : pool.labeled()) absorb(i);

  std::vector<Index> batch;
  batch.reserve(static_cast<std::size_t>(batch_size));
  while (static_cast<Index>(batch.size()) < batch_size) {
    Index best = -1;
    for (Index i = 0; i < n; ++i) {
      if (covered[static_cast<std::size_t>(i)]) continue;
      // Strict comparison keeps the lowest index among ties; with nothing
      // covered every distance is +inf and the first unlabeled point wins.
      if (best < 0 || min_dist[static_cast<std::size_t>(i)] > min_dist[static_cast<std::size_t>(best)]) best = i;
    }
    batch.push_back(best);
    absorb(best);
  }
  return batch;
}

}  // namespace diffal
