#pragma once

#include "diffal/data.hpp"
#include "diffal/diffusion.hpp"
#include "diffal/knn_graph.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace diffal {

enum class Criterion { Diffusion, Random, Uncertainty, Margin, Entropy, Coreset };

Criterion parse_criterion(std::string_view name);
std::string_view to_string(Criterion c);

// How a diffused row is reduced to an uncertainty score (smaller = queried first).
enum class DiffusionScore {
  MinAbs,         // min_c |chi_ic|
  ChannelMargin,  // gap between the two largest channels
};

// |chi| below this counts as "not reached" by the diffusion.
inline constexpr double kZeroSignal = 1e-12;

struct QueryConfig {
  Index batch_size = 5;   // B
  Index mini_batch = 1;   // P
  int diffusion_time = 4; // T0
  double delta = 0.0;     // dynamic-T threshold; 0 disables
  InitMode init_mode = InitMode::Hard;
  Criterion criterion = Criterion::Diffusion;
  DiffusionScore score = DiffusionScore::MinAbs;
  bool influence_tiebreak = true;

  Index num_mini_batches() const { return (batch_size + mini_batch - 1) / mini_batch; }
  void validate() const;
};

/// Label assigned to a point picked in an earlier mini-batch of the same query.
using LabelSource = std::function<int(Index)>;

struct DiffusionQueryResult {
  std::vector<Index> batch;
  std::vector<int> diffusion_times;  // T used by each mini-batch
  std::vector<Index> unreached;      // n0 measured by each mini-batch
  double diffuse_seconds = 0;
  double sort_seconds = 0;
};

/// Batch query by repeated diffusion: R mini-batches of the P lowest-scoring
/// unlabeled points, re-diffusing with earlier picks clamped. Picks are clamped
/// with labels from `oracle` when given, otherwise with their predicted label.
DiffusionQueryResult diffusion_batch_query(const Kernel<double>& kernel, const PoolState& pool,
                                           const QueryConfig& cfg, const SignalMatrix<double>* probs = nullptr,
                                           const LabelSource& oracle = {});

/// Per-row score of a diffused signal (smaller = more uncertain).
std::vector<double> diffusion_scores(const SignalMatrix<double>& chi, DiffusionScore score);

/// `count` candidates with the smallest scores, ties to the lower index.
std::vector<Index> select_smallest(std::span<const double> scores, std::span<const Index> candidates, Index count);

/// Random, uncertainty (least confidence), margin and entropy selection from
/// model posteriors. Ties go to the lower index.
std::vector<Index> baseline_query(Criterion criterion, const SignalMatrix<double>& probs, const PoolState& pool,
                                  Index batch_size, std::uint64_t seed);

/// Greedy k-center: repeatedly adds the unlabeled point farthest (Euclidean)
/// from the labeled and already-selected points. With nothing labeled the
/// lowest-index unlabeled point seeds the cover.
std::vector<Index> coreset_greedy_query(const PointMatrix<double>& points, const PoolState& pool, Index batch_size);

}  // namespace diffal
