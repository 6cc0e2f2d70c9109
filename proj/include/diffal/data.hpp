#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace diffal {

using Index = std::ptrdiff_t;

// Row-major so that each point is contiguous in memory.
template <typename Scalar>
using PointMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kUnknownLabel = -1;

/// N×d feature vectors with optional ground truth in [0, C) (or kUnknownLabel).
struct EmbeddingSet {
  PointMatrix<double> vectors;
  std::vector<int> labels;
  int num_classes = 2;

  Index size() const { return vectors.rows(); }
  Index dim() const { return vectors.cols(); }

  /// Throws ConfigError when an entry is non-finite or a label is out of range.
  void validate() const;
};

/// Partition of pool indices into labeled and unlabeled sets plus the
/// remaining query budget.
class PoolState {
 public:
  PoolState() = default;
  PoolState(Index pool_size, int num_classes, Index budget = 0);

  Index pool_size() const { return static_cast<Index>(is_labeled_.size()); }
  int num_classes() const { return num_classes_; }
  Index budget_remaining() const { return budget_; }

  bool is_labeled(Index i) const { return is_labeled_.at(static_cast<std::size_t>(i)) != 0; }

  /// Label of a labeled point; throws for an unlabeled one.
  int label_of(Index i) const;

  /// Labeled indices in insertion order, with their labels.
  const std::vector<Index>& labeled() const { return labeled_; }
  const std::vector<int>& labeled_labels() const { return labeled_labels_; }

  /// Unlabeled indices in ascending order.
  std::vector<Index> unlabeled() const;
  Index num_unlabeled() const { return pool_size() - static_cast<Index>(labeled_.size()); }

  /// Adds a label that does not consume budget (initial draw).
  void add_initial(Index i, int label);

  /// Adds a queried label and charges one unit of budget.
  void add_queried(Index i, int label);

  /// Throws std::logic_error if the partition invariant is broken.
  void audit() const;

 private:
  void insert(Index i, int label);

  std::vector<char> is_labeled_;
  std::vector<int> label_;
  std::vector<Index> labeled_;
  std::vector<int> labeled_labels_;
  int num_classes_ = 2;
  Index budget_ = 0;
};

struct CheckerboardOptions {
  Index n = 2000;
  int grid = 4;
  std::uint64_t seed = 0;
  double flip_prob = 0.0;
};

/// Cell parity of a point in the unit square: (floor(x*grid) + floor(y*grid)) mod 2.
int checkerboard_class(double x, double y, int grid);

/// n points uniform in [0,1]^2 with two classes given by cell parity.
EmbeddingSet generate_checkerboard(const CheckerboardOptions& opts);

/// Draws exactly per_class labeled points of each class uniformly without
/// replacement. Throws InfeasibleDrawError if a class is too small.
PoolState init_labeled_balanced(const EmbeddingSet& set, Index per_class, std::uint64_t seed);

/// EMB1 binary format, little-endian:
///   "EMB1" | u32 N | u32 d | u32 C | N*d float32 (row-major) | N int32 labels (-1 = unknown)
EmbeddingSet load_embedding_file(const std::filesystem::path& path);
EmbeddingSet parse_embedding_bytes(std::span<const std::uint8_t> bytes);
void write_embedding_file(const EmbeddingSet& set, const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_embedding(const EmbeddingSet& set);

}  // namespace diffal
