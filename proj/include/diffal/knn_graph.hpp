#pragma once

#include "diffal/data.hpp"
#include "diffal/errors.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <queue>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace diffal {

enum class KnnMethod { Brute, Tree, Auto };

// Dimension at or below which Auto picks the kd-tree.
inline constexpr Index kTreeMaxDim = 32;

/// Directed K-NN graph under squared Euclidean distance. Row i holds its K
/// neighbors sorted by (distance, index); sigma[i] is the largest of them.
template <typename Scalar>
struct KnnGraph {
  Index num_points = 0;
  Index k = 0;
  std::vector<Index> neighbor_ids;  // num_points * k, row-major
  std::vector<Scalar> distances;    // num_points * k, row-major
  std::vector<Scalar> sigma;

  std::span<const Index> neighbors(Index i) const {
    return {neighbor_ids.data() + i * k, static_cast<std::size_t>(k)};
  }
  std::span<const Scalar> row_distances(Index i) const {
    return {distances.data() + i * k, static_cast<std::size_t>(k)};
  }
};

namespace detail {

template <typename Scalar>
inline Scalar sq_dist(const Scalar* a, const Scalar* b, Index dim) {
  Scalar acc = 0;
  for (Index t = 0; t < dim; ++t) {
    const Scalar diff = a[t] - b[t];
    acc += diff * diff;
  }
  return acc;
}

template <typename Scalar>
using Candidate = std::pair<Scalar, Index>;  // (distance, index); lexicographic order breaks ties

template <typename Scalar>
class KnnHeap {
 public:
  explicit KnnHeap(Index k) : k_(static_cast<std::size_t>(k)) { items_.reserve(k_ + 1); }

  bool full() const { return items_.size() == k_; }
  Scalar worst() const { return items_.front().first; }

  void offer(Scalar d, Index j) {
    const Candidate<Scalar> c{d, j};
    if (!full()) {
      items_.push_back(c);
      std::push_heap(items_.begin(), items_.end());
    } else if (c < items_.front()) {
      std::pop_heap(items_.begin(), items_.end());
      items_.back() = c;
      std::push_heap(items_.begin(), items_.end());
    }
  }

  std::vector<Candidate<Scalar>> sorted() && {
    std::sort_heap(items_.begin(), items_.end());
    return std::move(items_);
  }

 private:
  std::size_t k_;
  std::vector<Candidate<Scalar>> items_;
};

/// Exact kd-tree over a row-major point matrix. The matrix must outlive the tree.
template <typename Scalar>
class KdTree {
 public:
  explicit KdTree(const PointMatrix<Scalar>& points, Index leaf_size = 16)
      : points_(points), leaf_size_(leaf_size), perm_(static_cast<std::size_t>(points.rows())) {
    std::iota(perm_.begin(), perm_.end(), Index{0});
    if (points.rows() > 0) build(0, points.rows());
  }

  /// K nearest points to row `self`, excluding `self`, sorted by (distance, index).
  std::vector<Candidate<Scalar>> query(Index self, Index k) const {
    KnnHeap<Scalar> heap(k);
    search(0, points_.row(self).data(), self, heap);
    return std::move(heap).sorted();
  }

 private:
  struct Node {
    Index begin, end;
    Index split_dim = -1;  // -1 marks a leaf
    Scalar split_value = 0;
    int left = -1, right = -1;
  };

  int build(Index begin, Index end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{begin, end});
    if (end - begin <= leaf_size_) return id;

    const Index dim = points_.cols();
    Index best_dim = 0;
    Scalar best_spread = -1;
    for (Index t = 0; t < dim; ++t) {
      Scalar lo = points_(perm_[static_cast<std::size_t>(begin)], t), hi = lo;
      for (Index p = begin + 1; p < end; ++p) {
        const Scalar v = points_(perm_[static_cast<std::size_t>(p)], t);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (hi - lo > best_spread) {
        best_spread = hi - lo;
        best_dim = t;
      }
    }
    if (best_spread <= 0) return id;  // all points coincide

    const Index mid = begin + (end - begin) / 2;
    auto first = perm_.begin() + begin;
    std::nth_element(first, perm_.begin() + mid, perm_.begin() + end, [&](Index a, Index b) {
      return points_(a, best_dim) < points_(b, best_dim);
    });
    const Scalar split = points_(perm_[static_cast<std::size_t>(mid)], best_dim);
    const int left = build(begin, mid);
    const int right = build(mid, end);
    Node& node = nodes_[static_cast<std::size_t>(id)];
    node.split_dim = best_dim;
    node.split_value = split;
    node.left = left;
    node.right = right;
    return id;
  }

  void search(int id, const Scalar* q, Index self, KnnHeap<Scalar>& heap) const {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.split_dim < 0) {
      for (Index p = node.begin; p < node.end; ++p) {
        const Index j = perm_[static_cast<std::size_t>(p)];
        if (j == self) continue;
        heap.offer(sq_dist(q, points_.row(j).data(), points_.cols()), j);
      }
      return;
    }
    const Scalar diff = q[node.split_dim] - node.split_value;
    const int near = diff < 0 ? node.left : node.right;
    const int far = diff < 0 ? node.right : node.left;
    search(near, q, self, heap);
    // Not strict: equal-distance candidates with lower index may sit behind the plane.
    if (!heap.full() || diff * diff <= heap.worst()) search(far, q, self, heap);
  }

  const PointMatrix<Scalar>& points_;
  Index leaf_size_;
  std::vector<Index> perm_;
  std::vector<Node> nodes_;
};

}  // namespace detail

/// Exact K-NN graph. Both methods return identical graphs; ties go to the lower index.
template <typename Derived>
KnnGraph<typename Derived::Scalar> build_knn_graph(const Eigen::MatrixBase<Derived>& points, Index k,
                                                   KnnMethod method = KnnMethod::Auto) {
  using Scalar = typename Derived::Scalar;
  const PointMatrix<Scalar> x = points;
  const Index n = x.rows();
  if (k < 1 || k >= n) {
    throw ConfigError("knn: need 1 <= K < N (K=" + std::to_string(k) + ", N=" + std::to_string(n) + ")");
  }
  if (!x.allFinite()) throw ConfigError("knn: non-finite coordinates");
  if (method == KnnMethod::Auto) method = x.cols() <= kTreeMaxDim ? KnnMethod::Tree : KnnMethod::Brute;

  KnnGraph<Scalar> g;
  g.num_points = n;
  g.k = k;
  g.neighbor_ids.resize(static_cast<std::size_t>(n * k));
  g.distances.resize(static_cast<std::size_t>(n * k));
  g.sigma.resize(static_cast<std::size_t>(n));

  auto store = [&](Index i, const std::vector<detail::Candidate<Scalar>>& row) {
    for (Index t = 0; t < k; ++t) {
      g.distances[static_cast<std::size_t>(i * k + t)] = row[static_cast<std::size_t>(t)].first;
      g.neighbor_ids[static_cast<std::size_t>(i * k + t)] = row[static_cast<std::size_t>(t)].second;
    }
    g.sigma[static_cast<std::size_t>(i)] = row[static_cast<std::size_t>(k - 1)].first;
  };

  if (method == KnnMethod::Tree) {
    const detail::KdTree<Scalar> tree(x);
    for (Index i = 0; i < n; ++i) store(i, tree.query(i, k));
  } else {
    std::vector<detail::Candidate<Scalar>> row;
    row.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      row.clear();
      for (Index j = 0; j < n; ++j) {
        if (j != i) row.emplace_back(detail::sq_dist(x.row(i).data(), x.row(j).data(), x.cols()), j);
      }
      std::partial_sort(row.begin(), row.begin() + k, row.end());
      store(i, row);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Kernel

template <typename Scalar>
using SparseRowMatrix = Eigen::SparseMatrix<Scalar, Eigen::RowMajor>;

/// Similarity weights W, degrees D = rowsum(W), and transition matrix M = D^-1 W.
template <typename Scalar>
struct Kernel {
  SparseRowMatrix<Scalar> weights;
  SparseRowMatrix<Scalar> transition;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> degrees;

  Index size() const { return weights.rows(); }

  /// L = D - W.
  SparseRowMatrix<Scalar> laplacian() const {
    SparseRowMatrix<Scalar> l = -weights;
    for (Index i = 0; i < size(); ++i) l.coeffRef(i, i) += degrees(i);
    l.makeCompressed();
    return l;
  }
};

struct KernelOptions {
  double sigma_floor = 1e-12;
  // Replace W by (W + W^T)/2; gives the quadratic-energy reading of the fixed point.
  bool symmetrize = false;
};

/// Builds D and M from explicit nonnegative weights. Every row needs positive mass.
template <typename Scalar>
Kernel<Scalar> kernel_from_weights(SparseRowMatrix<Scalar> w) {
  if (w.rows() != w.cols()) throw ShapeError("kernel weights must be square");
  w.makeCompressed();
  Kernel<Scalar> kern;
  kern.degrees.resize(w.rows());
  for (Index i = 0; i < w.rows(); ++i) {
    Scalar sum = 0;
    for (typename SparseRowMatrix<Scalar>::InnerIterator it(w, i); it; ++it) {
      if (!(it.value() >= 0)) throw ConfigError("kernel weights must be nonnegative");
      sum += it.value();
    }
    if (!(sum > 0)) throw ConfigError("kernel row " + std::to_string(i) + " has zero degree");
    kern.degrees(i) = sum;
  }
  kern.transition = w;
  for (Index i = 0; i < w.rows(); ++i) {
    for (typename SparseRowMatrix<Scalar>::InnerIterator it(kern.transition, i); it; ++it) {
      it.valueRef() /= kern.degrees(i);
    }
  }
  kern.weights = std::move(w);
  return kern;
}

/// W_ij = exp(-rho_ij / sigma_i) on the K-NN pattern, sigma_i floored at sigma_floor.
template <typename Scalar>
Kernel<Scalar> compute_kernel(const KnnGraph<Scalar>& g, const KernelOptions& opts = {}) {
  std::vector<Eigen::Triplet<Scalar>> triplets;
  triplets.reserve(static_cast<std::size_t>(g.num_points * g.k));
  for (Index i = 0; i < g.num_points; ++i) {
    const Scalar sigma = std::max(g.sigma[static_cast<std::size_t>(i)], static_cast<Scalar>(opts.sigma_floor));
    const auto ids = g.neighbors(i);
    const auto rho = g.row_distances(i);
    for (std::size_t t = 0; t < ids.size(); ++t) {
      triplets.emplace_back(static_cast<int>(i), static_cast<int>(ids[t]), std::exp(-rho[t] / sigma));
    }
  }
  SparseRowMatrix<Scalar> w(g.num_points, g.num_points);
  w.setFromTriplets(triplets.begin(), triplets.end());
  if (opts.symmetrize) {
    SparseRowMatrix<Scalar> wt = w.transpose();
    w = (w + wt) * Scalar(0.5);
  }
  return kernel_from_weights<Scalar>(std::move(w));
}

// ---------------------------------------------------------------------------
// Connectivity

struct ComponentReport {
  std::vector<Index> component;  // component id per node, numbered by first appearance
  Index count = 0;
  bool connected() const { return count == 1; }
};

namespace detail {

class DisjointSets {
 public:
  explicit DisjointSets(Index n) : parent_(static_cast<std::size_t>(n)) {
    std::iota(parent_.begin(), parent_.end(), Index{0});
  }
  Index find(Index a) {
    while (parent_[static_cast<std::size_t>(a)] != a) {
      auto& p = parent_[static_cast<std::size_t>(a)];
      p = parent_[static_cast<std::size_t>(p)];
      a = p;
    }
    return a;
  }
  void unite(Index a, Index b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
  }

 private:
  std::vector<Index> parent_;
};

inline ComponentReport label_components(DisjointSets& sets, Index n) {
  ComponentReport report;
  report.component.assign(static_cast<std::size_t>(n), -1);
  std::vector<Index> root_id(static_cast<std::size_t>(n), -1);
  for (Index i = 0; i < n; ++i) {
    const auto r = static_cast<std::size_t>(sets.find(i));
    if (root_id[r] < 0) root_id[r] = report.count++;
    report.component[static_cast<std::size_t>(i)] = root_id[r];
  }
  return report;
}

}  // namespace detail

/// Weakly connected components of the K-NN digraph.
template <typename Scalar>
ComponentReport connectivity_report(const KnnGraph<Scalar>& g) {
  detail::DisjointSets sets(g.num_points);
  for (Index i = 0; i < g.num_points; ++i) {
    for (Index j : g.neighbors(i)) sets.unite(i, j);
  }
  return detail::label_components(sets, g.num_points);
}

/// Weakly connected components of the kernel's sparsity pattern.
template <typename Scalar>
ComponentReport connectivity_report(const Kernel<Scalar>& kern) {
  detail::DisjointSets sets(kern.size());
  for (Index i = 0; i < kern.size(); ++i) {
    for (typename SparseRowMatrix<Scalar>::InnerIterator it(kern.weights, i); it; ++it) {
      if (it.value() > 0) sets.unite(i, it.col());
    }
  }
  return detail::label_components(sets, kern.size());
}

/// Nodes from which some `target` node is reachable along directed edges of
/// positive weight (targets included).
template <typename Scalar>
std::vector<char> reaches_targets(const Kernel<Scalar>& kern, std::span<const Index> targets) {
  const Index n = kern.size();
  // Reverse adjacency so a BFS from the targets walks edges backwards.
  std::vector<std::vector<Index>> incoming(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    for (typename SparseRowMatrix<Scalar>::InnerIterator it(kern.weights, i); it; ++it) {
      if (it.value() > 0 && it.col() != i) incoming[static_cast<std::size_t>(it.col())].push_back(i);
    }
  }
  std::vector<char> reached(static_cast<std::size_t>(n), 0);
  std::vector<Index> frontier(targets.begin(), targets.end());
  for (Index t : frontier) reached[static_cast<std::size_t>(t)] = 1;
  while (!frontier.empty()) {
    const Index v = frontier.back();
    frontier.pop_back();
    for (Index u : incoming[static_cast<std::size_t>(v)]) {
      if (!reached[static_cast<std::size_t>(u)]) {
        reached[static_cast<std::size_t>(u)] = 1;
        frontier.push_back(u);
      }
    }
  }
  return reached;
}

/// True when every node reaches every other along directed edges.
template <typename Scalar>
bool strongly_connected(const Kernel<Scalar>& kern) {
  if (kern.size() == 0) return true;
  const Index root = 0;
  const auto back = reaches_targets(kern, std::span<const Index>(&root, 1));
  if (std::find(back.begin(), back.end(), char{0}) != back.end()) return false;
  SparseRowMatrix<Scalar> wt = kern.weights.transpose();
  Kernel<Scalar> reversed;
  reversed.weights = std::move(wt);
  const auto fwd = reaches_targets(reversed, std::span<const Index>(&root, 1));
  return std::find(fwd.begin(), fwd.end(), char{0}) == fwd.end();
}

// ---------------------------------------------------------------------------
// Parameter heuristics

struct GraphParams {
  Index k = 0;
  int t = 0;
};

/// K = max(3, ceil(2 ln N)) clipped to N-1; T = max(1, ceil(log_K N)).
/// Pass forced_k > 0 to fix K and only derive T.
inline GraphParams suggest_params(Index n, Index forced_k = 0) {
  if (n < 3) throw ConfigError("suggest_params: need N >= 3");
  const double ln_n = std::log(static_cast<double>(n));
  Index k = forced_k > 0 ? forced_k : std::max<Index>(3, static_cast<Index>(std::ceil(2.0 * ln_n)));
  k = std::min(k, n - 1);
  // Slack absorbs rounding when N is an exact power of K.
  const double t = k > 1 ? std::ceil(ln_n / std::log(static_cast<double>(k)) - 1e-9) : 1.0;
  return {k, std::max(1, static_cast<int>(t))};
}

/// Debug dump: one row (i, j, rho, w, m) per stored edge.
template <typename Scalar>
void write_graph_csv(std::ostream& out, const KnnGraph<Scalar>& g, const Kernel<Scalar>& kern) {
  out << "i,j,rho,w,m\n";
  out.precision(17);
  for (Index i = 0; i < g.num_points; ++i) {
    const auto ids = g.neighbors(i);
    const auto rho = g.row_distances(i);
    for (std::size_t t = 0; t < ids.size(); ++t) {
      out << i << ',' << ids[t] << ',' << rho[t] << ',' << kern.weights.coeff(i, ids[t]) << ','
          << kern.transition.coeff(i, ids[t]) << '\n';
    }
  }
}

}  // namespace diffal
