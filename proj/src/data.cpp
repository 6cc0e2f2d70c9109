#include "diffal/data.hpp"

#include "binary_io.hpp"
#include "diffal/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

namespace diffal {

namespace detail {

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace detail

void EmbeddingSet::validate() const {
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (static_cast<Index>(labels.size()) != size()) {
    throw ShapeError("label count " + std::to_string(labels.size()) + " != vector count " +
                     std::to_string(size()));
  }
  if (!vectors.allFinite()) throw ConfigError("embedding contains non-finite entries");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y != kUnknownLabel && (y < 0 || y >= num_classes)) {
      throw ConfigError("label " + std::to_string(y) + " at row " + std::to_string(i) +
                        " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

// ---------------------------------------------------------------------------
// PoolState

PoolState::PoolState(Index pool_size, int num_classes, Index budget)
    : is_labeled_(static_cast<std::size_t>(pool_size), 0),
      label_(static_cast<std::size_t>(pool_size), kUnknownLabel),
      num_classes_(num_classes),
      budget_(budget) {
  if (pool_size < 0 || budget < 0) throw ConfigError("negative pool size or budget");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
}

int PoolState::label_of(Index i) const {
  if (!is_labeled(i)) throw std::logic_error("point " + std::to_string(i) + " is not labeled");
  return label_[static_cast<std::size_t>(i)];
}

std::vector<Index> PoolState::unlabeled() const {
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(num_unlabeled()));
  for (Index i = 0; i < pool_size(); ++i) {
    if (!is_labeled_[static_cast<std::size_t>(i)]) out.push_back(i);
  }
  return out;
}

void PoolState::insert(Index i, int label) {
  if (i < 0 || i >= pool_size()) throw std::out_of_range("pool index " + std::to_string(i));
  if (label < 0 || label >= num_classes_) {
    throw ConfigError("label " + std::to_string(label) + " outside [0, " +
                      std::to_string(num_classes_) + ")");
  }
  if (is_labeled_[static_cast<std::size_t>(i)]) {
    throw std::logic_error("point " + std::to_string(i) + " already labeled");
  }
  is_labeled_[static_cast<std::size_t>(i)] = 1;
  label_[static_cast<std::size_t>(i)] = label;
  labeled_.push_back(i);
  labeled_labels_.push_back(label);
}

void PoolState::add_initial(Index i, int label) { insert(i, label); }

void PoolState::add_queried(Index i, int label) {
  if (budget_ <= 0) throw std::logic_error("query budget exhausted");
  insert(i, label);
  --budget_;
}

void PoolState::audit() const {
  if (labeled_.size() != labeled_labels_.size()) throw std::logic_error("labeled/labels size mismatch");
  std::vector<char> seen(is_labeled_.size(), 0);
  for (std::size_t k = 0; k < labeled_.size(); ++k) {
    const auto i = static_cast<std::size_t>(labeled_[k]);
    if (i >= seen.size()) throw std::logic_error("labeled index out of range");
    if (seen[i]) throw std::logic_error("duplicate labeled index " + std::to_string(i));
    if (!is_labeled_[i]) throw std::logic_error("labeled list and mask disagree at " + std::to_string(i));
    if (label_[i] != labeled_labels_[k]) throw std::logic_error("label mismatch at " + std::to_string(i));
    seen[i] = 1;
  }
  const auto marked = std::count(is_labeled_.begin(), is_labeled_.end(), char{1});
  if (static_cast<std::size_t>(marked) != labeled_.size()) {
    throw std::logic_error("mask marks points missing from the labeled list");
  }
  if (budget_ < 0) throw std::logic_error("negative budget");
}

// ---------------------------------------------------------------------------
// Checkerboard

int checkerboard_class(double x, double y, int grid) {
  const auto cx = static_cast<long>(std::floor(x * grid));
  const auto cy = static_cast<long>(std::floor(y * grid));
  return static_cast<int>((cx + cy) % 2);
}

EmbeddingSet generate_checkerboard(const CheckerboardOptions& opts) {
  if (opts.n < 1) throw ConfigError("checkerboard: n must be >= 1");
  if (opts.grid < 2) throw ConfigError("checkerboard: grid must be >= 2");
  if (!(opts.flip_prob >= 0.0 && opts.flip_prob <= 1.0)) {
    throw ConfigError("checkerboard: flip_prob must lie in [0, 1]");
  }
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  EmbeddingSet set;
  set.num_classes = 2;
  set.vectors.resize(opts.n, 2);
  set.labels.resize(static_cast<std::size_t>(opts.n));
  for (Index i = 0; i < opts.n; ++i) {
    const double x = unit(rng);
    const double y = unit(rng);
    set.vectors(i, 0) = x;
    set.vectors(i, 1) = y;
    int label = checkerboard_class(x, y, opts.grid);
    if (opts.flip_prob > 0.0 && unit(rng) < opts.flip_prob) label = 1 - label;
    set.labels[static_cast<std::size_t>(i)] = label;
  }
  return set;
}

PoolState init_labeled_balanced(const EmbeddingSet& set, Index per_class, std::uint64_t seed) {
  if (per_class < 0) throw ConfigError("per_class must be >= 0");
  std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(set.num_classes));
  for (Index i = 0; i < set.size(); ++i) {
    const int y = set.labels[static_cast<std::size_t>(i)];
    if (y != kUnknownLabel) by_class[static_cast<std::size_t>(y)].push_back(i);
  }
  PoolState pool(set.size(), set.num_classes);
  std::mt19937_64 rng(seed);
  for (int c = 0; c < set.num_classes; ++c) {
    auto& members = by_class[static_cast<std::size_t>(c)];
    if (static_cast<Index>(members.size()) < per_class) {
      throw InfeasibleDrawError("class " + std::to_string(c) + " has " +
                                std::to_string(members.size()) + " points, " +
                                std::to_string(per_class) + " requested");
    }
    // Partial Fisher-Yates: the first per_class entries become a uniform sample.
    for (Index k = 0; k < per_class; ++k) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(k), members.size() - 1);
      std::swap(members[static_cast<std::size_t>(k)], members[pick(rng)]);
      pool.add_initial(members[static_cast<std::size_t>(k)], c);
    }
  }
  return pool;
}

// ---------------------------------------------------------------------------
// EMB1

std::vector<std::uint8_t> serialize_embedding(const EmbeddingSet& set) {
  set.validate();
  detail::ByteWriter w;
  w.magic("EMB1");
  w.put(static_cast<std::uint32_t>(set.size()));
  w.put(static_cast<std::uint32_t>(set.dim()));
  w.put(static_cast<std::uint32_t>(set.num_classes));
  for (Index i = 0; i < set.size(); ++i) {
    for (Index j = 0; j < set.dim(); ++j) w.put(static_cast<float>(set.vectors(i, j)));
  }
  for (int y : set.labels) w.put(static_cast<std::int32_t>(y));
  return w.take();
}

EmbeddingSet parse_embedding_bytes(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "EMB1");
  r.expect_magic("EMB1");
  const auto n = r.get<std::uint32_t>("N");
  const auto d = r.get<std::uint32_t>("d");
  const auto c = r.get<std::uint32_t>("C");
  if (c < 2) throw FormatError("EMB1: C=" + std::to_string(c) + " < 2 at byte offset 12");

  const std::size_t payload = (static_cast<std::size_t>(n) * d + n) * 4;
  r.require(payload, "vectors and labels");

  EmbeddingSet set;
  set.num_classes = static_cast<int>(c);
  set.vectors.resize(n, d);
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    for (Index j = 0; j < static_cast<Index>(d); ++j) {
      const std::size_t at = r.offset();
      const float v = r.get<float>("vector entry");
      if (!std::isfinite(v)) {
        throw FormatError("EMB1: non-finite vector entry at byte offset " + std::to_string(at));
      }
      set.vectors(i, j) = v;
    }
  }
  set.labels.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::size_t at = r.offset();
    const auto y = r.get<std::int32_t>("label");
    if (y != kUnknownLabel && (y < 0 || y >= static_cast<std::int32_t>(c))) {
      throw FormatError("EMB1: label " + std::to_string(y) + " out of range at byte offset " +
                        std::to_string(at));
    }
    set.labels[i] = y;
  }
  if (r.remaining() != 0) {
    throw FormatError("EMB1: " + std::to_string(r.remaining()) +
                      " trailing bytes at byte offset " + std::to_string(r.offset()));
  }
  return set;
}

EmbeddingSet load_embedding_file(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path.string());
  try {
    return parse_embedding_bytes(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_embedding_file(const EmbeddingSet& set, const std::filesystem::path& path) {
  detail::write_file_bytes(path.string(), serialize_embedding(set));
}

}  // namespace diffal
