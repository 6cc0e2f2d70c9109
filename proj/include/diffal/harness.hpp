#pragma once

#include "diffal/data.hpp"
#include "diffal/knn_graph.hpp"
#include "diffal/mlp.hpp"
#include "diffal/query.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace diffal {

enum class EmbeddingSource {
  ModelPenultimate,  // graph on the trained network's last hidden layer
  FileDirect,        // graph on the dataset vectors; the diffusion classifier is the model
  Input,             // graph on the dataset vectors; the network is still the model
};

struct DatasetSpec {
  enum class Kind { Checkerboard, Emb1, Pool } kind = Kind::Checkerboard;
  CheckerboardOptions checkerboard;
  std::string path;
};

struct ModelSpec {
  std::vector<Index> hidden{30, 30};
  TrainOptions train;
  // Network inputs are shifted and scaled per feature with pool statistics.
  bool standardize_inputs = true;
};

struct GraphSpec {
  Index k = 10;
  int t = 4;
  KnnMethod method = KnnMethod::Auto;
  bool symmetrize = false;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  DatasetSpec test;
  ModelSpec model;
  QueryConfig query;
  GraphSpec graph;
  Index budget = 600;  // Q
  Index initial_per_class = 4;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  EmbeddingSource embedding_source = EmbeddingSource::ModelPenultimate;
  bool record_wall_time = false;
  int threads = 0;  // 0: hardware concurrency

  /// ceil(Q / B); the last round is partial when B does not divide Q.
  Index rounds() const { return (budget + query.batch_size - 1) / query.batch_size; }
  void validate() const;
};

/// Parses a config document; unknown keys are rejected with ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const ExperimentConfig& cfg);
/// Reads and parses a JSON config; a missing or malformed file is a ConfigError.
nlohmann::json load_config_document(const std::filesystem::path& path);
/// Applies "a.b.c=value" to the document. The value is parsed as JSON when
/// possible, otherwise taken as a string.
void apply_override(nlohmann::json& doc, std::string_view assignment);

struct RoundRecord {
  Index round = 0;
  Index labels_used = 0;  // size of the labeled set after this round
  double accuracy = 0;
  double wall_time = 0;   // seconds for the round; 0 unless record_wall_time
  double graph_seconds = 0;
  double diffuse_seconds = 0;
  double sort_seconds = 0;
  double train_seconds = 0;
};

struct AccuracyCurve {
  std::string criterion;
  std::uint64_t seed = 0;
  std::vector<RoundRecord> records;
  std::vector<std::vector<Index>> batches;  // queried indices per round (round >= 1)
  std::vector<int> first_read_round;        // per pool point; -1 if the oracle never revealed it
  std::vector<int> labeled_round;           // per pool point; round it entered the labeled set or -1
};

/// Simulated annotator. Records the round in which each label is first read.
class Oracle {
 public:
  explicit Oracle(std::vector<int> truth);
  int reveal(Index i, int round);
  const std::vector<int>& first_read_round() const { return first_read_; }

 private:
  std::vector<int> truth_;
  std::vector<int> first_read_;
};

/// One curve per seed for cfg.query.criterion.
std::vector<AccuracyCurve> run_active_learning(const ExperimentConfig& cfg);

/// Every (criterion, seed) pair, in criterion-major order. Tasks run concurrently.
std::vector<AccuracyCurve> run_comparison(const ExperimentConfig& cfg, std::span<const Criterion> criteria);

double evaluate_accuracy(std::span<const int> predictions, std::span<const int> truth);

struct RoundAggregate {
  Index round = 0;
  Index labels_used = 0;
  double mean = 0;
  double variance = 0;  // population variance across seeds
};

/// Per-round mean and variance of accuracy across seeds of one criterion.
std::vector<RoundAggregate> aggregate_seeds(std::span<const AccuracyCurve> curves);

/// CSV: criterion,seed,round,labels_used,accuracy,wall_time
void emit_curves(std::span<const AccuracyCurve> curves, const std::filesystem::path& path);
std::vector<AccuracyCurve> read_curves(const std::filesystem::path& path);

/// Phase timings: criterion,seed,round,graph,diffuse,sort,train
void emit_timings(std::span<const AccuracyCurve> curves, const std::filesystem::path& path);

/// Loads the dataset a spec describes (checkerboard or EMB1 file).
EmbeddingSet load_dataset(const DatasetSpec& spec);

}  // namespace diffal
