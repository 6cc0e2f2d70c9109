#pragma once

#include "diffal/data.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace diffal {

/// Fully connected classifier: rectifier hidden layers, softmax output.
/// widths = {d0, d1, ..., dn, C}; layer l maps widths[l] -> widths[l+1].
struct MlpModel {
  std::vector<Index> widths;
  std::vector<Eigen::MatrixXd> weights;  // widths[l+1] × widths[l]
  std::vector<Eigen::VectorXd> biases;

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
  static MlpModel create(std::vector<Index> widths, std::uint64_t seed);
  /// All parameters zero; softmax output is uniform.
  static MlpModel zeros(std::vector<Index> widths);

  std::size_t num_layers() const { return weights.size(); }
  Index input_dim() const { return widths.front(); }
  Index num_classes() const { return widths.back(); }
  /// Width of the last hidden layer (the input width when there is none).
  Index embedding_dim() const { return widths[widths.size() - 2]; }
  Index num_parameters() const;

  /// Flattened parameters in layer order (W row-major, then b).
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& theta);
};

struct ForwardResult {
  Eigen::MatrixXd probs;         // N × C
  PointMatrix<double> embedding; // N × d_n, post-activation of the last hidden layer
};

ForwardResult forward_with_embedding(const MlpModel& model, const PointMatrix<double>& inputs);

struct TrainOptions {
  double learning_rate = 0.001;
  double momentum = 0.9;
  Index batch_size = 1;
  int epochs = 100;
  std::uint64_t seed = 0;
};

struct TrainResult {
  MlpModel model;
  std::vector<double> loss_trace;  // mean cross-entropy seen during each epoch
};

/// Minibatch SGD with heavy-ball momentum (v <- mu v + g; theta <- theta - lr v)
/// on mean cross-entropy. Deterministic per seed.
TrainResult train(MlpModel model, const PointMatrix<double>& inputs, std::span<const int> labels,
                  const TrainOptions& opts);

/// Mean cross-entropy and its gradient (flattened like parameters()).
double loss_and_gradient(const MlpModel& model, const PointMatrix<double>& inputs, std::span<const int> labels,
                         Eigen::VectorXd* gradient);

struct GradientCheckResult {
  double max_relative_error = 0;
  Index checked = 0;
  Index skipped = 0;  // both gradients below the magnitude floor
  bool passed = false;
};

/// Compares backprop against central differences over every parameter.
GradientCheckResult gradient_check(const MlpModel& model, const PointMatrix<double>& inputs,
                                   std::span<const int> labels, double tolerance, double step = 1e-5,
                                   double magnitude_floor = 1e-8);

/// "MLP1" | u32 L+1 | u32 widths[L+1] | float32 parameters in layer order.
void save_checkpoint(const MlpModel& model, const std::filesystem::path& path);
MlpModel load_checkpoint(const std::filesystem::path& path);

}  // namespace diffal
