#include "diffal/mlp.hpp"

#include "binary_io.hpp"
#include "diffal/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace diffal {

namespace {

void check_widths(const std::vector<Index>& widths) {
  if (widths.size() < 2) throw ConfigError("mlp: need at least input and output widths");
  for (Index w : widths) {
    if (w < 1) throw ConfigError("mlp: layer widths must be >= 1");
  }
  if (widths.back() < 2) throw ConfigError("mlp: need at least two output classes");
}

void check_data(const MlpModel& model, const PointMatrix<double>& inputs, std::span<const int> labels) {
  if (inputs.cols() != model.input_dim()) {
    throw ShapeError("mlp: input width " + std::to_string(inputs.cols()) + " != model width " +
                     std::to_string(model.input_dim()));
  }
  if (static_cast<Index>(labels.size()) != inputs.rows()) throw ShapeError("mlp: label count != input rows");
  for (int y : labels) {
    if (y < 0 || y >= model.num_classes()) throw ConfigError("mlp: training label out of range");
  }
}

// Column-batched forward/backward with preallocated buffers.
class Backprop {
 public:
  explicit Backprop(const MlpModel& model) : model_(model) {
    const auto layers = model.num_layers();
    acts_.resize(layers + 1);
    deltas_.resize(layers);
    grad_w_.resize(layers);
    grad_b_.resize(layers);
    for (std::size_t l = 0; l < layers; ++l) {
      grad_w_[l].resize(model.weights[l].rows(), model.weights[l].cols());
      grad_b_[l].resize(model.biases[l].size());
    }
  }

  void resize(Index batch) {
    if (batch == batch_) return;
    batch_ = batch;
    for (std::size_t l = 0; l < acts_.size(); ++l) acts_[l].resize(model_.widths[l], batch);
    for (std::size_t l = 0; l < deltas_.size(); ++l) deltas_[l].resize(model_.widths[l + 1], batch);
  }

  Eigen::MatrixXd& input() { return acts_.front(); }

  void forward() {
    const auto layers = model_.num_layers();
    for (std::size_t l = 0; l < layers; ++l) {
      acts_[l + 1].noalias() = model_.weights[l] * acts_[l];
      acts_[l + 1].colwise() += model_.biases[l];
      if (l + 1 < layers) acts_[l + 1] = acts_[l + 1].cwiseMax(0.0);
    }
    auto& out = acts_.back();
    for (Index j = 0; j < out.cols(); ++j) {
      auto col = out.col(j);
      col.array() -= col.maxCoeff();
      col = col.array().exp().matrix();
      col /= col.sum();
    }
  }

  const Eigen::MatrixXd& probs() const { return acts_.back(); }
  const Eigen::MatrixXd& activation(std::size_t l) const { return acts_[l]; }

  /// Sum over the batch of -log p_y.
  double loss(std::span<const int> labels) const {
    double total = 0;
    for (Index j = 0; j < batch_; ++j) total -= std::log(probs()(labels[static_cast<std::size_t>(j)], j));
    return total;
  }

  /// Gradient of (1/scale) * sum of losses in the batch.
  void backward(std::span<const int> labels, double scale) {
    const auto layers = model_.num_layers();
    auto& top = deltas_[layers - 1];
    top = probs();
    for (Index j = 0; j < batch_; ++j) top(labels[static_cast<std::size_t>(j)], j) -= 1.0;
    top /= scale;
    for (std::size_t l = layers; l-- > 0;) {
      grad_w_[l].noalias() = deltas_[l] * acts_[l].transpose();
      grad_b_[l] = deltas_[l].rowwise().sum();
      if (l > 0) {
        deltas_[l - 1].noalias() = model_.weights[l].transpose() * deltas_[l];
        deltas_[l - 1].array() *= (acts_[l].array() > 0.0).cast<double>();
      }
    }
  }

  const std::vector<Eigen::MatrixXd>& grad_w() const { return grad_w_; }
  const std::vector<Eigen::VectorXd>& grad_b() const { return grad_b_; }

 private:
  const MlpModel& model_;
  Index batch_ = -1;
  std::vector<Eigen::MatrixXd> acts_;
  std::vector<Eigen::MatrixXd> deltas_;
  std::vector<Eigen::MatrixXd> grad_w_;
  std::vector<Eigen::VectorXd> grad_b_;
};

}  // namespace

MlpModel MlpModel::create(std::vector<Index> widths, std::uint64_t seed) {
  MlpModel m = zeros(std::move(widths));
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(m.widths[l]));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Index r = 0; r < m.weights[l].rows(); ++r) {
      for (Index c = 0; c < m.weights[l].cols(); ++c) m.weights[l](r, c) = u(rng);
    }
    for (Index r = 0; r < m.biases[l].size(); ++r) m.biases[l](r) = u(rng);
  }
  return m;
}

MlpModel MlpModel::zeros(std::vector<Index> widths) {
  check_widths(widths);
  MlpModel m;
  m.widths = std::move(widths);
  for (std::size_t l = 0; l + 1 < m.widths.size(); ++l) {
    m.weights.push_back(Eigen::MatrixXd::Zero(m.widths[l + 1], m.widths[l]));
    m.biases.push_back(Eigen::VectorXd::Zero(m.widths[l + 1]));
  }
  return m;
}

Index MlpModel::num_parameters() const {
  Index total = 0;
  for (std::size_t l = 0; l < num_layers(); ++l) total += weights[l].size() + biases[l].size();
  return total;
}

Eigen::VectorXd MlpModel::parameters() const {
  Eigen::VectorXd theta(num_parameters());
  Index at = 0;
  for (std::size_t l = 0; l < num_layers(); ++l) {
    for (Index r = 0; r < weights[l].rows(); ++r) {
      for (Index c = 0; c < weights[l].cols(); ++c) theta(at++) = weights[l](r, c);
    }
    theta.segment(at, biases[l].size()) = biases[l];
    at += biases[l].size();
  }
  return theta;
}

void MlpModel::set_parameters(const Eigen::VectorXd& theta) {
  if (theta.size() != num_parameters()) throw ShapeError("mlp: parameter vector has wrong length");
  Index at = 0;
  for (std::size_t l = 0; l < num_layers(); ++l) {
    for (Index r = 0; r < weights[l].rows(); ++r) {
      for (Index c = 0; c < weights[l].cols(); ++c) weights[l](r, c) = theta(at++);
    }
    biases[l] = theta.segment(at, biases[l].size());
    at += biases[l].size();
  }
}

ForwardResult forward_with_embedding(const MlpModel& model, const PointMatrix<double>& inputs) {
  if (inputs.cols() != model.input_dim()) {
    throw ShapeError("mlp: input width " + std::to_string(inputs.cols()) + " != model width " +
                     std::to_string(model.input_dim()));
  }
  Backprop pass(model);
  pass.resize(inputs.rows());
  pass.input() = inputs.transpose();
  pass.forward();
  ForwardResult out;
  out.probs = pass.probs().transpose();
  out.embedding = pass.activation(model.num_layers() - 1).transpose();
  return out;
}

double loss_and_gradient(const MlpModel& model, const PointMatrix<double>& inputs, std::span<const int> labels,
                         Eigen::VectorXd* gradient) {
  check_data(model, inputs, labels);
  if (inputs.rows() == 0) throw ConfigError("mlp: empty data set");
  Backprop pass(model);
  pass.resize(inputs.rows());
  pass.input() = inputs.transpose();
  pass.forward();
  const double n = static_cast<double>(inputs.rows());
  const double loss = pass.loss(labels) / n;
  if (gradient != nullptr) {
    pass.backward(labels, n);
    MlpModel shaped = model;
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
      shaped.weights[l] = pass.grad_w()[l];
      shaped.biases[l] = pass.grad_b()[l];
    }
    *gradient = shaped.parameters();
  }
  return loss;
}

TrainResult train(MlpModel model, const PointMatrix<double>& inputs, std::span<const int> labels,
                  const TrainOptions& opts) {
  check_data(model, inputs, labels);
  if (inputs.rows() == 0) throw ConfigError("train: empty training set");
  if (opts.batch_size < 1 || opts.epochs < 0 || !(opts.learning_rate > 0)) {
    throw ConfigError("train: invalid optimizer options");
  }

  TrainResult result;
  const Index n = inputs.rows();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(opts.seed);

  std::vector<Eigen::MatrixXd> vel_w;
  std::vector<Eigen::VectorXd> vel_b;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    vel_w.push_back(Eigen::MatrixXd::Zero(model.weights[l].rows(), model.weights[l].cols()));
    vel_b.push_back(Eigen::VectorXd::Zero(model.biases[l].size()));
  }

  Backprop pass(model);
  std::vector<int> batch_labels;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    for (Index start = 0; start < n; start += opts.batch_size) {
      const Index size = std::min(opts.batch_size, n - start);
      pass.resize(size);
      batch_labels.resize(static_cast<std::size_t>(size));
      for (Index j = 0; j < size; ++j) {
        const Index row = order[static_cast<std::size_t>(start + j)];
        pass.input().col(j) = inputs.row(row).transpose();
        batch_labels[static_cast<std::size_t>(j)] = labels[static_cast<std::size_t>(row)];
      }
      pass.forward();
      epoch_loss += pass.loss(batch_labels);
      pass.backward(batch_labels, static_cast<double>(size));
      for (std::size_t l = 0; l < model.num_layers(); ++l) {
        vel_w[l] = opts.momentum * vel_w[l] + pass.grad_w()[l];
        vel_b[l] = opts.momentum * vel_b[l] + pass.grad_b()[l];
        model.weights[l] -= opts.learning_rate * vel_w[l];
        model.biases[l] -= opts.learning_rate * vel_b[l];
      }
    }
    result.loss_trace.push_back(epoch_loss / static_cast<double>(n));
  }
  result.model = std::move(model);
  return result;
}

namespace {

using WideMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

// Mean cross-entropy evaluated in extended precision. Rounding noise in a
// double-precision loss is about 1e-16 / step, which swamps small gradients.
class WideLoss {
 public:
  WideLoss(const MlpModel& model, const PointMatrix<double>& inputs, std::span<const int> labels)
      : labels_(labels), x_(inputs.transpose().cast<long double>()) {
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
      w_.push_back(model.weights[l].cast<long double>());
      b_.push_back(model.biases[l].cast<long double>());
    }
  }

  /// Loss with flattened parameter p offset by delta.
  long double shifted(Index p, long double delta) {
    long double* slot = locate(p);
    const long double saved = *slot;
    *slot = saved + delta;
    const long double value = evaluate();
    *slot = saved;
    return value;
  }

 private:
  long double* locate(Index p) {
    for (std::size_t l = 0; l < w_.size(); ++l) {
      if (p < w_[l].size()) return &w_[l](p / w_[l].cols(), p % w_[l].cols());  // row-major flattening
      p -= w_[l].size();
      if (p < b_[l].size()) return &b_[l](p);
      p -= b_[l].size();
    }
    throw std::out_of_range("gradient_check: parameter index");
  }

  long double evaluate() const {
    WideMatrix a = x_;
    for (std::size_t l = 0; l < w_.size(); ++l) {
      WideMatrix z = w_[l] * a;
      z.colwise() += b_[l].col(0);
      a = l + 1 < w_.size() ? WideMatrix(z.cwiseMax(0.0L)) : z;
    }
    long double total = 0;
    for (Index j = 0; j < a.cols(); ++j) {
      const long double top = a.col(j).maxCoeff();
      long double sum = 0;
      for (Index c = 0; c < a.rows(); ++c) sum += std::exp(a(c, j) - top);
      total += top + std::log(sum) - a(labels_[static_cast<std::size_t>(j)], j);
    }
    return total / static_cast<long double>(a.cols());
  }

  std::span<const int> labels_;
  WideMatrix x_;
  std::vector<WideMatrix> w_;
  std::vector<WideMatrix> b_;
};

}  // namespace

GradientCheckResult gradient_check(const MlpModel& model, const PointMatrix<double>& inputs,
                                   std::span<const int> labels, double tolerance, double step,
                                   double magnitude_floor) {
  Eigen::VectorXd analytic;
  loss_and_gradient(model, inputs, labels, &analytic);
  WideLoss wide(model, inputs, labels);
  const long double h = step;

  GradientCheckResult result;
  for (Index p = 0; p < analytic.size(); ++p) {
    const auto numeric = static_cast<double>((wide.shifted(p, h) - wide.shifted(p, -h)) / (2.0L * h));
    const double scale = std::max(std::abs(numeric), std::abs(analytic(p)));
    if (scale < magnitude_floor) {
      ++result.skipped;
      continue;
    }
    ++result.checked;
    result.max_relative_error = std::max(result.max_relative_error, std::abs(numeric - analytic(p)) / scale);
  }
  result.passed = result.max_relative_error < tolerance;
  return result;
}

void save_checkpoint(const MlpModel& model, const std::filesystem::path& path) {
  detail::ByteWriter w;
  w.magic("MLP1");
  w.put(static_cast<std::uint32_t>(model.widths.size()));
  for (Index width : model.widths) w.put(static_cast<std::uint32_t>(width));
  const Eigen::VectorXd theta = model.parameters();
  for (Index p = 0; p < theta.size(); ++p) w.put(static_cast<float>(theta(p)));
  const auto bytes = w.take();
  detail::write_file_bytes(path.string(), bytes);
}

MlpModel load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path.string());
  detail::ByteReader r(bytes, path.string() + ": MLP1");
  r.expect_magic("MLP1");
  const auto count = r.get<std::uint32_t>("layer count");
  if (count < 2 || count > 1024) {
    throw FormatError(r.format() + ": implausible layer count at byte offset 4");
  }
  std::vector<Index> widths;
  for (std::uint32_t l = 0; l < count; ++l) widths.push_back(r.get<std::uint32_t>("width"));
  MlpModel model = MlpModel::zeros(std::move(widths));
  Eigen::VectorXd theta(model.num_parameters());
  for (Index p = 0; p < theta.size(); ++p) theta(p) = r.get<float>("parameter");
  if (r.remaining() != 0) throw FormatError(r.format() + ": trailing bytes at byte offset " + std::to_string(r.offset()));
  model.set_parameters(theta);
  return model;
}

}  // namespace diffal
