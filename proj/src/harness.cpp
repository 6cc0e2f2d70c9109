#include "diffal/harness.hpp"

#include "diffal/diffusion.hpp"
#include "diffal/errors.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <thread>

namespace diffal {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t round = 0) {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ round);
}

enum Stream : std::uint64_t { kInitStream = 1, kModelInit = 2, kModelShuffle = 3, kRandomQuery = 4 };

// ---------------------------------------------------------------------------
// Config parsing

// Reads keys from one JSON object and rejects any it did not consume.
class Section {
 public:
  Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
  }

  bool has(const std::string& key) {
    used_.insert(key);
    return obj_.contains(key);
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    try {
      return obj_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config: bad value for '" + qualified(key) + "': " + e.what());
    }
  }

  Section child(const std::string& key) {
    static const json empty = json::object();
    return has(key) ? Section(obj_.at(key), qualified(key)) : Section(empty, qualified(key));
  }

  void finish() const {
    for (const auto& item : obj_.items()) {
      if (!used_.count(item.key())) throw ConfigError("config: unknown key '" + qualified(item.key()) + "'");
    }
  }

 private:
  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& obj_;
  std::string path_;
  std::set<std::string> used_;
};

DatasetSpec parse_dataset(Section s, const DatasetSpec& defaults) {
  DatasetSpec spec = defaults;
  const auto kind = s.get<std::string>("kind", spec.kind == DatasetSpec::Kind::Emb1   ? "emb1"
                                               : spec.kind == DatasetSpec::Kind::Pool ? "pool"
                                                                                      : "checkerboard");
  if (kind == "checkerboard") {
    spec.kind = DatasetSpec::Kind::Checkerboard;
    spec.checkerboard.n = s.get<Index>("n", spec.checkerboard.n);
    spec.checkerboard.grid = s.get<int>("grid", spec.checkerboard.grid);
    spec.checkerboard.seed = s.get<std::uint64_t>("seed", spec.checkerboard.seed);
    spec.checkerboard.flip_prob = s.get<double>("flip_prob", spec.checkerboard.flip_prob);
  } else if (kind == "emb1") {
    spec.kind = DatasetSpec::Kind::Emb1;
    spec.path = s.get<std::string>("path", spec.path);
  } else if (kind == "pool") {
    spec.kind = DatasetSpec::Kind::Pool;
  } else {
    throw ConfigError("config: unknown dataset kind '" + kind + "'");
  }
  s.finish();
  return spec;
}

json dataset_to_json(const DatasetSpec& spec) {
  switch (spec.kind) {
    case DatasetSpec::Kind::Checkerboard:
      return {{"kind", "checkerboard"},
              {"n", spec.checkerboard.n},
              {"grid", spec.checkerboard.grid},
              {"seed", spec.checkerboard.seed},
              {"flip_prob", spec.checkerboard.flip_prob}};
    case DatasetSpec::Kind::Emb1:
      return {{"kind", "emb1"}, {"path", spec.path}};
    case DatasetSpec::Kind::Pool:
      return {{"kind", "pool"}};
  }
  return {};
}

std::string_view to_string(EmbeddingSource s) {
  switch (s) {
    case EmbeddingSource::ModelPenultimate: return "model-penultimate";
    case EmbeddingSource::FileDirect: return "file-direct";
    case EmbeddingSource::Input: return "input";
  }
  return "?";
}

std::string_view to_string(KnnMethod m) {
  switch (m) {
    case KnnMethod::Brute: return "brute";
    case KnnMethod::Tree: return "tree";
    case KnnMethod::Auto: return "auto";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Run helpers

struct Prepared {
  EmbeddingSet pool;
  std::optional<EmbeddingSet> test;  // absent: transductive accuracy on unlabeled pool points
  PointMatrix<double> pool_inputs;   // what the network sees
  PointMatrix<double> test_inputs;
};

void standardize(Prepared& data) {
  const auto& x = data.pool.vectors;
  const Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::RowVectorXd scale = (x.rowwise() - mean).colwise().squaredNorm() / static_cast<double>(x.rows());
  scale = scale.cwiseSqrt().unaryExpr([](double s) { return s > 0 ? 1.0 / s : 1.0; });
  data.pool_inputs = (x.rowwise() - mean).array().rowwise() * scale.array();
  if (data.test) data.test_inputs = (data.test->vectors.rowwise() - mean).array().rowwise() * scale.array();
}

Prepared prepare(const ExperimentConfig& cfg) {
  Prepared data;
  data.pool = load_dataset(cfg.dataset);
  data.pool.validate();
  for (int y : data.pool.labels) {
    if (y == kUnknownLabel) throw ConfigError("pool dataset must carry ground-truth labels for the simulated oracle");
  }
  if (cfg.test.kind != DatasetSpec::Kind::Pool) {
    data.test = load_dataset(cfg.test);
    data.test->validate();
    if (data.test->dim() != data.pool.dim()) throw ConfigError("test set dimension differs from the pool");
  }
  const Index needed = cfg.initial_per_class * data.pool.num_classes + cfg.budget;
  if (needed > data.pool.size()) {
    throw ConfigError("budget " + std::to_string(cfg.budget) + " plus initial labels exceeds pool of " +
                      std::to_string(data.pool.size()));
  }
  if (cfg.model.standardize_inputs) {
    standardize(data);
  } else {
    data.pool_inputs = data.pool.vectors;
    if (data.test) data.test_inputs = data.test->vectors;
  }
  return data;
}

std::vector<int> argmax_rows(const Eigen::MatrixXd& probs) {
  std::vector<int> out(static_cast<std::size_t>(probs.rows()));
  for (Index i = 0; i < probs.rows(); ++i) {
    Index best = 0;
    for (Index c = 1; c < probs.cols(); ++c) {
      if (probs(i, c) > probs(i, best)) best = c;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

// Fixed point of the clamped diffusion; nodes with no route to a label stay at 0.
DiffusionSignal<double> diffusion_classifier(const Kernel<double>& kernel, const PoolState& pool) {
  auto signal = init_signal<double>(pool);
  const auto reached = reaches_targets(kernel, std::span<const Index>(pool.labeled()));
  for (Index i = 0; i < kernel.size(); ++i) {
    if (!reached[static_cast<std::size_t>(i)]) {
      signal.clamp_mask[static_cast<std::size_t>(i)] = 1;
      signal.clamp_values.row(i).setZero();
    }
  }
  return exact_fixed_point(kernel, std::move(signal), 1e-6, 200 * kernel.size()).signal;
}

// Posterior surrogate from diffused scores: p_c proportional to (chi_c + 1) / 2.
SignalMatrix<double> signal_posteriors(const SignalMatrix<double>& chi) {
  SignalMatrix<double> p = ((chi.array() + 1.0) / 2.0).matrix();
  for (Index i = 0; i < p.rows(); ++i) {
    const double sum = p.row(i).sum();
    if (sum > 0) {
      p.row(i) /= sum;
    } else {
      p.row(i).setConstant(1.0 / static_cast<double>(p.cols()));
    }
  }
  return p;
}

// Out-of-sample extension: kernel-weighted average of chi over the K nearest pool points.
std::vector<int> extend_predictions(const PointMatrix<double>& pool_vectors, const SignalMatrix<double>& chi,
                                    const PointMatrix<double>& queries, Index k) {
  std::vector<int> out(static_cast<std::size_t>(queries.rows()));
  std::vector<std::pair<double, Index>> row;
  for (Index q = 0; q < queries.rows(); ++q) {
    row.clear();
    for (Index j = 0; j < pool_vectors.rows(); ++j) {
      row.emplace_back(detail::sq_dist(queries.row(q).data(), pool_vectors.row(j).data(), queries.cols()), j);
    }
    const Index kk = std::min<Index>(k, static_cast<Index>(row.size()));
    std::partial_sort(row.begin(), row.begin() + kk, row.end());
    const double sigma = std::max(row[static_cast<std::size_t>(kk - 1)].first, 1e-12);
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(chi.cols());
    for (Index t = 0; t < kk; ++t) {
      acc += std::exp(-row[static_cast<std::size_t>(t)].first / sigma) * chi.row(row[static_cast<std::size_t>(t)].second);
    }
    Index best = 0;
    for (Index c = 1; c < acc.size(); ++c) {
      if (acc(c) > acc(best)) best = c;
    }
    out[static_cast<std::size_t>(q)] = static_cast<int>(best);
  }
  return out;
}

AccuracyCurve run_single(const ExperimentConfig& cfg, const Prepared& data, Criterion criterion, std::uint64_t seed) {
  const EmbeddingSet& set = data.pool;
  const Index n = set.size();
  const bool file_direct = cfg.embedding_source == EmbeddingSource::FileDirect;

  AccuracyCurve curve;
  curve.criterion = std::string(to_string(criterion));
  curve.seed = seed;
  curve.labeled_round.assign(static_cast<std::size_t>(n), -1);

  Oracle oracle(set.labels);
  PoolState pool(n, set.num_classes, cfg.budget);
  {
    const PoolState draw = init_labeled_balanced(set, cfg.initial_per_class, derive_seed(seed, kInitStream));
    for (Index i : draw.labeled()) {
      pool.add_initial(i, oracle.reveal(i, 0));
      curve.labeled_round[static_cast<std::size_t>(i)] = 0;
    }
  }

  std::vector<Index> widths{set.dim()};
  widths.insert(widths.end(), cfg.model.hidden.begin(), cfg.model.hidden.end());
  widths.push_back(set.num_classes);

  std::optional<MlpModel> model;
  auto fit = [&](Index round) {
    if (file_direct) return;
    PointMatrix<double> x(static_cast<Index>(pool.labeled().size()), set.dim());
    for (std::size_t k = 0; k < pool.labeled().size(); ++k) x.row(static_cast<Index>(k)) = data.pool_inputs.row(pool.labeled()[k]);
    TrainOptions opts = cfg.model.train;
    opts.seed = derive_seed(seed, kModelShuffle, static_cast<std::uint64_t>(round));
    // Cold start every round.
    auto fresh = MlpModel::create(widths, derive_seed(seed, kModelInit, static_cast<std::uint64_t>(round)));
    model = train(std::move(fresh), x, pool.labeled_labels(), opts).model;
  };

  std::optional<Kernel<double>> fixed_kernel;
  auto build_kernel = [&](const PointMatrix<double>& emb) {
    const auto graph = build_knn_graph(emb, cfg.graph.k, cfg.graph.method);
    return compute_kernel(graph, KernelOptions{1e-12, cfg.graph.symmetrize});
  };
  if (file_direct || cfg.embedding_source == EmbeddingSource::Input) fixed_kernel = build_kernel(set.vectors);

  auto evaluate = [&](RoundRecord& rec) {
    std::vector<int> predictions, truth;
    if (file_direct) {
      const auto signal = diffusion_classifier(*fixed_kernel, pool);
      if (data.test) {
        predictions = extend_predictions(set.vectors, signal.chi, data.test->vectors, cfg.graph.k);
        truth = data.test->labels;
      } else {
        const auto all = predict_labels(signal);
        for (Index i : pool.unlabeled()) {
          predictions.push_back(all[static_cast<std::size_t>(i)]);
          truth.push_back(set.labels[static_cast<std::size_t>(i)]);
        }
      }
    } else if (data.test) {
      predictions = argmax_rows(forward_with_embedding(*model, data.test_inputs).probs);
      truth = data.test->labels;
    } else {
      PointMatrix<double> x(pool.num_unlabeled(), set.dim());
      Index r = 0;
      for (Index i : pool.unlabeled()) {
        x.row(r++) = data.pool_inputs.row(i);
        truth.push_back(set.labels[static_cast<std::size_t>(i)]);
      }
      predictions = argmax_rows(forward_with_embedding(*model, x).probs);
    }
    rec.accuracy = evaluate_accuracy(predictions, truth);
  };

  {
    RoundRecord rec;
    const auto start = Clock::now();
    fit(0);
    rec.train_seconds = seconds_since(start);
    evaluate(rec);
    rec.labels_used = static_cast<Index>(pool.labeled().size());
    rec.wall_time = seconds_since(start);
    curve.records.push_back(rec);
  }

  for (Index round = 1; pool.budget_remaining() > 0; ++round) {
    const auto round_start = Clock::now();
    RoundRecord rec;
    rec.round = round;
    const Index b = std::min(cfg.query.batch_size, pool.budget_remaining());
    const int r32 = static_cast<int>(round);

    SignalMatrix<double> probs;
    PointMatrix<double> embedding;
    if (file_direct) {
      probs = signal_posteriors(diffusion_classifier(*fixed_kernel, pool).chi);
    } else {
      auto fwd = forward_with_embedding(*model, data.pool_inputs);
      probs = std::move(fwd.probs);
      embedding = std::move(fwd.embedding);
    }

    std::vector<Index> batch;
    switch (criterion) {
      case Criterion::Diffusion: {
        auto start = Clock::now();
        std::optional<Kernel<double>> rebuilt;
        if (!fixed_kernel) rebuilt = build_kernel(embedding);
        const Kernel<double>& kernel = fixed_kernel ? *fixed_kernel : *rebuilt;
        rec.graph_seconds = seconds_since(start);

        QueryConfig qc = cfg.query;
        qc.batch_size = b;
        qc.mini_batch = std::min(cfg.query.mini_batch, b);
        qc.diffusion_time = cfg.graph.t;
        auto result = diffusion_batch_query(kernel, pool, qc, &probs, [&](Index i) { return oracle.reveal(i, r32); });
        rec.diffuse_seconds = result.diffuse_seconds;
        rec.sort_seconds = result.sort_seconds;
        batch = std::move(result.batch);
        break;
      }
      case Criterion::Coreset:
        batch = coreset_greedy_query(set.vectors, pool, b);
        break;
      default:
        batch = baseline_query(criterion, probs, pool, b,
                               derive_seed(seed, kRandomQuery, static_cast<std::uint64_t>(round)));
        break;
    }

    for (Index i : batch) {
      pool.add_queried(i, oracle.reveal(i, r32));
      curve.labeled_round[static_cast<std::size_t>(i)] = r32;
    }
    pool.audit();
    curve.batches.push_back(std::move(batch));

    const auto train_start = Clock::now();
    fit(round);
    rec.train_seconds = seconds_since(train_start);
    evaluate(rec);
    rec.labels_used = static_cast<Index>(pool.labeled().size());
    rec.wall_time = seconds_since(round_start);
    curve.records.push_back(rec);
  }

  if (!cfg.record_wall_time) {
    for (auto& rec : curve.records) rec.wall_time = 0;
  }
  curve.first_read_round = oracle.first_read_round();
  return curve;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  query.validate();
  if (budget < 0) throw ConfigError("budget must be >= 0");
  if (initial_per_class < 0) throw ConfigError("initial_per_class must be >= 0");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (graph.k < 1) throw ConfigError("graph.k must be >= 1");
  if (graph.t < 1) throw ConfigError("graph.t must be >= 1");
}

ExperimentConfig config_from_json(const json& doc) {
  ExperimentConfig cfg;
  Section root(doc, "");

  cfg.dataset = parse_dataset(root.child("dataset"), cfg.dataset);
  DatasetSpec test_defaults;
  test_defaults.checkerboard = cfg.dataset.checkerboard;
  test_defaults.checkerboard.n = 200;
  test_defaults.checkerboard.seed = cfg.dataset.checkerboard.seed + 1000003;
  if (cfg.dataset.kind != DatasetSpec::Kind::Checkerboard) test_defaults.kind = DatasetSpec::Kind::Pool;
  cfg.test = parse_dataset(root.child("test"), test_defaults);

  {
    Section m = root.child("model");
    cfg.model.hidden = m.get<std::vector<Index>>("hidden", cfg.model.hidden);
    cfg.model.train.learning_rate = m.get<double>("learning_rate", cfg.model.train.learning_rate);
    cfg.model.train.momentum = m.get<double>("momentum", cfg.model.train.momentum);
    cfg.model.train.batch_size = m.get<Index>("batch_size", cfg.model.train.batch_size);
    cfg.model.train.epochs = m.get<int>("epochs", cfg.model.train.epochs);
    cfg.model.standardize_inputs = m.get<bool>("standardize_inputs", cfg.model.standardize_inputs);
    m.finish();
  }
  {
    Section q = root.child("query");
    cfg.query.criterion = parse_criterion(q.get<std::string>("criterion", "diffusion"));
    cfg.query.batch_size = q.get<Index>("batch_size", cfg.query.batch_size);
    cfg.query.mini_batch = q.get<Index>("mini_batch", cfg.query.mini_batch);
    cfg.query.delta = q.get<double>("delta", cfg.query.delta);
    const auto init = q.get<std::string>("init_mode", "hard");
    if (init != "hard" && init != "soft") throw ConfigError("config: query.init_mode must be hard or soft");
    cfg.query.init_mode = init == "soft" ? InitMode::Soft : InitMode::Hard;
    const auto score = q.get<std::string>("score", "min_abs");
    if (score != "min_abs" && score != "channel_margin") {
      throw ConfigError("config: query.score must be min_abs or channel_margin");
    }
    cfg.query.score = score == "min_abs" ? DiffusionScore::MinAbs : DiffusionScore::ChannelMargin;
    cfg.query.influence_tiebreak = q.get<bool>("influence_tiebreak", cfg.query.influence_tiebreak);
    q.finish();
  }
  {
    Section g = root.child("graph");
    cfg.graph.k = g.get<Index>("k", cfg.graph.k);
    cfg.graph.t = g.get<int>("t", cfg.graph.t);
    const auto method = g.get<std::string>("method", "auto");
    if (method == "auto") cfg.graph.method = KnnMethod::Auto;
    else if (method == "tree") cfg.graph.method = KnnMethod::Tree;
    else if (method == "brute") cfg.graph.method = KnnMethod::Brute;
    else throw ConfigError("config: graph.method must be auto, tree or brute");
    cfg.graph.symmetrize = g.get<bool>("symmetrize", cfg.graph.symmetrize);
    g.finish();
  }
  cfg.query.diffusion_time = cfg.graph.t;

  const bool has_rounds = root.has("rounds");
  const bool has_budget = root.has("budget");
  if (has_rounds) {
    const auto rounds = root.get<Index>("rounds", 0);
    if (rounds < 0) throw ConfigError("config: rounds must be >= 0");
    const Index implied = rounds * cfg.query.batch_size;
    if (has_budget && root.get<Index>("budget", implied) != implied) {
      throw ConfigError("config: budget must equal rounds * query.batch_size when both are given");
    }
    cfg.budget = implied;
  } else {
    cfg.budget = root.get<Index>("budget", cfg.budget);
  }
  cfg.initial_per_class = root.get<Index>("initial_per_class", cfg.initial_per_class);
  cfg.seeds = root.get<std::vector<std::uint64_t>>("seeds", cfg.seeds);
  const auto source = root.get<std::string>("embedding_source", "model-penultimate");
  if (source == "model-penultimate") cfg.embedding_source = EmbeddingSource::ModelPenultimate;
  else if (source == "file-direct") cfg.embedding_source = EmbeddingSource::FileDirect;
  else if (source == "input") cfg.embedding_source = EmbeddingSource::Input;
  else throw ConfigError("config: unknown embedding_source '" + source + "'");
  cfg.record_wall_time = root.get<bool>("record_wall_time", cfg.record_wall_time);
  cfg.threads = root.get<int>("threads", cfg.threads);
  root.finish();

  cfg.validate();
  return cfg;
}

json to_json(const ExperimentConfig& cfg) {
  return {
      {"dataset", dataset_to_json(cfg.dataset)},
      {"test", dataset_to_json(cfg.test)},
      {"model",
       {{"hidden", cfg.model.hidden},
        {"learning_rate", cfg.model.train.learning_rate},
        {"momentum", cfg.model.train.momentum},
        {"batch_size", cfg.model.train.batch_size},
        {"epochs", cfg.model.train.epochs},
        {"standardize_inputs", cfg.model.standardize_inputs}}},
      {"query",
       {{"criterion", std::string(to_string(cfg.query.criterion))},
        {"batch_size", cfg.query.batch_size},
        {"mini_batch", cfg.query.mini_batch},
        {"delta", cfg.query.delta},
        {"init_mode", cfg.query.init_mode == InitMode::Soft ? "soft" : "hard"},
        {"score", cfg.query.score == DiffusionScore::MinAbs ? "min_abs" : "channel_margin"},
        {"influence_tiebreak", cfg.query.influence_tiebreak}}},
      {"graph",
       {{"k", cfg.graph.k},
        {"t", cfg.graph.t},
        {"method", std::string(to_string(cfg.graph.method))},
        {"symmetrize", cfg.graph.symmetrize}}},
      {"budget", cfg.budget},
      {"initial_per_class", cfg.initial_per_class},
      {"seeds", cfg.seeds},
      {"embedding_source", std::string(to_string(cfg.embedding_source))},
      {"record_wall_time", cfg.record_wall_time},
      {"threads", cfg.threads},
  };
}

json load_config_document(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not KEY=VALUE");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

Oracle::Oracle(std::vector<int> truth) : truth_(std::move(truth)), first_read_(truth_.size(), -1) {}

int Oracle::reveal(Index i, int round) {
  auto& first = first_read_.at(static_cast<std::size_t>(i));
  if (first < 0) first = round;
  return truth_[static_cast<std::size_t>(i)];
}

EmbeddingSet load_dataset(const DatasetSpec& spec) {
  switch (spec.kind) {
    case DatasetSpec::Kind::Checkerboard:
      return generate_checkerboard(spec.checkerboard);
    case DatasetSpec::Kind::Emb1:
      if (spec.path.empty()) throw ConfigError("emb1 dataset needs a path");
      if (!std::filesystem::exists(spec.path)) throw ConfigError("dataset file '" + spec.path + "' not found");
      return load_embedding_file(spec.path);
    case DatasetSpec::Kind::Pool:
      break;
  }
  throw ConfigError("dataset kind 'pool' only applies to the test set");
}

std::vector<AccuracyCurve> run_comparison(const ExperimentConfig& cfg, std::span<const Criterion> criteria) {
  cfg.validate();
  const Prepared data = prepare(cfg);

  struct Task {
    Criterion criterion;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (Criterion c : criteria) {
    for (auto s : cfg.seeds) tasks.push_back({c, s});
  }
  std::vector<AccuracyCurve> curves(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());

  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const auto workers = std::min<std::size_t>(cfg.threads > 0 ? static_cast<std::size_t>(cfg.threads) : hw, tasks.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t t = next++; t < tasks.size(); t = next++) {
      try {
        curves[t] = run_single(cfg, data, tasks[t].criterion, tasks[t].seed);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return curves;
}

std::vector<AccuracyCurve> run_active_learning(const ExperimentConfig& cfg) {
  const Criterion only[] = {cfg.query.criterion};
  return run_comparison(cfg, only);
}

double evaluate_accuracy(std::span<const int> predictions, std::span<const int> truth) {
  if (predictions.size() != truth.size()) {
    throw ShapeError("evaluate_accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(truth.size()) + " labels");
  }
  if (truth.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predictions[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

std::vector<RoundAggregate> aggregate_seeds(std::span<const AccuracyCurve> curves) {
  std::vector<RoundAggregate> out;
  if (curves.empty()) return out;
  const auto rounds = curves.front().records.size();
  for (const auto& c : curves) {
    if (c.records.size() != rounds) throw ShapeError("aggregate_seeds: curves have different round counts");
  }
  const double k = static_cast<double>(curves.size());
  for (std::size_t r = 0; r < rounds; ++r) {
    RoundAggregate agg;
    agg.round = curves.front().records[r].round;
    agg.labels_used = curves.front().records[r].labels_used;
    for (const auto& c : curves) agg.mean += c.records[r].accuracy;
    agg.mean /= k;
    for (const auto& c : curves) {
      const double d = c.records[r].accuracy - agg.mean;
      agg.variance += d * d;
    }
    agg.variance /= k;
    out.push_back(agg);
  }
  return out;
}

void emit_curves(std::span<const AccuracyCurve> curves, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "criterion,seed,round,labels_used,accuracy,wall_time\n";
  for (const auto& c : curves) {
    for (const auto& r : c.records) {
      out << c.criterion << ',' << c.seed << ',' << r.round << ',' << r.labels_used << ','
          << format_double(r.accuracy) << ',' << format_double(r.wall_time) << '\n';
    }
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<AccuracyCurve> read_curves(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != "criterion,seed,round,labels_used,accuracy,wall_time") {
    throw FormatError(path.string() + ": missing or wrong CSV header");
  }
  std::vector<AccuracyCurve> curves;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string criterion, seed, round, used, acc, wall;
    if (!std::getline(row, criterion, ',') || !std::getline(row, seed, ',') || !std::getline(row, round, ',') ||
        !std::getline(row, used, ',') || !std::getline(row, acc, ',') || !std::getline(row, wall)) {
      throw FormatError(path.string() + ": malformed row '" + line + "'");
    }
    const auto s = std::stoull(seed);
    if (curves.empty() || curves.back().criterion != criterion || curves.back().seed != s) {
      curves.push_back(AccuracyCurve{criterion, s, {}, {}, {}, {}});
    }
    RoundRecord rec;
    rec.round = std::stoll(round);
    rec.labels_used = std::stoll(used);
    rec.accuracy = std::stod(acc);
    rec.wall_time = std::stod(wall);
    curves.back().records.push_back(rec);
  }
  return curves;
}

void emit_timings(std::span<const AccuracyCurve> curves, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "criterion,seed,round,graph,diffuse,sort,train\n";
  for (const auto& c : curves) {
    for (const auto& r : c.records) {
      out << c.criterion << ',' << c.seed << ',' << r.round << ',' << format_double(r.graph_seconds) << ','
          << format_double(r.diffuse_seconds) << ',' << format_double(r.sort_seconds) << ','
          << format_double(r.train_seconds) << '\n';
    }
  }
}

}  // namespace diffal
