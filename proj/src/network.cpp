#include "contood/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "contood/error.hpp"
#include "contood/rng.hpp"

namespace contood {

namespace {

constexpr std::size_t kScoreChunk = 512;
constexpr double kHeadInitStd = 1e-2;

struct Activations {
  std::vector<Matrix> pre;   // per hidden layer, B x out
  std::vector<Matrix> post;  // relu(pre)
  Vector feature_norm;       // B
  Matrix unit_features;      // B x k
  Vector column_norm;        // C
  Matrix unit_head;          // k x C
  Matrix scores;             // B x C
};

Activations run_forward(const NetworkState& net, const Matrix& inputs) {
  if (static_cast<std::size_t>(inputs.cols()) != net.input_dim()) {
    throw ShapeError("input has dimension " + std::to_string(inputs.cols()) +
                     ", network expects " + std::to_string(net.input_dim()));
  }
  Activations act;
  act.pre.reserve(net.hidden.size());
  act.post.reserve(net.hidden.size());
  const Matrix* current = &inputs;
  for (const auto& layer : net.hidden) {
    Matrix z = (*current) * layer.weights.transpose();
    z.rowwise() += layer.bias.transpose();
    act.pre.push_back(z);
    act.post.push_back(z.cwiseMax(0.0));
    current = &act.post.back();
  }
  const Matrix& features = *current;

  act.feature_norm = features.rowwise().norm();
  act.unit_features = Matrix::Zero(features.rows(), features.cols());
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    if (act.feature_norm[i] > 0.0) {
      act.unit_features.row(i) = features.row(i) / act.feature_norm[i];
    }
  }
  act.column_norm = net.head.colwise().norm().transpose();
  act.unit_head = Matrix::Zero(net.head.rows(), net.head.cols());
  for (Eigen::Index c = 0; c < net.head.cols(); ++c) {
    if (act.column_norm[c] > 0.0) act.unit_head.col(c) = net.head.col(c) / act.column_norm[c];
  }
  act.scores = act.unit_features * act.unit_head;
  return act;
}

void check_labels(std::span<const int> labels, int n_classes) {
  for (int y : labels) {
    if (y < 0 || y >= n_classes) {
      throw ValueError("label " + std::to_string(y) + " outside [0, " +
                       std::to_string(n_classes) + ")");
    }
  }
}

void check_reference(const NetworkState& net, const NetworkState& ref) {
  bool ok = ref.hidden.size() == net.hidden.size() && ref.head.rows() == net.head.rows() &&
            ref.head.cols() <= net.head.cols();
  for (std::size_t l = 0; ok && l < net.hidden.size(); ++l) {
    ok = ref.hidden[l].weights.rows() == net.hidden[l].weights.rows() &&
         ref.hidden[l].weights.cols() == net.hidden[l].weights.cols();
  }
  if (!ok) throw ShapeError("frozen reference does not match network shape");
}

double cross_entropy_and_grad(const Matrix& scores, std::span<const int> labels,
                              Matrix* dscores) {
  const auto batch = scores.rows();
  Matrix logits = kScoreTemperature * scores;
  double loss = 0.0;
  if (dscores) dscores->resize(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < batch; ++i) {
    const double m = logits.row(i).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(i).array() - m).exp();
    const double z = e.sum();
    loss += std::log(z) + m - logits(i, labels[i]);
    if (dscores) {
      Eigen::RowVectorXd p = e / z;
      p[labels[i]] -= 1.0;
      dscores->row(i) = p * (kScoreTemperature / static_cast<double>(batch));
    }
  }
  return loss / static_cast<double>(batch);
}

}  // namespace

// ---------------------------------------------------------------------------

std::size_t NetworkState::input_dim() const {
  return hidden.empty() ? feature_dim()
                        : static_cast<std::size_t>(hidden.front().weights.cols());
}

NetworkState NetworkState::zeros_like() const {
  NetworkState z;
  z.rng_seed = rng_seed;
  for (const auto& layer : hidden) {
    z.hidden.push_back({Matrix::Zero(layer.weights.rows(), layer.weights.cols()),
                        Vector::Zero(layer.bias.size())});
  }
  z.head = Matrix::Zero(head.rows(), head.cols());
  return z;
}

NetworkState make_network(std::size_t input_dim, std::span<const int> hidden_sizes,
                          int n_classes, std::uint64_t seed) {
  if (input_dim == 0 || n_classes < 1) throw ValueError("empty network shape");
  NetworkState net;
  net.rng_seed = seed;
  Rng rng(derive_seed(seed, SeedStream::network_init));
  std::normal_distribution<double> normal(0.0, 1.0);

  auto in = static_cast<Eigen::Index>(input_dim);
  for (int width : hidden_sizes) {
    if (width < 1) throw ValueError("hidden layer width must be >= 1");
    DenseLayer layer{Matrix(width, in), Vector::Zero(width)};
    const double std_dev = std::sqrt(2.0 / static_cast<double>(in));
    for (double& w : layer.weights.reshaped()) w = std_dev * normal(rng);
    net.hidden.push_back(std::move(layer));
    in = width;
  }
  net.head = Matrix(in, n_classes);
  const double head_std = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& w : net.head.reshaped()) w = head_std * normal(rng);
  return net;
}

ForwardResult forward(const NetworkState& net, std::span<const double> x) {
  Matrix input = Eigen::Map<const Eigen::RowVectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  const Activations act = run_forward(net, input);
  ForwardResult out;
  out.features = act.post.empty() ? Vector(input.row(0).transpose())
                                  : Vector(act.post.back().row(0).transpose());
  out.scores = act.scores.row(0).transpose();
  return out;
}

ForwardResult forward(const NetworkState& net, std::span<const float> x) {
  std::vector<double> wide(x.begin(), x.end());
  return forward(net, std::span<const double>(wide));
}

Matrix score_batch(const NetworkState& net, const Matrix& inputs) {
  return run_forward(net, inputs).scores;
}

Matrix gather_rows(const LabeledDataset& ds, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ds.dim()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto x = ds.sample(rows[r]);
    for (std::size_t k = 0; k < x.size(); ++k) out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = x[k];
  }
  return out;
}

Matrix score_dataset(const NetworkState& net, const LabeledDataset& ds) {
  if (!ds.empty() && ds.dim() != net.input_dim()) {
    throw ShapeError("dataset dimension " + std::to_string(ds.dim()) +
                     " does not match network input " + std::to_string(net.input_dim()));
  }
  Matrix scores(static_cast<Eigen::Index>(ds.size()), net.n_classes());
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < ds.size(); start += kScoreChunk) {
    const std::size_t end = std::min(ds.size(), start + kScoreChunk);
    rows.resize(end - start);
    std::iota(rows.begin(), rows.end(), start);
    scores.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        score_batch(net, gather_rows(ds, rows));
  }
  return scores;
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (epochs < 1) throw ValueError("epochs must be >= 1");
  if (batch_size < 1) throw ValueError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ValueError("learning_rate must be > 0");
  if (lambda_group_sparsity < 0.0) throw ValueError("lambda_group_sparsity must be >= 0");
  if (lambda_soft_freeze < 0.0) throw ValueError("lambda_soft_freeze must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ValueError("momentum must be in [0, 1)");
}

LossBreakdown loss_and_gradient(const NetworkState& net, const Matrix& inputs,
                                std::span<const int> labels, const TrainConfig& cfg,
                                const NetworkState* reference, NetworkState* gradient) {
  if (static_cast<std::size_t>(inputs.rows()) != labels.size() || labels.empty()) {
    throw ShapeError("batch needs one label per row and at least one row");
  }
  check_labels(labels, net.n_classes());
  if (reference) check_reference(net, *reference);

  const Activations act = run_forward(net, inputs);
  LossBreakdown loss;
  Matrix dscores;
  loss.cross_entropy = cross_entropy_and_grad(act.scores, labels, gradient ? &dscores : nullptr);

  for (const auto& layer : net.hidden) {
    loss.group_sparsity += cfg.lambda_group_sparsity * layer.weights.rowwise().norm().sum();
  }
  if (reference) {
    for (std::size_t l = 0; l < net.hidden.size(); ++l) {
      loss.soft_freeze += (net.hidden[l].weights - reference->hidden[l].weights).squaredNorm();
      loss.soft_freeze += (net.hidden[l].bias - reference->hidden[l].bias).squaredNorm();
    }
    loss.soft_freeze += (net.head.leftCols(reference->head.cols()) - reference->head).squaredNorm();
    loss.soft_freeze *= cfg.lambda_soft_freeze;
  }
  if (!gradient) return loss;

  // Cosine head: s = u . v with u = f/|f|, v = w/|w|.
  const Matrix d_unit_head = act.unit_features.transpose() * dscores;  // k x C
  const Matrix d_unit_features = dscores * act.unit_head.transpose();  // B x k

  gradient->head.setZero(net.head.rows(), net.head.cols());
  for (Eigen::Index c = 0; c < net.head.cols(); ++c) {
    if (act.column_norm[c] == 0.0) continue;
    const auto v = act.unit_head.col(c);
    const auto dv = d_unit_head.col(c);
    gradient->head.col(c) = (dv - v * v.dot(dv)) / act.column_norm[c];
  }

  Matrix upstream = Matrix::Zero(act.unit_features.rows(), act.unit_features.cols());
  for (Eigen::Index i = 0; i < upstream.rows(); ++i) {
    if (act.feature_norm[i] == 0.0) continue;
    const auto u = act.unit_features.row(i);
    const auto du = d_unit_features.row(i);
    upstream.row(i) = (du - u * u.dot(du)) / act.feature_norm[i];
  }

  gradient->hidden.resize(net.hidden.size());
  for (std::size_t l = net.hidden.size(); l-- > 0;) {
    Matrix dz = upstream.cwiseProduct((act.pre[l].array() > 0.0).cast<double>().matrix());
    const Matrix& below = l == 0 ? inputs : act.post[l - 1];
    gradient->hidden[l].weights.noalias() = dz.transpose() * below;
    gradient->hidden[l].bias = dz.colwise().sum().transpose();
    if (l > 0) upstream.noalias() = dz * net.hidden[l].weights;
  }

  if (cfg.lambda_group_sparsity > 0.0) {
    for (std::size_t l = 0; l < net.hidden.size(); ++l) {
      const auto& w = net.hidden[l].weights;
      for (Eigen::Index j = 0; j < w.rows(); ++j) {
        const double norm = w.row(j).norm();
        if (norm > 0.0) {
          gradient->hidden[l].weights.row(j) += cfg.lambda_group_sparsity * w.row(j) / norm;
        }
      }
    }
  }
  if (reference && cfg.lambda_soft_freeze > 0.0) {
    const double k = 2.0 * cfg.lambda_soft_freeze;
    for (std::size_t l = 0; l < net.hidden.size(); ++l) {
      gradient->hidden[l].weights += k * (net.hidden[l].weights - reference->hidden[l].weights);
      gradient->hidden[l].bias += k * (net.hidden[l].bias - reference->hidden[l].bias);
    }
    const auto old_cols = reference->head.cols();
    gradient->head.leftCols(old_cols) += k * (net.head.leftCols(old_cols) - reference->head);
  }
  return loss;
}

LossBreakdown dataset_loss(const NetworkState& net, const LabeledDataset& ds,
                           const TrainConfig& cfg, const NetworkState* reference) {
  std::vector<std::size_t> rows(ds.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return loss_and_gradient(net, gather_rows(ds, rows), ds.labels(), cfg, reference, nullptr);
}

void sgd_step(NetworkState& net, NetworkState& velocity, const NetworkState& ce_gradient,
              const TrainConfig& cfg, const NetworkState* frozen_reference) {
  const double lr = cfg.learning_rate;
  auto update = [&](auto& param, auto& vel, const auto& grad) {
    vel = cfg.momentum * vel + grad;
    param -= lr * vel;
  };
  for (std::size_t l = 0; l < net.hidden.size(); ++l) {
    update(net.hidden[l].weights, velocity.hidden[l].weights, ce_gradient.hidden[l].weights);
    update(net.hidden[l].bias, velocity.hidden[l].bias, ce_gradient.hidden[l].bias);
  }
  update(net.head, velocity.head, ce_gradient.head);

  // prox of lambda*|theta - ref|^2: theta <- (theta + 2 lr lambda ref) / (1 + 2 lr lambda)
  if (frozen_reference && cfg.lambda_soft_freeze > 0.0) {
    const double k = 2.0 * lr * cfg.lambda_soft_freeze;
    for (std::size_t l = 0; l < net.hidden.size(); ++l) {
      auto& layer = net.hidden[l];
      const auto& ref = frozen_reference->hidden[l];
      layer.weights = (layer.weights + k * ref.weights) / (1.0 + k);
      layer.bias = (layer.bias + k * ref.bias) / (1.0 + k);
    }
    const auto old_cols = frozen_reference->head.cols();
    net.head.leftCols(old_cols) =
        (net.head.leftCols(old_cols) + k * frozen_reference->head) / (1.0 + k);
  }

  // prox of lambda*|w_j|: group soft-thresholding per neuron
  if (cfg.lambda_group_sparsity > 0.0) {
    const double shrink = lr * cfg.lambda_group_sparsity;
    for (auto& layer : net.hidden) {
      for (Eigen::Index j = 0; j < layer.weights.rows(); ++j) {
        const double norm = layer.weights.row(j).norm();
        layer.weights.row(j) *= norm > shrink ? 1.0 - shrink / norm : 0.0;
      }
    }
  }
}

NetworkState train(NetworkState net, const LabeledDataset& ds, const TrainConfig& cfg,
                   const NetworkState* frozen_reference, TrainLog* log) {
  cfg.validate();
  if (ds.empty()) throw ValueError("cannot train on an empty dataset");
  if (ds.dim() != net.input_dim()) {
    throw ShapeError("dataset dimension does not match network input");
  }
  check_labels(ds.labels(), net.n_classes());
  if (frozen_reference) check_reference(net, *frozen_reference);

  TrainConfig ce_only = cfg;
  ce_only.lambda_group_sparsity = 0.0;

  Rng rng(derive_seed(cfg.seed, SeedStream::train_shuffle));
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  NetworkState velocity = net.zeros_like();
  NetworkState gradient = net.zeros_like();
  std::vector<int> labels;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> rows(order.data() + start, end - start);
      labels.clear();
      for (std::size_t r : rows) labels.push_back(ds.label(r));

      const double ce = loss_and_gradient(net, gather_rows(ds, rows), labels, ce_only,
                                          nullptr, &gradient)
                            .cross_entropy;
      if (!std::isfinite(ce)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch));
      }
      sgd_step(net, velocity, gradient, cfg, frozen_reference);
      epoch_loss += ce;
      ++n_batches;
    }
    bool finite = net.head.allFinite();
    for (const auto& layer : net.hidden) finite = finite && layer.weights.allFinite() && layer.bias.allFinite();
    if (!finite) throw DivergenceError("non-finite parameters after epoch " + std::to_string(epoch));
    if (log) log->epoch_cross_entropy.push_back(epoch_loss / static_cast<double>(n_batches));
  }
  return net;
}

NetworkState accommodate_class(const NetworkState& net, const LabeledDataset& new_class,
                               const TrainConfig& cfg, TrainLog* log) {
  const int new_label = net.n_classes();
  if (new_class.empty()) throw ValueError("new class dataset is empty");
  for (int y : new_class.labels()) {
    if (y != new_label) {
      throw ValueError("new class must be labeled " + std::to_string(new_label) +
                       ", found " + std::to_string(y));
    }
  }

  NetworkState grown = net;
  grown.head.conservativeResize(Eigen::NoChange, new_label + 1);
  Rng rng(derive_seed(cfg.seed, SeedStream::head_column, static_cast<std::uint64_t>(new_label)));
  std::normal_distribution<double> normal(0.0, kHeadInitStd);
  for (Eigen::Index k = 0; k < grown.head.rows(); ++k) grown.head(k, new_label) = normal(rng);

  return train(std::move(grown), new_class, cfg, &net, log);
}

// ---------------------------------------------------------------------------

std::vector<ParameterBlock> parameter_blocks(NetworkState& net) {
  std::vector<ParameterBlock> blocks;
  for (std::size_t l = 0; l < net.hidden.size(); ++l) {
    auto& layer = net.hidden[l];
    blocks.push_back({"hidden[" + std::to_string(l) + "].weights",
                      {layer.weights.data(), static_cast<std::size_t>(layer.weights.size())}});
    blocks.push_back({"hidden[" + std::to_string(l) + "].bias",
                      {layer.bias.data(), static_cast<std::size_t>(layer.bias.size())}});
  }
  blocks.push_back({"head", {net.head.data(), static_cast<std::size_t>(net.head.size())}});
  return blocks;
}

GradientCheckResult gradient_check(const NetworkState& net, const Matrix& inputs,
                                   std::span<const int> labels, const TrainConfig& cfg,
                                   const NetworkState* reference, double step) {
  NetworkState analytic = net.zeros_like();
  loss_and_gradient(net, inputs, labels, cfg, reference, &analytic);

  NetworkState probe = net;
  auto probe_blocks = parameter_blocks(probe);
  auto analytic_blocks = parameter_blocks(analytic);

  GradientCheckResult result;
  for (std::size_t b = 0; b < probe_blocks.size(); ++b) {
    auto values = probe_blocks[b].values;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = loss_and_gradient(probe, inputs, labels, cfg, reference, nullptr).total();
      values[i] = saved - step;
      const double down = loss_and_gradient(probe, inputs, labels, cfg, reference, nullptr).total();
      values[i] = saved;

      const double numeric = (up - down) / (2.0 * step);
      const double exact = analytic_blocks[b].values[i];
      const double scale = std::max({std::abs(exact), std::abs(numeric), 1e-6});
      const double rel = std::abs(exact - numeric) / scale;
      if (rel >= result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_block = probe_blocks[b].name;
      }
      ++result.n_checked;
    }
  }
  return result;
}

int count_dead_neurons(const NetworkState& net, double tolerance) {
  int dead = 0;
  for (const auto& layer : net.hidden) {
    dead += static_cast<int>((layer.weights.rowwise().norm().array() < tolerance).count());
  }
  return dead;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'C', 'T', 'O', 'D', 'N', 'E', 'T', '1'};

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw LengthError("checkpoint truncated");
  return v;
}

void put_doubles(std::ostream& out, const double* data, std::size_t n) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

void get_doubles(std::istream& in, double* data, std::size_t n) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw LengthError("checkpoint truncated");
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto& net = checkpoint.net;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint64_t>(out, net.rng_seed);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.hidden.size()));
  for (const auto& layer : net.hidden) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(layer.weights.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(layer.weights.cols()));
    put_doubles(out, layer.weights.data(), static_cast<std::size_t>(layer.weights.size()));
    put_doubles(out, layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.head.rows()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.head.cols()));
  put_doubles(out, net.head.data(), static_cast<std::size_t>(net.head.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.class_ids.size()));
  for (int id : checkpoint.class_ids) put<std::int32_t>(out, id);
  if (!out) throw IoError("short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw FormatError(path.string() + " is not a network checkpoint");
  }
  Checkpoint cp;
  cp.net.rng_seed = get<std::uint64_t>(in);
  const auto n_layers = get<std::uint32_t>(in);
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    const auto rows = get<std::uint32_t>(in);
    const auto cols = get<std::uint32_t>(in);
    DenseLayer layer{Matrix(rows, cols), Vector(rows)};
    get_doubles(in, layer.weights.data(), std::size_t{rows} * cols);
    get_doubles(in, layer.bias.data(), rows);
    cp.net.hidden.push_back(std::move(layer));
  }
  const auto rows = get<std::uint32_t>(in);
  const auto cols = get<std::uint32_t>(in);
  cp.net.head = Matrix(rows, cols);
  get_doubles(in, cp.net.head.data(), std::size_t{rows} * cols);
  const auto n_ids = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_ids; ++i) cp.class_ids.push_back(get<std::int32_t>(in));
  return cp;
}

}  // namespace contood
