#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "contood/dataset.hpp"

namespace contood {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Cosine scores lie in [-1, 1]; cross-entropy sees them multiplied by this.
inline constexpr double kScoreTemperature = 10.0;

// Row j of `weights` holds the incoming weights of output neuron j, which is
// also the group used by the sparsity penalty.
struct DenseLayer {
  Matrix weights;  // out x in
  Vector bias;     // out
};

// ReLU MLP followed by a cosine-normalized head. Column c of `head` is the
// direction of class c in the k-dimensional feature space.
struct NetworkState {
  std::vector<DenseLayer> hidden;
  Matrix head;  // k x C
  std::uint64_t rng_seed = 0;

  std::size_t input_dim() const;
  std::size_t feature_dim() const { return static_cast<std::size_t>(head.rows()); }
  int n_classes() const { return static_cast<int>(head.cols()); }

  // Same shapes, all values zero.
  NetworkState zeros_like() const;
};

// He-normal hidden weights, zero biases, head columns ~ N(0, 1/k).
NetworkState make_network(std::size_t input_dim, std::span<const int> hidden_sizes,
                          int n_classes, std::uint64_t seed);

struct ForwardResult {
  Vector features;  // penultimate ReLU activations, length k
  Vector scores;    // cosine similarity to each head column, length C
};

ForwardResult forward(const NetworkState& net, std::span<const double> x);
ForwardResult forward(const NetworkState& net, std::span<const float> x);

// Scores for a batch of row-major inputs (B x d) -> (B x C).
Matrix score_batch(const NetworkState& net, const Matrix& inputs);
// Scores for every sample of a dataset, evaluated in chunks.
Matrix score_dataset(const NetworkState& net, const LabeledDataset& ds);

Matrix gather_rows(const LabeledDataset& ds, std::span<const std::size_t> rows);

struct TrainConfig {
  int epochs = 10;
  int batch_size = 32;
  double learning_rate = 1e-2;
  double lambda_group_sparsity = 1e-4;
  double lambda_soft_freeze = 100.0;
  double momentum = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LossBreakdown {
  double cross_entropy = 0.0;
  double group_sparsity = 0.0;
  double soft_freeze = 0.0;

  double total() const { return cross_entropy + group_sparsity + soft_freeze; }
};

// Objective on one batch:
//   mean CE(softmax(T * scores), y)
//   + lambda_gs * sum over hidden neurons of ||incoming weights||_2
//   + lambda_sf * ||theta - theta_ref||^2 over parameters present in `reference`
// If `gradient` is non-null it receives d(total)/d(parameters); it must have
// the shapes of `net` (see NetworkState::zeros_like).
LossBreakdown loss_and_gradient(const NetworkState& net, const Matrix& inputs,
                                std::span<const int> labels, const TrainConfig& cfg,
                                const NetworkState* reference, NetworkState* gradient);

LossBreakdown dataset_loss(const NetworkState& net, const LabeledDataset& ds,
                           const TrainConfig& cfg, const NetworkState* reference);

struct TrainLog {
  std::vector<double> epoch_cross_entropy;  // mean over batches
};

// Minibatch SGD with momentum on the cross-entropy term. The two
// regularizers are applied as exact proximal steps after each update, which
// keeps the soft-freeze stable for arbitrarily large lambda and gives exact
// zeros for the group penalty.
NetworkState train(NetworkState net, const LabeledDataset& ds, const TrainConfig& cfg,
                   const NetworkState* frozen_reference = nullptr,
                   TrainLog* log = nullptr);

// One optimizer step on a single batch; exposed for tests.
void sgd_step(NetworkState& net, NetworkState& velocity, const NetworkState& ce_gradient,
              const TrainConfig& cfg, const NetworkState* frozen_reference);

// Adds a head column for label C (seeded N(0, 1e-2^2) init) and fine-tunes on
// `new_class` with soft-freeze against the pre-accommodation network.
NetworkState accommodate_class(const NetworkState& net, const LabeledDataset& new_class,
                               const TrainConfig& cfg, TrainLog* log = nullptr);

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::string worst_block;
  std::size_t n_checked = 0;
};

// Central differences over every parameter. Relative error is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-6).
GradientCheckResult gradient_check(const NetworkState& net, const Matrix& inputs,
                                   std::span<const int> labels, const TrainConfig& cfg,
                                   const NetworkState* reference, double step = 1e-5);

struct ParameterBlock {
  std::string name;
  std::span<double> values;
};
std::vector<ParameterBlock> parameter_blocks(NetworkState& net);

int count_dead_neurons(const NetworkState& net, double tolerance = 1e-3);

// Binary checkpoint: magic "CTODNET1", seed, layer shapes, row-major
// little-endian doubles, then the original class id of every head column.
struct Checkpoint {
  NetworkState net;
  std::vector<int> class_ids;
};
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace contood
