#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ansync/io_formats.hpp"
#include "ansync/matrix.hpp"

namespace ansync {

enum class VisibleKind { gaussian, bernoulli };

struct RBMLayer {
  Matrix w;  // n_visible x n_hidden
  std::vector<double> vbias;
  std::vector<double> hbias;
  VisibleKind visible_kind = VisibleKind::gaussian;
  // Per-feature statistics of this layer's raw training input; the stack
  // applies (x - mean) / std before the layer, in training and inference.
  std::vector<double> norm_mean;
  std::vector<double> norm_std;

  std::size_t n_visible() const { return w.rows; }
  std::size_t n_hidden() const { return w.cols; }
};

struct RbmTrainConfig {
  std::size_t n_hidden = 0;
  double learning_rate = 0.001;
  double l1_decay = 0.0;
  std::size_t batch_size = 20;
  std::size_t epochs = 100;
  double init_std = 0.01;
  VisibleKind visible_kind = VisibleKind::gaussian;
};

struct DBNConfig {
  std::array<std::size_t, 3> hidden_sizes{512, 256, 128};
  std::array<double, 3> learning_rates{0.001, 0.0005, 0.0005};
  std::array<double, 3> l1_decay{0.001, 0.00005, 0.00005};
  std::size_t batch_size = 20;
  std::size_t epochs = 100;
  double init_std = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

// Weights ~ N(0, init_std^2), biases zero.
RBMLayer rbm_init(std::size_t n_visible, const RbmTrainConfig& cfg, std::uint64_t seed);

// CD-1 with an L1 weight penalty over the given data (rows = samples).
// Binary hidden states are sampled only for the reconstruction step; the
// hidden driver of the weight update is the probability. Batches run in a
// seed-shuffled order with serial accumulation.
void rbm_train_inplace(RBMLayer& layer, const Matrix& data, const RbmTrainConfig& cfg,
                       std::uint64_t seed);

RBMLayer rbm_train_cd1(const Matrix& data, const RbmTrainConfig& cfg, std::uint64_t seed);

// sigma(x w + hbias) per sample; deterministic, no input normalization.
Matrix rbm_hidden_probs(const RBMLayer& layer, const Matrix& data);

struct DBNStack {
  std::array<RBMLayer, 3> layers;
};

// Greedy layer-wise training: gaussian-visible first layer, bernoulli
// thereafter; each layer trains on the z-normalized hidden probabilities of
// the previous one (statistics recorded per layer and reused at inference).
DBNStack dbn_train(const Matrix& volumes, const DBNConfig& cfg);

// Full normalized forward pass through the stack: frames x M.
Matrix dbn_forward(const DBNStack& stack, const Matrix& data);

// w1 . w2 . w3, one column per functional network.
Matrix global_spatial_maps(const DBNStack& stack);

// Third-layer hidden probabilities over a session, transposed to M x T.
Matrix fbn_time_series(const DBNStack& stack, const Matrix& session);

Matrix average_over_subjects(const std::vector<Matrix>& series);

// Persistence in a tensor archive: rbm{k}.{w,vbias,hbias,norm.mean,norm.std}
// for k in {1,2,3}.
void dbn_stack_to_archive(const DBNStack& stack, TensorArchive& archive);
DBNStack dbn_stack_from_archive(const TensorArchive& archive);

}  // namespace ansync
