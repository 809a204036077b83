#include "ansync/vsdbn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ansync/rng.hpp"

namespace ansync {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

// Column statistics of this layer's raw input (population std; constant
// columns get std 1 so normalization is a no-op there).
void input_stats(const Matrix& data, std::vector<double>& mean, std::vector<double>& sd) {
  const std::size_t n = data.rows, v = data.cols;
  mean.assign(v, 0.0);
  sd.assign(v, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = data.row(i);
    for (std::size_t j = 0; j < v; ++j) mean[j] += row[j];
  }
  for (double& m : mean) m /= static_cast<double>(n);
  std::vector<double> var(v, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = data.row(i);
    for (std::size_t j = 0; j < v; ++j) {
      const double d = row[j] - mean[j];
      var[j] += d * d;
    }
  }
  for (std::size_t j = 0; j < v; ++j) {
    const double s = std::sqrt(var[j] / static_cast<double>(n));
    if (s > 0) sd[j] = s;
  }
}

Matrix apply_norm(const Matrix& data, const std::vector<double>& mean,
                  const std::vector<double>& sd) {
  Matrix out(data.rows, data.cols);
  for (std::size_t i = 0; i < data.rows; ++i)
    for (std::size_t j = 0; j < data.cols; ++j) out(i, j) = (data(i, j) - mean[j]) / sd[j];
  return out;
}

}  // namespace

void DBNConfig::validate() const {
  for (std::size_t h : hidden_sizes)
    if (h == 0) throw ParameterError("dbn config: hidden sizes must be positive");
  for (double lr : learning_rates)
    if (!(lr > 0)) throw ParameterError("dbn config: learning rates must be positive");
  for (double l1 : l1_decay)
    if (l1 < 0) throw ParameterError("dbn config: l1 decay must be non-negative");
  if (batch_size == 0) throw ParameterError("dbn config: batch size must be positive");
  if (!(init_std > 0)) throw ParameterError("dbn config: init std must be positive");
}

RBMLayer rbm_init(std::size_t n_visible, const RbmTrainConfig& cfg, std::uint64_t seed) {
  if (n_visible == 0 || cfg.n_hidden == 0)
    throw ParameterError("rbm_init: zero-sized layer");
  RBMLayer layer;
  layer.visible_kind = cfg.visible_kind;
  layer.w = Matrix(n_visible, cfg.n_hidden);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, cfg.init_std);
  for (double& x : layer.w.a) x = gauss(rng);
  layer.vbias.assign(n_visible, 0.0);
  layer.hbias.assign(cfg.n_hidden, 0.0);
  layer.norm_mean.assign(n_visible, 0.0);
  layer.norm_std.assign(n_visible, 1.0);
  return layer;
}

void rbm_train_inplace(RBMLayer& layer, const Matrix& data, const RbmTrainConfig& cfg,
                       std::uint64_t seed) {
  const std::size_t n = data.rows, v = layer.n_visible(), h = layer.n_hidden();
  if (data.cols != v) throw DimensionError("rbm_train: data columns != visible units");
  if (n == 0) throw EmptyInputError("rbm_train: no samples");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  // Per-batch work buffers (batch x {v,h}); reused across batches.
  const std::size_t bmax = std::min(cfg.batch_size, n);
  Matrix x(bmax, v), hpos(bmax, h), hstate(bmax, h), xneg(bmax, v), hneg(bmax, h);

  auto hidden_from = [&](const Matrix& vis, Matrix& out, std::size_t b) {
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < h; ++j) {
        double z = layer.hbias[j];
        for (std::size_t kk = 0; kk < v; ++kk) z += vis(i, kk) * layer.w(kk, j);
        out(i, j) = sigmoid(z);
      }
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      const std::size_t b = std::min(cfg.batch_size, n - start);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t kk = 0; kk < v; ++kk) x(i, kk) = data(order[start + i], kk);

      // positive phase
      hidden_from(x, hpos, b);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < h; ++j) hstate(i, j) = unit(rng) < hpos(i, j) ? 1.0 : 0.0;

      // reconstruction
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t kk = 0; kk < v; ++kk) {
          double z = layer.vbias[kk];
          for (std::size_t j = 0; j < h; ++j) z += hstate(i, j) * layer.w(kk, j);
          xneg(i, kk) = layer.visible_kind == VisibleKind::gaussian ? z : sigmoid(z);
        }

      // negative phase
      hidden_from(xneg, hneg, b);

      const double inv_b = 1.0 / static_cast<double>(b);
      const double lr = cfg.learning_rate;
      for (std::size_t kk = 0; kk < v; ++kk) {
        double* wrow = layer.w.row(kk);
        for (std::size_t j = 0; j < h; ++j) {
          double grad = 0.0;
          for (std::size_t i = 0; i < b; ++i)
            grad += x(i, kk) * hpos(i, j) - xneg(i, kk) * hneg(i, j);
          double penalty = 0.0;
          if (cfg.l1_decay > 0 && wrow[j] != 0)
            penalty = wrow[j] > 0 ? cfg.l1_decay : -cfg.l1_decay;
          wrow[j] += lr * (grad * inv_b - penalty);
        }
      }
      for (std::size_t kk = 0; kk < v; ++kk) {
        double grad = 0.0;
        for (std::size_t i = 0; i < b; ++i) grad += x(i, kk) - xneg(i, kk);
        layer.vbias[kk] += lr * grad * inv_b;
      }
      for (std::size_t j = 0; j < h; ++j) {
        double grad = 0.0;
        for (std::size_t i = 0; i < b; ++i) grad += hpos(i, j) - hneg(i, j);
        layer.hbias[j] += lr * grad * inv_b;
      }

      if (!all_finite(layer.w.a) || !all_finite(layer.vbias) || !all_finite(layer.hbias))
        throw DivergenceError("rbm_train: non-finite parameters at epoch " +
                              std::to_string(epoch) + ", batch " + std::to_string(batch_index));
    }
  }
}

RBMLayer rbm_train_cd1(const Matrix& data, const RbmTrainConfig& cfg, std::uint64_t seed) {
  RBMLayer layer = rbm_init(data.cols, cfg, mix_seed(seed, 0));
  rbm_train_inplace(layer, data, cfg, mix_seed(seed, 1));
  return layer;
}

Matrix rbm_hidden_probs(const RBMLayer& layer, const Matrix& data) {
  const std::size_t v = layer.n_visible(), h = layer.n_hidden();
  if (data.cols != v) throw DimensionError("rbm_hidden_probs: data columns != visible units");
  Matrix out(data.rows, h);
  for (std::size_t i = 0; i < data.rows; ++i)
    for (std::size_t j = 0; j < h; ++j) {
      double z = layer.hbias[j];
      for (std::size_t kk = 0; kk < v; ++kk) z += data(i, kk) * layer.w(kk, j);
      out(i, j) = sigmoid(z);
    }
  return out;
}

DBNStack dbn_train(const Matrix& volumes, const DBNConfig& cfg) {
  cfg.validate();
  if (volumes.rows == 0 || volumes.cols == 0) throw EmptyInputError("dbn_train: empty input");

  DBNStack stack;
  Matrix input = volumes;
  for (std::size_t k = 0; k < 3; ++k) {
    RbmTrainConfig layer_cfg;
    layer_cfg.n_hidden = cfg.hidden_sizes[k];
    layer_cfg.learning_rate = cfg.learning_rates[k];
    layer_cfg.l1_decay = cfg.l1_decay[k];
    layer_cfg.batch_size = cfg.batch_size;
    layer_cfg.epochs = cfg.epochs;
    layer_cfg.init_std = cfg.init_std;
    layer_cfg.visible_kind = k == 0 ? VisibleKind::gaussian : VisibleKind::bernoulli;

    RBMLayer layer = rbm_init(input.cols, layer_cfg, mix_seed(cfg.seed, 2 * k));
    input_stats(input, layer.norm_mean, layer.norm_std);
    const Matrix normalized = apply_norm(input, layer.norm_mean, layer.norm_std);
    rbm_train_inplace(layer, normalized, layer_cfg, mix_seed(cfg.seed, 2 * k + 1));
    if (k + 1 < 3) input = rbm_hidden_probs(layer, normalized);
    stack.layers[k] = std::move(layer);
  }
  return stack;
}

Matrix dbn_forward(const DBNStack& stack, const Matrix& data) {
  Matrix x = data;
  for (const RBMLayer& layer : stack.layers)
    x = rbm_hidden_probs(layer, apply_norm(x, layer.norm_mean, layer.norm_std));
  return x;
}

Matrix global_spatial_maps(const DBNStack& stack) {
  return matmul(matmul(stack.layers[0].w, stack.layers[1].w), stack.layers[2].w);
}

Matrix fbn_time_series(const DBNStack& stack, const Matrix& session) {
  return transpose(dbn_forward(stack, session));
}

Matrix average_over_subjects(const std::vector<Matrix>& series) {
  if (series.empty()) throw EmptyInputError("average_over_subjects: no subjects");
  for (const Matrix& m : series)
    if (!m.same_shape(series.front()))
      throw DimensionError("average_over_subjects: shape mismatch");
  Matrix out(series.front().rows, series.front().cols);
  for (const Matrix& m : series)
    for (std::size_t i = 0; i < m.a.size(); ++i) out.a[i] += m.a[i];
  const double inv = 1.0 / static_cast<double>(series.size());
  for (double& x : out.a) x *= inv;
  return out;
}

void dbn_stack_to_archive(const DBNStack& stack, TensorArchive& archive) {
  for (std::size_t k = 0; k < 3; ++k) {
    const RBMLayer& layer = stack.layers[k];
    const std::string p = "rbm" + std::to_string(k + 1) + ".";
    archive.add_matrix(p + "w", layer.w);
    archive.add_vector(p + "vbias", layer.vbias);
    archive.add_vector(p + "hbias", layer.hbias);
    archive.add_vector(p + "norm.mean", layer.norm_mean);
    archive.add_vector(p + "norm.std", layer.norm_std);
  }
}

DBNStack dbn_stack_from_archive(const TensorArchive& archive) {
  DBNStack stack;
  for (std::size_t k = 0; k < 3; ++k) {
    const std::string p = "rbm" + std::to_string(k + 1) + ".";
    RBMLayer layer;
    layer.w = archive.as_matrix(p + "w");
    layer.vbias = archive.as_vector(p + "vbias");
    layer.hbias = archive.as_vector(p + "hbias");
    layer.norm_mean = archive.as_vector(p + "norm.mean");
    layer.norm_std = archive.as_vector(p + "norm.std");
    layer.visible_kind = k == 0 ? VisibleKind::gaussian : VisibleKind::bernoulli;
    if (layer.vbias.size() != layer.w.rows || layer.hbias.size() != layer.w.cols ||
        layer.norm_mean.size() != layer.w.rows || layer.norm_std.size() != layer.w.rows)
      throw DimensionError("rbm" + std::to_string(k + 1) + ": inconsistent tensor shapes");
    stack.layers[k] = std::move(layer);
  }
  for (std::size_t k = 0; k + 1 < 3; ++k)
    if (stack.layers[k].w.cols != stack.layers[k + 1].w.rows)
      throw DimensionError("dbn stack: layer widths do not chain");
  return stack;
}

}  // namespace ansync
