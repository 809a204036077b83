#include "ansync/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "ansync/coupling.hpp"
#include "ansync/rng.hpp"

namespace ansync {

void SynthSpec::validate() const {
  if (n_voxels == 0 || n_networks == 0 || n_frames < 2 || n_subjects == 0)
    throw ParameterError("synth spec: empty dimensions");
  if (n_networks >= n_voxels) throw ParameterError("synth spec: need n_networks < n_voxels");
  if (noise_std < 0) throw ParameterError("synth spec: noise_std must be >= 0");
  if (overlap < 0 || overlap > 0.5) throw ParameterError("synth spec: overlap outside [0, 0.5]");
}

std::pair<std::vector<VoxelMatrix>, GroundTruth> synth_fbn_volumes(const SynthSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_voxels, m = spec.n_networks, t = spec.n_frames;
  const std::size_t base = n / m;
  if (base == 0) throw ParameterError("synth spec: infeasible block partition");
  const auto ov = static_cast<std::size_t>(std::lround(spec.overlap * static_cast<double>(base)));

  GroundTruth truth;

  // Block-sparse nonnegative loadings; network j >= 1 reaches `ov` voxels
  // back into its neighbour's block.
  truth.true_maps = Matrix(n, m);
  {
    std::mt19937_64 rng(mix_seed(spec.seed, 1));
    std::uniform_real_distribution<double> load(0.5, 1.5);
    for (std::size_t j = 0; j < m; ++j) {
      std::size_t lo = j * base;
      const std::size_t hi = j + 1 == m ? n : (j + 1) * base;
      if (j > 0) lo -= ov;
      for (std::size_t v = lo; v < hi; ++v) truth.true_maps(v, j) = load(rng);
    }
  }

  // Smoothed unit-variance random walks.
  {
    std::mt19937_64 rng(mix_seed(spec.seed, 2));
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix walks(m, t);
    for (std::size_t j = 0; j < m; ++j) {
      double w = 0.0;
      for (std::size_t i = 0; i < t; ++i) {
        w += gauss(rng);
        walks(j, i) = w;
      }
    }
    Matrix smooth(m, t);
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t i = 0; i < t; ++i) {
        const std::size_t a = i == 0 ? 0 : i - 1;
        const std::size_t b = i + 1 == t ? i : i + 1;
        smooth(j, i) = (walks(j, a) + walks(j, i) + walks(j, b)) / 3.0;
      }
    truth.true_series = znormalize_rows(smooth);
  }

  std::vector<VoxelMatrix> subjects;
  subjects.reserve(spec.n_subjects);
  const Matrix signal = matmul(truth.true_maps, truth.true_series);
  for (std::size_t s = 0; s < spec.n_subjects; ++s) {
    std::mt19937_64 rng(mix_seed(spec.seed, 100 + s));
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix data(n, t);
    for (std::size_t i = 0; i < data.a.size(); ++i)
      data.a[i] = signal.a[i] + spec.noise_std * gauss(rng);
    VoxelMatrix vm;
    vm.tr_seconds = spec.tr_seconds;
    vm.voxel_ids.resize(n);
    std::iota(vm.voxel_ids.begin(), vm.voxel_ids.end(), 0);
    vm.data = znormalize_rows(data);
    subjects.push_back(std::move(vm));
  }
  return {std::move(subjects), std::move(truth)};
}

std::pair<std::vector<double>, std::vector<double>> synth_coupled_series(std::size_t t,
                                                                         double rho,
                                                                         std::uint64_t seed) {
  if (t < 10) throw ParameterError("synth_coupled_series: need t >= 10");
  if (std::fabs(rho) > 1) throw ParameterError("synth_coupled_series: |rho| must be <= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> x(t), y(t);
  for (double& v : x) v = gauss(rng);
  const double mix = std::sqrt(1.0 - rho * rho);
  for (std::size_t i = 0; i < t; ++i) y[i] = rho * x[i] + mix * gauss(rng);
  return {std::move(x), std::move(y)};
}

namespace {

// Min-cost assignment with potentials (rows <= cols). Returns, per row, the
// assigned column.
std::vector<std::size_t> hungarian(const Matrix& cost) {
  const std::size_t n = cost.rows, m = cost.cols;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);

  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    minv.assign(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<std::size_t> row_to_col(n, 0);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

}  // namespace

MatchResult match_components(const Matrix& recovered, const Matrix& truth) {
  if (recovered.rows != truth.rows)
    throw DimensionError("match_components: voxel counts differ");
  if (recovered.cols == 0 || truth.cols == 0)
    throw EmptyInputError("match_components: no columns");

  // |PCC| between every recovered and truth column.
  Matrix score(recovered.cols, truth.cols);
  std::vector<double> rcol(recovered.rows), tcol(truth.rows);
  for (std::size_t r = 0; r < recovered.cols; ++r) {
    for (std::size_t i = 0; i < recovered.rows; ++i) rcol[i] = recovered(i, r);
    for (std::size_t c = 0; c < truth.cols; ++c) {
      for (std::size_t i = 0; i < truth.rows; ++i) tcol[i] = truth(i, c);
      score(r, c) = std::fabs(pcc(rcol, tcol));
    }
  }

  // The assignment solver wants rows <= cols; run it on whichever side is
  // smaller and maximize by negating the scores.
  const bool truth_rows = truth.cols <= recovered.cols;
  Matrix neg = truth_rows ? transpose(score) : score;
  for (double& x : neg.a) x = -x;
  const auto row_to_col = hungarian(neg);

  MatchResult result;
  for (std::size_t i = 0; i < row_to_col.size(); ++i) {
    const std::size_t rec = truth_rows ? row_to_col[i] : i;
    const std::size_t tru = truth_rows ? i : row_to_col[i];
    result.assignment.emplace_back(rec, tru);
  }
  std::sort(result.assignment.begin(), result.assignment.end(),
            [](const auto& a, const auto& b) { return a.second < b.second; });
  for (const auto& [rec, tru] : result.assignment) result.scores.push_back(score(rec, tru));
  for (double s : result.scores) result.mean_score += s;
  if (!result.scores.empty()) result.mean_score /= static_cast<double>(result.scores.size());
  return result;
}

void ground_truth_to_archive(const GroundTruth& truth, TensorArchive& archive) {
  archive.add_matrix("true.maps", truth.true_maps);
  archive.add_matrix("true.series", truth.true_series);
}

}  // namespace ansync
