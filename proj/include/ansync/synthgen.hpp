#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "ansync/io_formats.hpp"
#include "ansync/matrix.hpp"

namespace ansync {

struct SynthSpec {
  std::size_t n_voxels = 0;
  std::size_t n_networks = 0;
  std::size_t n_frames = 0;
  std::size_t n_subjects = 1;
  double noise_std = 0.0;
  double overlap = 0.0;  // fraction of voxels shared by adjacent networks
  std::uint64_t seed = 0;
  double tr_seconds = 1.5;

  void validate() const;
};

struct CoupledPair {
  std::size_t series_id = 0;
  std::size_t bn_id = 0;
  double target_pcc = 0.0;
};

struct GroundTruth {
  Matrix true_maps;    // n_voxels x n_networks
  Matrix true_series;  // n_networks x n_frames
  std::vector<CoupledPair> coupled_pairs;
};

// Planted functional networks: block-sparse nonnegative spatial maps,
// smoothed (window-3 moving average) unit-variance random-walk time
// courses; per-subject data = maps . series + fresh white noise,
// z-normalized per voxel.
std::pair<std::vector<VoxelMatrix>, GroundTruth> synth_fbn_volumes(const SynthSpec& spec);

// White-noise pair with target correlation: y = rho x + sqrt(1-rho^2) z.
std::pair<std::vector<double>, std::vector<double>> synth_coupled_series(std::size_t t,
                                                                         double rho,
                                                                         std::uint64_t seed);

struct MatchResult {
  // (recovered column, truth column) pairs, one per truth column when the
  // recovered side is at least as wide.
  std::vector<std::pair<std::size_t, std::size_t>> assignment;
  std::vector<double> scores;  // matched |PCC| per pair
  double mean_score = 0.0;
};

// Optimal one-to-one column assignment maximizing the sum of |PCC|
// (Hungarian algorithm on the |PCC| matrix).
MatchResult match_components(const Matrix& recovered, const Matrix& truth);

void ground_truth_to_archive(const GroundTruth& truth, TensorArchive& archive);

}  // namespace ansync
