#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ansync/encoder_probe.hpp"
#include "ansync/matrix.hpp"

namespace ansync {

// Assignment of every subtoken of a session to an fMRI frame:
// bin = floor(onset / TR), clamped to [0, n_bins).
struct TRBinning {
  std::size_t n_bins = 0;
  // Global subtoken order (segments concatenated). -1 marks tokens
  // excluded from binning.
  std::vector<std::int64_t> bin_of_token;
  std::size_t clamped = 0;  // tokens past the last frame, clamped to n_bins-1
};

TRBinning bin_tokens(const std::vector<SubtokenSequence>& segments, double tr,
                     std::size_t n_frames, bool exclude_specials = false);

enum class Readout { mean, max, min };
enum class ActivationKind { raw, hrf };

struct ANActivationMatrix {
  Matrix values;  // an_count x n_frames
  ActivationKind kind = ActivationKind::raw;
};

// Per-AN, per-frame activation: the chosen statistic over the m x m
// element-wise products q_a[i] * k_b[i] of the bin's member tokens. Empty
// bins emit 0.
ANActivationMatrix an_raw_activation(const EncoderConfig& config,
                                     const std::vector<QKCapture>& captures,
                                     const TRBinning& binning, Readout readout = Readout::mean);

// Canonical double-gamma kernel sampled at multiples of TR: peak gamma
// shape 6, undershoot shape 16, unit dispersions, undershoot ratio 1/6;
// scaled to unit positive-lobe sum.
struct HRFKernel {
  std::vector<double> samples;  // t = 0, TR, 2 TR, ... <= duration
  double tr = 0.0;
};

HRFKernel hrf_kernel(double tr, double duration = 32.0);

// Causal per-row convolution truncated to the input frame count.
ANActivationMatrix convolve_hrf(const ANActivationMatrix& raw, const HRFKernel& kernel);

// an.meta sidecar: an_id -> (layer, head, dim).
void write_an_meta(const std::string& path, const EncoderConfig& config);
std::vector<AnCoords> read_an_meta(const std::string& path);

Readout readout_from_string(const std::string& s);

}  // namespace ansync
