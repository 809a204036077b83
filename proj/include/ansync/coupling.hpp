#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ansync/encoder_probe.hpp"
#include "ansync/matrix.hpp"

namespace ansync {

// Pearson correlation of two equal-length series (T >= 3). Constant series
// correlate 0 with anything, so silent units never win an argmax.
double pcc(const double* x, const double* y, std::size_t t);
double pcc(const std::vector<double>& x, const std::vector<double>& y);

enum class SyncStat { signed_pcc, absolute_pcc };
SyncStat sync_stat_from_string(const std::string& s);

struct SyncEntry {
  std::size_t best_partner = 0;
  double pcc = 0.0;  // signed value of the selected partner
};

// Row-wise best partner: for every row of `rows`, the partner row
// maximizing the statistic (ties -> lowest partner id).
std::vector<SyncEntry> sync_rows(const Matrix& rows, const Matrix& partners,
                                 SyncStat stat = SyncStat::signed_pcc);
std::vector<SyncEntry> sync_an_to_bn(const Matrix& an_mat, const Matrix& bn_mat,
                                     SyncStat stat = SyncStat::signed_pcc);
std::vector<SyncEntry> sync_bn_to_an(const Matrix& bn_mat, const Matrix& an_mat,
                                     SyncStat stat = SyncStat::signed_pcc);

// Permutation test of the max |PCC| of `series` against all partner rows.
// Surrogates are circular shifts by offsets uniform in
// [ceil(T/10), T - ceil(T/10)]; p = (1 + #{s_surr >= s_obs}) / (1 + n_perm).
double permutation_test_max_pcc(const std::vector<double>& series, const Matrix& partners,
                                std::size_t n_perm, std::uint64_t seed);

// Benjamini-Hochberg step-up at level alpha.
std::vector<std::uint8_t> bh_fdr(const std::vector<double>& p_values, double alpha);

struct CouplingParams {
  std::size_t n_permutations = 5000;
  double alpha = 0.01;
  double anchor_threshold = 0.25;
  std::uint64_t seed = 0;
  SyncStat sync_stat = SyncStat::signed_pcc;
};

struct ANCouplingRow {
  std::size_t best_bn = 0;
  double pcc = 0.0;
  double p_value = 1.0;
  bool q_significant = false;
};

struct BNCouplingRow {
  std::size_t best_an = 0;
  double pcc = 0.0;
  double p_value = 1.0;
};

struct CouplingResult {
  std::vector<ANCouplingRow> per_an;
  std::vector<BNCouplingRow> per_bn;
  CouplingParams params;
};

// Both sync directions plus permutation p-values (AN streams seeded as
// seed XOR an_id, so results are independent of scheduling) and BH flags
// over the AN family.
CouplingResult couple(const Matrix& an_mat, const Matrix& bn_mat, const CouplingParams& params);

struct AnchorCounts {
  std::vector<std::size_t> per_bn;     // ANs anchoring to each BN at the threshold
  std::vector<std::size_t> per_layer;  // distinct ANs of a layer anchored by some BN
};

// `layer_of_an` maps AN id -> encoder layer.
AnchorCounts anchor_counts(const CouplingResult& result, double threshold,
                           const std::vector<std::size_t>& layer_of_an,
                           std::size_t n_layers);

struct LayerSummary {
  std::vector<double> mean_pcc;
  std::vector<double> frac_below;  // fraction of the layer's ANs under the threshold
};

LayerSummary layer_summary(const CouplingResult& result,
                           const std::vector<std::size_t>& layer_of_an, std::size_t n_layers,
                           double threshold = 0.25);

std::vector<std::size_t> layer_of_each_an(const EncoderConfig& config);

// Report writers.
void write_an_coupling_tsv(const std::string& path, const CouplingResult& result,
                           const std::vector<AnCoords>& coords);
void write_bn_coupling_tsv(const std::string& path, const CouplingResult& result);
void write_layer_summary_tsv(const std::string& path, const LayerSummary& summary);
void write_anchor_counts_tsv(const std::string& path, const AnchorCounts& counts);

}  // namespace ansync
