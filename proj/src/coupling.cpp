#include "ansync/coupling.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>

#include "ansync/parallel.hpp"

namespace ansync {

double pcc(const double* x, const double* y, std::size_t t) {
  if (t < 3) throw DimensionError("pcc: need at least 3 samples");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(t);
  my /= static_cast<double>(t);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;  // constant series
  return sxy / std::sqrt(sxx * syy);
}

double pcc(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw DimensionError("pcc: length mismatch");
  return pcc(x.data(), y.data(), x.size());
}

SyncStat sync_stat_from_string(const std::string& s) {
  if (s == "signed") return SyncStat::signed_pcc;
  if (s == "absolute") return SyncStat::absolute_pcc;
  throw ParameterError("unknown sync stat '" + s + "' (expected signed|absolute)");
}

std::vector<SyncEntry> sync_rows(const Matrix& rows, const Matrix& partners, SyncStat stat) {
  if (rows.cols != partners.cols)
    throw DimensionError("sync: series lengths differ (" + std::to_string(rows.cols) + " vs " +
                         std::to_string(partners.cols) + ")");
  if (partners.rows == 0) throw EmptyInputError("sync: no partner rows");
  std::vector<SyncEntry> out(rows.rows);
  parallel_for(rows.rows, [&](std::size_t i) {
    SyncEntry best;
    double best_stat = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < partners.rows; ++j) {
      const double r = pcc(rows.row(i), partners.row(j), rows.cols);
      const double s = stat == SyncStat::absolute_pcc ? std::fabs(r) : r;
      if (s > best_stat) {
        best_stat = s;
        best.best_partner = j;
        best.pcc = r;
      }
    }
    out[i] = best;
  });
  return out;
}

std::vector<SyncEntry> sync_an_to_bn(const Matrix& an_mat, const Matrix& bn_mat, SyncStat stat) {
  return sync_rows(an_mat, bn_mat, stat);
}

std::vector<SyncEntry> sync_bn_to_an(const Matrix& bn_mat, const Matrix& an_mat, SyncStat stat) {
  return sync_rows(bn_mat, an_mat, stat);
}

namespace {

// z-scored copy (population std); all-zero when constant. The PCC of a
// circularly shifted series against a partner is then a plain dot product
// over T, because shifting never changes mean or std.
std::vector<double> zscore(const double* x, std::size_t t) {
  std::vector<double> z(t, 0.0);
  double mean = 0.0;
  for (std::size_t i = 0; i < t; ++i) mean += x[i];
  mean /= static_cast<double>(t);
  double var = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    const double d = x[i] - mean;
    var += d * d;
  }
  if (var == 0.0) return z;
  const double inv = 1.0 / std::sqrt(var / static_cast<double>(t));
  for (std::size_t i = 0; i < t; ++i) z[i] = (x[i] - mean) * inv;
  return z;
}

double max_abs_shifted_pcc(const std::vector<double>& zx, const Matrix& zpartners,
                           std::size_t shift) {
  const std::size_t t = zx.size();
  double best = 0.0;
  for (std::size_t j = 0; j < zpartners.rows; ++j) {
    const double* zy = zpartners.row(j);
    double dot = 0.0;
    for (std::size_t i = 0; i < t; ++i) dot += zx[(i + shift) % t] * zy[i];
    best = std::max(best, std::fabs(dot) / static_cast<double>(t));
  }
  return best;
}

}  // namespace

double permutation_test_max_pcc(const std::vector<double>& series, const Matrix& partners,
                                std::size_t n_perm, std::uint64_t seed) {
  const std::size_t t = series.size();
  if (t < 10) throw DimensionError("permutation test: need at least 10 samples");
  if (partners.cols != t) throw DimensionError("permutation test: partner length mismatch");
  if (n_perm < 1) throw ParameterError("permutation test: n_perm must be >= 1");

  const std::vector<double> zx = zscore(series.data(), t);
  Matrix zp(partners.rows, t);
  for (std::size_t j = 0; j < partners.rows; ++j) {
    const std::vector<double> z = zscore(partners.row(j), t);
    std::copy(z.begin(), z.end(), zp.row(j));
  }

  const double observed = max_abs_shifted_pcc(zx, zp, 0);

  const auto margin = static_cast<std::size_t>(std::ceil(static_cast<double>(t) / 10.0));
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> offset(margin, t - margin);
  std::size_t exceed = 0;
  for (std::size_t p = 0; p < n_perm; ++p) {
    const double surr = max_abs_shifted_pcc(zx, zp, offset(rng));
    if (surr >= observed) ++exceed;
  }
  return static_cast<double>(1 + exceed) / static_cast<double>(1 + n_perm);
}

std::vector<std::uint8_t> bh_fdr(const std::vector<double>& p_values, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("bh_fdr: alpha must be in (0,1)");
  const std::size_t n = p_values.size();
  for (double p : p_values)
    if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("bh_fdr: p-values must be in [0,1]");
  std::vector<std::uint8_t> flags(n, 0);
  if (n == 0) return flags;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });

  // largest k with p_(k) <= k * alpha / n
  std::size_t k_star = 0;
  for (std::size_t k = 1; k <= n; ++k)
    if (p_values[order[k - 1]] <=
        static_cast<double>(k) * alpha / static_cast<double>(n))
      k_star = k;
  for (std::size_t k = 0; k < k_star; ++k) flags[order[k]] = 1;
  return flags;
}

CouplingResult couple(const Matrix& an_mat, const Matrix& bn_mat, const CouplingParams& params) {
  CouplingResult result;
  result.params = params;

  const auto an_best = sync_rows(an_mat, bn_mat, params.sync_stat);
  const auto bn_best = sync_rows(bn_mat, an_mat, params.sync_stat);

  result.per_an.resize(an_mat.rows);
  parallel_for(an_mat.rows, [&](std::size_t i) {
    ANCouplingRow row;
    row.best_bn = an_best[i].best_partner;
    row.pcc = an_best[i].pcc;
    std::vector<double> series(an_mat.row(i), an_mat.row(i) + an_mat.cols);
    row.p_value = permutation_test_max_pcc(series, bn_mat, params.n_permutations,
                                           params.seed ^ static_cast<std::uint64_t>(i));
    result.per_an[i] = row;
  });

  std::vector<double> an_p(an_mat.rows);
  for (std::size_t i = 0; i < an_mat.rows; ++i) an_p[i] = result.per_an[i].p_value;
  const auto flags = bh_fdr(an_p, params.alpha);
  for (std::size_t i = 0; i < an_mat.rows; ++i) result.per_an[i].q_significant = flags[i] != 0;

  // The BN direction draws from a decorrelated seed stream so AN and BN
  // tests with equal ids do not share offsets.
  const std::uint64_t bn_seed_base = params.seed ^ 0x9e3779b97f4a7c15ULL;
  result.per_bn.resize(bn_mat.rows);
  parallel_for(bn_mat.rows, [&](std::size_t j) {
    BNCouplingRow row;
    row.best_an = bn_best[j].best_partner;
    row.pcc = bn_best[j].pcc;
    std::vector<double> series(bn_mat.row(j), bn_mat.row(j) + bn_mat.cols);
    row.p_value = permutation_test_max_pcc(series, an_mat, params.n_permutations,
                                           bn_seed_base ^ static_cast<std::uint64_t>(j));
    result.per_bn[j] = row;
  });
  return result;
}

AnchorCounts anchor_counts(const CouplingResult& result, double threshold,
                           const std::vector<std::size_t>& layer_of_an,
                           std::size_t n_layers) {
  AnchorCounts counts;
  std::size_t n_bn = result.per_bn.size();
  for (const ANCouplingRow& row : result.per_an) n_bn = std::max(n_bn, row.best_bn + 1);
  counts.per_bn.assign(n_bn, 0);
  for (const ANCouplingRow& row : result.per_an)
    if (row.pcc >= threshold) ++counts.per_bn[row.best_bn];

  counts.per_layer.assign(n_layers, 0);
  std::vector<std::uint8_t> seen(layer_of_an.size(), 0);
  for (const BNCouplingRow& row : result.per_bn) {
    if (row.best_an >= layer_of_an.size()) throw IndexError("anchor_counts: AN id outside meta");
    if (seen[row.best_an]) continue;
    seen[row.best_an] = 1;
    ++counts.per_layer[layer_of_an[row.best_an]];
  }
  return counts;
}

LayerSummary layer_summary(const CouplingResult& result,
                           const std::vector<std::size_t>& layer_of_an, std::size_t n_layers,
                           double threshold) {
  if (layer_of_an.size() != result.per_an.size())
    throw DimensionError("layer_summary: meta size != AN count");
  LayerSummary summary;
  summary.mean_pcc.assign(n_layers, 0.0);
  summary.frac_below.assign(n_layers, 0.0);
  std::vector<std::size_t> count(n_layers, 0);
  for (std::size_t i = 0; i < result.per_an.size(); ++i) {
    const std::size_t layer = layer_of_an[i];
    if (layer >= n_layers) throw IndexError("layer_summary: layer outside range");
    summary.mean_pcc[layer] += result.per_an[i].pcc;
    if (result.per_an[i].pcc < threshold) summary.frac_below[layer] += 1.0;
    ++count[layer];
  }
  for (std::size_t l = 0; l < n_layers; ++l) {
    if (count[l] == 0) continue;
    summary.mean_pcc[l] /= static_cast<double>(count[l]);
    summary.frac_below[l] /= static_cast<double>(count[l]);
  }
  return summary;
}

std::vector<std::size_t> layer_of_each_an(const EncoderConfig& config) {
  std::vector<std::size_t> layers(config.an_count());
  for (std::size_t id = 0; id < layers.size(); ++id) layers[id] = an_coords(id, config).layer;
  return layers;
}

namespace {

std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

void write_an_coupling_tsv(const std::string& path, const CouplingResult& result,
                           const std::vector<AnCoords>& coords) {
  if (coords.size() != result.per_an.size())
    throw DimensionError("an_coupling: meta size != AN count");
  std::string out = "an_id\tlayer\thead\tdim\tbest_bn\tpcc\tp\tq_flag\n";
  for (std::size_t i = 0; i < result.per_an.size(); ++i) {
    const AnCoords& c = coords[i];
    const ANCouplingRow& row = result.per_an[i];
    out += std::to_string(i);
    out += '\t';
    out += std::to_string(c.layer);
    out += '\t';
    out += std::to_string(c.head);
    out += '\t';
    out += std::to_string(c.dim);
    out += '\t';
    out += std::to_string(row.best_bn);
    out += '\t';
    out += fmt_double(row.pcc);
    out += '\t';
    out += fmt_double(row.p_value);
    out += '\t';
    out += row.q_significant ? '1' : '0';
    out += '\n';
  }
  write_file_atomic(path, out);
}

void write_bn_coupling_tsv(const std::string& path, const CouplingResult& result) {
  std::string out = "bn_id\tbest_an\tpcc\tp\n";
  for (std::size_t j = 0; j < result.per_bn.size(); ++j) {
    const BNCouplingRow& row = result.per_bn[j];
    out += std::to_string(j);
    out += '\t';
    out += std::to_string(row.best_an);
    out += '\t';
    out += fmt_double(row.pcc);
    out += '\t';
    out += fmt_double(row.p_value);
    out += '\n';
  }
  write_file_atomic(path, out);
}

void write_layer_summary_tsv(const std::string& path, const LayerSummary& summary) {
  std::string out = "layer\tmean_pcc\tfrac_below_threshold\n";
  for (std::size_t l = 0; l < summary.mean_pcc.size(); ++l) {
    out += std::to_string(l);
    out += '\t';
    out += fmt_double(summary.mean_pcc[l]);
    out += '\t';
    out += fmt_double(summary.frac_below[l]);
    out += '\n';
  }
  write_file_atomic(path, out);
}

void write_anchor_counts_tsv(const std::string& path, const AnchorCounts& counts) {
  std::string out = "bn_id\tanchored_ans\n";
  for (std::size_t b = 0; b < counts.per_bn.size(); ++b) {
    out += std::to_string(b);
    out += '\t';
    out += std::to_string(counts.per_bn[b]);
    out += '\n';
  }
  out += "layer\tanchored_by_bns\n";
  for (std::size_t l = 0; l < counts.per_layer.size(); ++l) {
    out += std::to_string(l);
    out += '\t';
    out += std::to_string(counts.per_layer[l]);
    out += '\n';
  }
  write_file_atomic(path, out);
}

}  // namespace ansync
