#include "ansync/an_activation.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "ansync/parallel.hpp"

namespace ansync {

TRBinning bin_tokens(const std::vector<SubtokenSequence>& segments, double tr,
                     std::size_t n_frames, bool exclude_specials) {
  if (!(tr > 0)) throw ParameterError("bin_tokens: tr must be > 0");
  if (n_frames == 0) throw ParameterError("bin_tokens: n_frames must be > 0");
  std::size_t total = 0;
  for (const auto& s : segments) total += s.size();
  if (total == 0) throw EmptyInputError("bin_tokens: no subtokens");

  TRBinning binning;
  binning.n_bins = n_frames;
  binning.bin_of_token.reserve(total);
  for (const auto& seg : segments) {
    for (std::size_t t = 0; t < seg.size(); ++t) {
      if (exclude_specials && seg.word_index[t] == kSpecialWordIndex) {
        binning.bin_of_token.push_back(-1);
        continue;
      }
      auto bin = static_cast<std::int64_t>(std::floor(seg.onset_sec[t] / tr));
      if (bin < 0) bin = 0;
      if (bin >= static_cast<std::int64_t>(n_frames)) {
        bin = static_cast<std::int64_t>(n_frames) - 1;
        ++binning.clamped;
      }
      binning.bin_of_token.push_back(bin);
    }
  }
  return binning;
}

ANActivationMatrix an_raw_activation(const EncoderConfig& config,
                                     const std::vector<QKCapture>& captures,
                                     const TRBinning& binning, Readout readout) {
  config.validate();
  std::size_t total = 0;
  for (const auto& c : captures) total += c.n_tokens;
  if (total != binning.bin_of_token.size())
    throw DimensionError("an_raw_activation: binning covers " +
                         std::to_string(binning.bin_of_token.size()) + " tokens, captures hold " +
                         std::to_string(total));

  const std::size_t T = binning.n_bins;
  const std::size_t dh = config.d_head;
  ANActivationMatrix out;
  out.kind = ActivationKind::raw;
  out.values = Matrix(config.an_count(), T);

  // The m x m pair statistics factorize per dimension: the mean over ordered
  // pairs of q_a[i] * k_b[i] is (sum_a q_a[i]) * (sum_b k_b[i]) / m^2, and
  // the max/min are products of per-side extrema. One pass over tokens per
  // (layer, head) suffices.
  parallel_for(config.n_layers * config.n_heads, [&](std::size_t lh) {
    std::vector<double> q_sum(dh * T, 0.0), k_sum(dh * T, 0.0);
    std::vector<double> q_min(dh * T), q_max(dh * T), k_min(dh * T), k_max(dh * T);
    std::vector<std::size_t> members(T, 0);
    constexpr double inf = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < dh * T; ++i) {
      q_min[i] = inf;
      q_max[i] = -inf;
      k_min[i] = inf;
      k_max[i] = -inf;
    }

    std::size_t offset = 0;
    for (const QKCapture& c : captures) {
      const Matrix& qm = c.q[lh];
      const Matrix& km = c.k[lh];
      for (std::size_t t = 0; t < c.n_tokens; ++t) {
        const std::int64_t bin = binning.bin_of_token[offset + t];
        if (bin < 0) continue;
        const auto b = static_cast<std::size_t>(bin);
        ++members[b];
        for (std::size_t i = 0; i < dh; ++i) {
          const double qv = qm(i, t);
          const double kv = km(i, t);
          const std::size_t at = i * T + b;
          q_sum[at] += qv;
          k_sum[at] += kv;
          q_min[at] = std::min(q_min[at], qv);
          q_max[at] = std::max(q_max[at], qv);
          k_min[at] = std::min(k_min[at], kv);
          k_max[at] = std::max(k_max[at], kv);
        }
      }
      offset += c.n_tokens;
    }

    for (std::size_t i = 0; i < dh; ++i) {
      double* row = out.values.row(lh * dh + i);
      for (std::size_t b = 0; b < T; ++b) {
        const std::size_t mb = members[b];
        if (mb == 0) {
          row[b] = 0.0;
          continue;
        }
        const std::size_t at = i * T + b;
        switch (readout) {
          case Readout::mean:
            row[b] = (q_sum[at] * k_sum[at]) / (static_cast<double>(mb) * static_cast<double>(mb));
            break;
          case Readout::max:
            row[b] = std::max(std::max(q_max[at] * k_max[at], q_max[at] * k_min[at]),
                              std::max(q_min[at] * k_max[at], q_min[at] * k_min[at]));
            break;
          case Readout::min:
            row[b] = std::min(std::min(q_max[at] * k_max[at], q_max[at] * k_min[at]),
                              std::min(q_min[at] * k_max[at], q_min[at] * k_min[at]));
            break;
        }
      }
    }
  });
  return out;
}

namespace {

// Gamma density with unit scale.
double gamma_pdf(double t, double shape) {
  if (t <= 0) return 0.0;
  return std::exp((shape - 1.0) * std::log(t) - t - std::lgamma(shape));
}

}  // namespace

HRFKernel hrf_kernel(double tr, double duration) {
  if (!(tr > 0)) throw ParameterError("hrf_kernel: tr must be > 0");
  if (duration < tr) throw DimensionError("hrf_kernel: duration shorter than one sample");
  HRFKernel kernel;
  kernel.tr = tr;
  const auto n = static_cast<std::size_t>(std::floor(duration / tr)) + 1;
  kernel.samples.resize(n);
  double pos_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * tr;
    const double v = gamma_pdf(t, 6.0) - gamma_pdf(t, 16.0) / 6.0;
    kernel.samples[i] = v;
    if (v > 0) pos_sum += v;
  }
  if (pos_sum > 0)
    for (double& v : kernel.samples) v /= pos_sum;
  return kernel;
}

ANActivationMatrix convolve_hrf(const ANActivationMatrix& raw, const HRFKernel& kernel) {
  if (raw.kind != ActivationKind::raw)
    throw StateError("convolve_hrf: input is already convolved");
  if (kernel.samples.empty()) throw ParameterError("convolve_hrf: empty kernel");

  const std::size_t T = raw.values.cols;
  const std::size_t klen = kernel.samples.size();
  ANActivationMatrix out;
  out.kind = ActivationKind::hrf;
  out.values = Matrix(raw.values.rows, T);
  parallel_for(raw.values.rows, [&](std::size_t r) {
    const double* x = raw.values.row(r);
    double* y = out.values.row(r);
    for (std::size_t t = 0; t < T; ++t) {
      double acc = 0.0;
      const std::size_t smax = std::min(t + 1, klen);
      for (std::size_t s = 0; s < smax; ++s) acc += kernel.samples[s] * x[t - s];
      y[t] = acc;
    }
  });
  return out;
}

void write_an_meta(const std::string& path, const EncoderConfig& config) {
  std::string out = "an_id\tlayer\thead\tdim\n";
  for (std::size_t id = 0; id < config.an_count(); ++id) {
    const AnCoords c = an_coords(id, config);
    out += std::to_string(id);
    out += '\t';
    out += std::to_string(c.layer);
    out += '\t';
    out += std::to_string(c.head);
    out += '\t';
    out += std::to_string(c.dim);
    out += '\n';
  }
  write_file_atomic(path, out);
}

std::vector<AnCoords> read_an_meta(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open an.meta: " + path);
  std::vector<AnCoords> coords;
  std::string line;
  bool saw_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!saw_header) {
      saw_header = true;
      continue;
    }
    std::istringstream ss(line);
    std::size_t id = 0;
    AnCoords c;
    if (!(ss >> id >> c.layer >> c.head >> c.dim))
      throw SchemaError("an.meta: malformed line: " + line);
    if (id != coords.size()) throw SchemaError("an.meta: ids must be dense and ordered");
    coords.push_back(c);
  }
  if (coords.empty()) throw SchemaError("an.meta: no rows in " + path);
  return coords;
}

Readout readout_from_string(const std::string& s) {
  if (s == "mean") return Readout::mean;
  if (s == "max") return Readout::max;
  if (s == "min") return Readout::min;
  throw ParameterError("unknown readout '" + s + "' (expected mean|max|min)");
}

}  // namespace ansync
