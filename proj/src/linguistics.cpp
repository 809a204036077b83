#include "ansync/linguistics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "ansync/io_formats.hpp"

namespace ansync {

std::vector<PairRecord> top_pairs_per_segment(const QKCapture& capture, std::size_t an_id,
                                              std::size_t k, const EncoderConfig& config) {
  const AnCoords c = an_coords(an_id, config);
  const Matrix& qm = capture.query(c.layer, c.head);
  const Matrix& km = capture.key(c.layer, c.head);
  const std::size_t m = capture.n_tokens;
  if (m == 0) throw EmptyInputError("top_pairs: empty segment");

  struct Cell {
    double value;
    std::uint32_t q, kk;
  };
  std::vector<Cell> cells;
  cells.reserve(m * m);
  const double* qrow = qm.row(c.dim);
  const double* krow = km.row(c.dim);
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = 0; b < m; ++b)
      cells.push_back({qrow[a] * krow[b], static_cast<std::uint32_t>(a),
                       static_cast<std::uint32_t>(b)});

  const std::size_t take = std::min(k, cells.size());
  auto cmp = [](const Cell& x, const Cell& y) {
    if (x.value != y.value) return x.value > y.value;
    if (x.q != y.q) return x.q < y.q;
    return x.kk < y.kk;
  };
  std::partial_sort(cells.begin(), cells.begin() + static_cast<std::ptrdiff_t>(take),
                    cells.end(), cmp);

  std::vector<PairRecord> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i)
    out.push_back({an_id, capture.segment_id, cells[i].q, cells[i].kk, cells[i].value});
  return out;
}

std::pair<AnTag, PairCategoryCounts> tag_an(const std::vector<PairRecord>& pairs,
                                            const std::vector<SubtokenSequence>& segments,
                                            int n_labels) {
  if (pairs.empty()) throw EmptyInputError("tag_an: no pairs");
  PairCategoryCounts grid;
  grid.n_labels = n_labels;
  grid.counts.assign(static_cast<std::size_t>(n_labels) * n_labels, 0);
  for (const PairRecord& p : pairs) {
    if (p.segment_id < 0 || static_cast<std::size_t>(p.segment_id) >= segments.size())
      throw IndexError("tag_an: segment id out of range");
    const SubtokenSequence& seg = segments[static_cast<std::size_t>(p.segment_id)];
    if (p.query_token_index >= seg.size() || p.key_token_index >= seg.size())
      throw IndexError("tag_an: token index out of range");
    const int qpos = seg.pos_index[p.query_token_index];
    const int kpos = seg.pos_index[p.key_token_index];
    if (qpos < 0 || qpos >= n_labels || kpos < 0 || kpos >= n_labels)
      throw IndexError("tag_an: POS index outside the label set");
    ++grid.at(qpos, kpos);
    ++grid.total;
  }

  AnTag tag;
  long long best = -1;
  for (int q = 0; q < n_labels; ++q)
    for (int kk = 0; kk < n_labels; ++kk)
      if (grid.at(q, kk) > best) {
        best = grid.at(q, kk);
        tag.query_label = q;
        tag.key_label = kk;
      }
  return {tag, grid};
}

PairCategoryCounts tag_distribution(const std::vector<AnTag>& tags, int n_labels) {
  PairCategoryCounts grid;
  grid.n_labels = n_labels;
  grid.counts.assign(static_cast<std::size_t>(n_labels) * n_labels, 0);
  for (const AnTag& t : tags) {
    ++grid.at(t.query_label, t.key_label);
    ++grid.total;
  }
  return grid;
}

PairCategoryCounts tag_difference(const PairCategoryCounts& a, const PairCategoryCounts& b) {
  if (a.n_labels != b.n_labels) throw DimensionError("tag_difference: grid sizes differ");
  PairCategoryCounts out;
  out.n_labels = a.n_labels;
  out.counts.resize(a.counts.size());
  for (std::size_t i = 0; i < a.counts.size(); ++i) out.counts[i] = a.counts[i] - b.counts[i];
  out.total = a.total - b.total;
  return out;
}

namespace {

std::string html_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

}  // namespace

void heatmap_export(const std::vector<SubtokenSequence>& segments,
                    const std::vector<PairRecord>& pairs, const std::string& path) {
  // Best ep per token in each role, and the normalizer.
  std::vector<std::vector<double>> as_query(segments.size()), as_key(segments.size());
  for (std::size_t s = 0; s < segments.size(); ++s) {
    as_query[s].assign(segments[s].size(), -std::numeric_limits<double>::infinity());
    as_key[s].assign(segments[s].size(), -std::numeric_limits<double>::infinity());
  }
  double max_abs = 0.0;
  for (const PairRecord& p : pairs) {
    if (p.segment_id < 0 || static_cast<std::size_t>(p.segment_id) >= segments.size())
      throw IndexError("heatmap: segment id out of range");
    const auto s = static_cast<std::size_t>(p.segment_id);
    if (p.query_token_index >= segments[s].size() || p.key_token_index >= segments[s].size())
      throw IndexError("heatmap: token index out of range");
    as_query[s][p.query_token_index] = std::max(as_query[s][p.query_token_index], p.ep_value);
    as_key[s][p.key_token_index] = std::max(as_key[s][p.key_token_index], p.ep_value);
    max_abs = std::max(max_abs, std::fabs(p.ep_value));
  }

  std::string html;
  html +=
      "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n"
      "<title>query/key heatmap</title>\n<style>\n"
      "body { font-family: serif; max-width: 60em; margin: 2em auto; line-height: 1.8; }\n"
      "span.tok { padding: 1px 2px; border-radius: 2px; }\n"
      "p.seg { margin-bottom: 1.5em; }\n"
      "</style>\n</head>\n<body>\n";

  char style[80];
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const SubtokenSequence& seg = segments[s];
    html += "<p class=\"seg\">";
    for (std::size_t t = 0; t < seg.size(); ++t) {
      std::string piece = seg.pieces[t];
      const bool continuation = piece.rfind("##", 0) == 0;
      if (continuation) piece = piece.substr(2);
      if (t > 0 && !continuation) html += ' ';

      double rq = 0.0, bk = 0.0;
      if (max_abs > 0) {
        if (as_query[s][t] > 0) rq = std::min(as_query[s][t] / max_abs, 1.0);
        if (as_key[s][t] > 0) bk = std::min(as_key[s][t] / max_abs, 1.0);
      }
      const bool in_role = std::isfinite(as_query[s][t]) || std::isfinite(as_key[s][t]);
      if (in_role && max_abs > 0) {
        const int r = static_cast<int>(std::lround(255.0 * (1.0 - bk)));
        const int g = static_cast<int>(std::lround(255.0 * (1.0 - rq) * (1.0 - bk)));
        const int b = static_cast<int>(std::lround(255.0 * (1.0 - rq)));
        std::snprintf(style, sizeof(style),
                      "<span class=\"tok\" style=\"background-color: rgb(%d,%d,%d)\">", r, g, b);
        html += style;
      } else {
        html += "<span class=\"tok\">";
      }
      html += html_escape(piece);
      html += "</span>";
    }
    html += "</p>\n";
  }
  html += "</body>\n</html>\n";
  write_file_atomic(path, html);
}

void write_an_tags_tsv(const std::string& path, const std::vector<AnTag>& tags,
                       const std::vector<PairCategoryCounts>& grids, const PosTagSet& labels) {
  if (tags.size() != grids.size()) throw DimensionError("an_tags: tags/grids size mismatch");
  std::string out = "an_id\tquery_pos\tkey_pos\ttop_cell_count\ttotal_pairs\n";
  for (std::size_t i = 0; i < tags.size(); ++i) {
    out += std::to_string(i);
    out += '\t';
    out += labels.labels[static_cast<std::size_t>(tags[i].query_label)];
    out += '\t';
    out += labels.labels[static_cast<std::size_t>(tags[i].key_label)];
    out += '\t';
    out += std::to_string(grids[i].at(tags[i].query_label, tags[i].key_label));
    out += '\t';
    out += std::to_string(grids[i].total);
    out += '\n';
  }
  write_file_atomic(path, out);
}

void write_grid_tsv(const std::string& path, const PairCategoryCounts& grid,
                    const PosTagSet& labels) {
  if (grid.n_labels != labels.size()) throw DimensionError("grid: label count mismatch");
  std::string out = "query\\key";
  for (const std::string& l : labels.labels) {
    out += '\t';
    out += l;
  }
  out += '\n';
  for (int q = 0; q < grid.n_labels; ++q) {
    out += labels.labels[static_cast<std::size_t>(q)];
    for (int kk = 0; kk < grid.n_labels; ++kk) {
      out += '\t';
      out += std::to_string(grid.at(q, kk));
    }
    out += '\n';
  }
  write_file_atomic(path, out);
}

}  // namespace ansync
