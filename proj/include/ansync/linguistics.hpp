#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ansync/encoder_probe.hpp"
#include "ansync/pos_tags.hpp"

namespace ansync {

// One (query token, key token) pair of a segment with its single-dimension
// element-wise product for an AN.
struct PairRecord {
  std::size_t an_id = 0;
  int segment_id = 0;
  std::size_t query_token_index = 0;
  std::size_t key_token_index = 0;
  double ep_value = 0.0;
};

// The k largest ep pairs among all m x m ordered pairs of a segment
// (all pairs when m^2 < k). Descending ep order; ties resolved by
// (query_index, key_index) ascending.
std::vector<PairRecord> top_pairs_per_segment(const QKCapture& capture, std::size_t an_id,
                                              std::size_t k, const EncoderConfig& config);

struct PairCategoryCounts {
  int n_labels = 0;
  std::vector<long long> counts;  // n_labels x n_labels, row = query label
  long long total = 0;

  long long& at(int q, int kk) { return counts[static_cast<std::size_t>(q) * n_labels + kk]; }
  long long at(int q, int kk) const {
    return counts[static_cast<std::size_t>(q) * n_labels + kk];
  }
};

struct AnTag {
  int query_label = 0;
  int key_label = 0;
};

// Bins pairs by (query POS, key POS); the AN tag is the argmax cell
// (ties -> smallest row, then column).
std::pair<AnTag, PairCategoryCounts> tag_an(const std::vector<PairRecord>& pairs,
                                            const std::vector<SubtokenSequence>& segments,
                                            int n_labels);

// Grid of AN counts per tag cell.
PairCategoryCounts tag_distribution(const std::vector<AnTag>& tags, int n_labels);

// Element-wise a - b.
PairCategoryCounts tag_difference(const PairCategoryCounts& a, const PairCategoryCounts& b);

// Self-contained HTML rendering of the transcript; red background intensity
// follows a token's best ep value as a query, blue as a key, both
// normalized by the largest |ep| among the supplied pairs.
void heatmap_export(const std::vector<SubtokenSequence>& segments,
                    const std::vector<PairRecord>& pairs, const std::string& path);

void write_an_tags_tsv(const std::string& path, const std::vector<AnTag>& tags,
                       const std::vector<PairCategoryCounts>& grids, const PosTagSet& labels);
void write_grid_tsv(const std::string& path, const PairCategoryCounts& grid,
                    const PosTagSet& labels);

}  // namespace ansync
