#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "ansync/io_formats.hpp"
#include "ansync/matrix.hpp"
#include "ansync/pos_tags.hpp"

namespace ansync {

struct EncoderConfig {
  std::size_t n_layers = 12;
  std::size_t n_heads = 12;
  std::size_t d_model = 768;
  std::size_t d_head = 64;
  std::size_t vocab_size = 0;
  std::size_t max_tokens = 512;

  static EncoderConfig base() { return EncoderConfig{}; }
  void validate() const;
  std::size_t an_count() const { return n_layers * n_heads * d_head; }
};

// WordPiece vocabulary: one piece per line, line number = id. Continuation
// pieces carry the "##" prefix. [UNK] is mandatory; [CLS]/[SEP] are needed
// to build sequences.
struct WordPieceVocab {
  std::vector<std::string> pieces;
  std::unordered_map<std::string, int> ids;
  int unk_id = -1;
  int cls_id = -1;
  int sep_id = -1;

  static WordPieceVocab from_pieces(std::vector<std::string> pieces);
  static WordPieceVocab from_file(const std::string& path);
  std::size_t size() const { return pieces.size(); }
};

// Greedy longest-match subword split of one (lower-cased) word. Words with
// no matchable prefix or an unmatchable tail degrade to the single [UNK] id.
std::vector<int> wordpiece_tokenize(const std::string& word, const WordPieceVocab& vocab);

// Word index sentinel carried by [CLS]/[SEP] subtokens.
constexpr long kSpecialWordIndex = -1;

// Flat subword expansion of a transcript, before segmentation. Parallel
// arrays over subtokens.
struct TokenizedStory {
  std::vector<int> ids;
  std::vector<std::string> pieces;
  std::vector<long> word_index;
  std::vector<double> onset_sec;
  std::vector<int> pos_index;  // index into the PosTagSet
  std::vector<long> sentence_id;
  std::size_t size() const { return ids.size(); }
};

TokenizedStory tokenize_timeline(const TokenTimeline& timeline, const WordPieceVocab& vocab,
                                 const PosTagSet& tags);

// One encoder input segment: [CLS] + subtokens + [SEP].
struct SubtokenSequence {
  std::vector<int> ids;
  std::vector<std::string> pieces;
  std::vector<long> word_index;  // kSpecialWordIndex for [CLS]/[SEP]
  std::vector<double> onset_sec;
  std::vector<int> pos_index;
  int segment_id = 0;
  std::size_t size() const { return ids.size(); }
};

// Splits the story at sentence boundaries into the minimum number of
// segments of at most max_tokens tokens (specials included); among
// minimum-count splits picks the one with the lowest segment-length
// variance (dynamic programming over sentence boundaries).
std::vector<SubtokenSequence> segment_transcript(const TokenizedStory& story,
                                                 const WordPieceVocab& vocab,
                                                 const PosTagSet& tags, std::size_t max_tokens);

// Per-layer, per-head query/key matrices of one segment, captured after the
// head-wise projection and before scaling and softmax. Columns are tokens.
struct QKCapture {
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::size_t d_head = 0;
  std::size_t n_tokens = 0;
  int segment_id = 0;
  std::vector<Matrix> q;  // indexed l * n_heads + h, each d_head x m
  std::vector<Matrix> k;

  const Matrix& query(std::size_t layer, std::size_t head) const;
  const Matrix& key(std::size_t layer, std::size_t head) const;
};

// Optional forward-pass instrumentation: post-embedding-LN states plus each
// layer's output, and the softmax attention rows per (layer, head).
struct ForwardTrace {
  std::vector<Matrix> hidden;     // n_layers + 1 entries, each d_model x m
  std::vector<Matrix> attention;  // n_layers * n_heads entries, each m x m
};

// Post-layer-norm encoder forward pass from archived weights (see README
// for the tensor naming convention).
QKCapture encoder_forward(const EncoderConfig& config, const TensorArchive& weights,
                          const SubtokenSequence& segment, ForwardTrace* trace = nullptr);

// AN ids enumerate (layer, head, dim) layer-major.
std::size_t an_index(std::size_t layer, std::size_t head, std::size_t dim,
                     const EncoderConfig& config);

struct AnCoords {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t dim = 0;
};
AnCoords an_coords(std::size_t an_id, const EncoderConfig& config);

// Element-wise product of a query and a key vector. Summing the result
// gives the attention dot product.
std::vector<double> ep_vector(const std::vector<double>& q, const std::vector<double>& k);

// Persistence of captures for later linguistic analysis: one tensor per
// (segment, layer, head, side), named seg{s}.L{l}.H{h}.{q|k}.
void captures_to_archive(const std::vector<QKCapture>& captures, TensorArchive& archive);
std::vector<QKCapture> captures_from_archive(const TensorArchive& archive,
                                             const EncoderConfig& config);

// Sidecar TSV for segment token metadata (segment_id, token_index, piece,
// word_index, onset_sec, pos_tag).
void write_subtokens_tsv(const std::vector<SubtokenSequence>& segments, const PosTagSet& tags,
                         const std::string& path);
std::vector<SubtokenSequence> read_subtokens_tsv(const std::string& path, const PosTagSet& tags);

}  // namespace ansync
