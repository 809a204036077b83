#include "ansync/encoder_probe.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace ansync {

namespace {

constexpr double kLnEps = 1e-12;
constexpr std::size_t kMaxWordChars = 100;  // longer words degrade to [UNK]

std::string lower_ascii(const std::string& s) {
  std::string out = s;
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

void add_bias_columns(Matrix& m, const std::vector<double>& bias) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    double* row = m.row(r);
    const double b = bias[r];
    for (std::size_t c = 0; c < m.cols; ++c) row[c] += b;
  }
}

// Layer norm over the feature axis (rows) of a d_model x m matrix.
void layer_norm_columns(Matrix& x, const std::vector<double>& gamma,
                        const std::vector<double>& beta) {
  const std::size_t d = x.rows, m = x.cols;
  for (std::size_t c = 0; c < m; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < d; ++r) mean += x(r, c);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t r = 0; r < d; ++r) {
      const double diff = x(r, c) - mean;
      var += diff * diff;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLnEps);
    for (std::size_t r = 0; r < d; ++r)
      x(r, c) = gamma[r] * ((x(r, c) - mean) * inv) + beta[r];
  }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Matrix fetch_matrix(const TensorArchive& w, const std::string& name, std::size_t rows,
                    std::size_t cols) {
  Matrix m = w.as_matrix(name);
  if ((rows && m.rows != rows) || (cols && m.cols != cols))
    throw DimensionError("tensor '" + name + "' has shape " + std::to_string(m.rows) + "x" +
                         std::to_string(m.cols) + ", expected " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  return m;
}

std::vector<double> fetch_vector(const TensorArchive& w, const std::string& name,
                                 std::size_t len) {
  std::vector<double> v = w.as_vector(name);
  if (v.size() != len)
    throw DimensionError("tensor '" + name + "' has length " + std::to_string(v.size()) +
                         ", expected " + std::to_string(len));
  return v;
}

}  // namespace

void EncoderConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || d_model == 0 || d_head == 0)
    throw ParameterError("encoder config: all dimensions must be positive");
  if (d_model != n_heads * d_head)
    throw ParameterError("encoder config: d_model != n_heads * d_head");
  if (max_tokens < 3) throw ParameterError("encoder config: max_tokens too small");
}

// ---------------------------------------------------------------------------
// Vocabulary and tokenization
// ---------------------------------------------------------------------------

WordPieceVocab WordPieceVocab::from_pieces(std::vector<std::string> pieces) {
  WordPieceVocab v;
  v.pieces = std::move(pieces);
  for (std::size_t i = 0; i < v.pieces.size(); ++i) {
    if (v.pieces[i].empty()) throw SchemaError("vocab: empty piece at id " + std::to_string(i));
    auto [it, inserted] = v.ids.emplace(v.pieces[i], static_cast<int>(i));
    (void)it;
    if (!inserted) throw SchemaError("vocab: duplicate piece '" + v.pieces[i] + "'");
  }
  auto find = [&](const char* p) {
    auto it = v.ids.find(p);
    return it == v.ids.end() ? -1 : it->second;
  };
  v.unk_id = find("[UNK]");
  v.cls_id = find("[CLS]");
  v.sep_id = find("[SEP]");
  if (v.unk_id < 0 || v.cls_id < 0 || v.sep_id < 0)
    throw SchemaError("vocab: [UNK], [CLS] and [SEP] are required");
  return v;
}

WordPieceVocab WordPieceVocab::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocab: " + path);
  std::vector<std::string> pieces;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pieces.push_back(line);
  }
  while (!pieces.empty() && pieces.back().empty()) pieces.pop_back();
  return from_pieces(std::move(pieces));
}

std::vector<int> wordpiece_tokenize(const std::string& word, const WordPieceVocab& vocab) {
  const std::string w = lower_ascii(word);
  if (w.empty()) return {};
  if (w.size() > kMaxWordChars) return {vocab.unk_id};

  std::vector<int> out;
  std::size_t start = 0;
  while (start < w.size()) {
    std::size_t end = w.size();
    int found = -1;
    while (end > start) {
      std::string piece = w.substr(start, end - start);
      if (start > 0) piece = "##" + piece;
      auto it = vocab.ids.find(piece);
      if (it != vocab.ids.end()) {
        found = it->second;
        break;
      }
      --end;
    }
    if (found < 0) return {vocab.unk_id};  // unmatchable tail: whole word is [UNK]
    out.push_back(found);
    start = end;
  }
  return out;
}

TokenizedStory tokenize_timeline(const TokenTimeline& timeline, const WordPieceVocab& vocab,
                                 const PosTagSet& tags) {
  TokenizedStory story;
  for (std::size_t widx = 0; widx < timeline.records.size(); ++widx) {
    const TranscriptRecord& rec = timeline.records[widx];
    const int tag = tags.index_of(rec.pos_tag);
    if (!tags.is_word_label(tag))
      throw SchemaError("unknown POS label '" + rec.pos_tag + "' for word '" + rec.word + "'");
    for (int id : wordpiece_tokenize(rec.word, vocab)) {
      story.ids.push_back(id);
      story.pieces.push_back(vocab.pieces[static_cast<std::size_t>(id)]);
      story.word_index.push_back(static_cast<long>(widx));
      story.onset_sec.push_back(rec.onset_sec);
      story.pos_index.push_back(tag);
      story.sentence_id.push_back(rec.sentence_id);
    }
  }
  return story;
}

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

std::vector<SubtokenSequence> segment_transcript(const TokenizedStory& story,
                                                 const WordPieceVocab& vocab,
                                                 const PosTagSet& tags,
                                                 std::size_t max_tokens) {
  if (max_tokens < 3) throw ParameterError("segment_transcript: max_tokens too small");
  if (story.size() == 0) return {};

  // Sentence runs (maximal stretches of equal sentence_id).
  std::vector<std::size_t> sent_begin;  // subtoken offset of each sentence
  sent_begin.push_back(0);
  for (std::size_t i = 1; i < story.size(); ++i)
    if (story.sentence_id[i] != story.sentence_id[i - 1]) sent_begin.push_back(i);
  sent_begin.push_back(story.size());
  const std::size_t n_sent = sent_begin.size() - 1;

  const std::size_t cap = max_tokens - 2;  // room for [CLS]/[SEP]
  std::vector<std::size_t> len(n_sent);
  for (std::size_t s = 0; s < n_sent; ++s) {
    len[s] = sent_begin[s + 1] - sent_begin[s];
    if (len[s] > cap)
      throw SegmentationError("sentence of " + std::to_string(len[s]) +
                              " subtokens exceeds the segment capacity of " +
                              std::to_string(cap));
  }

  // Pass 1: minimum feasible segment count.
  constexpr std::size_t kInf = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> min_segs(n_sent + 1, kInf);
  min_segs[0] = 0;
  for (std::size_t j = 1; j <= n_sent; ++j) {
    std::size_t total = 0;
    for (std::size_t i = j; i-- > 0;) {
      total += len[i];
      if (total > cap) break;
      if (min_segs[i] != kInf) min_segs[j] = std::min(min_segs[j], min_segs[i] + 1);
    }
  }
  const std::size_t k_min = min_segs[n_sent];

  // Pass 2: among k_min-segment splits minimize the variance of segment
  // lengths; with count and total fixed this is the minimum of sum(len^2).
  const double inf = std::numeric_limits<double>::infinity();
  Matrix cost(n_sent + 1, k_min + 1, inf);
  std::vector<std::vector<std::size_t>> prev(n_sent + 1,
                                             std::vector<std::size_t>(k_min + 1, 0));
  cost(0, 0) = 0.0;
  for (std::size_t j = 1; j <= n_sent; ++j) {
    std::size_t total = 0;
    for (std::size_t i = j; i-- > 0;) {
      total += len[i];
      if (total > cap) break;
      const double sq = static_cast<double>(total) * static_cast<double>(total);
      for (std::size_t k = 1; k <= k_min; ++k) {
        if (cost(i, k - 1) == inf) continue;
        const double cand = cost(i, k - 1) + sq;
        if (cand < cost(j, k)) {
          cost(j, k) = cand;
          prev[j][k] = i;
        }
      }
    }
  }

  std::vector<std::size_t> bounds;  // sentence indices of segment starts, reversed
  std::size_t j = n_sent, k = k_min;
  while (k > 0) {
    bounds.push_back(j);
    j = prev[j][k];
    --k;
  }
  bounds.push_back(0);
  std::reverse(bounds.begin(), bounds.end());

  std::vector<SubtokenSequence> segments;
  for (std::size_t seg = 0; seg + 1 < bounds.size(); ++seg) {
    const std::size_t lo = sent_begin[bounds[seg]];
    const std::size_t hi = sent_begin[bounds[seg + 1]];
    SubtokenSequence s;
    s.segment_id = static_cast<int>(seg);
    const std::size_t n = hi - lo + 2;
    s.ids.reserve(n);
    s.pieces.reserve(n);
    s.word_index.reserve(n);
    s.onset_sec.reserve(n);
    s.pos_index.reserve(n);

    s.ids.push_back(vocab.cls_id);
    s.pieces.push_back("[CLS]");
    s.word_index.push_back(kSpecialWordIndex);
    s.onset_sec.push_back(story.onset_sec[lo]);
    s.pos_index.push_back(tags.cls_index());
    for (std::size_t i = lo; i < hi; ++i) {
      s.ids.push_back(story.ids[i]);
      s.pieces.push_back(story.pieces[i]);
      s.word_index.push_back(story.word_index[i]);
      s.onset_sec.push_back(story.onset_sec[i]);
      s.pos_index.push_back(story.pos_index[i]);
    }
    s.ids.push_back(vocab.sep_id);
    s.pieces.push_back("[SEP]");
    s.word_index.push_back(kSpecialWordIndex);
    s.onset_sec.push_back(story.onset_sec[hi - 1]);
    s.pos_index.push_back(tags.sep_index());
    segments.push_back(std::move(s));
  }
  return segments;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

const Matrix& QKCapture::query(std::size_t layer, std::size_t head) const {
  if (layer >= n_layers || head >= n_heads) throw IndexError("capture: layer/head out of range");
  return q[layer * n_heads + head];
}

const Matrix& QKCapture::key(std::size_t layer, std::size_t head) const {
  if (layer >= n_layers || head >= n_heads) throw IndexError("capture: layer/head out of range");
  return k[layer * n_heads + head];
}

QKCapture encoder_forward(const EncoderConfig& config, const TensorArchive& weights,
                          const SubtokenSequence& segment, ForwardTrace* trace) {
  config.validate();
  const std::size_t m = segment.size();
  const std::size_t d = config.d_model;
  const std::size_t dh = config.d_head;
  if (m == 0) throw EmptyInputError("encoder_forward: empty segment");
  if (m > config.max_tokens) throw DimensionError("encoder_forward: segment exceeds max_tokens");

  const Matrix tok_emb = weights.as_matrix("embed.token");
  const Matrix pos_emb = weights.as_matrix("embed.position");
  if (tok_emb.cols != d || pos_emb.cols != d)
    throw DimensionError("embedding tables do not match d_model");
  if (pos_emb.rows < m) throw DimensionError("embed.position has fewer rows than tokens");
  const auto emb_gamma = fetch_vector(weights, "embed.ln.gamma", d);
  const auto emb_beta = fetch_vector(weights, "embed.ln.beta", d);

  Matrix x(d, m);
  for (std::size_t t = 0; t < m; ++t) {
    const int id = segment.ids[t];
    if (id < 0 || static_cast<std::size_t>(id) >= tok_emb.rows)
      throw IndexError("token id " + std::to_string(id) + " outside embedding table");
    for (std::size_t r = 0; r < d; ++r)
      x(r, t) = tok_emb(static_cast<std::size_t>(id), r) + pos_emb(t, r);
  }
  layer_norm_columns(x, emb_gamma, emb_beta);

  QKCapture capture;
  capture.n_layers = config.n_layers;
  capture.n_heads = config.n_heads;
  capture.d_head = dh;
  capture.n_tokens = m;
  capture.segment_id = segment.segment_id;
  capture.q.resize(config.n_layers * config.n_heads);
  capture.k.resize(config.n_layers * config.n_heads);
  if (trace) {
    trace->hidden.clear();
    trace->attention.clear();
    trace->hidden.push_back(x);
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const std::string p = "L" + std::to_string(l) + ".";
    const Matrix wq = fetch_matrix(weights, p + "q.w", d, d);
    const Matrix wk = fetch_matrix(weights, p + "k.w", d, d);
    const Matrix wv = fetch_matrix(weights, p + "v.w", d, d);
    const auto bq = fetch_vector(weights, p + "q.b", d);
    const auto bk = fetch_vector(weights, p + "k.b", d);
    const auto bv = fetch_vector(weights, p + "v.b", d);

    Matrix qm = matmul(wq, x);
    add_bias_columns(qm, bq);
    Matrix km = matmul(wk, x);
    add_bias_columns(km, bk);
    Matrix vm = matmul(wv, x);
    add_bias_columns(vm, bv);

    Matrix ctx(d, m);
    for (std::size_t h = 0; h < config.n_heads; ++h) {
      const std::size_t base = h * dh;
      Matrix qh(dh, m), kh(dh, m);
      for (std::size_t r = 0; r < dh; ++r)
        for (std::size_t c = 0; c < m; ++c) {
          qh(r, c) = qm(base + r, c);
          kh(r, c) = km(base + r, c);
        }
      capture.q[l * config.n_heads + h] = qh;
      capture.k[l * config.n_heads + h] = std::move(kh);

      // softmax((Q^T K) / sqrt(d_head)) row per query token
      Matrix attn(m, m);
      for (std::size_t i = 0; i < m; ++i) {
        double row_max = -std::numeric_limits<double>::infinity();
        for (std::size_t jj = 0; jj < m; ++jj) {
          double s = 0.0;
          for (std::size_t r = 0; r < dh; ++r) s += qm(base + r, i) * km(base + r, jj);
          s *= scale;
          attn(i, jj) = s;
          row_max = std::max(row_max, s);
        }
        double denom = 0.0;
        for (std::size_t jj = 0; jj < m; ++jj) {
          attn(i, jj) = std::exp(attn(i, jj) - row_max);
          denom += attn(i, jj);
        }
        for (std::size_t jj = 0; jj < m; ++jj) attn(i, jj) /= denom;
      }
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t r = 0; r < dh; ++r) {
          double s = 0.0;
          for (std::size_t jj = 0; jj < m; ++jj) s += attn(i, jj) * vm(base + r, jj);
          ctx(base + r, i) = s;
        }
      if (trace) trace->attention.push_back(std::move(attn));
    }

    const Matrix wo = fetch_matrix(weights, p + "attn_out.w", d, d);
    const auto bo = fetch_vector(weights, p + "attn_out.b", d);
    Matrix attn_out = matmul(wo, ctx);
    add_bias_columns(attn_out, bo);
    for (std::size_t i = 0; i < x.a.size(); ++i) x.a[i] += attn_out.a[i];
    layer_norm_columns(x, fetch_vector(weights, p + "ln1.gamma", d),
                       fetch_vector(weights, p + "ln1.beta", d));

    const Matrix w1 = fetch_matrix(weights, p + "ff1.w", 0, d);
    const std::size_t d_ff = w1.rows;
    const auto b1 = fetch_vector(weights, p + "ff1.b", d_ff);
    const Matrix w2 = fetch_matrix(weights, p + "ff2.w", d, d_ff);
    const auto b2 = fetch_vector(weights, p + "ff2.b", d);
    Matrix h1 = matmul(w1, x);
    add_bias_columns(h1, b1);
    for (double& v : h1.a) v = gelu(v);
    Matrix h2 = matmul(w2, h1);
    add_bias_columns(h2, b2);
    for (std::size_t i = 0; i < x.a.size(); ++i) x.a[i] += h2.a[i];
    layer_norm_columns(x, fetch_vector(weights, p + "ln2.gamma", d),
                       fetch_vector(weights, p + "ln2.beta", d));
    if (trace) trace->hidden.push_back(x);
  }
  return capture;
}

// ---------------------------------------------------------------------------
// AN indexing and the element-wise product
// ---------------------------------------------------------------------------

std::size_t an_index(std::size_t layer, std::size_t head, std::size_t dim,
                     const EncoderConfig& config) {
  if (layer >= config.n_layers || head >= config.n_heads || dim >= config.d_head)
    throw IndexError("an_index: coordinates out of range");
  return (layer * config.n_heads + head) * config.d_head + dim;
}

AnCoords an_coords(std::size_t an_id, const EncoderConfig& config) {
  if (an_id >= config.an_count()) throw IndexError("an_coords: id out of range");
  AnCoords c;
  c.dim = an_id % config.d_head;
  const std::size_t lh = an_id / config.d_head;
  c.head = lh % config.n_heads;
  c.layer = lh / config.n_heads;
  return c;
}

std::vector<double> ep_vector(const std::vector<double>& q, const std::vector<double>& k) {
  if (q.size() != k.size()) throw DimensionError("ep_vector: length mismatch");
  std::vector<double> out(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) out[i] = q[i] * k[i];
  return out;
}

// ---------------------------------------------------------------------------
// Capture and subtoken persistence
// ---------------------------------------------------------------------------

void captures_to_archive(const std::vector<QKCapture>& captures, TensorArchive& archive) {
  for (std::size_t s = 0; s < captures.size(); ++s) {
    const QKCapture& c = captures[s];
    for (std::size_t l = 0; l < c.n_layers; ++l)
      for (std::size_t h = 0; h < c.n_heads; ++h) {
        const std::string base =
            "seg" + std::to_string(s) + ".L" + std::to_string(l) + ".H" + std::to_string(h);
        archive.add_matrix(base + ".q", c.query(l, h));
        archive.add_matrix(base + ".k", c.key(l, h));
      }
  }
}

std::vector<QKCapture> captures_from_archive(const TensorArchive& archive,
                                             const EncoderConfig& config) {
  std::vector<QKCapture> captures;
  for (std::size_t s = 0;; ++s) {
    const std::string probe = "seg" + std::to_string(s) + ".L0.H0.q";
    if (!archive.has(probe)) break;
    QKCapture c;
    c.n_layers = config.n_layers;
    c.n_heads = config.n_heads;
    c.d_head = config.d_head;
    c.segment_id = static_cast<int>(s);
    c.q.resize(config.n_layers * config.n_heads);
    c.k.resize(config.n_layers * config.n_heads);
    for (std::size_t l = 0; l < config.n_layers; ++l)
      for (std::size_t h = 0; h < config.n_heads; ++h) {
        const std::string base =
            "seg" + std::to_string(s) + ".L" + std::to_string(l) + ".H" + std::to_string(h);
        Matrix qm = archive.as_matrix(base + ".q");
        Matrix km = archive.as_matrix(base + ".k");
        if (qm.rows != config.d_head || km.rows != config.d_head || qm.cols != km.cols)
          throw DimensionError("capture tensor '" + base + "' has unexpected shape");
        c.n_tokens = qm.cols;
        c.q[l * config.n_heads + h] = std::move(qm);
        c.k[l * config.n_heads + h] = std::move(km);
      }
    captures.push_back(std::move(c));
  }
  if (captures.empty()) throw SchemaError("archive holds no capture tensors");
  return captures;
}

void write_subtokens_tsv(const std::vector<SubtokenSequence>& segments, const PosTagSet& tags,
                         const std::string& path) {
  std::string out = "segment_id\ttoken_index\tpiece\tword_index\tonset_sec\tpos_tag\n";
  char buf[64];
  for (const SubtokenSequence& seg : segments) {
    for (std::size_t t = 0; t < seg.size(); ++t) {
      std::snprintf(buf, sizeof(buf), "%.17g", seg.onset_sec[t]);
      out += std::to_string(seg.segment_id);
      out += '\t';
      out += std::to_string(t);
      out += '\t';
      out += seg.pieces[t];
      out += '\t';
      out += std::to_string(seg.word_index[t]);
      out += '\t';
      out += buf;
      out += '\t';
      out += tags.labels[static_cast<std::size_t>(seg.pos_index[t])];
      out += '\n';
    }
  }
  write_file_atomic(path, out);
}

std::vector<SubtokenSequence> read_subtokens_tsv(const std::string& path,
                                                 const PosTagSet& tags) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open subtokens file: " + path);
  std::vector<SubtokenSequence> segments;
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
    std::string seg_s, tok_s, piece, widx_s, onset_s, tag_s;
    if (!std::getline(ss, seg_s, '\t') || !std::getline(ss, tok_s, '\t') ||
        !std::getline(ss, piece, '\t') || !std::getline(ss, widx_s, '\t') ||
        !std::getline(ss, onset_s, '\t') || !std::getline(ss, tag_s, '\t'))
      throw SchemaError("subtokens: malformed line: " + line);
    const int seg_id = std::stoi(seg_s);
    if (seg_id < 0) throw SchemaError("subtokens: negative segment id");
    while (segments.size() <= static_cast<std::size_t>(seg_id)) {
      SubtokenSequence s;
      s.segment_id = static_cast<int>(segments.size());
      segments.push_back(std::move(s));
    }
    SubtokenSequence& seg = segments[static_cast<std::size_t>(seg_id)];
    const int tag = tags.index_of(tag_s);
    if (tag < 0) throw SchemaError("subtokens: unknown label '" + tag_s + "'");
    seg.ids.push_back(-1);  // token ids are not persisted in the sidecar
    seg.pieces.push_back(piece);
    seg.word_index.push_back(std::stol(widx_s));
    seg.onset_sec.push_back(std::stod(onset_s));
    seg.pos_index.push_back(tag);
  }
  if (segments.empty()) throw SchemaError("subtokens: no rows in " + path);
  return segments;
}

}  // namespace ansync
