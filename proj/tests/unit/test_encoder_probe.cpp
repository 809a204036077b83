#include <algorithm>
#include <numeric>
#include <random>

#include "ansync/encoder_probe.hpp"
#include "doctest.h"
#include "encoder_oracle.hpp"
#include "test_util.hpp"

using namespace ansync;

namespace {

WordPieceVocab toy_vocab() {
  return WordPieceVocab::from_pieces({"[UNK]", "[CLS]", "[SEP]", "play", "##ing", "the", "cat",
                                      "un", "##believ", "##able", "dog", "##s", "a", "man",
                                      "walk", "##ed", "to", "school", "know", "##ledge"});
}

EncoderConfig tiny_config(std::size_t vocab_size, std::size_t n_layers = 2,
                          std::size_t n_heads = 2, std::size_t d_model = 8) {
  EncoderConfig cfg;
  cfg.n_layers = n_layers;
  cfg.n_heads = n_heads;
  cfg.d_model = d_model;
  cfg.d_head = d_model / n_heads;
  cfg.vocab_size = vocab_size;
  cfg.max_tokens = 16;
  return cfg;
}

TokenizedStory story_of_sentences(const std::vector<std::size_t>& lengths) {
  TokenizedStory story;
  std::size_t word = 0;
  for (std::size_t s = 0; s < lengths.size(); ++s)
    for (std::size_t i = 0; i < lengths[s]; ++i) {
      story.ids.push_back(3);
      story.pieces.push_back("tok");
      story.word_index.push_back(static_cast<long>(word++));
      story.onset_sec.push_back(0.5 * static_cast<double>(story.ids.size()));
      story.pos_index.push_back(7);
      story.sentence_id.push_back(static_cast<long>(s));
    }
  return story;
}

// All feasible segmentations by brute force; returns (min segment count,
// min sum of squared content lengths among min-count splits).
std::pair<std::size_t, double> brute_force_best(const std::vector<std::size_t>& lens,
                                                std::size_t cap) {
  const std::size_t n = lens.size();
  std::size_t best_count = SIZE_MAX;
  double best_sq = 1e300;
  // enumerate boundary bitmasks between sentences
  for (std::size_t mask = 0; mask < (1ULL << (n - 1)); ++mask) {
    std::vector<std::size_t> seg_lens;
    std::size_t cur = lens[0];
    for (std::size_t i = 0; i + 1 < n; ++i) {
      if (mask & (1ULL << i)) {
        seg_lens.push_back(cur);
        cur = 0;
      }
      cur += lens[i + 1];
    }
    seg_lens.push_back(cur);
    bool ok = true;
    double sq = 0;
    for (std::size_t sl : seg_lens) {
      if (sl > cap) ok = false;
      sq += double(sl) * double(sl);
    }
    if (!ok) continue;
    if (seg_lens.size() < best_count) {
      best_count = seg_lens.size();
      best_sq = sq;
    } else if (seg_lens.size() == best_count) {
      best_sq = std::min(best_sq, sq);
    }
  }
  return {best_count, best_sq};
}

}  // namespace

TEST_SUITE_BEGIN("encoder_probe");

TEST_CASE("wordpiece greedy longest match") {
  const WordPieceVocab vocab = toy_vocab();
  SUBCASE("verbatim word becomes its single id") {
    CHECK(wordpiece_tokenize("cat", vocab) == std::vector<int>{6});
  }
  SUBCASE("playing splits into play + ##ing") {
    CHECK(wordpiece_tokenize("playing", vocab) == std::vector<int>{3, 4});
  }
  SUBCASE("hand-run greedy match on a longer word") {
    // un | ##believ | ##able, longest-prefix at each step
    CHECK(wordpiece_tokenize("unbelievable", vocab) == std::vector<int>{7, 8, 9});
  }
  SUBCASE("upper case folds before matching") {
    CHECK(wordpiece_tokenize("Playing", vocab) == std::vector<int>{3, 4});
  }
  SUBCASE("no matchable prefix degrades to [UNK]") {
    CHECK(wordpiece_tokenize("xyzzy", vocab) == std::vector<int>{0});
  }
  SUBCASE("unmatchable tail degrades the whole word") {
    CHECK(wordpiece_tokenize("catx", vocab) == std::vector<int>{0});
  }
  SUBCASE("reconstruction property") {
    const std::vector<std::string> words = {"playing", "cats", "knowledge", "walked", "a"};
    for (const std::string& w : words) {
      std::string glued;
      for (int id : wordpiece_tokenize(w, vocab)) {
        std::string piece = vocab.pieces[std::size_t(id)];
        if (piece.rfind("##", 0) == 0) piece = piece.substr(2);
        glued += piece;
      }
      CHECK(glued == w);
    }
  }
  SUBCASE("vocab requires the special tokens") {
    CHECK_THROWS_AS(WordPieceVocab::from_pieces({"a", "b"}), SchemaError);
  }
}

TEST_CASE("tokenize_timeline carries word metadata onto subtokens") {
  const WordPieceVocab vocab = toy_vocab();
  const PosTagSet tags = PosTagSet::universal();
  TokenTimeline tl;
  tl.records.push_back({"the", 0.0, "DET", 0});
  tl.records.push_back({"playing", 0.4, "VERB", 0});
  tl.records.push_back({"cat", 0.9, "NOUN", 1});
  const TokenizedStory story = tokenize_timeline(tl, vocab, tags);
  REQUIRE(story.size() == 4);  // the, play, ##ing, cat
  CHECK(story.word_index == std::vector<long>{0, 1, 1, 2});
  CHECK(story.onset_sec[1] == doctest::Approx(0.4));
  CHECK(story.onset_sec[2] == doctest::Approx(0.4));  // inherited by ##ing
  CHECK(story.pos_index[1] == story.pos_index[2]);
  CHECK(story.sentence_id == std::vector<long>{0, 0, 0, 1});
}

TEST_CASE("segment_transcript") {
  const WordPieceVocab vocab = toy_vocab();
  const PosTagSet tags = PosTagSet::universal();

  SUBCASE("three 100-token sentences fit one 302-token segment") {
    const auto segs = segment_transcript(story_of_sentences({100, 100, 100}), vocab, tags, 512);
    REQUIRE(segs.size() == 1);
    CHECK(segs[0].size() == 302);
    CHECK(segs[0].ids.front() == vocab.cls_id);
    CHECK(segs[0].ids.back() == vocab.sep_id);
  }
  SUBCASE("three 300-token sentences need three segments of 302") {
    const auto segs = segment_transcript(story_of_sentences({300, 300, 300}), vocab, tags, 512);
    REQUIRE(segs.size() == 3);
    for (const auto& s : segs) CHECK(s.size() == 302);
  }
  SUBCASE("an oversized sentence is an error") {
    CHECK_THROWS_AS(segment_transcript(story_of_sentences({600}), vocab, tags, 512),
                    SegmentationError);
  }
  SUBCASE("segments end at sentence boundaries and respect the cap") {
    const std::vector<std::size_t> lens = {40, 10, 85, 30, 17, 60, 90, 5};
    const std::size_t max_tokens = 120;
    const auto segs = segment_transcript(story_of_sentences(lens), vocab, tags, max_tokens);
    std::vector<std::size_t> content;
    for (const auto& s : segs) {
      REQUIRE(s.size() <= max_tokens);
      CHECK(s.ids.front() == vocab.cls_id);
      CHECK(s.ids.back() == vocab.sep_id);
      content.push_back(s.size() - 2);
    }
    CHECK(std::accumulate(content.begin(), content.end(), std::size_t{0}) ==
          std::accumulate(lens.begin(), lens.end(), std::size_t{0}));
    // every segment boundary coincides with a sentence boundary
    std::size_t consumed = 0;
    for (std::size_t c : content) {
      consumed += c;
      std::size_t acc = 0;
      bool at_boundary = false;
      for (std::size_t sl : lens) {
        acc += sl;
        if (acc == consumed) at_boundary = true;
      }
      CHECK(at_boundary);
    }
  }
  SUBCASE("DP equals exhaustive enumeration of boundary splits") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 30; ++trial) {
      const std::size_t n = 2 + rng() % 9;
      std::vector<std::size_t> lens(n);
      for (auto& l : lens) l = 5 + rng() % 80;
      const std::size_t max_tokens = 100;
      const std::size_t cap = max_tokens - 2;
      if (*std::max_element(lens.begin(), lens.end()) > cap) continue;
      const auto segs = segment_transcript(story_of_sentences(lens), vocab, tags, max_tokens);
      double sq = 0;
      for (const auto& s : segs) {
        const double c = double(s.size() - 2);
        sq += c * c;
      }
      const auto [best_count, best_sq] = brute_force_best(lens, cap);
      CHECK(segs.size() == best_count);
      CHECK(sq == doctest::Approx(best_sq));
    }
  }
  SUBCASE("specials inherit boundary onsets and tags") {
    TokenizedStory story = story_of_sentences({3, 2});
    const auto segs = segment_transcript(story, vocab, tags, 512);
    REQUIRE(segs.size() == 1);
    CHECK(segs[0].onset_sec.front() == story.onset_sec.front());
    CHECK(segs[0].onset_sec.back() == story.onset_sec.back());
    CHECK(segs[0].pos_index.front() == tags.cls_index());
    CHECK(segs[0].pos_index.back() == tags.sep_index());
    CHECK(segs[0].word_index.front() == kSpecialWordIndex);
  }
}

TEST_CASE("an_index is the layer-major bijection") {
  EncoderConfig base = EncoderConfig::base();
  CHECK(an_index(0, 0, 0, base) == 0);
  CHECK(an_index(11, 11, 63, base) == 9215);
  CHECK(an_index(1, 0, 0, base) == 768);
  CHECK(base.an_count() == 9216);
  CHECK_THROWS_AS(an_index(12, 0, 0, base), IndexError);
  CHECK_THROWS_AS(an_index(0, 12, 0, base), IndexError);
  CHECK_THROWS_AS(an_index(0, 0, 64, base), IndexError);
  CHECK_THROWS_AS(an_coords(9216, base), IndexError);

  const EncoderConfig small = tiny_config(10, 3, 2, 8);
  for (std::size_t id = 0; id < small.an_count(); ++id) {
    const AnCoords c = an_coords(id, small);
    CHECK(an_index(c.layer, c.head, c.dim, small) == id);
  }
}

TEST_CASE("ep_vector") {
  SUBCASE("basic identity") {
    const auto out = ep_vector({1, 2}, {3, 4});
    CHECK(out == std::vector<double>{3, 8});
    CHECK(out[0] + out[1] == doctest::Approx(11.0));
  }
  SUBCASE("zero key absorbs") {
    const auto out = ep_vector({1.5, -2.0, 3.0}, {0, 0, 0});
    for (double v : out) CHECK(v == 0.0);
  }
  SUBCASE("sum equals the dot product") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> uni(-1, 1);
    std::vector<double> q(64), k(64);
    for (double& v : q) v = uni(rng);
    for (double& v : k) v = uni(rng);
    double dot = 0;
    for (std::size_t i = 0; i < q.size(); ++i) dot += q[i] * k[i];
    const auto out = ep_vector(q, k);
    double sum = 0;
    for (double v : out) sum += v;
    CHECK(std::fabs(sum - dot) < 1e-5 * std::fabs(dot) + 1e-12);
  }
  SUBCASE("length mismatch") {
    CHECK_THROWS_AS(ep_vector({1, 2}, {1, 2, 3}), DimensionError);
  }
}

TEST_CASE("encoder_forward identity fixture captures the embeddings") {
  // identity projections, zero biases: layer-0 Q and K are the head slices
  // of the layer-norm'd embeddings
  const EncoderConfig cfg = tiny_config(6, 1, 2, 8);
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> uni(-1, 1);
  TensorArchive w;
  Matrix tok(cfg.vocab_size, cfg.d_model), pos(cfg.max_tokens, cfg.d_model);
  for (double& v : tok.a) v = uni(rng);
  for (double& v : pos.a) v = uni(rng);
  w.add_matrix("embed.token", tok);
  w.add_matrix("embed.position", pos);
  w.add_vector("embed.ln.gamma", std::vector<double>(cfg.d_model, 1.0));
  w.add_vector("embed.ln.beta", std::vector<double>(cfg.d_model, 0.0));
  Matrix eye(cfg.d_model, cfg.d_model);
  for (std::size_t i = 0; i < cfg.d_model; ++i) eye(i, i) = 1.0;
  const std::vector<double> zeros(cfg.d_model, 0.0);
  for (const char* name : {"q", "k", "v", "attn_out"}) {
    w.add_matrix("L0." + std::string(name) + ".w", eye);
    w.add_vector("L0." + std::string(name) + ".b", zeros);
  }
  w.add_vector("L0.ln1.gamma", std::vector<double>(cfg.d_model, 1.0));
  w.add_vector("L0.ln1.beta", zeros);
  w.add_matrix("L0.ff1.w", Matrix(4, cfg.d_model, 0.0));
  w.add_vector("L0.ff1.b", std::vector<double>(4, 0.0));
  w.add_matrix("L0.ff2.w", Matrix(cfg.d_model, 4, 0.0));
  w.add_vector("L0.ff2.b", zeros);
  w.add_vector("L0.ln2.gamma", std::vector<double>(cfg.d_model, 1.0));
  w.add_vector("L0.ln2.beta", zeros);

  const SubtokenSequence seg = testutil::toy_segment(2, cfg.vocab_size);
  ForwardTrace trace;
  const QKCapture cap = encoder_forward(cfg, w, seg, &trace);

  REQUIRE(trace.hidden.size() == 2);
  const Matrix& embedded = trace.hidden[0];  // post-LN embeddings, d_model x m
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const Matrix& q = cap.query(0, h);
    const Matrix& k = cap.key(0, h);
    for (std::size_t r = 0; r < cfg.d_head; ++r)
      for (std::size_t t = 0; t < 2; ++t) {
        CHECK(q(r, t) == doctest::Approx(embedded(h * cfg.d_head + r, t)).epsilon(1e-12));
        CHECK(k(r, t) == doctest::Approx(q(r, t)).epsilon(1e-12));
      }
  }
}

TEST_CASE("softmax attention rows sum to one") {
  const EncoderConfig cfg = tiny_config(12, 2, 2, 8);
  const TensorArchive w = testutil::random_weights(cfg, 16, 5);
  const SubtokenSequence seg = testutil::toy_segment(10, cfg.vocab_size);
  ForwardTrace trace;
  encoder_forward(cfg, w, seg, &trace);
  REQUIRE(trace.attention.size() == cfg.n_layers * cfg.n_heads);
  for (const Matrix& attn : trace.attention)
    for (std::size_t i = 0; i < attn.rows; ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < attn.cols; ++j) {
        sum += attn(i, j);
        CHECK(attn(i, j) >= 0.0);
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("forward pass matches the scalar-loop oracle") {
  const EncoderConfig cfg = tiny_config(12, 2, 2, 8);
  const TensorArchive w = testutil::random_weights(cfg, 16, 7);
  const SubtokenSequence seg = testutil::toy_segment(5, cfg.vocab_size);

  ForwardTrace trace;
  const QKCapture cap = encoder_forward(cfg, w, seg, &trace);
  const oracle::Trace expected = oracle::forward(w, cfg, seg.ids);

  REQUIRE(trace.hidden.size() == expected.states.size());
  for (std::size_t level = 0; level < trace.hidden.size(); ++level)
    for (std::size_t t = 0; t < seg.size(); ++t)
      for (std::size_t i = 0; i < cfg.d_model; ++i)
        CHECK(trace.hidden[level](i, t) ==
              doctest::Approx(expected.states[level][t][i]).epsilon(1e-5));

  for (std::size_t l = 0; l < cfg.n_layers; ++l)
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      const auto& [oq, ok] = expected.q_capture[l][h];
      for (std::size_t r = 0; r < cfg.d_head; ++r)
        for (std::size_t t = 0; t < seg.size(); ++t) {
          CHECK(cap.query(l, h)(r, t) == doctest::Approx(oq[r][t]).epsilon(1e-5));
          CHECK(cap.key(l, h)(r, t) == doctest::Approx(ok[r][t]).epsilon(1e-5));
        }
    }
}

TEST_CASE("factorization identity: EP sums reproduce Q^T K") {
  const EncoderConfig cfg = tiny_config(12, 2, 2, 8);
  const TensorArchive w = testutil::random_weights(cfg, 16, 3);
  const SubtokenSequence seg = testutil::toy_segment(12, cfg.vocab_size);
  const QKCapture cap = encoder_forward(cfg, w, seg);
  for (std::size_t l = 0; l < cfg.n_layers; ++l)
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      const Matrix& q = cap.query(l, h);
      const Matrix& k = cap.key(l, h);
      for (std::size_t i = 0; i < seg.size(); ++i)
        for (std::size_t j = 0; j < seg.size(); ++j) {
          std::vector<double> qi(cfg.d_head), kj(cfg.d_head);
          for (std::size_t r = 0; r < cfg.d_head; ++r) {
            qi[r] = q(r, i);
            kj[r] = k(r, j);
          }
          double dot = 0;
          for (std::size_t r = 0; r < cfg.d_head; ++r) dot += qi[r] * kj[r];
          const auto ep = ep_vector(qi, kj);
          double sum = 0;
          for (double v : ep) sum += v;
          CHECK(std::fabs(sum - dot) / (1.0 + std::fabs(dot)) < 1e-5);
        }
    }
}

TEST_CASE("forward pass is deterministic") {
  const EncoderConfig cfg = tiny_config(12, 2, 2, 8);
  const TensorArchive w = testutil::random_weights(cfg, 16, 13);
  const SubtokenSequence seg = testutil::toy_segment(6, cfg.vocab_size);
  const QKCapture a = encoder_forward(cfg, w, seg);
  const QKCapture b = encoder_forward(cfg, w, seg);
  for (std::size_t i = 0; i < a.q.size(); ++i) {
    CHECK(a.q[i].a == b.q[i].a);
    CHECK(a.k[i].a == b.k[i].a);
  }
}

TEST_CASE("forward pass error paths") {
  const EncoderConfig cfg = tiny_config(12, 2, 2, 8);
  TensorArchive w = testutil::random_weights(cfg, 16, 3);
  const SubtokenSequence seg = testutil::toy_segment(4, cfg.vocab_size);

  SUBCASE("missing tensor") {
    w.entries.erase("L1.ff1.b");
    CHECK_THROWS_AS(encoder_forward(cfg, w, seg), SchemaError);
  }
  SUBCASE("shape mismatch") {
    w.entries.erase("L0.q.w");
    w.add_matrix("L0.q.w", Matrix(cfg.d_model, cfg.d_model + 1, 0.0));
    CHECK_THROWS_AS(encoder_forward(cfg, w, seg), DimensionError);
  }
  SUBCASE("token id outside the embedding table") {
    SubtokenSequence bad = seg;
    bad.ids[1] = 99;
    CHECK_THROWS_AS(encoder_forward(cfg, w, bad), IndexError);
  }
}

TEST_CASE("captures and subtokens persist through archives") {
  testutil::TempDir tmp;
  const EncoderConfig cfg = tiny_config(12, 2, 2, 8);
  const TensorArchive w = testutil::random_weights(cfg, 16, 3);
  std::vector<SubtokenSequence> segs = {testutil::toy_segment(4, cfg.vocab_size, 0.5, 0),
                                        testutil::toy_segment(6, cfg.vocab_size, 0.5, 1)};
  std::vector<QKCapture> caps;
  for (const auto& s : segs) caps.push_back(encoder_forward(cfg, w, s));

  TensorArchive archive;
  captures_to_archive(caps, archive);
  write_tensor_archive(archive, tmp.file("captures.nta"));
  const auto loaded =
      captures_from_archive(read_tensor_archive(tmp.file("captures.nta")), cfg);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].n_tokens == 4);
  CHECK(loaded[1].n_tokens == 6);
  // float storage truncates doubles; compare at f32 precision
  for (std::size_t i = 0; i < caps[0].q.size(); ++i)
    for (std::size_t j = 0; j < caps[0].q[i].a.size(); ++j)
      CHECK(loaded[0].q[i].a[j] == doctest::Approx(caps[0].q[i].a[j]).epsilon(1e-6));

  const PosTagSet tags = PosTagSet::universal();
  write_subtokens_tsv(segs, tags, tmp.file("subtokens.tsv"));
  const auto segs2 = read_subtokens_tsv(tmp.file("subtokens.tsv"), tags);
  REQUIRE(segs2.size() == 2);
  CHECK(segs2[0].pieces == segs[0].pieces);
  CHECK(segs2[1].onset_sec == segs[1].onset_sec);
  CHECK(segs2[0].pos_index == segs[0].pos_index);
  CHECK(segs2[0].word_index == segs[0].word_index);
}

TEST_SUITE_END();
