#include <cmath>
#include <random>

#include "ansync/an_activation.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace ansync;

namespace {

// Capture filled with uniform random values, no forward pass involved.
QKCapture random_capture(const EncoderConfig& cfg, std::size_t m, std::uint64_t seed) {
  QKCapture c;
  c.n_layers = cfg.n_layers;
  c.n_heads = cfg.n_heads;
  c.d_head = cfg.d_head;
  c.n_tokens = m;
  c.segment_id = 0;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1, 1);
  for (std::size_t lh = 0; lh < cfg.n_layers * cfg.n_heads; ++lh) {
    Matrix q(cfg.d_head, m), k(cfg.d_head, m);
    for (double& v : q.a) v = uni(rng);
    for (double& v : k.a) v = uni(rng);
    c.q.push_back(std::move(q));
    c.k.push_back(std::move(k));
  }
  return c;
}

EncoderConfig small_config() {
  EncoderConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_model = 8;
  cfg.d_head = 4;
  cfg.vocab_size = 10;
  cfg.max_tokens = 64;
  return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("an_activation");

TEST_CASE("bin_tokens applies the floor rule") {
  SubtokenSequence seg = testutil::toy_segment(4, 10);
  seg.onset_sec = {0.0, 1.4, 1.5, 3.1};
  const TRBinning b = bin_tokens({seg}, 1.5, 3);
  CHECK(b.bin_of_token == std::vector<std::int64_t>{0, 0, 1, 2});
  CHECK(b.clamped == 0);
}

TEST_CASE("bin_tokens conventions") {
  SUBCASE("all zero onsets collapse into bin 0") {
    SubtokenSequence seg = testutil::toy_segment(5, 10, 0.0);
    const TRBinning b = bin_tokens({seg}, 1.5, 4);
    for (auto v : b.bin_of_token) CHECK(v == 0);
  }
  SUBCASE("onset exactly k*TR lands in bin k") {
    SubtokenSequence seg = testutil::toy_segment(3, 10);
    seg.onset_sec = {0.0, 1.5, 4.5};
    const TRBinning b = bin_tokens({seg}, 1.5, 4);
    CHECK(b.bin_of_token == std::vector<std::int64_t>{0, 1, 3});
  }
  SUBCASE("late tokens clamp to the last bin and are counted") {
    SubtokenSequence seg = testutil::toy_segment(3, 10);
    seg.onset_sec = {0.0, 1.0, 99.0};
    const TRBinning b = bin_tokens({seg}, 1.5, 3);
    CHECK(b.bin_of_token[2] == 2);
    CHECK(b.clamped == 1);
  }
  SUBCASE("empty timeline") {
    CHECK_THROWS_AS(bin_tokens({}, 1.5, 3), EmptyInputError);
  }
  SUBCASE("specials can be excluded") {
    SubtokenSequence seg = testutil::toy_segment(3, 10);
    seg.word_index[0] = kSpecialWordIndex;
    const TRBinning b = bin_tokens({seg}, 1.5, 3, true);
    CHECK(b.bin_of_token[0] == -1);
    CHECK(b.bin_of_token[1] >= 0);
  }
  SUBCASE("bins partition the subtokens") {
    SubtokenSequence seg = testutil::toy_segment(17, 10, 0.3);
    const TRBinning b = bin_tokens({seg}, 1.5, 5);
    CHECK(b.bin_of_token.size() == 17);
    for (auto v : b.bin_of_token) {
      CHECK(v >= 0);
      CHECK(v < 5);
    }
    for (std::size_t i = 1; i < b.bin_of_token.size(); ++i)
      CHECK(b.bin_of_token[i] >= b.bin_of_token[i - 1]);
  }
}

TEST_CASE("an_raw_activation readouts") {
  const EncoderConfig cfg = small_config();

  SUBCASE("single-token bin collapses to q_i * k_i") {
    const QKCapture cap = random_capture(cfg, 1, 5);
    SubtokenSequence seg = testutil::toy_segment(1, 10);
    const TRBinning b = bin_tokens({seg}, 1.5, 2);
    const ANActivationMatrix act = an_raw_activation(cfg, {cap}, b);
    for (std::size_t lh = 0; lh < 4; ++lh)
      for (std::size_t d = 0; d < cfg.d_head; ++d) {
        const std::size_t an = lh * cfg.d_head + d;
        CHECK(act.values(an, 0) ==
              doctest::Approx(cap.q[lh](d, 0) * cap.k[lh](d, 0)).epsilon(1e-12));
      }
  }
  SUBCASE("empty bins emit zero") {
    const QKCapture cap = random_capture(cfg, 2, 6);
    SubtokenSequence seg = testutil::toy_segment(2, 10, 0.0);  // all in bin 0
    const TRBinning b = bin_tokens({seg}, 1.5, 4);
    const ANActivationMatrix act = an_raw_activation(cfg, {cap}, b);
    for (std::size_t an = 0; an < act.values.rows; ++an)
      for (std::size_t t = 1; t < 4; ++t) CHECK(act.values(an, t) == 0.0);
  }
  SUBCASE("mean readout equals the nested-loop oracle on a 4-token bin") {
    const QKCapture cap = random_capture(cfg, 4, 7);
    SubtokenSequence seg = testutil::toy_segment(4, 10, 0.0);
    const TRBinning b = bin_tokens({seg}, 1.5, 1);
    const ANActivationMatrix act = an_raw_activation(cfg, {cap}, b);
    for (std::size_t lh = 0; lh < 4; ++lh)
      for (std::size_t d = 0; d < cfg.d_head; ++d) {
        double sum = 0;
        for (std::size_t a = 0; a < 4; ++a)
          for (std::size_t kk = 0; kk < 4; ++kk) sum += cap.q[lh](d, a) * cap.k[lh](d, kk);
        const std::size_t an = lh * cfg.d_head + d;
        CHECK(act.values(an, 0) == doctest::Approx(sum / 16.0).epsilon(1e-6));
      }
  }
  SUBCASE("max and min readouts equal the nested-loop extrema") {
    const QKCapture cap = random_capture(cfg, 5, 8);
    SubtokenSequence seg = testutil::toy_segment(5, 10, 0.0);
    const TRBinning b = bin_tokens({seg}, 1.5, 1);
    const ANActivationMatrix mx = an_raw_activation(cfg, {cap}, b, Readout::max);
    const ANActivationMatrix mn = an_raw_activation(cfg, {cap}, b, Readout::min);
    for (std::size_t lh = 0; lh < 4; ++lh)
      for (std::size_t d = 0; d < cfg.d_head; ++d) {
        double lo = 1e300, hi = -1e300;
        for (std::size_t a = 0; a < 5; ++a)
          for (std::size_t kk = 0; kk < 5; ++kk) {
            const double v = cap.q[lh](d, a) * cap.k[lh](d, kk);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
          }
        const std::size_t an = lh * cfg.d_head + d;
        CHECK(mx.values(an, 0) == doctest::Approx(hi).epsilon(1e-9));
        CHECK(mn.values(an, 0) == doctest::Approx(lo).epsilon(1e-9));
      }
  }
  SUBCASE("shape is an_count x frames") {
    const QKCapture cap = random_capture(cfg, 6, 9);
    SubtokenSequence seg = testutil::toy_segment(6, 10, 0.4);
    const TRBinning b = bin_tokens({seg}, 1.5, 7);
    const ANActivationMatrix act = an_raw_activation(cfg, {cap}, b);
    CHECK(act.values.rows == cfg.an_count());
    CHECK(act.values.cols == 7);
    CHECK(act.kind == ActivationKind::raw);
  }
  SUBCASE("uniform scaling of Q and K scales activations by c^2") {
    QKCapture cap = random_capture(cfg, 4, 10);
    SubtokenSequence seg = testutil::toy_segment(4, 10, 0.2);
    const TRBinning b = bin_tokens({seg}, 1.5, 2);
    const ANActivationMatrix base = an_raw_activation(cfg, {cap}, b);
    const double c = 3.0;
    for (auto& q : cap.q)
      for (double& v : q.a) v *= c;
    for (auto& k : cap.k)
      for (double& v : k.a) v *= c;
    const ANActivationMatrix scaled = an_raw_activation(cfg, {cap}, b);
    for (std::size_t i = 0; i < base.values.a.size(); ++i)
      CHECK(scaled.values.a[i] == doctest::Approx(c * c * base.values.a[i]).epsilon(1e-9));
  }
  SUBCASE("token count mismatch with the binning") {
    const QKCapture cap = random_capture(cfg, 4, 11);
    SubtokenSequence seg = testutil::toy_segment(5, 10);
    const TRBinning b = bin_tokens({seg}, 1.5, 3);
    CHECK_THROWS_AS(an_raw_activation(cfg, {cap}, b), DimensionError);
  }
}

TEST_CASE("hrf_kernel shape and sampling") {
  const HRFKernel k = hrf_kernel(1.5);
  REQUIRE(k.samples.size() == 22);  // t = 0 .. 31.5

  SUBCASE("h(0) is zero") { CHECK(k.samples[0] == 0.0); }

  SUBCASE("sampled argmax sits at t = 4.5 s") {
    std::size_t argmax = 0;
    for (std::size_t i = 0; i < k.samples.size(); ++i)
      if (k.samples[i] > k.samples[argmax]) argmax = i;
    CHECK(argmax == 3);
    // dense evaluation of the analytic double gamma peaks at t = 5 s
    double best_t = 0, best_v = -1;
    for (double t = 0; t <= 32.0; t += 0.001) {
      const double g6 = t <= 0 ? 0 : std::exp(5.0 * std::log(t) - t - std::lgamma(6.0));
      const double g16 = t <= 0 ? 0 : std::exp(15.0 * std::log(t) - t - std::lgamma(16.0));
      const double v = g6 - g16 / 6.0;
      if (v > best_v) {
        best_v = v;
        best_t = t;
      }
    }
    CHECK(best_t == doctest::Approx(5.0).epsilon(1e-3));
  }

  SUBCASE("samples match the analytic formula after lobe normalization") {
    std::vector<double> expected(k.samples.size());
    double pos = 0;
    for (std::size_t i = 0; i < expected.size(); ++i) {
      const double t = 1.5 * double(i);
      const double g6 = t <= 0 ? 0 : std::pow(t, 5.0) * std::exp(-t) / std::tgamma(6.0);
      const double g16 = t <= 0 ? 0 : std::pow(t, 15.0) * std::exp(-t) / std::tgamma(16.0);
      expected[i] = g6 - g16 / 6.0;
      if (expected[i] > 0) pos += expected[i];
    }
    for (std::size_t i = 0; i < expected.size(); ++i)
      CHECK(k.samples[i] == doctest::Approx(expected[i] / pos).epsilon(1e-9));
  }

  SUBCASE("undershoot exists between 10 s and 32 s") {
    bool negative = false;
    for (std::size_t i = 0; i < k.samples.size(); ++i) {
      const double t = 1.5 * double(i);
      if (t > 10.0 && t < 32.0 && k.samples[i] < 0) negative = true;
    }
    CHECK(negative);
  }

  SUBCASE("exactly one sign change") {
    int changes = 0;
    for (std::size_t i = 2; i < k.samples.size(); ++i)
      if ((k.samples[i] > 0) != (k.samples[i - 1] > 0)) ++changes;
    CHECK(changes == 1);
  }

  SUBCASE("duration shorter than one sample") {
    CHECK_THROWS_AS(hrf_kernel(1.5, 1.0), DimensionError);
  }
}

TEST_CASE("convolve_hrf") {
  const HRFKernel kernel = hrf_kernel(1.5);

  SUBCASE("unit impulse reproduces the kernel") {
    ANActivationMatrix raw;
    raw.values = Matrix(1, 10);
    raw.values(0, 0) = 1.0;
    const ANActivationMatrix out = convolve_hrf(raw, kernel);
    CHECK(out.kind == ActivationKind::hrf);
    for (std::size_t t = 0; t < 10; ++t)
      CHECK(out.values(0, t) == doctest::Approx(kernel.samples[t]).epsilon(1e-12));
  }
  SUBCASE("linearity") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> uni(-1, 1);
    ANActivationMatrix a, b, sum;
    a.values = Matrix(1, 30);
    b.values = Matrix(1, 30);
    sum.values = Matrix(1, 30);
    for (std::size_t t = 0; t < 30; ++t) {
      a.values(0, t) = uni(rng);
      b.values(0, t) = uni(rng);
      sum.values(0, t) = a.values(0, t) + b.values(0, t);
    }
    const auto ca = convolve_hrf(a, kernel), cb = convolve_hrf(b, kernel),
               cs = convolve_hrf(sum, kernel);
    for (std::size_t t = 0; t < 30; ++t)
      CHECK(cs.values(0, t) == doctest::Approx(ca.values(0, t) + cb.values(0, t)).epsilon(1e-9));
  }
  SUBCASE("zero row stays zero") {
    ANActivationMatrix raw;
    raw.values = Matrix(2, 12);
    const auto out = convolve_hrf(raw, kernel);
    for (double v : out.values.a) CHECK(v == 0.0);
  }
  SUBCASE("causality") {
    ANActivationMatrix a, b;
    a.values = Matrix(1, 20);
    b.values = Matrix(1, 20);
    for (std::size_t t = 0; t < 20; ++t) a.values(0, t) = b.values(0, t) = double(t % 3);
    b.values(0, 15) += 100.0;  // differs only at frame 15
    const auto ca = convolve_hrf(a, kernel), cb = convolve_hrf(b, kernel);
    for (std::size_t t = 0; t < 15; ++t) CHECK(ca.values(0, t) == cb.values(0, t));
  }
  SUBCASE("double convolution is a state error") {
    ANActivationMatrix raw;
    raw.values = Matrix(1, 5);
    const auto once = convolve_hrf(raw, kernel);
    CHECK_THROWS_AS(convolve_hrf(once, kernel), StateError);
  }
}

TEST_CASE("an.meta sidecar round-trips") {
  testutil::TempDir tmp;
  const EncoderConfig cfg = small_config();
  write_an_meta(tmp.file("an.meta"), cfg);
  const auto coords = read_an_meta(tmp.file("an.meta"));
  REQUIRE(coords.size() == cfg.an_count());
  for (std::size_t id = 0; id < coords.size(); ++id) {
    const AnCoords expect = an_coords(id, cfg);
    CHECK(coords[id].layer == expect.layer);
    CHECK(coords[id].head == expect.head);
    CHECK(coords[id].dim == expect.dim);
  }
}

TEST_SUITE_END();
