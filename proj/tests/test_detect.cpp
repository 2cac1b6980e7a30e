#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include <catch_amalgamated.hpp>

#include "mimo_lab/constellation.hpp"
#include "mimo_lab/detect.hpp"
#include "mimo_lab/rng.hpp"

using namespace mimo_lab;

namespace {

/// Random real bidiagonal matrix with optional block boundaries.
BidiagonalReal random_bidiagonal(std::size_t n, CounterRng& rng, bool with_boundaries) {
  BidiagonalReal b(n);
  for (std::size_t i = 0; i < n; ++i) b.diag(static_cast<Eigen::Index>(i)) = 0.3 + 1.5 * rng.uniform();
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (with_boundaries && rng.bit()) {
      b.block_boundaries.push_back(i);
    } else {
      b.superdiag(static_cast<Eigen::Index>(i)) = 1.6 * rng.uniform() - 0.8;
    }
  }
  return b;
}

std::vector<std::uint8_t> random_bits(std::size_t n, CounterRng& rng) {
  std::vector<std::uint8_t> out(n);
  for (auto& b : out) b = static_cast<std::uint8_t>(rng.bit());
  return out;
}

ComplexVector to_vector(const std::vector<std::complex<double>>& s) {
  ComplexVector v(static_cast<Eigen::Index>(s.size()));
  for (std::size_t i = 0; i < s.size(); ++i) v(static_cast<Eigen::Index>(i)) = s[i];
  return v;
}

/// y = B s + n for a random bit vector; returns (bits, y).
std::pair<std::vector<std::uint8_t>, ComplexVector> transmit(const BidiagonalReal& b, const Constellation& c,
                                                             double sigma2, CounterRng& rng) {
  const auto bits = random_bits(b.size() * static_cast<std::size_t>(c.bits_per_symbol), rng);
  const ComplexVector s = to_vector(map_bits(bits, c));
  ComplexVector y = b.dense().cast<cplx>() * s;
  for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += rng.complex_normal(sigma2);
  return {bits, y};
}

double max_abs_diff(const LlrVector& a, const LlrVector& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("constellation geometry") {
  SECTION("16-QAM PAM levels") {
    const Constellation c = build_constellation(16);
    REQUIRE(c.pam.size() == 4);
    const double a = 1.0 / std::sqrt(10.0);
    CHECK(c.pam[0] == Catch::Approx(-3 * a).epsilon(1e-12));
    CHECK(c.pam[1] == Catch::Approx(-a).epsilon(1e-12));
    CHECK(c.pam[2] == Catch::Approx(a).epsilon(1e-12));
    CHECK(c.pam[3] == Catch::Approx(3 * a).epsilon(1e-12));
    CHECK(c.pam[3] == Catch::Approx(0.948683).epsilon(1e-6));
  }
  SECTION("QPSK minimum distance") {
    const Constellation c = build_constellation(4);
    CHECK(c.d2_min == Catch::Approx(2.0));
    const double d = c.pam[1] - c.pam[0];
    CHECK(d * d == Catch::Approx(2.0));
  }
  for (int m : {4, 16, 64, 256, 1024, 4096}) {
    DYNAMIC_SECTION("unit energy and Gray labels, M = " << m) {
      const Constellation c = build_constellation(m);
      double e = 0.0;
      for (double x : c.pam) e += x * x;
      CHECK(2.0 * e / c.pam_size == Catch::Approx(1.0).epsilon(1e-12));
      for (int j = 0; j + 1 < c.pam_size; ++j) {
        const unsigned diff = c.label_of_level[static_cast<std::size_t>(j)] ^ c.label_of_level[static_cast<std::size_t>(j + 1)];
        CHECK(std::popcount(diff) == 1);
      }
      std::vector<unsigned> labels = c.label_of_level;
      std::sort(labels.begin(), labels.end());
      for (std::size_t j = 0; j < labels.size(); ++j) CHECK(labels[j] == j);
    }
  }
  SECTION("invalid orders") {
    for (int m : {0, 2, 8, 32, 8192, 12}) CHECK_THROWS_AS(build_constellation(m), DomainError);
  }
}

TEST_CASE("bit mapping") {
  const Constellation qpsk = build_constellation(4);
  const std::vector<std::uint8_t> zeros(2, 0);
  const auto s = map_bits(zeros, qpsk);
  REQUIRE(s.size() == 1);
  CHECK(s[0].real() == Catch::Approx(-1.0 / std::sqrt(2.0)));
  CHECK(s[0].imag() == Catch::Approx(-1.0 / std::sqrt(2.0)));
  const std::vector<std::uint8_t> iq{1, 0};
  CHECK(map_bits(iq, qpsk)[0].real() > 0.0);
  CHECK(map_bits(iq, qpsk)[0].imag() < 0.0);
  CHECK_THROWS_AS(map_bits(std::vector<std::uint8_t>(3, 0), qpsk), DomainError);

  CounterRng rng(5, 0);
  for (int m : {4, 16, 64, 256}) {
    const Constellation c = build_constellation(m);
    const auto bits = random_bits(static_cast<std::size_t>(c.bits_per_symbol) * 200, rng);
    const auto syms = map_bits(bits, c);
    CHECK(demap_hard(syms, c) == bits);
  }
}

TEST_CASE("QPSK closed-form LLR") {
  const Constellation c = build_constellation(4);
  const double sigma2 = 0.7;
  for (double gain : {0.5, 1.0, 2.0}) {
    for (cplx y : {cplx(0.3, -0.2), cplx(-1.1, 0.9), cplx(0.0, 2.5)}) {
      const LlrVector l = awgn_demapper(gain, y, sigma2, c);
      CHECK(l[0] == Catch::Approx(2.0 * std::sqrt(2.0) * gain * y.real() / sigma2).margin(1e-12));
      CHECK(l[1] == Catch::Approx(2.0 * std::sqrt(2.0) * gain * y.imag() / sigma2).margin(1e-12));
    }
  }
}

TEST_CASE("BCJR matches brute-force enumeration") {
  CounterRng rng(17, 1);
  int instances = 0;
  for (int m : {4, 16}) {
    const Constellation c = build_constellation(m);
    for (std::size_t n : {1u, 2u, 3u, 4u}) {
      if (m == 16 && n == 4) continue;  // covered by the acceptance binary
      for (double sigma2 : {0.05, 0.5, 2.0}) {
        for (int rep = 0; rep < 4; ++rep) {
          const BidiagonalReal b = random_bidiagonal(n, rng, rep % 2 == 1);
          const auto [bits, y] = transmit(b, c, sigma2, rng);
          const ComplexMatrix full = b.dense().cast<cplx>();
          INFO("M=" << m << " n=" << n << " sigma2=" << sigma2);
          CHECK(max_abs_diff(bcjr_bidiagonal(b, y, sigma2, c), bruteforce_llr(full, y, sigma2, c)) <= 1e-8);
          CHECK(max_abs_diff(maxlog_llr(b, y, sigma2, c), bruteforce_maxlog(full, y, sigma2, c)) <= 1e-9);
          ++instances;
        }
      }
    }
  }
  CHECK(instances > 50);
}

TEST_CASE("max-log agrees in sign with confident exact LLRs") {
  CounterRng rng(3, 3);
  const Constellation c = build_constellation(16);
  for (int rep = 0; rep < 50; ++rep) {
    const BidiagonalReal b = random_bidiagonal(3, rng, false);
    const auto [bits, y] = transmit(b, c, 0.1, rng);
    const LlrVector exact = bcjr_bidiagonal(b, y, 0.1, c);
    const LlrVector approx = maxlog_llr(b, y, 0.1, c);
    for (std::size_t k = 0; k < exact.size(); ++k) {
      if (std::abs(exact[k]) > 5.0) CHECK(std::signbit(exact[k]) == std::signbit(approx[k]));
    }
  }
}

TEST_CASE("diagonal channel reduces to the per-layer demapper") {
  CounterRng rng(8, 0);
  const Constellation c = build_constellation(16);
  RealVector d(4);
  d << 1.2, 0.8, 0.5, 2.0;
  const BidiagonalReal b = BidiagonalReal::diagonal(d);
  const auto [bits, y] = transmit(b, c, 0.3, rng);
  const LlrVector trellis = bcjr_bidiagonal(b, y, 0.3, c);
  const LlrVector dispatched = demodulate(b, y, 0.3, c, Demod::Bcjr);
  for (std::size_t i = 0; i < 4; ++i) {
    const LlrVector layer = awgn_demapper(d(static_cast<Eigen::Index>(i)), y(static_cast<Eigen::Index>(i)), 0.3, c);
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(trellis[i * 4 + k] == Catch::Approx(layer[k]).margin(1e-10));
      CHECK(dispatched[i * 4 + k] == layer[k]);
    }
  }
}

TEST_CASE("degenerate observations") {
  const Constellation c = build_constellation(16);
  SECTION("zero gain carries no information") {
    for (double l : awgn_demapper(0.0, cplx(0.7, -0.4), 0.5, c)) CHECK(l == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("y = 0 leaves the sign bits undecided") {
    const LlrVector l = awgn_demapper(1.0, cplx(0.0, 0.0), 0.5, c);
    CHECK(l[0] == Catch::Approx(0.0).margin(1e-12));
    CHECK(l[2] == Catch::Approx(0.0).margin(1e-12));
    // Inner levels are closer to zero than outer ones, so the second bit favours "inner".
    CHECK(l[1] != Catch::Approx(0.0).margin(1e-3));
  }
  SECTION("LLR clamp at very high SNR") {
    const LlrVector l = awgn_demapper(1.0, cplx(5.0, -5.0), 1e-6, c);
    for (double v : l) CHECK(std::abs(v) <= kLlrClamp);
    CHECK(l[0] == kLlrClamp);
    CHECK(l[2] == -kLlrClamp);
  }
  SECTION("invalid inputs") {
    BidiagonalReal b(2);
    b.diag << 1.0, 1.0;
    CHECK_THROWS_AS(bcjr_bidiagonal(b, ComplexVector::Zero(3), 0.5, c), DomainError);
    CHECK_THROWS_AS(bcjr_bidiagonal(b, ComplexVector::Zero(2), 0.0, c), DomainError);
    CHECK_THROWS_AS(awgn_demapper(1.0, cplx(0, 0), -1.0, c), DomainError);
    CHECK_THROWS_AS(bruteforce_llr(ComplexMatrix::Identity(6, 6), ComplexVector::Zero(6), 1.0, c), DomainError);
  }
}

TEST_CASE("independent blocks are decoded independently") {
  // Perturbing the observation of one block leaves the other block's LLRs untouched.
  CounterRng rng(21, 0);
  const Constellation c = build_constellation(16);
  BidiagonalReal b(4);
  b.diag << 1.0, 0.9, 1.1, 0.7;
  b.superdiag << 0.5, 0.0, -0.4;
  b.block_boundaries = {1};
  auto [bits, y] = transmit(b, c, 0.2, rng);
  const LlrVector before = bcjr_bidiagonal(b, y, 0.2, c);
  y(3) += cplx(0.8, -0.6);
  const LlrVector after = bcjr_bidiagonal(b, y, 0.2, c);
  for (std::size_t k = 0; k < 8; ++k) CHECK(before[k] == after[k]);
  bool changed = false;
  for (std::size_t k = 8; k < 16; ++k) changed = changed || before[k] != after[k];
  CHECK(changed);
}

TEST_CASE("hard decisions at high SNR agree with the transmitted bits") {
  CounterRng rng(33, 0);
  const Constellation c = build_constellation(16);
  const double sigma2 = std::pow(10.0, -2.0);  // 20 dB
  std::size_t agree = 0, total = 0;
  for (int rep = 0; rep < 200; ++rep) {
    BidiagonalReal b = random_bidiagonal(4, rng, false);
    for (Eigen::Index i = 0; i < 4; ++i) b.diag(i) = 1.0 + 0.5 * rng.uniform();
    const auto [bits, y] = transmit(b, c, sigma2, rng);
    const LlrVector l = bcjr_bidiagonal(b, y, sigma2, c);
    for (std::size_t k = 0; k < bits.size(); ++k) {
      agree += static_cast<std::size_t>((l[k] > 0.0) == (bits[k] == 1));
      ++total;
    }
  }
  CHECK(static_cast<double>(agree) / static_cast<double>(total) >= 0.99);
}

TEST_CASE("exact LLRs are calibrated") {
  // For exact posteriors, the empirical frequency of bit = 1 within an LLR bin
  // matches the logistic function of the bin's mean LLR.
  CounterRng rng(44, 0);
  const Constellation c = build_constellation(16);
  const double sigma2 = 0.1;  // 10 dB
  constexpr int kBins = 8;
  std::vector<double> llr_sum(kBins, 0.0), ones(kBins, 0.0), count(kBins, 0.0);
  std::size_t bits_seen = 0;
  while (bits_seen < 100000) {
    const BidiagonalReal b = random_bidiagonal(3, rng, false);
    const auto [bits, y] = transmit(b, c, sigma2, rng);
    const LlrVector l = bcjr_bidiagonal(b, y, sigma2, c);
    for (std::size_t k = 0; k < bits.size(); ++k) {
      const double v = std::clamp(l[k], -4.0, 3.999);
      const int bin = static_cast<int>((v + 4.0) / 8.0 * kBins);
      llr_sum[static_cast<std::size_t>(bin)] += l[k];
      ones[static_cast<std::size_t>(bin)] += bits[k];
      count[static_cast<std::size_t>(bin)] += 1.0;
    }
    bits_seen += bits.size();
  }
  for (int i = 1; i + 1 < kBins; ++i) {
    const auto u = static_cast<std::size_t>(i);
    if (count[u] < 500) continue;
    const double predicted = 1.0 / (1.0 + std::exp(-llr_sum[u] / count[u]));
    const double observed = ones[u] / count[u];
    const double se = std::sqrt(predicted * (1.0 - predicted) / count[u]);
    INFO("bin " << i << " n=" << count[u] << " predicted " << predicted << " observed " << observed);
    CHECK(std::abs(observed - predicted) <= 4.0 * se + 0.01);
  }
}

TEST_CASE("branch metric instrumentation") {
  const Constellation c = build_constellation(16);
  CounterRng rng(1, 1);
  SECTION("one block of length n") {
    const BidiagonalReal b = random_bidiagonal(5, rng, false);
    DemodStats st;
    bcjr_bidiagonal(b, ComplexVector::Zero(5), 1.0, c, &st);
    CHECK(st.trellis_passes == 2);
    CHECK(st.branch_metrics == 2 * (4 * 16 + 4));
  }
  SECTION("2x2 blocks") {
    BidiagonalReal b(4);
    b.diag.setOnes();
    b.superdiag << 0.5, 0.0, 0.5;
    b.block_boundaries = {1};
    DemodStats st;
    maxlog_llr(b, ComplexVector::Zero(4), 1.0, c, &st);
    CHECK(st.trellis_passes == 4);
    CHECK(st.branch_metrics == 4 * (16 + 4));
  }
}

TEST_CASE("demodulator names") {
  CHECK(parse_demod("bcjr") == Demod::Bcjr);
  CHECK(parse_demod("maxlog") == Demod::MaxLog);
  CHECK_FALSE(parse_demod("sphere").has_value());
  CHECK(demod_name(Demod::MaxLog) == "maxlog");
}
