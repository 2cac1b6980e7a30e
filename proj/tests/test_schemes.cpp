#include <algorithm>
#include <cmath>
#include <vector>

#include <catch_amalgamated.hpp>

#include "mimo_lab/schemes.hpp"
#include "test_util.hpp"

using namespace mimo_lab;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

RealVector vec(std::initializer_list<double> d) {
  RealVector v(static_cast<Eigen::Index>(d.size()));
  Eigen::Index i = 0;
  for (double x : d) v(i++) = x;
  return v;
}

ComplexMatrix diag_matrix(const RealVector& d) { return d.cast<cplx>().asDiagonal(); }

double direct_gap(double x, double mu) { return std::log2(1.0 + std::exp(-x)) + std::log2(1.0 + std::exp(-mu / x)); }

/// Binary-input MMSE 1 - E[tanh(snr + sqrt(snr) n)] by trapezoidal integration.
double bpsk_mmse(double snr) {
  const double step = 1e-3;
  double acc = 0.0;
  for (double n = -12.0; n <= 12.0; n += step) {
    const double w = std::exp(-0.5 * n * n) / std::sqrt(2.0 * std::numbers::pi);
    acc += w * std::tanh(snr + std::sqrt(snr) * n) * step;
  }
  return 1.0 - acc;
}

}  // namespace

TEST_CASE("noise model converts between SNR and variance") {
  const NoiseModel n = NoiseModel::from_snr_db(20.0);
  CHECK_THAT(n.sigma2, WithinRel(0.01, 1e-14));
  CHECK_THAT(n.snr_db(), WithinAbs(20.0, 1e-12));
}

TEST_CASE("gap function values") {
  CHECK_THAT(gap_function(4.0, 16.0), WithinAbs(direct_gap(4.0, 16.0), 1e-15));
  CHECK_THAT(gap_function(4.0, 16.0), WithinAbs(0.05237, 1e-5));
  CHECK_THAT(gap_function(8.0, 16.0), WithinAbs(direct_gap(8.0, 16.0), 1e-15));
  CHECK(gap_function(8.0, 16.0) > gap_function(4.0, 16.0));
  // The weak stream dies as x grows: g -> log2(1 + 1) = 1.
  CHECK_THAT(gap_function(1e6, 16.0), WithinAbs(1.0, 1e-4));
  CHECK(std::isfinite(gap_function(1e300, 1.0)));
  CHECK(std::isfinite(gap_function(1e-300, 1e-300)));
  CHECK_THROWS_AS(gap_function(0.0, 1.0), DomainError);
  CHECK_THROWS_AS(gap_function(1.0, -1.0), DomainError);
}

TEST_CASE("pair diagonals: well-conditioned pair sits at the geometric mean") {
  const Constellation c = build_constellation(4);
  const PairDiagonals r = pair_diagonals(2.0, 1.0, NoiseModel{1.0}, c);
  CHECK_THAT(r.mu, WithinRel(16.0, 1e-14));
  CHECK_FALSE(r.searched);
  CHECK_THAT(r.b11, WithinRel(std::sqrt(2.0), 1e-14));
  CHECK_THAT(r.b22, WithinRel(std::sqrt(2.0), 1e-14));
  // Grid over [sqrt(mu), hi^2 d2/s2] = [4, 8] confirms the minimizer x = 4.
  double best_x = 0.0, best = 1e300;
  for (int i = 0; i <= 4000; ++i) {
    const double x = 4.0 + 4.0 * i / 4000.0;
    if (direct_gap(x, 16.0) < best) best = direct_gap(x, 16.0), best_x = x;
  }
  CHECK_THAT(best_x, WithinAbs(4.0, 1e-12));
}

TEST_CASE("pair diagonals: equal pair is untouched") {
  const Constellation c = build_constellation(16);
  for (double s2 : {1e-3, 1.0, 1e3}) {
    const PairDiagonals r = pair_diagonals(0.7, 0.7, NoiseModel{s2}, c);
    CHECK(r.b11 == 0.7);
    CHECK(r.b22 == 0.7);
  }
}

TEST_CASE("pair diagonals: mu = 1 prefers no rotation") {
  const Constellation c = build_constellation(4);  // d2 = 2
  // hi^2 d2 / s2 = 2 and lo^2 d2 / s2 = 0.5 with s2 = 1.
  const PairDiagonals r = pair_diagonals(1.0, 0.5, NoiseModel{1.0}, c);
  CHECK_THAT(r.mu, WithinRel(1.0, 1e-14));
  CHECK(r.searched);
  CHECK_THAT(r.b11, WithinAbs(1.0, 1e-6));
  CHECK_THAT(r.b22, WithinAbs(0.5, 1e-6));
  // g decreases toward the upper boundary x = 2 on [1, 2].
  for (int i = 0; i < 100; ++i) {
    const double x = 1.0 + i / 100.0;
    CHECK(direct_gap(x + 0.01, 1.0) < direct_gap(x, 1.0));
  }
}

TEST_CASE("pair diagonals keep the determinant and minimize g") {
  CounterRng rng(8, 0);
  for (int t = 0; t < 300; ++t) {
    const Constellation c = build_constellation(std::vector<int>{4, 16, 64, 256}[rng.bounded(4)]);
    const double lo = 0.05 + rng.uniform();
    const double hi = lo * (1.0 + 20.0 * rng.uniform());
    const NoiseModel noise{std::pow(10.0, -3.0 + 5.0 * rng.uniform())};
    const PairDiagonals r = pair_diagonals(hi, lo, noise, c);
    CHECK_THAT(r.b11 * r.b22, WithinRel(hi * lo, 1e-12));
    CHECK(r.b11 <= hi * (1 + 1e-12));
    CHECK(r.b11 >= std::sqrt(hi * lo) * (1 - 1e-12));
    const double k = c.d2_min / noise.sigma2;
    const double x_star = r.b11 * r.b11 * k;
    const double x_lo = std::sqrt(r.mu), x_hi = hi * hi * k;
    for (int i = 0; i <= 200; ++i) {
      const double x = x_lo * std::pow(x_hi / x_lo, i / 200.0);
      CHECK(gap_function(x_star, r.mu) <= gap_function(x, r.mu) + 1e-12);
    }
  }
}

TEST_CASE("pairing: eight subchannels with cutoff six") {
  const Constellation c = build_constellation(4);
  const PairingPlan p = compute_pairing(vec({2.0, 1.5, 1.2, 1.0, 0.8, 0.5, 0.2, 0.1}), NoiseModel{1.0}, c);
  CHECK(p.cutoff == 6);
  using P = std::pair<std::size_t, std::size_t>;
  CHECK(p.pairs == std::vector<P>{{0, 5}, {1, 4}, {2, 3}});
  CHECK(p.singletons == std::vector<std::size_t>{6, 7});
  CHECK_NOTHROW(p.validate(8));
}

TEST_CASE("pairing: odd cutoff leaves the middle index single") {
  const Constellation c = build_constellation(4);
  // mu(l1, lm) = 8 * 2 lm^2 >= 1.7 needs lm^2 >= 0.10625; the sixth value fails.
  const PairingPlan p = compute_pairing(vec({2.0, 1.5, 1.2, 1.0, 0.8, 0.2}), NoiseModel{1.0}, c);
  CHECK(p.cutoff == 5);
  using P = std::pair<std::size_t, std::size_t>;
  CHECK(p.pairs == std::vector<P>{{0, 4}, {1, 3}});
  CHECK(p.singletons == std::vector<std::size_t>{2, 5});
}

TEST_CASE("pairing: very low SNR forms no pairs") {
  const Constellation c = build_constellation(256);
  const PairingPlan p = compute_pairing(vec({3.0, 2.0, 1.0}), NoiseModel::from_snr_db(-20.0), c);
  CHECK(p.cutoff == 0);
  CHECK(p.pairs.empty());
  CHECK(p.singletons.size() == 3);
}

TEST_CASE("pairing: cutoff is non-decreasing in SNR") {
  const Constellation c = build_constellation(16);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const RealVector s = svd(test_util::random_complex(8, 8, seed)).sigma;
    std::size_t last = 0;
    for (double snr = -20.0; snr <= 50.0; snr += 2.5) {
      const std::size_t n = compute_pairing(s, NoiseModel::from_snr_db(snr), c).cutoff;
      CHECK(n >= last);
      last = n;
    }
    CHECK(last == 8);
  }
}

TEST_CASE("water-filling") {
  SECTION("worked example") {
    const PowerAllocation p = waterfilling(vec({2.0, 1.0}), NoiseModel{1.0}, 2.0);
    CHECK_THAT(p.phi(0), WithinAbs(1.375, 1e-9));
    CHECK_THAT(p.phi(1), WithinAbs(0.625, 1e-9));
    CHECK_THAT(p.phi.sum(), WithinAbs(2.0, 1e-9));
  }
  SECTION("equal gains give a uniform split") {
    const PowerAllocation p = waterfilling(vec({0.8, 0.8, 0.8}), NoiseModel{0.3}, 3.0);
    for (Eigen::Index i = 0; i < 3; ++i) CHECK_THAT(p.phi(i), WithinAbs(1.0, 1e-9));
  }
  SECTION("low budget goes to the strongest stream") {
    const PowerAllocation p = waterfilling(vec({10.0, 0.1}), NoiseModel{1.0}, 0.01);
    CHECK_THAT(p.phi(0), WithinAbs(0.01, 1e-12));
    CHECK(p.phi(1) == 0.0);
  }
  SECTION("invalid input") {
    CHECK_THROWS_AS(waterfilling(vec({0.0, 0.0}), NoiseModel{1.0}, 1.0), DomainError);
    CHECK_THROWS_AS(waterfilling(vec({1.0}), NoiseModel{1.0}, 0.0), DomainError);
  }
}

TEST_CASE("PAM MMSE matches the binary-input closed form") {
  const Constellation c = build_constellation(4);
  const GaussHermite rule = gauss_hermite(63);
  for (double snr : {0.01, 0.1, 0.5, 1.0, 2.0, 4.0}) {
    INFO("snr " << snr);
    CHECK_THAT(pam_mmse(snr, c, rule), WithinAbs(bpsk_mmse(snr), 2e-4));
  }
  CHECK(pam_mmse(0.0, c, rule) == 1.0);
  const MmseCurve curve(c);
  CHECK(curve.quadrature_ok());
  for (double snr : {0.05, 0.7, 3.0}) CHECK_THAT(curve.mmse(snr), WithinRel(bpsk_mmse(snr), 5e-3));
  for (double m : {0.9, 0.5, 0.1, 0.01}) CHECK_THAT(curve.mmse(curve.inverse(m)), WithinRel(m, 1e-6));
}

TEST_CASE("mercury water-filling") {
  SECTION("equal gains give a uniform split") {
    const PowerAllocation p = mercury_waterfilling(vec({1.0, 1.0, 1.0, 1.0}), NoiseModel{0.5}, build_constellation(16), 4.0);
    for (Eigen::Index i = 0; i < 4; ++i) CHECK_THAT(p.phi(i), WithinAbs(1.0, 1e-6));
  }
  SECTION("a Gaussian MMSE curve reproduces water-filling") {
    const RealVector g = vec({1.5, 1.0, 0.7, 0.4, 0.1});
    for (double s2 : {0.01, 0.1, 1.0}) {
      const NoiseModel noise{s2};
      const PowerAllocation wf = waterfilling(g, noise, 5.0);
      const MmseCurve gaussian([](double snr) { return 1.0 / (1.0 + snr); });
      const PowerAllocation mwf = mercury_waterfilling(g, noise, gaussian, 5.0);
      for (Eigen::Index i = 0; i < g.size(); ++i) {
        INFO("s2 " << s2 << " stream " << i << " wf " << wf.phi(i) << " mwf " << mwf.phi(i));
        CHECK_THAT(mwf.phi(i), WithinAbs(wf.phi(i), 1e-3 * wf.phi.maxCoeff()));
      }
    }
  }
  SECTION("large square QAM approaches water-filling") {
    // A large square QAM tends to a uniform, not a Gaussian, input, so the
    // agreement is close once every stream sits between about 20 and 33 dB,
    // below the point where the 64 levels per dimension become resolvable.
    const RealVector g = vec({1.5, 1.0, 0.7, 0.4});
    const NoiseModel noise{1e-3};
    const PowerAllocation wf = waterfilling(g, noise, 4.0);
    const PowerAllocation big = mercury_waterfilling(g, noise, build_constellation(4096), 4.0);
    CHECK(big.quadrature_ok);
    for (Eigen::Index i = 0; i < 4; ++i) {
      INFO("stream " << i << " wf " << wf.phi(i) << " mwf " << big.phi(i));
      CHECK_THAT(big.phi(i), WithinRel(wf.phi(i), 0.02));
    }
    // At mid SNR the gap narrows as the order grows.
    const NoiseModel mid{0.1};
    const PowerAllocation wf_mid = waterfilling(g, mid, 4.0);
    const double gap16 = (mercury_waterfilling(g, mid, build_constellation(16), 4.0).phi - wf_mid.phi).norm();
    const double gap4096 = (mercury_waterfilling(g, mid, build_constellation(4096), 4.0).phi - wf_mid.phi).norm();
    INFO("gap16 " << gap16 << " gap4096 " << gap4096);
    CHECK(gap4096 < gap16);
  }
  SECTION("deep saturation flattens towards uniform") {
    const Constellation c = build_constellation(16);
    const RealVector g = svd(test_util::random_complex(4, 4, 5)).sigma;
    const PowerAllocation p = mercury_waterfilling(g, NoiseModel::from_snr_db(40.0), c, 4.0);
    CHECK_THAT(p.phi.sum(), WithinAbs(4.0, 1e-6));
    for (Eigen::Index i = 0; i < 4; ++i) CHECK_THAT(p.phi(i), WithinAbs(1.0, 0.05));
  }
  SECTION("budget is met") {
    const RealVector g = vec({2.0, 1.0, 0.3});
    for (double snr : {-10.0, 0.0, 10.0, 20.0}) {
      const PowerAllocation p = mercury_waterfilling(g, NoiseModel::from_snr_db(snr), build_constellation(16), 3.0);
      CHECK_THAT(p.phi.sum(), WithinAbs(3.0, 1e-6));
      CHECK((p.phi.array() >= 0.0).all());
    }
  }
}

TEST_CASE("SVD design on simple channels") {
  const Constellation c = build_constellation(16);
  const TransceiverDesign id = design_svd_mmse(ComplexMatrix::Identity(2, 2), NoiseModel{0.1}, c);
  CHECK((id.decomposition.b.dense() - RealMatrix::Identity(2, 2)).norm() < 1e-14);
  CHECK_THAT(id.eccn.eccn, WithinAbs(1.0, 1e-14));
  const TransceiverDesign d21 = design_svd_mmse(diag_matrix(vec({2.0, 1.0})), NoiseModel{0.1}, c);
  CHECK_THAT(d21.eccn.eccn, WithinAbs(2.0, 1e-14));
  CHECK(d21.decomposition.b.superdiag.norm() == 0.0);
  REQUIRE(d21.eccn.per_layer_post_snr.size() == 2);
  CHECK_THAT(d21.eccn.per_layer_post_snr[0], WithinRel(40.0, 1e-12));
}

TEST_CASE("CBD design on a diagonal channel keeps the diagonal") {
  const TransceiverDesign d = design_cbd(diag_matrix(vec({3.0, 2.0, 1.0})), NoiseModel{1.0}, build_constellation(4));
  CHECK((d.decomposition.b.diag - vec({3.0, 2.0, 1.0})).norm() < 1e-14);
  CHECK(d.decomposition.b.superdiag.norm() < 1e-14);
}

TEST_CASE("GP-CBD on a 2x2 channel at high SNR") {
  const TransceiverDesign d = design_gp_cbd(diag_matrix(vec({2.0, 1.0})), NoiseModel::from_snr_db(30.0),
                                            build_constellation(4));
  REQUIRE(d.plan.pairs.size() == 1);
  CHECK_THAT(d.decomposition.b.diag(0), WithinAbs(std::sqrt(2.0), 1e-12));
  CHECK_THAT(d.decomposition.b.diag(1), WithinAbs(std::sqrt(2.0), 1e-12));
  CHECK_THAT(d.decomposition.b.superdiag(0), WithinAbs(1.0, 1e-12));
  CHECK_THAT(d.eccn.eccn, WithinAbs(1.0, 1e-12));
  CHECK(check_factorization(diag_matrix(vec({2.0, 1.0})), d.decomposition).reconstruction <= 1e-12);
}

TEST_CASE("GP-CBD equals SVD when no pairs form") {
  const Constellation c = build_constellation(256);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const ComplexMatrix h = test_util::random_complex(8, 8, seed);
    const NoiseModel noise = NoiseModel::from_snr_db(-20.0);
    const TransceiverDesign gp = design_gp_cbd(h, noise, c);
    const TransceiverDesign sv = design_svd_mmse(h, noise, c);
    CHECK(gp.plan.pairs.empty());
    CHECK((gp.decomposition.b.dense() - sv.decomposition.b.dense()).cwiseAbs().maxCoeff() <= 1e-12);
  }
  const Constellation c16 = build_constellation(16);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const ComplexMatrix h = test_util::random_complex(8, 8, seed);
    const TransceiverDesign gp = design_gp_cbd(h, NoiseModel::from_snr_db(-20.0), c16);
    CHECK(gp.plan.pairs.empty());
  }
}

TEST_CASE("GP-CBD structural invariants on random channels") {
  const Constellation c = build_constellation(16);
  for (auto [r, t] : {std::pair{4, 4}, std::pair{8, 8}, std::pair{8, 16}, std::pair{16, 8}}) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const ComplexMatrix h = test_util::random_complex(r, t, seed);
      for (double snr : {0.0, 15.0, 30.0}) {
        const NoiseModel noise = NoiseModel::from_snr_db(snr);
        const TransceiverDesign gp = design_gp_cbd(h, noise, c);
        const FactorizationCheck chk = check_factorization(h, gp.decomposition);
        CHECK(chk.reconstruction <= 1e-10);
        CHECK(chk.q_orthonormality <= 1e-10);
        CHECK(chk.p_orthonormality <= 1e-10);
        CHECK(chk.frobenius <= 1e-10);
        for (std::size_t k : gp.decomposition.b.block_boundaries)
          CHECK(gp.decomposition.b.superdiag(static_cast<Eigen::Index>(k)) == 0.0);
        const RealVector& lt = assemble_permuted(svd(h), gp.plan).lambda_tilde;
        for (std::size_t p = 0; p < gp.plan.pairs.size(); ++p) {
          const auto k = static_cast<Eigen::Index>(2 * p);
          CHECK_THAT(gp.decomposition.b.diag(k) * gp.decomposition.b.diag(k + 1), WithinRel(lt(k) * lt(k + 1), 1e-10));
        }
        CHECK(gp.mu_per_pair.size() == gp.plan.pairs.size());
      }
    }
  }
}

TEST_CASE("GP-CBD lowers the ECCN at high SNR") {
  const Constellation c = build_constellation(16);
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const ComplexMatrix h = test_util::random_complex(8, 8, seed);
    const NoiseModel noise = NoiseModel::from_snr_db(30.0);
    CHECK(design_gp_cbd(h, noise, c).eccn.eccn <= design_svd_mmse(h, noise, c).eccn.eccn);
  }
}

TEST_CASE("GP-CBD on a rank-deficient channel") {
  const ComplexMatrix a = test_util::random_complex(4, 1, 1);
  const ComplexMatrix b = test_util::random_complex(4, 1, 2);
  const ComplexMatrix h = a * b.adjoint();
  const TransceiverDesign gp = design_gp_cbd(h, NoiseModel::from_snr_db(40.0), build_constellation(16));
  CHECK(gp.clamped_singular_values >= 3);
  CHECK(check_factorization(h, gp.decomposition).reconstruction <= 1e-10);
  CHECK(std::isfinite(gp.eccn.eccn));
}

TEST_CASE("power budget holds for every policy") {
  const Constellation c = build_constellation(16);
  const ComplexMatrix h = test_util::random_complex(4, 4, 31);
  for (PowerPolicy pol : {PowerPolicy::Uniform, PowerPolicy::WaterFilling, PowerPolicy::MercuryWF}) {
    for (Scheme s : {Scheme::Svd, Scheme::Cbd, Scheme::GpCbd}) {
      DesignOptions opt;
      opt.power = pol;
      const TransceiverDesign d = design(s, h, NoiseModel::from_snr_db(10.0), c, opt);
      const ComplexMatrix f = d.precoder();
      CHECK_THAT((f.adjoint() * f).trace().real(), WithinAbs(4.0, 1e-9));
      CHECK_THAT(d.power.phi.sum(), WithinAbs(4.0, 1e-9));
      CHECK(d.power.policy == pol);
    }
  }
  CHECK_THROWS_AS(design(Scheme::Gmd, h, NoiseModel{1.0}, c), ConfigError);
}

TEST_CASE("policy names round trip") {
  for (PowerPolicy p : {PowerPolicy::Uniform, PowerPolicy::WaterFilling, PowerPolicy::MercuryWF})
    CHECK(parse_power_policy(power_policy_name(p)) == p);
  CHECK_FALSE(parse_power_policy("max").has_value());
}
