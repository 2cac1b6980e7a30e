#pragma once

// Transceiver designers (SVD, CBD, GP-CBD), the SNR-adaptive subchannel
// pairing, the 2x2 rate-gap minimization and power allocation policies.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mimo_lab/constellation.hpp"
#include "mimo_lab/eccn.hpp"
#include "mimo_lab/error.hpp"
#include "mimo_lab/linalg.hpp"
#include "mimo_lab/quadrature.hpp"

namespace mimo_lab {

/// Default well-conditioned pair threshold on mu.
inline constexpr double kDefaultNu = 1.7;

struct NoiseModel {
  double sigma2 = 1.0;  ///< noise power per receive antenna (linear)

  static NoiseModel from_snr_db(double snr_db) { return {std::pow(10.0, -snr_db / 10.0)}; }
  double snr_db() const { return 0.0 - 10.0 * std::log10(sigma2); }  // 0 dB prints as 0, not -0
};

enum class PowerPolicy { Uniform, WaterFilling, MercuryWF };

inline std::string_view power_policy_name(PowerPolicy p) noexcept {
  switch (p) {
    case PowerPolicy::Uniform: return "uniform";
    case PowerPolicy::WaterFilling: return "wf";
    case PowerPolicy::MercuryWF: return "mwf";
  }
  return "?";
}

inline std::optional<PowerPolicy> parse_power_policy(std::string_view s) noexcept {
  if (s == "uniform") return PowerPolicy::Uniform;
  if (s == "wf") return PowerPolicy::WaterFilling;
  if (s == "mwf") return PowerPolicy::MercuryWF;
  return std::nullopt;
}

struct PowerAllocation {
  RealVector phi;
  PowerPolicy policy = PowerPolicy::Uniform;
  bool saturated = false;       ///< mercury: every stream at its MMSE floor, leftover spread evenly
  bool quadrature_ok = true;    ///< mercury: MMSE quadrature passed its refinement check
};

// ---------------------------------------------------------------------------
// Rate-gap function and the 2x2 optimum
// ---------------------------------------------------------------------------

/// g(x) = log2(1 + e^-x) + log2(1 + e^-(mu/x)).
inline double gap_function(double x, double mu) {
  if (!(x > 0.0) || !(mu > 0.0)) throw DomainError("gap_function: require x > 0 and mu > 0");
  return (std::log1p(std::exp(-x)) + std::log1p(std::exp(-mu / x))) / std::numbers::ln2;
}

/// mu = (d2 a^2 / s2) (d2 b^2 / s2).
inline double pair_mu(double a, double b, const NoiseModel& noise, const Constellation& c) {
  const double k = c.d2_min / noise.sigma2;
  return (k * a * a) * (k * b * b);
}

struct PairDiagonals {
  double b11 = 0.0;
  double b22 = 0.0;
  double mu = 0.0;
  bool searched = false;  ///< true when mu < nu and the 1-D search ran
};

/// Minimizes g over [lo, hi]: 1025-point geometric grid, then golden-section
/// refinement of the best bracket down to 1e-9 of the span.
inline double minimize_gap(double lo, double hi, double mu) {
  if (!(hi > lo)) return lo;
  constexpr int kGrid = 1025;
  const double ratio = std::log(hi / lo);
  auto grid = [&](int i) {
    if (i <= 0) return lo;
    if (i >= kGrid - 1) return hi;
    return lo * std::exp(ratio * i / (kGrid - 1));
  };
  int best = 0;
  double best_g = gap_function(lo, mu);
  for (int i = 1; i < kGrid; ++i) {
    const double g = gap_function(grid(i), mu);
    if (g < best_g) {
      best_g = g;
      best = i;
    }
  }
  double a = grid(best - 1);
  double b = grid(best + 1);
  const double tol = 1e-9 * (hi - lo);
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  double g1 = gap_function(x1, mu);
  double g2 = gap_function(x2, mu);
  while (b - a > tol) {
    if (g1 <= g2) {
      b = x2;
      x2 = x1;
      g2 = g1;
      x1 = b - inv_phi * (b - a);
      g1 = gap_function(x1, mu);
    } else {
      a = x1;
      x1 = x2;
      g1 = g2;
      x2 = a + inv_phi * (b - a);
      g2 = gap_function(x2, mu);
    }
  }
  double x = 0.5 * (a + b);
  // The refined point never loses to the grid optimum.
  const double grid_x = grid(best);
  if (gap_function(grid_x, mu) < gap_function(x, mu)) x = grid_x;
  return x;
}

/// Diagonal entries (b11, b22) of the rotated 2x2 block. For mu >= nu both equal
/// sqrt(hi*lo); otherwise x = b11^2 d2/s2 minimizes g over
/// [sqrt(mu), hi^2 d2/s2]. Always b11 * b22 = hi * lo.
inline PairDiagonals pair_diagonals(double lambda_hi, double lambda_lo, const NoiseModel& noise,
                                   const Constellation& c, double nu = kDefaultNu) {
  if (!(lambda_lo > 0.0) || !(lambda_hi >= lambda_lo)) {
    throw DomainError("pair_diagonals: require lambda_hi >= lambda_lo > 0");
  }
  PairDiagonals r;
  r.mu = pair_mu(lambda_hi, lambda_lo, noise, c);
  const double gm = std::sqrt(lambda_hi * lambda_lo);
  if (lambda_hi == lambda_lo) {
    r.b11 = r.b22 = lambda_hi;
    return r;
  }
  if (r.mu >= nu) {
    r.b11 = r.b22 = gm;
    return r;
  }
  const double k = c.d2_min / noise.sigma2;
  const double x_lo = std::sqrt(r.mu);
  const double x_hi = lambda_hi * lambda_hi * k;
  const double x = minimize_gap(x_lo, std::max(x_lo, x_hi), r.mu);
  r.b11 = std::clamp(std::sqrt(x / k), gm, lambda_hi);
  r.b22 = lambda_hi * lambda_lo / r.b11;
  r.searched = true;
  return r;
}

// ---------------------------------------------------------------------------
// Pairing
// ---------------------------------------------------------------------------

/// Cutoff N = (first m with mu(l_1, l_m) < nu) - 1, or Ns when no m fails;
/// pairs (n, N-1-n) for n < N/2 (0-based), remaining indices stay singletons.
inline PairingPlan compute_pairing(const RealVector& sigma, const NoiseModel& noise, const Constellation& c,
                                   double nu = kDefaultNu) {
  const auto ns = static_cast<std::size_t>(sigma.size());
  PairingPlan plan;
  std::size_t cutoff = ns;
  for (std::size_t m = 0; m < ns; ++m) {
    if (pair_mu(sigma(0), sigma(static_cast<Eigen::Index>(m)), noise, c) < nu) {
      cutoff = m;
      break;
    }
  }
  plan.cutoff = cutoff;
  std::vector<bool> used(ns, false);
  for (std::size_t n = 0; n < cutoff / 2; ++n) {
    plan.pairs.emplace_back(n, cutoff - 1 - n);
    used[n] = used[cutoff - 1 - n] = true;
  }
  for (std::size_t i = 0; i < ns; ++i)
    if (!used[i]) plan.singletons.push_back(i);
  return plan;
}

// ---------------------------------------------------------------------------
// Power allocation
// ---------------------------------------------------------------------------

inline PowerAllocation uniform_power(std::size_t n, double total) {
  return {RealVector::Constant(static_cast<Eigen::Index>(n), total / static_cast<double>(n)),
          PowerPolicy::Uniform};
}

/// Classic water-filling over gains g_i: phi_i = max(0, w - s2 / g_i^2).
inline PowerAllocation waterfilling(const RealVector& gains, const NoiseModel& noise, double total) {
  if (gains.size() == 0 || !(total > 0.0)) throw DomainError("waterfilling: need streams and total > 0");
  if (!(gains.maxCoeff() > 0.0)) throw DomainError("waterfilling: all gains are zero");
  const auto n = gains.size();
  RealVector floor_level(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    floor_level(i) = gains(i) > 0.0 ? noise.sigma2 / (gains(i) * gains(i))
                                    : std::numeric_limits<double>::infinity();
  }
  auto fill = [&](double w) { return (w - floor_level.array()).max(0.0).sum(); };
  double lo = 0.0;
  double hi = total + floor_level.minCoeff();
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (fill(mid) < total ? lo : hi) = mid;
  }
  const double w = 0.5 * (lo + hi);
  PowerAllocation out;
  out.policy = PowerPolicy::WaterFilling;
  out.phi = (w - floor_level.array()).max(0.0).matrix();
  out.phi *= total / out.phi.sum();
  return out;
}

/// MMSE of a unit-energy sqrt(M)-PAM input observed as sqrt(snr) a + N(0, 1),
/// which equals the per-symbol MMSE of the unit-energy square QAM at that SNR.
inline double pam_mmse(double snr, const Constellation& c, const GaussHermite& rule) {
  if (snr <= 0.0) return 1.0;
  const std::size_t p = c.pam.size();
  std::vector<double> a(p);
  for (std::size_t j = 0; j < p; ++j) a[j] = c.pam[j] * std::numbers::sqrt2;
  const double g = std::sqrt(snr);
  std::vector<double> logw(p);
  double acc = 0.0;
  for (std::size_t j = 0; j < p; ++j) {
    acc += rule.expect_standard_normal([&](double n) {
      const double y = g * a[j] + n;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < p; ++l) {
        const double d = y - g * a[l];
        logw[l] = -0.5 * d * d;
        mx = std::max(mx, logw[l]);
      }
      double num = 0.0, den = 0.0;
      for (std::size_t l = 0; l < p; ++l) {
        const double w = std::exp(logw[l] - mx);
        num += w * a[l];
        den += w;
      }
      const double e = a[j] - num / den;
      return e * e;
    });
  }
  return std::clamp(acc / static_cast<double>(p), 0.0, 1.0);
}

/// Tabulated MMSE curve on a log-spaced SNR grid with log-log interpolation.
class MmseCurve {
 public:
  static constexpr double kFloor = 1e-9;
  static constexpr int kNodes = 63;

  /// Tabulates pam_mmse for the constellation (63-node rule) and cross-checks
  /// every 20th point against a 127-node rule.
  explicit MmseCurve(const Constellation& c)
      : MmseCurve([rule = gauss_hermite(kNodes), &c](double snr) { return pam_mmse(snr, c, rule); },
                  [rule = gauss_hermite(2 * kNodes + 1), &c](double snr) { return pam_mmse(snr, c, rule); }) {}

  /// Tabulates an arbitrary decreasing MMSE curve; `reference`, when given,
  /// is a more accurate evaluation used for the quadrature check.
  explicit MmseCurve(const std::function<double(double)>& mmse,
                     const std::function<double(double)>& reference = {}) {
    constexpr double lo = -4.0, hi = 7.0;
    constexpr int per_decade = 60;
    const int n = static_cast<int>((hi - lo) * per_decade) + 1;
    for (int i = 0; i < n; ++i) {
      const double snr = std::pow(10.0, lo + static_cast<double>(i) / per_decade);
      const double m = mmse(snr);
      if (reference && i % 20 == 0 && std::abs(m - reference(snr)) > 1e-4) quadrature_ok_ = false;
      log_snr_.push_back(std::log(snr));
      log_mmse_.push_back(std::log(std::max(m, 1e-300)));
      if (m <= kFloor) break;
    }
    saturation_snr_ = std::exp(log_snr_.back());
  }

  bool quadrature_ok() const noexcept { return quadrature_ok_; }
  double saturation_snr() const noexcept { return saturation_snr_; }

  double mmse(double snr) const {
    if (snr <= 0.0) return 1.0;
    const double ls = std::log(snr);
    if (ls <= log_snr_.front()) {
      // mmse is 1 - snr + O(snr^2) near zero.
      const double m0 = std::exp(log_mmse_.front());
      return 1.0 - (1.0 - m0) * snr / std::exp(log_snr_.front());
    }
    if (ls >= log_snr_.back()) return std::exp(log_mmse_.back());
    const auto it = std::upper_bound(log_snr_.begin(), log_snr_.end(), ls);
    const auto i = static_cast<std::size_t>(it - log_snr_.begin());
    const double t = (ls - log_snr_[i - 1]) / (log_snr_[i] - log_snr_[i - 1]);
    return std::exp(log_mmse_[i - 1] + t * (log_mmse_[i] - log_mmse_[i - 1]));
  }

  /// Smallest SNR with mmse(snr) <= target; saturation SNR below the floor.
  double inverse(double target) const {
    if (target >= 1.0) return 0.0;
    if (target <= std::exp(log_mmse_.back())) return saturation_snr_;
    const double m0 = std::exp(log_mmse_.front());
    if (target >= m0) return std::exp(log_snr_.front()) * (1.0 - target) / (1.0 - m0);
    const double lt = std::log(target);
    // log_mmse_ is non-increasing.
    std::size_t i = 1;
    while (i < log_mmse_.size() && log_mmse_[i] > lt) ++i;
    const double t = (lt - log_mmse_[i - 1]) / (log_mmse_[i] - log_mmse_[i - 1]);
    return std::exp(log_snr_[i - 1] + t * (log_snr_[i] - log_snr_[i - 1]));
  }

 private:
  std::vector<double> log_snr_;
  std::vector<double> log_mmse_;
  double saturation_snr_ = 0.0;
  bool quadrature_ok_ = true;
};

/// Mercury water-filling: mmse(phi_i g_i) = min(1, eta / g_i) with
/// g_i = gain_i^2 / s2 and eta set by bisection so that sum phi = total.
inline PowerAllocation mercury_waterfilling(const RealVector& gains, const NoiseModel& noise,
                                            const MmseCurve& curve, double total) {
  if (gains.size() == 0 || !(total > 0.0)) throw DomainError("mercury_waterfilling: need streams and total > 0");
  if (!(gains.maxCoeff() > 0.0)) throw DomainError("mercury_waterfilling: all gains are zero");
  const auto n = gains.size();
  RealVector snr_gain = gains.array().square() / noise.sigma2;

  auto allocate = [&](double eta) {
    RealVector phi = RealVector::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (snr_gain(i) <= 0.0) continue;
      phi(i) = curve.inverse(std::min(1.0, eta / snr_gain(i))) / snr_gain(i);
    }
    return phi;
  };

  PowerAllocation out;
  out.policy = PowerPolicy::MercuryWF;
  out.quadrature_ok = curve.quadrature_ok();

  double min_gain = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i)
    if (snr_gain(i) > 0.0) min_gain = std::min(min_gain, snr_gain(i));
  const double eta_lo = 0.5 * MmseCurve::kFloor * min_gain;
  const RealVector ceiling = allocate(eta_lo);
  if (ceiling.sum() <= total) {
    // Every active stream is past its MMSE floor; extra power buys nothing, so
    // the remainder is shared evenly.
    out.saturated = true;
    out.phi = ceiling;
    int active = 0;
    for (Eigen::Index i = 0; i < n; ++i) active += snr_gain(i) > 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      if (snr_gain(i) > 0.0) out.phi(i) += (total - ceiling.sum()) / active;
    return out;
  }
  double lo = std::log(eta_lo);
  double hi = std::log(snr_gain.maxCoeff());
  RealVector phi;
  for (int it = 0; it < 300; ++it) {
    const double mid = 0.5 * (lo + hi);
    phi = allocate(std::exp(mid));
    const double s = phi.sum();
    if (std::abs(s - total) <= 1e-10 * total) break;
    (s > total ? lo : hi) = mid;
  }
  out.phi = phi * (total / phi.sum());
  return out;
}

inline PowerAllocation mercury_waterfilling(const RealVector& gains, const NoiseModel& noise,
                                            const Constellation& c, double total) {
  return mercury_waterfilling(gains, noise, MmseCurve(c), total);
}

inline PowerAllocation allocate_power(PowerPolicy policy, const RealVector& gains, const NoiseModel& noise,
                                      const Constellation& c, double total) {
  switch (policy) {
    case PowerPolicy::Uniform: return uniform_power(static_cast<std::size_t>(gains.size()), total);
    case PowerPolicy::WaterFilling: return waterfilling(gains, noise, total);
    case PowerPolicy::MercuryWF: return mercury_waterfilling(gains, noise, c, total);
  }
  throw DomainError("unknown power policy");
}

// ---------------------------------------------------------------------------
// Designers
// ---------------------------------------------------------------------------

struct DesignOptions {
  PowerPolicy power = PowerPolicy::Uniform;
  double nu = kDefaultNu;
};

/// Precoder F = P Phi^{1/2}, post-processor Q^H and the equivalent channel.
struct TransceiverDesign {
  Decomposition decomposition;
  PowerAllocation power;
  Scheme scheme = Scheme::Svd;
  PairingPlan plan;
  std::vector<double> mu_per_pair;
  EccnReport eccn;
  std::size_t clamped_singular_values = 0;

  /// B Phi^{1/2}, the channel seen by the demodulator.
  BidiagonalReal effective() const { return decomposition.b.scale_columns(power.phi.cwiseSqrt()); }

  ComplexMatrix precoder() const {
    return decomposition.p * power.phi.cwiseSqrt().cast<cplx>().asDiagonal();
  }

  ComplexMatrix postprocessor() const {
    return decomposition.q.leftCols(static_cast<Eigen::Index>(decomposition.b.size())).adjoint();
  }
};

namespace detail {

inline TransceiverDesign finish_design(Decomposition d, PairingPlan plan, std::vector<double> mu,
                                       const NoiseModel& noise, const Constellation& c,
                                       const DesignOptions& opt) {
  TransceiverDesign t;
  t.scheme = d.scheme;
  const double total = static_cast<double>(d.b.size());
  t.power = allocate_power(opt.power, d.b.diag, noise, c, total);
  t.eccn = eccn(d.b, t.power.phi, noise.sigma2);
  t.decomposition = std::move(d);
  t.plan = std::move(plan);
  t.mu_per_pair = std::move(mu);
  return t;
}

inline PairingPlan all_singletons(std::size_t ns) {
  PairingPlan p;
  for (std::size_t i = 0; i < ns; ++i) p.singletons.push_back(i);
  return p;
}

}  // namespace detail

inline TransceiverDesign design_svd_mmse(const ComplexMatrix& h, const NoiseModel& noise, const Constellation& c,
                                         const DesignOptions& opt = {}) {
  const SvdFactors f = svd(h);
  Decomposition d{f.u, BidiagonalReal::diagonal(f.sigma), f.v, Scheme::Svd};
  return detail::finish_design(std::move(d), detail::all_singletons(static_cast<std::size_t>(f.sigma.size())), {},
                               noise, c, opt);
}

inline TransceiverDesign design_cbd(const ComplexMatrix& h, const NoiseModel& noise, const Constellation& c,
                                    const DesignOptions& opt = {}) {
  Decomposition d = householder_bidiagonalize(h);
  const std::size_t ns = d.b.size();
  return detail::finish_design(std::move(d), detail::all_singletons(ns), {}, noise, c, opt);
}

/// SVD, SNR-adaptive pairing, permutation and one equalizing rotation per pair,
/// giving a block-diagonal B of 2x2 bidiagonal and 1x1 blocks.
inline TransceiverDesign design_gp_cbd(const ComplexMatrix& h, const NoiseModel& noise, const Constellation& c,
                                       const DesignOptions& opt = {}) {
  const SvdFactors f = svd(h);
  const auto ns = static_cast<std::size_t>(f.sigma.size());
  const ClampedValues clamped = clamp_to_floor(f.sigma);
  PairingPlan plan = compute_pairing(clamped.values, noise, c, opt.nu);
  PermutedSvd ps = assemble_permuted(f, plan);

  Decomposition d;
  d.scheme = Scheme::GpCbd;
  d.q = std::move(ps.u_tilde);
  d.p = std::move(ps.v_tilde);
  d.b = BidiagonalReal(ns);
  d.b.diag = ps.lambda_tilde;

  const double floor = kGainFloor * f.sigma(0);
  std::vector<double> mu;
  for (std::size_t t = 0; t < plan.pairs.size(); ++t) {
    const auto k = static_cast<Eigen::Index>(2 * t);
    const double hi = ps.lambda_tilde(k);
    const double lo = ps.lambda_tilde(k + 1);
    const PairDiagonals th = pair_diagonals(std::max(hi, floor), std::max(lo, floor), noise, c, opt.nu);
    mu.push_back(th.mu);
    if (!(lo > floor)) continue;  // rank-deficient partner: leave the pair diagonal
    const GivensPair g = givens_pair(hi, lo, th.b11);
    d.b.diag(k) = g.block.diag(0);
    d.b.diag(k + 1) = g.block.diag(1);
    d.b.superdiag(k) = g.block.superdiag(0);
    d.q.middleCols(k, 2) = (d.q.middleCols(k, 2) * g.left.transpose().cast<cplx>()).eval();
    d.p.middleCols(k, 2) = (d.p.middleCols(k, 2) * g.right.cast<cplx>()).eval();
  }
  for (std::size_t k = 0; k + 1 < ns; ++k) {
    const bool inside_pair = k % 2 == 0 && k / 2 < plan.pairs.size();
    if (!inside_pair) d.b.block_boundaries.push_back(k);
  }

  TransceiverDesign t = detail::finish_design(std::move(d), std::move(plan), std::move(mu), noise, c, opt);
  t.clamped_singular_values = clamped.clamped;
  return t;
}

/// Dispatch for the schemes that have a trellis receiver (svd, cbd, gpcbd).
inline TransceiverDesign design(Scheme scheme, const ComplexMatrix& h, const NoiseModel& noise,
                                const Constellation& c, const DesignOptions& opt = {}) {
  switch (scheme) {
    case Scheme::Svd: return design_svd_mmse(h, noise, c, opt);
    case Scheme::Cbd: return design_cbd(h, noise, c, opt);
    case Scheme::GpCbd: return design_gp_cbd(h, noise, c, opt);
    case Scheme::Gmd: break;
  }
  throw ConfigError("scheme 'gmd' has no receiver chain; it is available for ECCN and decomposition only");
}

}  // namespace mimo_lab
