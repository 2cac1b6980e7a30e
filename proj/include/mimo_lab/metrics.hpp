#pragma once

// Achievable-rate estimation from demodulator LLRs, the closed-form lower
// bound, an exact BICM mutual-information oracle for small systems and the
// ECCN/rate sweep drivers with their CSV formats.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "mimo_lab/channel.hpp"
#include "mimo_lab/constellation.hpp"
#include "mimo_lab/detect.hpp"
#include "mimo_lab/eccn.hpp"
#include "mimo_lab/error.hpp"
#include "mimo_lab/linalg.hpp"
#include "mimo_lab/parallel.hpp"
#include "mimo_lab/quadrature.hpp"
#include "mimo_lab/rng.hpp"
#include "mimo_lab/schemes.hpp"

namespace mimo_lab {

/// Salt separating the data/noise streams from the channel streams.
inline constexpr std::uint64_t kDataStreamSalt = 0xD1B54A32D192ED03ULL;

/// log(1 + e^x) without overflow.
inline double softplus(double x) noexcept { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

/// Per-bit rate contribution 1 - log2(1 + e^{(1 - 2c) L}).
inline double bit_rate_contribution(int bit, double llr) noexcept {
  const double l = std::clamp(llr, -kLlrClamp, kLlrClamp);
  return 1.0 - softplus((1 - 2 * bit) * l) / std::numbers::ln2;
}

/// R_L = sum_i Q_m (1 - log2(1 + exp(-d2 |b_i|^2 / s2))) with |b_i|^2 the
/// squared column norms of the equivalent channel.
inline double rate_lower_bound(const BidiagonalReal& b, const Constellation& c, const NoiseModel& noise) {
  double acc = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    acc += c.bits_per_symbol * (1.0 - softplus(-c.d2_min * b.column_norm2(i) / noise.sigma2) / std::numbers::ln2);
  }
  return acc;
}

/// Same bound evaluated on the columns of an unprecoded channel matrix.
inline double rate_lower_bound(const ComplexMatrix& h, const Constellation& c, const NoiseModel& noise) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < h.cols(); ++i) {
    acc += c.bits_per_symbol * (1.0 - softplus(-c.d2_min * h.col(i).squaredNorm() / noise.sigma2) / std::numbers::ln2);
  }
  return acc;
}

struct RateEstimate {
  Scheme scheme = Scheme::Svd;
  double snr_db = 0.0;
  double bits_per_channel_use = 0.0;
  double std_error = 0.0;
  std::size_t trials = 0;
  double eccn_mean = 0.0;
  double lower_bound_mean = 0.0;          ///< mean of rate_lower_bound over the same channels
  std::size_t negative_contributions = 0; ///< bits whose rate contribution was below zero
};

struct RateOptions {
  std::size_t trials = 100;
  std::size_t symbols_per_trial = 16;  ///< channel uses per channel draw
  Demod demod = Demod::Bcjr;
  DesignOptions design;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

/// Equivalent-channel transmission y = B s + z, z ~ CN(0, sigma2 I).
inline ComplexVector transmit_bidiagonal(const BidiagonalReal& b, const ComplexVector& s, double sigma2,
                                         CounterRng* rng) {
  const auto n = static_cast<Eigen::Index>(b.size());
  ComplexVector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i) = b.diag(i) * s(i);
    if (i + 1 < n) y(i) += b.superdiag(i) * s(i + 1);
    if (rng) y(i) += rng->complex_normal(sigma2);
  }
  return y;
}

/// Ergodic BICM rate: trial t draws channel stream t, designs the
/// transceiver, and averages the bit contributions over symbols_per_trial
/// channel uses. Data and noise use stream t of the salted seed, so schemes
/// evaluated with one seed see identical bits, noise and channels.
inline RateEstimate rate_monte_carlo(const ChannelSampler& sampler, Scheme scheme, const Constellation& c,
                                     const NoiseModel& noise, const RateOptions& opt) {
  if (opt.trials < 1) throw DomainError("rate_monte_carlo: trials must be >= 1");
  if (opt.symbols_per_trial < 1) throw DomainError("rate_monte_carlo: symbols_per_trial must be >= 1");
  struct Trial {
    double rate = 0.0;
    double eccn = 0.0;
    double bound = 0.0;
    std::size_t negative = 0;
  };
  std::vector<Trial> results(opt.trials);
  parallel_for(opt.trials, opt.threads, [&](std::size_t t) {
    const ChannelRealization ch = sampler.draw(opt.seed, t);
    const TransceiverDesign d = design(scheme, ch.h, noise, c, opt.design);
    const BidiagonalReal b = d.effective();
    const std::size_t ns = b.size();
    const auto q = static_cast<std::size_t>(c.bits_per_symbol);
    CounterRng rng(opt.seed ^ kDataStreamSalt, t);
    std::vector<std::uint8_t> bits(ns * q);
    ComplexVector s(static_cast<Eigen::Index>(ns));
    KahanSum acc;
    Trial r;
    for (std::size_t u = 0; u < opt.symbols_per_trial; ++u) {
      for (auto& bit : bits) bit = static_cast<std::uint8_t>(rng.bit());
      for (std::size_t i = 0; i < ns; ++i)
        s(static_cast<Eigen::Index>(i)) = map_symbol(std::span<const std::uint8_t>(bits).subspan(i * q, q), c);
      const ComplexVector y = transmit_bidiagonal(b, s, noise.sigma2, &rng);
      const LlrVector llr = demodulate(b, y, noise.sigma2, c, opt.demod);
      for (std::size_t k = 0; k < llr.size(); ++k) {
        const double v = bit_rate_contribution(bits[k], llr[k]);
        if (v < 0.0) ++r.negative;
        acc.add(v);
      }
    }
    r.rate = acc.value() / static_cast<double>(opt.symbols_per_trial);
    r.eccn = d.eccn.eccn;
    r.bound = rate_lower_bound(b, c, noise);
    results[t] = r;
  });

  KahanSum sum, sum_eccn, sum_bound;
  RateEstimate est;
  for (const Trial& r : results) {
    sum.add(r.rate);
    sum_eccn.add(r.eccn);
    sum_bound.add(r.bound);
    est.negative_contributions += r.negative;
  }
  const auto n = static_cast<double>(opt.trials);
  est.scheme = scheme;
  est.snr_db = noise.snr_db();
  est.trials = opt.trials;
  est.bits_per_channel_use = sum.value() / n;
  est.eccn_mean = sum_eccn.value() / n;
  est.lower_bound_mean = sum_bound.value() / n;
  if (opt.trials > 1) {
    KahanSum dev;
    for (const Trial& r : results) dev.add((r.rate - est.bits_per_channel_use) * (r.rate - est.bits_per_channel_use));
    est.std_error = std::sqrt(dev.value() / (n - 1.0)) / std::sqrt(n);
  }
  return est;
}

/// Sum over bits of I(c_k; y) for y = H s + z with exact LLRs. A single-entry
/// channel uses Gauss-Hermite quadrature over the noise per real dimension;
/// larger systems (M^N_s <= 2^12) average over mc_samples noise draws.
inline double bicm_mi_exact(const ComplexMatrix& h, const Constellation& c, const NoiseModel& noise,
                            int quad_nodes = 63, std::size_t mc_samples = 20000, std::uint64_t seed = 1) {
  require_finite(h, "bicm_mi_exact");
  if (h.rows() == 1 && h.cols() == 1) {
    const double g = std::abs(h(0, 0));
    const GaussHermite rule = gauss_hermite(quad_nodes);
    const double sd = std::sqrt(noise.sigma2 / 2.0);
    std::vector<double> metric(c.pam.size());
    double per_dim = 0.0;
    for (int j = 0; j < c.pam_size; ++j) {
      per_dim += rule.expect_standard_normal([&](double n) {
        const double r = g * c.pam[static_cast<std::size_t>(j)] + sd * n;
        for (std::size_t l = 0; l < c.pam.size(); ++l) {
          const double res = r - g * c.pam[l];
          metric[l] = -res * res / noise.sigma2;
        }
        std::vector<double> llr(static_cast<std::size_t>(c.bits_per_dim));
        double sum = 0.0;
        for (int b = 0; b < c.bits_per_dim; ++b) {
          double l1 = detail::kNegInf, l0 = detail::kNegInf;
          for (int l = 0; l < c.pam_size; ++l) {
            double& slot = level_bit(c, l, b) ? l1 : l0;
            slot = detail::max_star(slot, metric[static_cast<std::size_t>(l)]);
          }
          // Unclamped LLR for the oracle.
          sum += 1.0 - softplus((1 - 2 * level_bit(c, j, b)) * (l1 - l0)) / std::numbers::ln2;
        }
        return sum;
      });
    }
    return 2.0 * per_dim / c.pam_size;
  }
  const auto ns = static_cast<std::size_t>(h.cols());
  if (static_cast<std::size_t>(c.bits_per_symbol) * ns > 12) throw DomainError("bicm_mi_exact: M^N_s exceeds 2^12");
  CounterRng rng(seed, 0);
  const auto q = static_cast<std::size_t>(c.bits_per_symbol);
  std::vector<std::uint8_t> bits(ns * q);
  ComplexVector s(static_cast<Eigen::Index>(ns));
  KahanSum acc;
  for (std::size_t u = 0; u < mc_samples; ++u) {
    for (auto& bit : bits) bit = static_cast<std::uint8_t>(rng.bit());
    for (std::size_t i = 0; i < ns; ++i)
      s(static_cast<Eigen::Index>(i)) = map_symbol(std::span<const std::uint8_t>(bits).subspan(i * q, q), c);
    ComplexVector y = h * s;
    for (Eigen::Index r = 0; r < y.size(); ++r) y(r) += rng.complex_normal(noise.sigma2);
    const LlrVector llr = bruteforce_llr(h, y, noise.sigma2, c);
    for (std::size_t k = 0; k < llr.size(); ++k) acc.add(bit_rate_contribution(bits[k], llr[k]));
  }
  return acc.value() / static_cast<double>(mc_samples);
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

struct EccnRow {
  Scheme scheme = Scheme::Svd;
  double snr_db = 0.0;
  double eccn_mean = 0.0;
  double eccn_p50 = 0.0;
  double eccn_p95 = 0.0;
  std::size_t realizations = 0;
};

struct SweepSpec {
  ChannelModel channel;
  std::vector<Scheme> schemes;
  std::vector<double> snr_grid_db;
  int order = 16;
  RateOptions options;
};

inline void check_unique_schemes(const std::vector<Scheme>& schemes) {
  std::set<Scheme> seen;
  for (Scheme s : schemes) {
    if (!seen.insert(s).second) throw ConfigError("duplicate scheme '" + std::string(scheme_name(s)) + "'");
  }
}

/// Linear-interpolated sample quantile, p in [0, 1].
inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) throw DomainError("quantile: empty sample");
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// ECCN of one scheme on one channel at one SNR (power does not enter).
inline double scheme_eccn(Scheme scheme, const ComplexMatrix& h, const NoiseModel& noise, const Constellation& c,
                          const DesignOptions& opt) {
  if (scheme == Scheme::Gmd) return eccn(gmd(h).diagonal()).eccn;
  DesignOptions uniform = opt;
  uniform.power = PowerPolicy::Uniform;
  return design(scheme, h, noise, c, uniform).eccn.eccn;
}

/// One row per (scheme, snr); realization t uses channel stream t.
inline std::vector<EccnRow> eccn_sweep(const SweepSpec& spec) {
  check_unique_schemes(spec.schemes);
  const ChannelSampler sampler(spec.channel);
  const Constellation c = build_constellation(spec.order);
  std::vector<EccnRow> rows;
  for (Scheme scheme : spec.schemes) {
    for (double snr : spec.snr_grid_db) {
      const NoiseModel noise = NoiseModel::from_snr_db(snr);
      std::vector<double> values(spec.options.trials);
      parallel_for(values.size(), spec.options.threads, [&](std::size_t t) {
        values[t] = scheme_eccn(scheme, sampler.draw(spec.options.seed, t).h, noise, c, spec.options.design);
      });
      KahanSum sum;
      for (double v : values) sum.add(v);
      EccnRow row{scheme, snr, sum.value() / static_cast<double>(values.size()), 0.0, 0.0, values.size()};
      row.eccn_p50 = quantile(values, 0.5);
      row.eccn_p95 = quantile(values, 0.95);
      rows.push_back(row);
    }
  }
  return rows;
}

inline std::vector<RateEstimate> rate_sweep(const SweepSpec& spec) {
  check_unique_schemes(spec.schemes);
  for (Scheme s : spec.schemes) {
    if (s == Scheme::Gmd) throw ConfigError("scheme 'gmd' has no receiver chain and cannot be used for rate sweeps");
  }
  const ChannelSampler sampler(spec.channel);
  const Constellation c = build_constellation(spec.order);
  std::vector<RateEstimate> rows;
  for (Scheme scheme : spec.schemes) {
    for (double snr : spec.snr_grid_db) {
      rows.push_back(rate_monte_carlo(sampler, scheme, c, NoiseModel::from_snr_db(snr), spec.options));
    }
  }
  return rows;
}

namespace detail {

inline std::string fmt(double v, const char* spec = "%.10g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace detail

inline std::string rate_csv(const std::vector<RateEstimate>& rows) {
  std::string out = "scheme,snr_db,rate,std_err,trials,eccn_mean\n";
  for (const auto& r : rows) {
    out += std::string(scheme_name(r.scheme)) + ',' + detail::fmt(r.snr_db, "%g") + ',' +
           detail::fmt(r.bits_per_channel_use) + ',' + detail::fmt(r.std_error) + ',' + std::to_string(r.trials) +
           ',' + detail::fmt(r.eccn_mean) + '\n';
  }
  return out;
}

inline std::string eccn_csv(const std::vector<EccnRow>& rows) {
  std::string out = "scheme,snr_db,eccn_mean,eccn_p50,eccn_p95\n";
  for (const auto& r : rows) {
    out += std::string(scheme_name(r.scheme)) + ',' + detail::fmt(r.snr_db, "%g") + ',' + detail::fmt(r.eccn_mean) +
           ',' + detail::fmt(r.eccn_p50) + ',' + detail::fmt(r.eccn_p95) + '\n';
  }
  return out;
}

}  // namespace mimo_lab
