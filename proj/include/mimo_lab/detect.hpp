#pragma once

// Soft demodulation over real bidiagonal equivalent channels: exact BCJR and
// max-log forward-backward passes on the sqrt(M)-state trellis (one pass for
// the in-phase and one for the quadrature component), a per-layer AWGN
// demapper and a brute-force oracle over the full vector alphabet.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <optional>
#include <string_view>
#include <vector>

#include "mimo_lab/constellation.hpp"
#include "mimo_lab/error.hpp"
#include "mimo_lab/linalg.hpp"

namespace mimo_lab {

/// LLRs (natural log, log p(1)/p(0)) are clamped to this magnitude.
inline constexpr double kLlrClamp = 60.0;

/// Bit k of symbol i lives at index i * Q_m + k; in-phase bits come first.
using LlrVector = std::vector<double>;

enum class Demod { Bcjr, MaxLog };

inline std::string_view demod_name(Demod d) noexcept { return d == Demod::Bcjr ? "bcjr" : "maxlog"; }

inline std::optional<Demod> parse_demod(std::string_view s) noexcept {
  if (s == "bcjr") return Demod::Bcjr;
  if (s == "maxlog") return Demod::MaxLog;
  return std::nullopt;
}

/// Work counter for the trellis passes.
struct DemodStats {
  std::size_t branch_metrics = 0;  ///< distinct branch metric evaluations
  std::size_t trellis_passes = 0;  ///< one per (block, real dimension)
};

namespace detail {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Jacobian logarithm log(e^a + e^b).
inline double max_star(double a, double b) noexcept {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

template <bool MaxLog>
inline double combine(double a, double b) noexcept {
  if constexpr (MaxLog) {
    return std::max(a, b);
  } else {
    return max_star(a, b);
  }
}

inline double clamp_llr(double l) noexcept { return std::clamp(l, -kLlrClamp, kLlrClamp); }

/// Writes the bit LLRs of one real dimension of one layer from the per-level
/// log metric (unnormalized log posterior of each PAM level).
template <bool MaxLog>
inline void level_metric_to_llr(const std::vector<double>& metric, const Constellation& c, double* out) {
  for (int b = 0; b < c.bits_per_dim; ++b) {
    double l1 = kNegInf, l0 = kNegInf;
    for (int j = 0; j < c.pam_size; ++j) {
      const double m = metric[static_cast<std::size_t>(j)];
      if (level_bit(c, j, b)) {
        l1 = combine<MaxLog>(l1, m);
      } else {
        l0 = combine<MaxLog>(l0, m);
      }
    }
    out[b] = clamp_llr(l1 - l0);
  }
}

/// Forward-backward pass over layers [begin, end) of one real dimension.
/// Layer i observes r_i = B_ii s_i + B_{i,i+1} s_{i+1} + n_i with noise
/// variance sigma2 / 2, so each factor is -(r_i - ...)^2 / sigma2.
template <bool MaxLog>
inline void trellis_pass(const BidiagonalReal& b, const std::vector<double>& r, std::size_t begin, std::size_t end,
                         double sigma2, const Constellation& c, LlrVector& llr, int dim_offset,
                         DemodStats* stats) {
  const auto p = static_cast<std::size_t>(c.pam_size);
  const std::size_t len = end - begin;
  // branch[t][s * p + s'] for t < len - 1; the final layer only depends on s.
  std::vector<std::vector<double>> branch(len);
  for (std::size_t t = 0; t < len; ++t) {
    const std::size_t i = begin + t;
    const double d = b.diag(static_cast<Eigen::Index>(i));
    if (t + 1 < len) {
      const double e = b.superdiag(static_cast<Eigen::Index>(i));
      branch[t].resize(p * p);
      for (std::size_t s = 0; s < p; ++s)
        for (std::size_t s2 = 0; s2 < p; ++s2) {
          const double res = r[i] - d * c.pam[s] - e * c.pam[s2];
          branch[t][s * p + s2] = -res * res / sigma2;
        }
    } else {
      branch[t].resize(p);
      for (std::size_t s = 0; s < p; ++s) {
        const double res = r[i] - d * c.pam[s];
        branch[t][s] = -res * res / sigma2;
      }
    }
  }
  if (stats) {
    stats->branch_metrics += (len - 1) * p * p + p;
    stats->trellis_passes += 1;
  }

  std::vector<std::vector<double>> alpha(len, std::vector<double>(p, 0.0));
  for (std::size_t t = 0; t + 1 < len; ++t) {
    for (std::size_t s2 = 0; s2 < p; ++s2) {
      double acc = kNegInf;
      for (std::size_t s = 0; s < p; ++s) acc = combine<MaxLog>(acc, alpha[t][s] + branch[t][s * p + s2]);
      alpha[t + 1][s2] = acc;
    }
    const double mx = *std::max_element(alpha[t + 1].begin(), alpha[t + 1].end());
    for (double& v : alpha[t + 1]) v -= mx;
  }
  std::vector<std::vector<double>> beta(len, std::vector<double>(p));
  beta[len - 1] = branch[len - 1];
  for (std::size_t t = len - 1; t-- > 0;) {
    for (std::size_t s = 0; s < p; ++s) {
      double acc = kNegInf;
      for (std::size_t s2 = 0; s2 < p; ++s2) acc = combine<MaxLog>(acc, branch[t][s * p + s2] + beta[t + 1][s2]);
      beta[t][s] = acc;
    }
    const double mx = *std::max_element(beta[t].begin(), beta[t].end());
    for (double& v : beta[t]) v -= mx;
  }

  const auto q = static_cast<std::size_t>(c.bits_per_symbol);
  std::vector<double> metric(p);
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t s = 0; s < p; ++s) metric[s] = alpha[t][s] + beta[t][s];
    level_metric_to_llr<MaxLog>(metric, c, llr.data() + (begin + t) * q + static_cast<std::size_t>(dim_offset));
  }
}

template <bool MaxLog>
inline LlrVector trellis_llr(const BidiagonalReal& b, const ComplexVector& y, double sigma2, const Constellation& c,
                             DemodStats* stats) {
  const std::size_t n = b.size();
  if (static_cast<std::size_t>(y.size()) != n) throw DomainError("demodulator: y length must equal N_s");
  if (!(sigma2 > 0.0)) throw DomainError("demodulator: sigma2 must be positive");
  LlrVector llr(n * static_cast<std::size_t>(c.bits_per_symbol), 0.0);
  std::vector<double> ri(n), rq(n);
  for (std::size_t i = 0; i < n; ++i) {
    ri[i] = y(static_cast<Eigen::Index>(i)).real();
    rq[i] = y(static_cast<Eigen::Index>(i)).imag();
  }
  for (const auto& [begin, end] : b.blocks()) {
    trellis_pass<MaxLog>(b, ri, begin, end, sigma2, c, llr, 0, stats);
    trellis_pass<MaxLog>(b, rq, begin, end, sigma2, c, llr, c.bits_per_dim, stats);
  }
  return llr;
}

}  // namespace detail

/// Exact a-posteriori bit LLRs under uniform priors.
inline LlrVector bcjr_bidiagonal(const BidiagonalReal& b, const ComplexVector& y, double sigma2,
                                 const Constellation& c, DemodStats* stats = nullptr) {
  return detail::trellis_llr<false>(b, y, sigma2, c, stats);
}

/// L_k = (min_{X0} |y - Bs|^2 - min_{X1} |y - Bs|^2) / sigma2 via max-sum passes.
inline LlrVector maxlog_llr(const BidiagonalReal& b, const ComplexVector& y, double sigma2, const Constellation& c,
                            DemodStats* stats = nullptr) {
  return detail::trellis_llr<true>(b, y, sigma2, c, stats);
}

/// Exact per-layer demapping of y_i = gain * s + n, n ~ CN(0, sigma2).
inline LlrVector awgn_demapper(double gain, std::complex<double> y, double sigma2, const Constellation& c) {
  if (!(sigma2 > 0.0)) throw DomainError("awgn_demapper: sigma2 must be positive");
  LlrVector out(static_cast<std::size_t>(c.bits_per_symbol));
  std::vector<double> metric(c.pam.size());
  int offset = 0;
  for (double r : {y.real(), y.imag()}) {
    for (std::size_t j = 0; j < c.pam.size(); ++j) {
      const double res = r - gain * c.pam[j];
      metric[j] = -res * res / sigma2;
    }
    detail::level_metric_to_llr<false>(metric, c, out.data() + offset);
    offset += c.bits_per_dim;
  }
  return out;
}

namespace detail {

template <bool MaxLog>
inline LlrVector bruteforce(const ComplexMatrix& b_full, const ComplexVector& y, double sigma2, const Constellation& c) {
  const auto ns = static_cast<std::size_t>(b_full.cols());
  if (static_cast<Eigen::Index>(y.size()) != b_full.rows()) throw DomainError("bruteforce: y length must equal rows");
  const int q = c.bits_per_symbol;
  if (static_cast<std::size_t>(q) * ns > 20) throw DomainError("bruteforce: M^N_s exceeds 2^20");
  const std::size_t total_bits = static_cast<std::size_t>(q) * ns;
  const std::size_t count = std::size_t{1} << total_bits;
  std::vector<double> l1(total_bits, kNegInf), l0(total_bits, kNegInf);
  std::vector<std::uint8_t> bits(total_bits);
  ComplexVector s(static_cast<Eigen::Index>(ns));
  for (std::size_t word = 0; word < count; ++word) {
    for (std::size_t k = 0; k < total_bits; ++k) bits[k] = static_cast<std::uint8_t>((word >> k) & 1U);
    for (std::size_t i = 0; i < ns; ++i) {
      s(static_cast<Eigen::Index>(i)) =
          map_symbol(std::span<const std::uint8_t>(bits).subspan(i * static_cast<std::size_t>(q), static_cast<std::size_t>(q)), c);
    }
    const double metric = -(y - b_full * s).squaredNorm() / sigma2;
    for (std::size_t k = 0; k < total_bits; ++k) {
      double& slot = bits[k] ? l1[k] : l0[k];
      slot = combine<MaxLog>(slot, metric);
    }
  }
  LlrVector out(total_bits);
  for (std::size_t k = 0; k < total_bits; ++k) out[k] = clamp_llr(l1[k] - l0[k]);
  return out;
}

}  // namespace detail

/// Exact LLRs by enumeration of every transmit vector; test oracle only.
inline LlrVector bruteforce_llr(const ComplexMatrix& b_full, const ComplexVector& y, double sigma2,
                                const Constellation& c) {
  return detail::bruteforce<false>(b_full, y, sigma2, c);
}

/// Max-log LLRs by enumeration of every transmit vector; test oracle only.
inline LlrVector bruteforce_maxlog(const ComplexMatrix& b_full, const ComplexVector& y, double sigma2,
                                   const Constellation& c) {
  return detail::bruteforce<true>(b_full, y, sigma2, c);
}

/// Dispatch used by the rate and BER harnesses. Fully diagonal channels go
/// through the per-layer demapper.
inline LlrVector demodulate(const BidiagonalReal& b, const ComplexVector& y, double sigma2, const Constellation& c,
                            Demod kind, DemodStats* stats = nullptr) {
  if (kind == Demod::Bcjr && b.block_boundaries.size() + 1 == b.size()) {
    LlrVector out;
    out.reserve(b.size() * static_cast<std::size_t>(c.bits_per_symbol));
    for (std::size_t i = 0; i < b.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      const LlrVector part = awgn_demapper(b.diag(k), y(k), sigma2, c);
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }
  return kind == Demod::Bcjr ? bcjr_bidiagonal(b, y, sigma2, c, stats) : maxlog_llr(b, y, sigma2, c, stats);
}

}  // namespace mimo_lab
