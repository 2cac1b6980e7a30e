#pragma once

// Coded BER harness: K=7 convolutional code (rate 1/2, optional puncturing to
// 3/4), soft-input Viterbi decoder, seeded random interleaver and the frame
// loop through precoder, channel, post-processor and soft demodulator.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "mimo_lab/channel.hpp"
#include "mimo_lab/constellation.hpp"
#include "mimo_lab/detect.hpp"
#include "mimo_lab/error.hpp"
#include "mimo_lab/linalg.hpp"
#include "mimo_lab/metrics.hpp"
#include "mimo_lab/parallel.hpp"
#include "mimo_lab/rng.hpp"
#include "mimo_lab/schemes.hpp"

namespace mimo_lab {

using BitVector = std::vector<std::uint8_t>;

namespace detail {

/// Degree of a GF(2) polynomial stored as bits (-1 for zero).
inline int gf2_degree(std::uint32_t p) noexcept { return p == 0 ? -1 : 31 - std::countl_zero(p); }

inline std::uint32_t gf2_mod(std::uint32_t a, std::uint32_t b) noexcept {
  const int db = gf2_degree(b);
  for (int da = gf2_degree(a); da >= db; da = gf2_degree(a)) a ^= b << (da - db);
  return a;
}

inline std::uint32_t gf2_gcd(std::uint32_t a, std::uint32_t b) noexcept {
  while (b != 0) {
    const std::uint32_t r = gf2_mod(a, b);
    a = b;
    b = r;
  }
  return a;
}

}  // namespace detail

/// Generators are written in octal as in the usual tables; the most
/// significant tap multiplies the current input bit.
struct CodeSpec {
  int constraint_length = 7;
  std::uint32_t g0 = 0133;
  std::uint32_t g1 = 0171;
  bool punctured = false;  ///< rate 3/4 with keep pattern 1,1,1,0,0,1 per 6 coded bits

  int memory() const noexcept { return constraint_length - 1; }
  int states() const noexcept { return 1 << memory(); }

  void validate() const {
    if (constraint_length < 2 || constraint_length > 16) throw DomainError("code: constraint length must be in [2, 16]");
    const std::uint32_t limit = 1U << constraint_length;
    if (g0 == 0 || g1 == 0 || g0 >= limit || g1 >= limit) throw DomainError("code: generator out of range");
    if (detail::gf2_gcd(g0, g1) != 1) throw DomainError("code: generators must be coprime");
  }

  /// Coded length for `info` message bits, after puncturing if enabled.
  std::size_t coded_length(std::size_t info) const {
    const std::size_t full = 2 * (info + static_cast<std::size_t>(memory()));
    return punctured ? full / 6 * 4 : full;
  }
};

inline constexpr int kPuncturePattern[6] = {1, 1, 1, 0, 0, 1};

/// Zero-terminated encoding; output c0, c1 per input bit, length 2(L + K - 1).
inline BitVector conv_encode(const BitVector& bits, const CodeSpec& code = {}) {
  code.validate();
  if (bits.empty()) throw DomainError("conv_encode: empty input");
  const int k = code.constraint_length;
  BitVector out;
  out.reserve(2 * (bits.size() + static_cast<std::size_t>(k - 1)));
  std::uint32_t state = 0;
  auto step = [&](std::uint32_t bit) {
    const std::uint32_t reg = (bit << (k - 1)) | state;
    out.push_back(static_cast<std::uint8_t>(std::popcount(reg & code.g0) & 1));
    out.push_back(static_cast<std::uint8_t>(std::popcount(reg & code.g1) & 1));
    state = reg >> 1;
  };
  for (std::uint8_t b : bits) step(b & 1U);
  for (int t = 0; t < k - 1; ++t) step(0);
  return out;
}

inline void check_puncturable(std::size_t n) {
  if (n % 6 != 0) throw DomainError("puncture: coded length must be a multiple of 6 (message length + K - 1 divisible by 3)");
}

template <class T>
std::vector<T> puncture(const std::vector<T>& coded) {
  check_puncturable(coded.size());
  std::vector<T> out;
  out.reserve(coded.size() / 6 * 4);
  for (std::size_t i = 0; i < coded.size(); ++i)
    if (kPuncturePattern[i % 6]) out.push_back(coded[i]);
  return out;
}

/// Re-inserts erased positions as zero LLRs.
inline std::vector<double> depuncture(const std::vector<double>& llr, std::size_t full_length) {
  check_puncturable(full_length);
  if (llr.size() != full_length / 6 * 4) throw DomainError("depuncture: length mismatch");
  std::vector<double> out(full_length, 0.0);
  std::size_t j = 0;
  for (std::size_t i = 0; i < full_length; ++i)
    if (kPuncturePattern[i % 6]) out[i] = llr[j++];
  return out;
}

/// Maximum-likelihood path for LLRs (log p(1)/p(0)) of the rate-1/2 coded
/// stream: branch metric sum_k c_k L_k. Ties keep the predecessor whose
/// shifted-out bit is 0, so all-zero LLRs decode to the all-zero message.
/// Returns the message bits without the tail.
inline BitVector viterbi_soft_decode(const std::vector<double>& llr, const CodeSpec& code = {}) {
  code.validate();
  const int k = code.constraint_length;
  const auto m = static_cast<std::size_t>(code.memory());
  if (llr.size() % 2 != 0 || llr.size() / 2 <= m) throw DomainError("viterbi: LLR length must be 2(L + K - 1) with L >= 1");
  const std::size_t steps = llr.size() / 2;
  const auto ns = static_cast<std::uint32_t>(code.states());
  const std::uint32_t mask = ns - 1;
  constexpr double kNeg = -std::numeric_limits<double>::infinity();

  // Output bits for each (state, input) pair.
  std::vector<std::uint8_t> out0(2 * ns), out1(2 * ns);
  for (std::uint32_t s = 0; s < ns; ++s)
    for (std::uint32_t b = 0; b < 2; ++b) {
      const std::uint32_t reg = (b << (k - 1)) | s;
      out0[2 * s + b] = static_cast<std::uint8_t>(std::popcount(reg & code.g0) & 1);
      out1[2 * s + b] = static_cast<std::uint8_t>(std::popcount(reg & code.g1) & 1);
    }

  std::vector<double> metric(ns, kNeg), next(ns);
  metric[0] = 0.0;
  std::vector<std::uint8_t> dropped(steps * ns);
  for (std::size_t t = 0; t < steps; ++t) {
    const double l0 = llr[2 * t], l1 = llr[2 * t + 1];
    for (std::uint32_t s2 = 0; s2 < ns; ++s2) {
      const std::uint32_t b = s2 >> (k - 2);
      double best = kNeg;
      std::uint8_t choice = 0;
      for (std::uint32_t d = 0; d < 2; ++d) {
        const std::uint32_t s = ((s2 << 1) & mask) | d;
        if (metric[s] == kNeg) continue;
        const double v = metric[s] + out0[2 * s + b] * l0 + out1[2 * s + b] * l1;
        if (v > best) {
          best = v;
          choice = static_cast<std::uint8_t>(d);
        }
      }
      next[s2] = best;
      dropped[t * ns + s2] = choice;
    }
    metric.swap(next);
  }

  BitVector decoded(steps);
  std::uint32_t s = 0;
  for (std::size_t t = steps; t-- > 0;) {
    decoded[t] = static_cast<std::uint8_t>(s >> (k - 2));
    s = ((s << 1) & mask) | dropped[t * ns + s];
  }
  decoded.resize(steps - m);
  return decoded;
}

/// Seeded Fisher-Yates permutation of [0, n).
inline std::vector<std::size_t> interleaver_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  CounterRng rng(seed, 0x1A7E);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.bounded(i));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

/// out[i] = in[perm[i]].
template <class T>
std::vector<T> interleave(const std::vector<T>& in, const std::vector<std::size_t>& perm) {
  if (in.size() != perm.size()) throw DomainError("interleave: length mismatch");
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[perm[i]];
  return out;
}

template <class T>
std::vector<T> deinterleave(const std::vector<T>& in, const std::vector<std::size_t>& perm) {
  if (in.size() != perm.size()) throw DomainError("deinterleave: length mismatch");
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[perm[i]] = in[i];
  return out;
}

template <class T>
std::vector<T> interleave(const std::vector<T>& in, std::uint64_t seed) {
  return interleave(in, interleaver_permutation(in.size(), seed));
}

template <class T>
std::vector<T> deinterleave(const std::vector<T>& in, std::uint64_t seed) {
  return deinterleave(in, interleaver_permutation(in.size(), seed));
}

// ---------------------------------------------------------------------------
// Frame loop
// ---------------------------------------------------------------------------

struct BerConfig {
  ChannelModel channel = ChannelModel::rayleigh(4, 4);
  std::vector<Scheme> schemes{Scheme::GpCbd};
  std::vector<double> snr_grid_db;
  int order = 16;
  CodeSpec code;
  std::size_t info_bits_per_frame = 0;  ///< 0 selects 1248 * Q_m
  std::uint64_t interleaver_seed = 7;
  std::size_t max_frames = 2000;
  std::size_t min_errors = 100;
  std::size_t batch_frames = 16;  ///< frames per batch; stopping is checked between batches
  Demod demod = Demod::Bcjr;
  DesignOptions design;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  bool noiseless = false;  ///< drop the noise but demodulate at the nominal sigma2
};

struct BerReport {
  Scheme scheme = Scheme::GpCbd;
  double snr_db = 0.0;
  std::size_t frames = 0;
  std::size_t bit_errors = 0;
  double ber = 0.0;
  std::size_t frame_errors = 0;
  double fer = 0.0;
  std::size_t info_bits_per_frame = 0;
};

inline std::size_t effective_info_bits(const BerConfig& cfg, const Constellation& c) {
  return cfg.info_bits_per_frame ? cfg.info_bits_per_frame : 1248 * static_cast<std::size_t>(c.bits_per_symbol);
}

/// Bit errors of frame f for one scheme. Frame f uses channel stream f and
/// data/noise stream f, shared by every scheme and SNR point.
inline std::size_t ber_frame(const BerConfig& cfg, const ChannelSampler& sampler, const Constellation& c,
                             Scheme scheme, const NoiseModel& noise, const std::vector<std::size_t>& perm,
                             std::size_t info_bits, std::size_t frame) {
  const ComplexMatrix h = sampler.draw(cfg.seed, frame).h;
  const TransceiverDesign d = design(scheme, h, noise, c, cfg.design);
  const BidiagonalReal b = d.effective();
  const ComplexMatrix f = d.precoder();
  const ComplexMatrix qh = d.postprocessor();
  const std::size_t ns = b.size();
  const auto q = static_cast<std::size_t>(c.bits_per_symbol);

  CounterRng rng(cfg.seed ^ kDataStreamSalt, frame);
  BitVector info(info_bits);
  for (auto& bit : info) bit = static_cast<std::uint8_t>(rng.bit());
  BitVector coded = conv_encode(info, cfg.code);
  const std::size_t full_length = coded.size();
  if (cfg.code.punctured) coded = puncture(coded);
  coded = interleave(coded, perm);
  const std::size_t per_vector = ns * q;
  const std::size_t vectors = (coded.size() + per_vector - 1) / per_vector;
  BitVector tx = coded;
  tx.resize(vectors * per_vector);
  for (std::size_t i = coded.size(); i < tx.size(); ++i) tx[i] = static_cast<std::uint8_t>(rng.bit());

  std::vector<double> llr;
  llr.reserve(tx.size());
  ComplexVector s(static_cast<Eigen::Index>(ns));
  for (std::size_t v = 0; v < vectors; ++v) {
    for (std::size_t i = 0; i < ns; ++i) {
      s(static_cast<Eigen::Index>(i)) =
          map_symbol(std::span<const std::uint8_t>(tx).subspan(v * per_vector + i * q, q), c);
    }
    ComplexVector ybar = h * (f * s);
    for (Eigen::Index r = 0; r < ybar.size(); ++r) {
      const std::complex<double> z = rng.complex_normal(noise.sigma2);
      if (!cfg.noiseless) ybar(r) += z;
    }
    const ComplexVector y = qh * ybar;
    const LlrVector part = demodulate(b, y, noise.sigma2, c, cfg.demod);
    llr.insert(llr.end(), part.begin(), part.end());
  }
  llr.resize(coded.size());
  llr = deinterleave(llr, perm);
  if (cfg.code.punctured) llr = depuncture(llr, full_length);
  const BitVector decoded = viterbi_soft_decode(llr, cfg.code);
  std::size_t errors = 0;
  for (std::size_t i = 0; i < info_bits; ++i) errors += decoded[i] != info[i];
  return errors;
}

inline void validate(const BerConfig& cfg, const Constellation& c) {
  cfg.code.validate();
  check_unique_schemes(cfg.schemes);
  for (Scheme s : cfg.schemes)
    if (s == Scheme::Gmd) throw ConfigError("scheme 'gmd' has no receiver chain and cannot be used for BER runs");
  if (cfg.max_frames < 1 || cfg.batch_frames < 1) throw ConfigError("max_frames and batch_frames must be >= 1");
  const std::size_t info = effective_info_bits(cfg, c);
  if (cfg.code.punctured && (info + static_cast<std::size_t>(cfg.code.memory())) % 3 != 0) {
    throw ConfigError("punctured code needs info_bits_per_frame + " + std::to_string(cfg.code.memory()) +
                      " divisible by 3");
  }
}

/// One report per (scheme, snr). Frames run in batches of batch_frames; the
/// stop rule (min_errors reached or max_frames) is checked after each batch,
/// so results do not depend on the thread count.
inline std::vector<BerReport> ber_run(const BerConfig& cfg) {
  const Constellation c = build_constellation(cfg.order);
  validate(cfg, c);
  const ChannelSampler sampler(cfg.channel);
  const std::size_t info = effective_info_bits(cfg, c);
  const std::size_t interleaved = cfg.code.coded_length(info);
  const std::vector<std::size_t> perm = interleaver_permutation(interleaved, cfg.interleaver_seed);

  std::vector<BerReport> out;
  for (Scheme scheme : cfg.schemes) {
    for (double snr : cfg.snr_grid_db) {
      const NoiseModel noise = NoiseModel::from_snr_db(snr);
      BerReport rep;
      rep.scheme = scheme;
      rep.snr_db = snr;
      rep.info_bits_per_frame = info;
      while (rep.frames < cfg.max_frames && rep.bit_errors < cfg.min_errors) {
        const std::size_t batch = std::min(cfg.batch_frames, cfg.max_frames - rep.frames);
        std::vector<std::size_t> errors(batch);
        const std::size_t first = rep.frames;
        parallel_for(batch, cfg.threads, [&](std::size_t i) {
          errors[i] = ber_frame(cfg, sampler, c, scheme, noise, perm, info, first + i);
        });
        for (std::size_t e : errors) {
          rep.bit_errors += e;
          rep.frame_errors += e > 0;
        }
        rep.frames += batch;
      }
      rep.ber = static_cast<double>(rep.bit_errors) / static_cast<double>(rep.frames * info);
      rep.fer = static_cast<double>(rep.frame_errors) / static_cast<double>(rep.frames);
      out.push_back(rep);
    }
  }
  return out;
}

inline std::string ber_csv(const std::vector<BerReport>& rows) {
  std::string out = "scheme,snr_db,frames,bit_errors,ber,frame_errors,fer\n";
  for (const auto& r : rows) {
    out += std::string(scheme_name(r.scheme)) + ',' + detail::fmt(r.snr_db, "%g") + ',' + std::to_string(r.frames) +
           ',' + std::to_string(r.bit_errors) + ',' + detail::fmt(r.ber) + ',' + std::to_string(r.frame_errors) +
           ',' + detail::fmt(r.fer) + '\n';
  }
  return out;
}

}  // namespace mimo_lab
