#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mimo_lab/error.hpp"

namespace mimo_lab {

/// Square Gray-mapped M-QAM with unit average energy.
///
/// Each real dimension carries a sqrt(M)-PAM symbol. PAM level j (ascending,
/// j = 0 .. sqrt(M)-1) has amplitude sqrt(3/(2(M-1))) * (2j + 1 - sqrt(M)) and
/// carries the binary-reflected Gray label j ^ (j >> 1), most significant bit
/// first. Within a symbol the Q_m/2 in-phase bits precede the Q_m/2
/// quadrature bits. With M = 4 the all-zero label maps to (-1 - i)/sqrt(2).
struct Constellation {
  int order = 4;
  int bits_per_symbol = 2;  ///< Q_m
  int bits_per_dim = 1;     ///< Q_m / 2
  int pam_size = 2;         ///< sqrt(M)
  std::vector<double> pam;
  std::vector<unsigned> label_of_level;
  std::vector<int> level_of_label;
  double d2_min = 2.0;
};

/// M must be an even power of two, 4 <= M <= 4096 (the modulation orders in
/// use are 4, 16, 64 and 256; larger orders serve as near-Gaussian inputs).
inline Constellation build_constellation(int m) {
  int q = 0;
  while ((1 << q) < m) ++q;
  if (m < 4 || (1 << q) != m || q % 2 != 0 || m > 4096) {
    throw DomainError("constellation order must be a square power of two in [4, 4096], got " +
                      std::to_string(m));
  }
  Constellation c;
  c.order = m;
  c.bits_per_symbol = q;
  c.bits_per_dim = q / 2;
  c.pam_size = 1 << (q / 2);
  const double scale = std::sqrt(3.0 / (2.0 * (m - 1)));
  c.pam.resize(static_cast<std::size_t>(c.pam_size));
  c.label_of_level.resize(c.pam.size());
  c.level_of_label.resize(c.pam.size());
  for (int j = 0; j < c.pam_size; ++j) {
    c.pam[static_cast<std::size_t>(j)] = scale * (2 * j + 1 - c.pam_size);
    const unsigned label = static_cast<unsigned>(j) ^ (static_cast<unsigned>(j) >> 1);
    c.label_of_level[static_cast<std::size_t>(j)] = label;
    c.level_of_label[label] = j;
  }
  c.d2_min = 6.0 / (m - 1);
  return c;
}

/// Bit b (0 = most significant) of the label carried by PAM level j.
inline int level_bit(const Constellation& c, int level, int b) {
  return static_cast<int>((c.label_of_level[static_cast<std::size_t>(level)] >> (c.bits_per_dim - 1 - b)) & 1U);
}

inline std::complex<double> map_symbol(std::span<const std::uint8_t> bits, const Constellation& c) {
  unsigned li = 0, lq = 0;
  for (int b = 0; b < c.bits_per_dim; ++b) {
    li = (li << 1) | (bits[static_cast<std::size_t>(b)] & 1U);
    lq = (lq << 1) | (bits[static_cast<std::size_t>(c.bits_per_dim + b)] & 1U);
  }
  return {c.pam[static_cast<std::size_t>(c.level_of_label[li])],
          c.pam[static_cast<std::size_t>(c.level_of_label[lq])]};
}

inline std::vector<std::complex<double>> map_bits(std::span<const std::uint8_t> bits,
                                                  const Constellation& c) {
  const auto q = static_cast<std::size_t>(c.bits_per_symbol);
  if (bits.size() % q != 0) throw DomainError("map_bits: bit count must be a multiple of Q_m");
  std::vector<std::complex<double>> out(bits.size() / q);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = map_symbol(bits.subspan(i * q, q), c);
  return out;
}

/// Nearest PAM level index for a real amplitude.
inline int nearest_level(double x, const Constellation& c) {
  const double scale = c.pam[1] - c.pam[0];
  const long j = std::lround((x - c.pam[0]) / scale);
  return static_cast<int>(std::clamp<long>(j, 0, c.pam_size - 1));
}

/// Hard decision, inverse of map_bits on noiseless symbols.
inline std::vector<std::uint8_t> demap_hard(std::span<const std::complex<double>> symbols,
                                            const Constellation& c) {
  std::vector<std::uint8_t> out;
  out.reserve(symbols.size() * static_cast<std::size_t>(c.bits_per_symbol));
  for (const auto& s : symbols) {
    for (double x : {s.real(), s.imag()}) {
      const int level = nearest_level(x, c);
      for (int b = 0; b < c.bits_per_dim; ++b) out.push_back(static_cast<std::uint8_t>(level_bit(c, level, b)));
    }
  }
  return out;
}

}  // namespace mimo_lab
