#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "mimo_lab/error.hpp"
#include "mimo_lab/linalg.hpp"

namespace mimo_lab {

/// Relative floor applied to small gains before ratio computations.
inline constexpr double kGainFloor = 1e-12;

struct ClampedValues {
  RealVector values;
  std::size_t clamped = 0;
};

/// Clamps entries below kGainFloor * max to that floor.
inline ClampedValues clamp_to_floor(const RealVector& v) {
  ClampedValues out{v, 0};
  if (v.size() == 0) return out;
  const double floor = kGainFloor * v.maxCoeff();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (out.values(i) < floor) {
      out.values(i) = floor;
      ++out.clamped;
    }
  }
  return out;
}

struct EccnReport {
  double eccn = 1.0;
  double diag_max = 0.0;
  double diag_min = 0.0;
  std::vector<double> per_layer_post_snr;  ///< B_ii^2 phi_i / sigma2, filled when noise is given
  std::size_t clamped = 0;                 ///< diagonals raised to the floor
};

/// max_i R_ii / min_i R_ii of an equivalent triangular or bidiagonal channel.
inline EccnReport eccn(const RealVector& diag) {
  if (diag.size() == 0) throw DomainError("eccn: empty diagonal");
  if ((diag.array() < 0.0).any()) throw DomainError("eccn: diagonal entries must be non-negative");
  if (!(diag.maxCoeff() > 0.0)) throw DomainError("eccn: all diagonal entries are zero");
  const ClampedValues c = clamp_to_floor(diag);
  EccnReport r;
  r.diag_max = c.values.maxCoeff();
  r.diag_min = c.values.minCoeff();
  r.eccn = r.diag_max / r.diag_min;
  r.clamped = c.clamped;
  return r;
}

inline EccnReport eccn(const BidiagonalReal& b) { return eccn(b.diag); }

inline EccnReport eccn(const BidiagonalReal& b, const RealVector& phi, double sigma2) {
  EccnReport r = eccn(b.diag);
  r.per_layer_post_snr.resize(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    r.per_layer_post_snr[i] = b.diag(k) * b.diag(k) * phi(k) / sigma2;
  }
  return r;
}

}  // namespace mimo_lab
