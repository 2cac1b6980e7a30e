#pragma once

// Dense complex linear algebra for channel decompositions: SVD, Householder
// bidiagonalization (H = Q B P^H with real B), 2x2 equalizing Givens pairs,
// permutation assembly and the geometric mean decomposition.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mimo_lab/error.hpp"

namespace mimo_lab {

using cplx = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;
using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;

inline void require_finite(const ComplexMatrix& m, std::string_view what) {
  if (m.rows() < 1 || m.cols() < 1) {
    throw DomainError(std::string(what) + ": matrix must have at least one row and one column");
  }
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      if (!std::isfinite(m(i, j).real()) || !std::isfinite(m(i, j).imag())) {
        throw DomainError(std::string(what) + ": non-finite entry at (" + std::to_string(i) + ", " +
                          std::to_string(j) + ")");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

enum class Scheme { Svd, Cbd, Gmd, GpCbd };

inline std::string_view scheme_name(Scheme s) noexcept {
  switch (s) {
    case Scheme::Svd: return "svd";
    case Scheme::Cbd: return "cbd";
    case Scheme::Gmd: return "gmd";
    case Scheme::GpCbd: return "gpcbd";
  }
  return "?";
}

inline std::optional<Scheme> parse_scheme(std::string_view name) noexcept {
  if (name == "svd") return Scheme::Svd;
  if (name == "cbd") return Scheme::Cbd;
  if (name == "gmd") return Scheme::Gmd;
  if (name == "gpcbd") return Scheme::GpCbd;
  return std::nullopt;
}

/// Economy SVD, H = u.leftCols(Ns) * diag(sigma) * v^H, sigma non-increasing.
/// u is the full Nr x Nr unitary, v is Nt x Ns.
struct SvdFactors {
  ComplexMatrix u;
  RealVector sigma;
  ComplexMatrix v;
};

/// Real upper bidiagonal matrix of size n. A block boundary k means the
/// coupling between layers k and k+1 is structurally absent (superdiag[k] == 0).
struct BidiagonalReal {
  RealVector diag;
  RealVector superdiag;
  std::vector<std::size_t> block_boundaries;

  BidiagonalReal() = default;
  explicit BidiagonalReal(std::size_t n)
      : diag(RealVector::Zero(static_cast<Eigen::Index>(n))),
        superdiag(RealVector::Zero(static_cast<Eigen::Index>(n > 0 ? n - 1 : 0))) {}

  static BidiagonalReal diagonal(const RealVector& d) {
    BidiagonalReal b(static_cast<std::size_t>(d.size()));
    b.diag = d;
    for (std::size_t k = 0; k + 1 < b.size(); ++k) b.block_boundaries.push_back(k);
    return b;
  }

  std::size_t size() const noexcept { return static_cast<std::size_t>(diag.size()); }

  RealMatrix dense() const {
    const auto n = diag.size();
    RealMatrix out = RealMatrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      out(i, i) = diag(i);
      if (i + 1 < n) out(i, i + 1) = superdiag(i);
    }
    return out;
  }

  double frobenius_norm2() const { return diag.squaredNorm() + superdiag.squaredNorm(); }

  /// Squared norm of column i: B_ii^2 + B_{i-1,i}^2.
  double column_norm2(std::size_t i) const {
    const auto k = static_cast<Eigen::Index>(i);
    double v = diag(k) * diag(k);
    if (k > 0) v += superdiag(k - 1) * superdiag(k - 1);
    return v;
  }

  /// B * diag(gains): scales column i by gains[i]. Boundaries are kept.
  BidiagonalReal scale_columns(const RealVector& gains) const {
    BidiagonalReal out = *this;
    for (Eigen::Index i = 0; i < diag.size(); ++i) {
      out.diag(i) *= gains(i);
      if (i > 0) out.superdiag(i - 1) *= gains(i);
    }
    return out;
  }

  /// Independent trellis segments as [begin, end) layer ranges.
  std::vector<std::pair<std::size_t, std::size_t>> blocks() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t begin = 0;
    for (std::size_t k : block_boundaries) {
      out.emplace_back(begin, k + 1);
      begin = k + 1;
    }
    if (begin < size()) out.emplace_back(begin, size());
    return out;
  }
};

/// H = q.leftCols(Ns) * B * p^H with B real bidiagonal.
struct Decomposition {
  ComplexMatrix q;
  BidiagonalReal b;
  ComplexMatrix p;
  Scheme scheme = Scheme::Cbd;

  RealMatrix core() const { return b.dense(); }
  ComplexMatrix reconstruct() const {
    const auto n = static_cast<Eigen::Index>(b.size());
    return q.leftCols(n) * b.dense().cast<cplx>() * p.adjoint();
  }
};

/// H = q.leftCols(Ns) * R * p^H with R real upper triangular (GMD).
struct TriangularDecomposition {
  ComplexMatrix q;
  RealMatrix r;
  ComplexMatrix p;

  RealMatrix core() const { return r; }
  RealVector diagonal() const { return r.diagonal(); }
  ComplexMatrix reconstruct() const {
    return q.leftCols(r.rows()) * r.cast<cplx>() * p.adjoint();
  }
};

struct FactorizationCheck {
  double reconstruction = 0.0;   ///< ||H - QBP^H||_F / ||H||_F
  double q_orthonormality = 0.0; ///< ||Q^H Q - I||_F
  double p_orthonormality = 0.0; ///< ||P^H P - I||_F
  double frobenius = 0.0;        ///< | ||B||_F^2 - ||H||_F^2 | / ||H||_F^2
};

template <class Factors>
FactorizationCheck check_factorization(const ComplexMatrix& h, const Factors& f) {
  FactorizationCheck c;
  const double hn = h.norm();
  const double scale = hn > 0.0 ? hn : 1.0;
  c.reconstruction = (f.reconstruct() - h).norm() / scale;
  c.q_orthonormality =
      (f.q.adjoint() * f.q - ComplexMatrix::Identity(f.q.cols(), f.q.cols())).norm();
  c.p_orthonormality =
      (f.p.adjoint() * f.p - ComplexMatrix::Identity(f.p.cols(), f.p.cols())).norm();
  c.frobenius = std::abs(f.core().squaredNorm() - h.squaredNorm()) / (scale * scale);
  return c;
}

// ---------------------------------------------------------------------------
// SVD
// ---------------------------------------------------------------------------

inline SvdFactors svd(const ComplexMatrix& h) {
  require_finite(h, "svd");
  Eigen::JacobiSVD<ComplexMatrix> solver(h, Eigen::ComputeFullU | Eigen::ComputeThinV);
  SvdFactors out{solver.matrixU(), solver.singularValues(), solver.matrixV()};

  const auto n = out.sigma.size();
  const double hn = h.norm();
  const double tol = 1e-10;
  bool ok = out.sigma.allFinite() && out.u.allFinite() && out.v.allFinite();
  for (Eigen::Index i = 0; ok && i < n; ++i) {
    ok = out.sigma(i) >= 0.0 && (i == 0 || out.sigma(i) <= out.sigma(i - 1));
  }
  if (ok) {
    const ComplexMatrix rec = out.u.leftCols(n) * out.sigma.cast<cplx>().asDiagonal() * out.v.adjoint();
    ok = (rec - h).norm() <= tol * std::max(hn, 1e-300) &&
         (out.u.adjoint() * out.u - ComplexMatrix::Identity(out.u.cols(), out.u.cols())).norm() <= tol &&
         (out.v.adjoint() * out.v - ComplexMatrix::Identity(n, n)).norm() <= tol;
  }
  if (!ok) throw NumericalError("svd: factorization failed its validity checks");
  return out;
}

// ---------------------------------------------------------------------------
// Householder bidiagonalization
// ---------------------------------------------------------------------------

namespace detail {

inline cplx unit_phase(cplx z) noexcept {
  const double a = std::abs(z);
  return a > 0.0 ? z / a : cplx(1.0, 0.0);
}

/// Hermitian reflector H = I - tau v v^H with H x = beta e1.
struct Reflector {
  ComplexVector v;
  double tau = 0.0;
  cplx beta;
  bool identity = true;
};

inline Reflector make_reflector(const ComplexVector& x) {
  Reflector r;
  r.beta = x.size() > 0 ? x(0) : cplx{};
  if (x.size() <= 1) return r;
  const double tail = x.tail(x.size() - 1).norm();
  if (tail == 0.0) return r;
  const double norm = x.norm();
  const cplx phase = unit_phase(x(0));
  r.v = x;
  r.v(0) += phase * norm;
  r.tau = 2.0 / r.v.squaredNorm();
  r.beta = -phase * norm;
  r.identity = false;
  return r;
}

template <class Block>
void apply_left(const Reflector& r, Block&& a) {
  if (r.identity) return;
  const Eigen::RowVectorXcd w = r.v.adjoint() * a;
  a.noalias() -= r.tau * r.v * w;
}

template <class Block>
void apply_right(const Reflector& r, Block&& a) {
  if (r.identity) return;
  const ComplexVector w = a * r.v;
  a.noalias() -= r.tau * w * r.v.adjoint();
}

/// Square or tall input: A = Q * [B; 0] * P^H with B complex upper bidiagonal.
inline void golub_kahan(ComplexMatrix& a, ComplexMatrix& q, ComplexMatrix& p) {
  const auto m = a.rows();
  const auto n = a.cols();
  q = ComplexMatrix::Identity(m, m);
  p = ComplexMatrix::Identity(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Reflector left = make_reflector(a.col(k).segment(k, m - k));
    apply_left(left, a.block(k, k, m - k, n - k));
    apply_right(left, q.rightCols(m - k));
    a.col(k).segment(k + 1, m - k - 1).setZero();

    if (k + 2 < n) {
      const ComplexVector row = a.row(k).segment(k + 1, n - k - 1).adjoint();
      const Reflector right = make_reflector(row);
      apply_right(right, a.block(k, k + 1, m - k, n - k - 1));
      apply_right(right, p.rightCols(n - k - 1));
      a.row(k).segment(k + 2, n - k - 2).setZero();
    }
  }
}

/// Tall input: A = W * R with W unitary.
inline void householder_qr(ComplexMatrix& a, ComplexMatrix& w) {
  const auto m = a.rows();
  const auto n = a.cols();
  w = ComplexMatrix::Identity(m, m);
  for (Eigen::Index k = 0; k < n && k < m; ++k) {
    const Reflector r = make_reflector(a.col(k).segment(k, m - k));
    apply_left(r, a.block(k, k, m - k, n - k));
    apply_right(r, w.rightCols(m - k));
    a.col(k).segment(k + 1, m - k - 1).setZero();
  }
}

/// Rotations turning diag(d1, d2) into [[target, m], [0, d1 d2 / target]],
/// valid for any target between d1 and d2.
struct PairRotation {
  double c = 1.0;
  double s = 0.0;
  Eigen::Matrix2d left = Eigen::Matrix2d::Identity();
  Eigen::Matrix2d right = Eigen::Matrix2d::Identity();
  double b11 = 0.0;
  double b22 = 0.0;
  double m = 0.0;
};

inline PairRotation rotate_pair(double d1, double d2, double target) {
  PairRotation r;
  const double den = d1 * d1 - d2 * d2;
  if (den == 0.0 || target == 0.0) {
    r.b11 = d1;
    r.b22 = d2;
    return r;
  }
  const double c2 = std::clamp((target * target - d2 * d2) / den, 0.0, 1.0);
  r.c = std::sqrt(c2);
  r.s = std::sqrt(1.0 - c2);
  const double c = r.c, s = r.s;
  r.left << c * d1, -s * d2, s * d2, c * d1;
  r.left /= target;
  r.right << c, s, -s, c;
  r.b11 = target;
  r.b22 = d1 * d2 / target;
  r.m = s * c * den / target;
  return r;
}

}  // namespace detail

/// Householder bidiagonalization H = Q B P^H with B real, non-negative.
/// An all-zero input yields B = 0 with Q = P = I.
inline Decomposition householder_bidiagonalize(const ComplexMatrix& h) {
  require_finite(h, "householder_bidiagonalize");
  const auto nr = h.rows();
  const auto nt = h.cols();
  const auto ns = std::min(nr, nt);

  ComplexMatrix q, p, a;
  if (nr >= nt) {
    a = h;
    detail::golub_kahan(a, q, p);
  } else {
    // Wide channel: H^H = W R, then bidiagonalize the square factor R^H.
    ComplexMatrix t = h.adjoint();
    ComplexMatrix w;
    detail::householder_qr(t, w);
    a = t.topRows(ns).adjoint();
    ComplexMatrix z;
    detail::golub_kahan(a, q, z);
    p = w.leftCols(ns) * z;
  }

  // Absorb phases into Q and P so that B is real with non-negative entries.
  Decomposition out;
  out.scheme = Scheme::Cbd;
  out.b = BidiagonalReal(static_cast<std::size_t>(ns));
  std::vector<cplx> dl(static_cast<std::size_t>(ns)), dr(static_cast<std::size_t>(ns));
  dr[0] = 1.0;
  for (Eigen::Index i = 0; i < ns; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    dl[ui] = detail::unit_phase(a(i, i) * dr[ui]);
    out.b.diag(i) = std::abs(a(i, i));
    if (i + 1 < ns) {
      dr[ui + 1] = std::conj(detail::unit_phase(std::conj(dl[ui]) * a(i, i + 1)));
      out.b.superdiag(i) = std::abs(a(i, i + 1));
    }
  }
  for (Eigen::Index i = 0; i < ns; ++i) {
    q.col(i) *= dl[static_cast<std::size_t>(i)];
    p.col(i) *= dr[static_cast<std::size_t>(i)];
  }
  out.q = std::move(q);
  out.p = p.leftCols(ns);
  return out;
}

// ---------------------------------------------------------------------------
// Givens pair (2x2 equalizing rotation)
// ---------------------------------------------------------------------------

struct GivensPair {
  Eigen::Matrix2d left;   ///< left * diag(hi, lo) * right == block
  Eigen::Matrix2d right;
  BidiagonalReal block;
  double c = 1.0;
  double s = 0.0;
};

/// Rotates diag(lambda_hi, lambda_lo) into [[b11, m], [0, hi*lo/b11]] with
/// c = sqrt((b11^2 - lo^2)/(hi^2 - lo^2)), s = sqrt(1 - c^2), m = s c (hi^2 - lo^2)/b11.
/// Requires hi >= b11 >= sqrt(hi*lo) >= lo > 0.
inline GivensPair givens_pair(double lambda_hi, double lambda_lo, double b11_target) {
  constexpr double slack = 1e-12;
  const double gm = std::sqrt(lambda_hi * lambda_lo);
  if (!(lambda_lo > 0.0) || !(lambda_hi >= lambda_lo) || !std::isfinite(lambda_hi) ||
      !(b11_target <= lambda_hi * (1.0 + slack)) || !(b11_target >= gm * (1.0 - slack))) {
    throw DomainError("givens_pair: require lambda_hi >= b11 >= sqrt(hi*lo) >= lambda_lo > 0");
  }
  GivensPair g;
  g.block = BidiagonalReal(2);
  if (lambda_hi == lambda_lo) {
    g.left.setIdentity();
    g.right.setIdentity();
    g.block.diag << lambda_hi, lambda_lo;
    return g;
  }
  const double target = std::clamp(b11_target, gm, lambda_hi);
  const detail::PairRotation r = detail::rotate_pair(lambda_hi, lambda_lo, target);
  g.left = r.left;
  g.right = r.right;
  g.c = r.c;
  g.s = r.s;
  g.block.diag << r.b11, r.b22;
  g.block.superdiag << r.m;
  return g;
}

// ---------------------------------------------------------------------------
// Pairing plan and permutation assembly
// ---------------------------------------------------------------------------

/// Subchannel pairing, 0-based indices into the descending singular values.
struct PairingPlan {
  std::size_t cutoff = 0;  ///< N: number of leading subchannels deemed well-conditioned
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::size_t> singletons;

  /// Layer order after permutation: each pair (hi, lo), then singletons.
  std::vector<std::size_t> order() const {
    std::vector<std::size_t> out;
    for (const auto& [i, j] : pairs) {
      out.push_back(i);
      out.push_back(j);
    }
    out.insert(out.end(), singletons.begin(), singletons.end());
    return out;
  }

  void validate(std::size_t ns) const {
    std::vector<int> seen(ns, 0);
    auto mark = [&](std::size_t i) {
      if (i >= ns) throw DomainError("pairing plan: index " + std::to_string(i) + " out of range");
      if (seen[i]++) throw DomainError("pairing plan: index " + std::to_string(i) + " used twice");
    };
    for (const auto& [i, j] : pairs) {
      if (i >= j) throw DomainError("pairing plan: pair must satisfy i < j");
      mark(i);
      mark(j);
    }
    for (std::size_t i : singletons) mark(i);
    for (std::size_t i = 0; i < ns; ++i) {
      if (!seen[i]) throw DomainError("pairing plan: index " + std::to_string(i) + " missing");
    }
  }
};

struct PermutedSvd {
  ComplexMatrix u_tilde;
  RealVector lambda_tilde;
  ComplexMatrix v_tilde;
};

/// Reorders the SVD so that paired subchannels are adjacent (hi then lo),
/// followed by singletons. Only the first Ns columns of u are permuted.
inline PermutedSvd assemble_permuted(const SvdFactors& f, const PairingPlan& plan) {
  const auto ns = static_cast<std::size_t>(f.sigma.size());
  plan.validate(ns);
  const auto order = plan.order();
  PermutedSvd out{f.u, RealVector(f.sigma.size()), ComplexMatrix(f.v.rows(), f.v.cols())};
  for (std::size_t t = 0; t < ns; ++t) {
    const auto src = static_cast<Eigen::Index>(order[t]);
    const auto dst = static_cast<Eigen::Index>(t);
    out.lambda_tilde(dst) = f.sigma(src);
    out.u_tilde.col(dst) = f.u.col(src);
    out.v_tilde.col(dst) = f.v.col(src);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Geometric mean decomposition
// ---------------------------------------------------------------------------

/// Givens-chain GMD: H = Q R P^H with R upper triangular and every R_ii equal
/// to the geometric mean of the singular values.
inline TriangularDecomposition gmd(const ComplexMatrix& h) {
  const SvdFactors f = svd(h);
  const auto n = f.sigma.size();
  if (!(f.sigma(n - 1) > 1e-12 * f.sigma(0))) {
    throw DomainError("gmd: channel is rank deficient");
  }
  const double target = std::exp(f.sigma.array().log().mean());

  TriangularDecomposition out{f.u, RealMatrix::Zero(n, n), f.v};
  out.r.diagonal() = f.sigma;

  auto swap_layers = [&](Eigen::Index a, Eigen::Index b) {
    if (a == b) return;
    out.r.col(a).swap(out.r.col(b));
    out.r.row(a).swap(out.r.row(b));
    out.q.col(a).swap(out.q.col(b));
    out.p.col(a).swap(out.p.col(b));
  };

  for (Eigen::Index k = 0; k + 1 < n; ++k) {
    // Trailing block r(k:, k:) is diagonal; pick a partner on the other side of the mean.
    const bool above = out.r(k, k) >= target;
    Eigen::Index partner = k + 1;
    for (Eigen::Index j = k + 1; j < n; ++j) {
      if (above ? out.r(j, j) < out.r(partner, partner) : out.r(j, j) > out.r(partner, partner)) {
        partner = j;
      }
    }
    swap_layers(k + 1, partner);

    const double d1 = out.r(k, k);
    const double d2 = out.r(k + 1, k + 1);
    const detail::PairRotation rot = detail::rotate_pair(d1, d2, target);
    if (rot.s == 0.0 && rot.c == 1.0 && d1 == rot.b11) continue;

    out.r.middleCols(k, 2) = (out.r.middleCols(k, 2) * rot.right).eval();
    out.r.middleRows(k, 2) = (rot.left * out.r.middleRows(k, 2)).eval();
    out.r(k + 1, k) = 0.0;
    out.r(k, k) = rot.b11;
    out.r(k + 1, k + 1) = rot.b22;
    out.q.middleCols(k, 2) = (out.q.middleCols(k, 2) * rot.left.transpose().cast<cplx>()).eval();
    out.p.middleCols(k, 2) = (out.p.middleCols(k, 2) * rot.right.cast<cplx>()).eval();
  }
  return out;
}

}  // namespace mimo_lab
