#pragma once

// Channel ensembles: i.i.d. Rayleigh and an exponentially correlated Kronecker
// model H = R_rx^{1/2} W R_tx^{1/2}, used as the ill-conditioned ensemble.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <Eigen/Eigenvalues>

#include "mimo_lab/error.hpp"
#include "mimo_lab/linalg.hpp"
#include "mimo_lab/matrix_io.hpp"
#include "mimo_lab/rng.hpp"

namespace mimo_lab {

enum class ChannelKind { Rayleigh, KroneckerCorrelated, FromFile };

struct ChannelModel {
  ChannelKind kind = ChannelKind::Rayleigh;
  int n_r = 1;
  int n_t = 1;
  double rho_tx = 0.0;
  double rho_rx = 0.0;
  std::filesystem::path path;

  static ChannelModel rayleigh(int n_r, int n_t) {
    return {ChannelKind::Rayleigh, n_r, n_t, 0.0, 0.0, {}};
  }
  static ChannelModel kronecker(int n_r, int n_t, double rho_tx, double rho_rx) {
    return {ChannelKind::KroneckerCorrelated, n_r, n_t, rho_tx, rho_rx, {}};
  }
  static ChannelModel from_file(std::filesystem::path p) {
    ChannelModel m;
    m.kind = ChannelKind::FromFile;
    m.path = std::move(p);
    return m;
  }

  /// Named presets: "rayleigh" and "kron095" (rho_tx = rho_rx = 0.95).
  static ChannelModel preset(std::string_view name, int n_r, int n_t) {
    if (name == "rayleigh") return rayleigh(n_r, n_t);
    if (name == "kron095") return kronecker(n_r, n_t, 0.95, 0.95);
    throw ConfigError("unknown channel preset '" + std::string(name) + "'");
  }

  void validate() const {
    if (kind == ChannelKind::FromFile) return;
    if (n_r < 1 || n_t < 1) throw DomainError("channel: antenna counts must be >= 1");
    if (!(rho_tx >= 0.0 && rho_tx < 1.0) || !(rho_rx >= 0.0 && rho_rx < 1.0)) {
      throw DomainError("channel: correlation coefficients must lie in [0, 1)");
    }
  }
};

struct ChannelRealization {
  ComplexMatrix h;
  std::uint64_t seed = 0;
  ChannelModel model;
};

/// Exponential correlation R_ij = rho^|i-j|, square root via eigendecomposition.
inline RealMatrix exponential_correlation_sqrt(int n, double rho) {
  if (rho == 0.0) return RealMatrix::Identity(n, n);
  RealMatrix r(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) r(i, j) = std::pow(rho, std::abs(i - j));
  Eigen::SelfAdjointEigenSolver<RealMatrix> es(r);
  if (es.info() != Eigen::Success) throw NumericalError("correlation square root failed");
  const RealVector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

/// Immutable sampler; correlation roots and file contents are prepared once.
class ChannelSampler {
 public:
  explicit ChannelSampler(ChannelModel model) : model_(std::move(model)) {
    model_.validate();
    switch (model_.kind) {
      case ChannelKind::FromFile:
        fixed_ = load_matrix(model_.path);
        model_.n_r = static_cast<int>(fixed_.rows());
        model_.n_t = static_cast<int>(fixed_.cols());
        break;
      case ChannelKind::KroneckerCorrelated:
        rx_root_ = exponential_correlation_sqrt(model_.n_r, model_.rho_rx).cast<cplx>();
        tx_root_ = exponential_correlation_sqrt(model_.n_t, model_.rho_tx).cast<cplx>();
        break;
      case ChannelKind::Rayleigh:
        break;
    }
  }

  const ChannelModel& model() const noexcept { return model_; }

  /// Same (seed, stream) gives a bit-identical matrix. Rayleigh and Kronecker
  /// draw the white matrix W from the same path.
  ChannelRealization draw(std::uint64_t seed, std::uint64_t stream = 0) const {
    ChannelRealization out{{}, seed, model_};
    if (model_.kind == ChannelKind::FromFile) {
      out.h = fixed_;
      return out;
    }
    CounterRng rng(seed, stream);
    ComplexMatrix w(model_.n_r, model_.n_t);
    for (int i = 0; i < model_.n_r; ++i)
      for (int j = 0; j < model_.n_t; ++j) w(i, j) = rng.complex_normal(1.0);
    if (model_.kind == ChannelKind::KroneckerCorrelated) {
      out.h = rx_root_ * w * tx_root_;
    } else {
      out.h = std::move(w);
    }
    return out;
  }

 private:
  ChannelModel model_;
  ComplexMatrix fixed_;
  ComplexMatrix rx_root_;
  ComplexMatrix tx_root_;
};

inline ChannelRealization draw(const ChannelModel& model, std::uint64_t seed) {
  return ChannelSampler(model).draw(seed);
}

inline void save(const ChannelRealization& ch, const std::filesystem::path& path) {
  save_matrix(ch.h, path);
}

inline ChannelRealization load(const std::filesystem::path& path) {
  ChannelRealization out;
  out.h = load_matrix(path);
  out.model = ChannelModel::from_file(path);
  out.model.n_r = static_cast<int>(out.h.rows());
  out.model.n_t = static_cast<int>(out.h.cols());
  return out;
}

}  // namespace mimo_lab
