#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <map>
#include <vector>

#include "polyrbf/basis.hpp"
#include "polyrbf/volume.hpp"

namespace polyrbf {

// Shared ridge solve operator (X'X + dI)^-1 X', built once per (scheme,
// config) and reused across every voxel.
struct Projector {
  Eigen::MatrixXd p; // (N*K) x M
  Eigen::MatrixXd x; // design copy, kept for residual computation
  double ridge_d = 0.0;
  std::uint64_t scheme_fingerprint = 0;
  std::uint64_t config_fingerprint = 0;
};

// ridge_d < 0 selects the scale-aware default 1e-8 * mean(diag(X'X)).
Projector build_projector(const DesignMatrix& design, double ridge_d);
double default_ridge(const Eigen::MatrixXd& x);

struct VoxelFit {
  Eigen::VectorXd beta;
  double residual_variance = 0.0;
  int n_obs = 0;
};

VoxelFit fit_voxel(const Projector& projector, const Eigen::VectorXd& log_signal);

struct FitVolume {
  std::array<int, 3> dims{0, 0, 0};
  std::vector<std::uint8_t> mask;    // nx*ny*nz
  std::vector<std::size_t> voxels;   // linear indices of masked voxels
  Eigen::MatrixXd betas;             // (N*K) x n_masked
  Eigen::VectorXd residual_variance; // n_masked
  int n_obs = 0;
  BasisConfig config;
  std::uint64_t scheme_fingerprint = 0;
  double train_max_b = 0.0;
};

FitVolume fit_volume(const Projector& projector, const SignalVolume& normalized,
                     const BasisConfig& cfg, double train_max_b, int threads = 1);

struct OrderSelection {
  int k = 0;
  std::map<int, double> cv_loss;  // admissible candidates only
  std::vector<int> skipped;       // unidentifiable candidates
  std::string warning;
};

// Shell-stratified K-fold CV over pooled log-signal columns (M x V).
OrderSelection select_order(const GradientScheme& scheme, const Eigen::MatrixXd& log_signals,
                            const std::vector<int>& k_candidates, int folds,
                            std::uint64_t seed);

enum class Criterion { aic, bic };

struct IcResult {
  double value = 0.0;
  bool perfect_fit = false; // RSS ~ 0: value is -infinity
};

IcResult information_criterion(const VoxelFit& fit, int m, Criterion which);

} // namespace polyrbf
