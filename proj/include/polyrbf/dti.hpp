#pragma once

#include <Eigen/Dense>
#include <vector>

#include "polyrbf/errors.hpp"
#include "polyrbf/gradients.hpp"
#include "polyrbf/volume.hpp"

namespace polyrbf {

class UnidentifiableTensorError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

struct DiffusionTensor {
  // Unique components of symmetric D, mm^2/s.
  double dxx = 0, dyy = 0, dzz = 0, dxy = 0, dxz = 0, dyz = 0;
  double log_s0 = 0;  // intercept absorbing normalization error

  Eigen::Matrix3d matrix() const;
  Eigen::Vector3d eigenvalues() const;  // ascending
  bool has_negative_eigenvalue() const;
};

// Two-pass weighted linear least squares on ln S: unweighted first pass, then
// weights S_hat^2 from its fitted signals. Rank-deficient designs (e.g. fewer
// than 6 non-coplanar direction outer-products) are refused.
DiffusionTensor fit_tensor_wlls(const GradientScheme& scheme,
                                const Eigen::VectorXd& normalized_signal);

double md(const DiffusionTensor& d);
// FA from eigenvalues; computed on raw values even when some are negative
// (callers should check has_negative_eigenvalue), 0 for the zero tensor.
double fa(const DiffusionTensor& d);

struct FeatureVolumes {
  std::array<int, 3> dims{0, 0, 0};
  std::vector<std::uint8_t> mask;
  Eigen::VectorXd fa;  // per voxel; 0 outside mask
  Eigen::VectorXd md;
  std::int64_t negative_eig_voxels = 0;
};

// Tensor fit + FA/MD over every masked voxel of a normalized/predicted volume.
FeatureVolumes extract_features(const SignalVolume& volume, const GradientScheme& scheme,
                                int threads = 1);

} // namespace polyrbf
