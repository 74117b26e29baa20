#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <nlohmann/json_fwd.hpp>

#include "polyrbf/gradients.hpp"

namespace polyrbf {

// Distinct lattice centers; columns 0..N-1 are the lattice points. Mirroring
// appends their antipodes as columns N..2N-1.
Eigen::Matrix3Xd fibonacci_centers(int n);
Eigen::Matrix3Xd mirror_centers(const Eigen::Matrix3Xd& centers);

// Mean of sqrt(2)*chord over all ordered pairs of distinct centers.
double default_bandwidth(const Eigen::Matrix3Xd& centers2n);

// Tapered Gaussian on chord distance; strict cutoff at taper_mult*h.
double kernel(const Eigen::Vector3d& p, const Eigen::Vector3d& center, double h,
              double taper_mult);

struct BasisConfig {
  int n = 10;
  int k = 4;
  Eigen::Matrix3Xd centers; // 3 x 2N, antipodally paired
  double h = 0.0;
  double taper_mult = 3.0;
  double ridge_d = -1.0; // < 0 means automatic: 1e-8 * mean(diag(X'X))
  double b_scale = 1.0;

  static BasisConfig make_default(int n = 10, int k = 4);
  void validate() const;
  std::uint64_t fingerprint() const;
  nlohmann::json to_json() const;
  static BasisConfig from_json(const nlohmann::json& j);
};

struct DesignMatrix {
  Eigen::MatrixXd x;
  std::uint64_t scheme_fingerprint = 0;
  std::uint64_t config_fingerprint = 0;
};

Eigen::VectorXd design_row(double b, const Eigen::Vector3d& p, const BasisConfig& cfg);
DesignMatrix design_matrix(const GradientScheme& scheme, const BasisConfig& cfg);

} // namespace polyrbf
